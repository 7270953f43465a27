"""View-sphere sampling by icosahedron subdivision plus in-plane and distance steps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_LEVEL = 5
CANONICAL_AXIS = np.array([0.0, 0.0, 1.0])

_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTICES = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
], dtype=np.float64)
_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class ViewpointSphere:
    vertices: np.ndarray
    subdivision_level: int
    faces: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        if not np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-6):
            raise ValueError("view-sphere vertices must be unit length")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return len(self.vertices)

    def upper_hemisphere(self) -> ViewpointSphere:
        """Views with non-negative z only, for objects that never show their underside."""
        return ViewpointSphere(self.vertices[self.vertices[:, 2] >= -1e-9], self.subdivision_level)


def subdivide_icosahedron(level: int) -> ViewpointSphere:
    """Unit vertices of an icosahedron after ``level`` rounds of midpoint subdivision."""
    if level < 0:
        raise ValueError(f"subdivision level must be >= 0, got {level}")
    if level > MAX_LEVEL:
        raise ValueError(
            f"subdivision level {level} exceeds {MAX_LEVEL} "
            f"({10 * 4 ** level + 2} vertices); refusing to allocate")
    verts = [tuple(v / np.linalg.norm(v)) for v in _ICO_VERTICES]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(level):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
                verts.append(tuple(m / np.linalg.norm(m)))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return ViewpointSphere(np.asarray(verts), level, np.asarray(faces, dtype=np.int64))


def viewpoint_rotation(vertex, inplane_angle: float) -> np.ndarray:
    """Rotation taking the canonical view axis (+Z) to ``vertex``, after an in-plane
    turn of ``inplane_angle`` radians about that axis.

    The in-plane zero is fixed by projecting an up vector (+Z, or +X when the
    vertex is within 1e-3 of the Z axis) onto the plane orthogonal to the vertex.
    """
    v = np.asarray(vertex, dtype=np.float64)
    v = v / np.linalg.norm(v)
    up = np.array([1.0, 0.0, 0.0]) if np.linalg.norm(np.cross(v, CANONICAL_AXIS)) < 1e-3 else CANONICAL_AXIS
    a = up - np.dot(up, v) * v
    a /= np.linalg.norm(a)
    b = np.cross(v, a)
    frame = np.stack([a, b, v], axis=1)
    c, s = math.cos(inplane_angle), math.sin(inplane_angle)
    inplane = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return frame @ inplane


def scale_distances(d_near: float, d_far: float, num_levels: int) -> np.ndarray:
    """Camera distances, nearest first, whose reciprocals are evenly spaced.

    Projected diameter goes as 1/d, so evenly spaced 1/d gives a linear change in
    on-screen size between consecutive levels.
    """
    if not 0 < d_near < d_far:
        raise ValueError(f"need 0 < d_near < d_far, got {d_near}, {d_far}")
    if num_levels < 2:
        raise ValueError(f"num_levels must be >= 2, got {num_levels}")
    inv = np.linspace(1.0 / d_near, 1.0 / d_far, num_levels)
    out = 1.0 / inv
    out[0], out[-1] = d_near, d_far
    return out


@dataclass(frozen=True, eq=False)
class PoseSpace:
    sphere: ViewpointSphere
    inplane_steps: int
    scale_distances: tuple

    def __post_init__(self):
        if self.inplane_steps < 1:
            raise ValueError("inplane_steps must be >= 1")
        d = tuple(float(x) for x in self.scale_distances)
        if not d or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"scale distances must be strictly increasing, got {d}")
        object.__setattr__(self, "scale_distances", d)

    @classmethod
    def build(cls, subdivision_level: int = 1, inplane_steps: int = 8, num_scales: int = 4,
              near_distance: float = 6.0, far_distance: float = 24.0,
              hemisphere: str = "full") -> PoseSpace:
        sphere = subdivide_icosahedron(subdivision_level)
        if hemisphere == "upper":
            sphere = sphere.upper_hemisphere()
        elif hemisphere != "full":
            raise ValueError(f"hemisphere must be 'full' or 'upper', got {hemisphere!r}")
        distances = (near_distance,) if num_scales == 1 else scale_distances(near_distance, far_distance, num_scales)
        return cls(sphere, inplane_steps, tuple(distances))

    @property
    def num_views(self) -> int:
        return len(self.sphere)

    @property
    def num_scales(self) -> int:
        return len(self.scale_distances)

    @property
    def inplane_angles(self) -> np.ndarray:
        return np.arange(self.inplane_steps) * (2.0 * math.pi / self.inplane_steps)

    @property
    def size(self) -> int:
        return self.num_views * self.inplane_steps * self.num_scales

    def view_rotation(self, view_index: int, inplane_index: int) -> np.ndarray:
        return viewpoint_rotation(self.sphere.vertices[view_index], self.inplane_angles[inplane_index])

    def object_rotation(self, view_index: int, inplane_index: int) -> np.ndarray:
        """Model-to-camera rotation for a view: the inverse of the view rotation, which
        brings the model-frame view direction onto the optical axis."""
        return self.view_rotation(view_index, inplane_index).T
