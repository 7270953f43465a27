"""Mesh ingestion, normalization, pinhole camera model and box projection."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

log = logging.getLogger(__name__)


class MeshError(Exception):
    """Base class for mesh loading and normalization failures."""


class MeshNotFoundError(MeshError, FileNotFoundError):
    pass


class MalformedMeshError(MeshError, ValueError):
    pass


class TriangleIndexError(MalformedMeshError):
    pass


class MissingTextureError(MeshError):
    pass


class ZeroExtentError(MeshError, ValueError):
    pass


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    """Phong coefficients. Scalars apply equally to all channels."""

    ambient: float = 1.0
    diffuse: float = 0.7
    specular: float = 0.15
    shininess: float = 20.0

    def as_array(self) -> np.ndarray:
        return np.array([self.ambient, self.diffuse, self.specular, self.shininess])


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TexturedMesh:
    vertices: np.ndarray
    normals: np.ndarray
    uvs: np.ndarray
    triangles: np.ndarray
    texture: np.ndarray
    material: Material = field(default_factory=Material)
    name: str = ""

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        n = _frozen(self.normals, np.float64).reshape(-1, 3)
        uv = _frozen(self.uvs, np.float64).reshape(-1, 2)
        tri = _frozen(self.triangles, np.int64).reshape(-1, 3)
        tex = _frozen(self.texture, np.uint8)
        if len(n) != len(v) or len(uv) != len(v):
            raise MalformedMeshError(
                f"{self.name or 'mesh'}: normals/uvs must have one entry per vertex "
                f"({len(v)} vertices, {len(n)} normals, {len(uv)} uvs)")
        if tri.size and (tri.min() < 0 or tri.max() >= len(v)):
            bad = int(tri.max() if tri.max() >= len(v) else tri.min())
            raise TriangleIndexError(
                f"{self.name or 'mesh'}: triangle index {bad} out of range for {len(v)} vertices")
        if tex.ndim != 3 or tex.shape[2] != 3 or tex.shape[0] == 0 or tex.shape[1] == 0:
            raise MalformedMeshError(f"{self.name or 'mesh'}: texture must be an HxWx3 RGB raster")
        for name, arr in (("vertices", v), ("normals", n), ("uvs", uv), ("triangles", tri), ("texture", tex)):
            object.__setattr__(self, name, arr)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @classmethod
    def default(cls) -> CameraIntrinsics:
        # RGB stream of a consumer depth camera at 960x720; a config value, not a measured calibration.
        return cls(fx=920.0, fy=920.0, cx=480.0, cy=360.0, width=960, height=720)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def focal(self) -> float:
        """Larger focal length, used when converting sizes to pixel diameters."""
        return max(self.fx, self.fy)

    def ray_point(self, u: float, v: float, depth: float) -> np.ndarray:
        """Camera-frame point at ``depth`` that projects onto pixel coordinate (u, v)."""
        return np.array([(u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth])


@dataclass(frozen=True)
class Pose:
    """Rigid transform, model frame to camera frame.

    ``quaternion`` is scalar-first (w, x, y, z). ``provenance`` optionally holds
    the curriculum coordinates (scale_index, view_index, inplane_index).
    """

    quaternion: tuple
    translation: tuple
    provenance: tuple | None = None

    def __post_init__(self):
        q = tuple(float(x) for x in self.quaternion)
        t = tuple(float(x) for x in self.translation)
        if len(q) != 4 or len(t) != 3:
            raise ValueError("pose needs a 4-element quaternion and 3-element translation")
        if abs(math.sqrt(sum(x * x for x in q)) - 1.0) > 1e-6:
            raise ValueError(f"quaternion {q} is not unit length")
        if not t[2] > 0:
            raise ValueError(f"translation z must be positive (object in front of camera), got {t[2]}")
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)
        if self.provenance is not None:
            object.__setattr__(self, "provenance", tuple(int(x) for x in self.provenance))

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation, provenance=None) -> Pose:
        q = Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_quat(scalar_first=True)
        if q[0] < 0:
            q = -q
        return cls(tuple(q / np.linalg.norm(q)), tuple(translation), provenance)

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternion, scalar_first=True).as_matrix()

    def with_translation(self, translation) -> Pose:
        return replace(self, translation=tuple(translation))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel rectangle in continuous image coordinates.

    Pixel (row i, column j) covers [j, j+1) x [i, i+1); its center is (j+0.5, i+0.5).
    """

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return max(0.0, self.x1 - self.x0)

    @property
    def height(self) -> float:
        return max(0.0, self.y1 - self.y0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersection(self, other: BBox) -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(0.0, w) * max(0.0, h)

    def clip(self, width: int, height: int) -> BBox:
        x0 = min(max(self.x0, 0.0), width)
        x1 = min(max(self.x1, 0.0), width)
        y0 = min(max(self.y0, 0.0), height)
        y1 = min(max(self.y1, 0.0), height)
        return BBox(x0, y0, x1, y1)

    def xywh(self) -> list[float]:
        return [self.x0, self.y0, self.width, self.height]


# --------------------------------------------------------------------------- loading


def _parse_index(token: str, count: int, path: Path, lineno: int) -> int:
    try:
        idx = int(token)
    except ValueError:
        raise MalformedMeshError(f"{path}:{lineno}: bad face index {token!r}") from None
    if idx == 0:
        raise TriangleIndexError(f"{path}:{lineno}: face index 0 is invalid (OBJ is 1-based)")
    idx = idx - 1 if idx > 0 else count + idx
    if not 0 <= idx < count:
        raise TriangleIndexError(
            f"{path}:{lineno}: index {token} out of range ({count} entries defined)")
    return idx


def _parse_floats(parts, n, path, lineno):
    try:
        vals = [float(x) for x in parts[:n]]
    except ValueError:
        raise MalformedMeshError(f"{path}:{lineno}: non-numeric value in {' '.join(parts)!r}") from None
    if len(vals) < n:
        raise MalformedMeshError(f"{path}:{lineno}: expected {n} values, got {len(vals)}")
    return vals


def _read_mtl(path: Path) -> dict[str, dict]:
    materials: dict[str, dict] = {}
    current = None
    with open(path) as fh:
        for raw in fh:
            parts = raw.strip().split()
            if not parts or parts[0].startswith("#"):
                continue
            key = parts[0]
            if key == "newmtl":
                current = materials.setdefault(" ".join(parts[1:]), {})
            elif current is None:
                continue
            elif key in ("Ka", "Kd", "Ks"):
                current[key] = float(np.mean([float(x) for x in parts[1:4]]))
            elif key == "Ns":
                current[key] = float(parts[1])
            elif key == "map_Kd":
                # options such as -s/-o precede the filename; the name is the last token
                current["map_Kd"] = parts[-1]
    return materials


def area_weighted_normals(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Per-vertex normals as the sum of adjacent face normals weighted by face area."""
    p0, p1, p2 = (positions[triangles[:, k]] for k in range(3))
    face = np.cross(p1 - p0, p2 - p0)  # length is twice the area
    acc = np.zeros_like(positions)
    for k in range(3):
        np.add.at(acc, triangles[:, k], face)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 1e-300)
    out[norm[:, 0] <= 1e-300] = (0.0, 0.0, 1.0)
    return out


def load_mesh(path: str | os.PathLike) -> TexturedMesh:
    """Load a textured OBJ (with MTL and texture image) into a render-ready mesh.

    Corners sharing position/uv/normal indices are merged; distinct combinations
    become separate vertices. Missing normals are recomputed area-weighted.

    Raises:
        MeshNotFoundError: the OBJ, its MTL or its texture image does not exist.
        MalformedMeshError: unparsable geometry (TriangleIndexError for bad indices).
        MissingTextureError: no material with a ``map_Kd`` texture is referenced.
    """
    path = Path(path)
    if not path.is_file():
        raise MeshNotFoundError(f"mesh file not found: {path}")

    positions, texcoords, normals = [], [], []
    corners: list[tuple[int, int, int]] = []
    mtllibs: list[str] = []
    used_materials: list[str] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.strip().split()
            if not parts or parts[0].startswith("#"):
                continue
            key, args = parts[0], parts[1:]
            if key == "v":
                positions.append(_parse_floats(args, 3, path, lineno))
            elif key == "vt":
                texcoords.append(_parse_floats(args, 2, path, lineno))
            elif key == "vn":
                normals.append(_parse_floats(args, 3, path, lineno))
            elif key == "f":
                if len(args) < 3:
                    raise MalformedMeshError(f"{path}:{lineno}: face needs at least 3 corners")
                face = []
                for tok in args:
                    fields = tok.split("/")
                    vi = _parse_index(fields[0], len(positions), path, lineno)
                    ti = (_parse_index(fields[1], len(texcoords), path, lineno)
                          if len(fields) > 1 and fields[1] else -1)
                    ni = (_parse_index(fields[2], len(normals), path, lineno)
                          if len(fields) > 2 and fields[2] else -1)
                    face.append((vi, ti, ni))
                for k in range(1, len(face) - 1):  # fan triangulation
                    corners.extend((face[0], face[k], face[k + 1]))
            elif key == "mtllib":
                mtllibs.append(" ".join(args))
            elif key == "usemtl":
                name = " ".join(args)
                if name not in used_materials:
                    used_materials.append(name)

    if not positions:
        raise MalformedMeshError(f"{path}: no vertices")
    if not corners:
        raise MalformedMeshError(f"{path}: no faces")

    materials: dict[str, dict] = {}
    for lib in mtllibs:
        mtl_path = path.parent / lib
        if not mtl_path.is_file():
            raise MeshNotFoundError(f"{path}: material library not found: {mtl_path}")
        materials.update(_read_mtl(mtl_path))
    candidates = [m for m in used_materials if "map_Kd" in materials.get(m, {})]
    candidates += [m for m in materials if "map_Kd" in materials[m] and m not in candidates]
    if not candidates:
        raise MissingTextureError(f"{path}: no material with a map_Kd texture")
    if len(candidates) > 1:
        log.warning("%s: %d textured materials, using %r", path, len(candidates), candidates[0])
    mat = materials[candidates[0]]
    tex_path = path.parent / mat["map_Kd"]
    if not tex_path.is_file():
        raise MeshNotFoundError(f"{path}: texture image not found: {tex_path}")
    try:
        with Image.open(tex_path) as im:
            texture = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise MissingTextureError(f"{path}: unreadable texture {tex_path}: {exc}") from exc

    keys = np.asarray(corners, dtype=np.int64)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    pos = np.asarray(positions, dtype=np.float64)
    triangles = inverse.reshape(-1, 3)
    vertices = pos[unique[:, 0]]
    if texcoords:
        tc = np.asarray(texcoords, dtype=np.float64)
        uvs = np.where(unique[:, 1:2] >= 0, tc[np.maximum(unique[:, 1], 0)], 0.0)
    else:
        uvs = np.zeros((len(unique), 2))
    if normals and (unique[:, 2] >= 0).all():
        nrm = np.asarray(normals, dtype=np.float64)[unique[:, 2]]
        lengths = np.linalg.norm(nrm, axis=1, keepdims=True)
        nrm = np.divide(nrm, lengths, out=np.tile([0.0, 0.0, 1.0], (len(nrm), 1)), where=lengths > 0)
    else:
        # accumulate on shared positions so uv seams do not split shading normals
        nrm = area_weighted_normals(pos, keys[:, 0].reshape(-1, 3))[unique[:, 0]]

    material = Material(
        ambient=mat.get("Ka", Material.ambient),
        diffuse=mat.get("Kd", Material.diffuse),
        specular=mat.get("Ks", Material.specular),
        shininess=mat.get("Ns", Material.shininess),
    )
    return TexturedMesh(vertices, nrm, uvs, triangles, texture, material, name=path.stem)


def save_mesh(mesh: TexturedMesh, path: str | os.PathLike) -> Path:
    """Write ``mesh`` as OBJ + MTL + PNG texture next to each other."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    Image.fromarray(mesh.texture).save(path.with_name(stem + ".png"))
    m = mesh.material
    path.with_name(stem + ".mtl").write_text(
        f"newmtl {stem}\n"
        f"Ka {m.ambient} {m.ambient} {m.ambient}\n"
        f"Kd {m.diffuse} {m.diffuse} {m.diffuse}\n"
        f"Ks {m.specular} {m.specular} {m.specular}\n"
        f"Ns {m.shininess}\n"
        f"map_Kd {stem}.png\n")
    lines = [f"mtllib {stem}.mtl", f"usemtl {stem}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"vt {u!r} {v!r}" for u, v in mesh.uvs.tolist()]
    lines += [f"vn {x!r} {y!r} {z!r}" for x, y, z in mesh.normals.tolist()]
    lines += ["f " + " ".join(f"{i + 1}/{i + 1}/{i + 1}" for i in tri) for tri in mesh.triangles.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


# --------------------------------------------------------------------------- transforms


def normalize_mesh(mesh: TexturedMesh) -> TexturedMesh:
    """De-mean the vertices and scale them so the farthest one lies on the unit sphere."""
    if len(mesh.vertices) == 0:
        raise ZeroExtentError(f"{mesh.name or 'mesh'}: no vertices")
    centroid = mesh.vertices.mean(axis=0)
    centered = mesh.vertices - centroid
    radius = np.linalg.norm(centered, axis=1).max()
    if not radius > 1e-12:
        raise ZeroExtentError(f"{mesh.name or 'mesh'}: all vertices coincide")
    if np.abs(centroid).max() < 1e-12 and abs(radius - 1.0) < 1e-12:
        return mesh
    return replace(mesh, vertices=centered / radius)


def perturb_intrinsics(base: CameraIntrinsics, rng: np.random.Generator,
                       jitter_fraction: float = 0.05) -> CameraIntrinsics:
    """Scale fx, fy, cx, cy by independent factors drawn from [1 - j, 1 + j]."""
    if not 0.0 <= jitter_fraction <= 0.2:
        raise ValueError(f"jitter_fraction must lie in [0, 0.2], got {jitter_fraction}")
    if jitter_fraction == 0:
        return base
    f = rng.uniform(1.0 - jitter_fraction, 1.0 + jitter_fraction, size=4)
    return CameraIntrinsics(base.fx * f[0], base.fy * f[1], base.cx * f[2], base.cy * f[3],
                            base.width, base.height)


def transform_points(points: np.ndarray, pose: Pose, scale: float = 1.0) -> np.ndarray:
    return (np.asarray(points) * scale) @ pose.rotation.T + np.asarray(pose.translation)


def project_points(points_cam: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to continuous pixel coordinates."""
    z = points_cam[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError(f"{int(np.sum(z <= 0))} point(s) at or behind the camera plane")
    return np.stack([cam.fx * points_cam[:, 0] / z + cam.cx, cam.fy * points_cam[:, 1] / z + cam.cy], axis=1)


def _clip_polygon(poly: list, width: float, height: float) -> list:
    """Sutherland-Hodgman clip of a 2D polygon against [0, width] x [0, height]."""
    for axis, bound, keep_below in ((0, 0.0, False), (0, width, True), (1, 0.0, False), (1, height, True)):
        if not poly:
            break
        out = []
        for k, cur in enumerate(poly):
            prev = poly[k - 1]
            cur_in = cur[axis] <= bound if keep_below else cur[axis] >= bound
            prev_in = prev[axis] <= bound if keep_below else prev[axis] >= bound
            if cur_in != prev_in:
                t = (bound - prev[axis]) / (cur[axis] - prev[axis])
                hit = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]
                hit[axis] = bound  # exact, so later floor/ceil stay inside the image
                out.append(tuple(hit))
            if cur_in:
                out.append(cur)
        poly = out
    return poly


def clipped_extent(uv: np.ndarray, triangles: np.ndarray, width: int, height: int) -> BBox | None:
    """Bounding box of the projected triangles intersected with the image rectangle."""
    tri = uv[triangles]
    lo, hi = tri.min(axis=1), tri.max(axis=1)
    inside = (lo[:, 0] >= 0) & (lo[:, 1] >= 0) & (hi[:, 0] <= width) & (hi[:, 1] <= height)
    touching = (hi[:, 0] >= 0) & (hi[:, 1] >= 0) & (lo[:, 0] <= width) & (lo[:, 1] <= height) & ~inside
    pts = [tri[inside].reshape(-1, 2)]
    for t in tri[touching]:
        poly = _clip_polygon([tuple(p) for p in t], width, height)
        if poly:
            pts.append(np.asarray(poly))
    pts = np.concatenate(pts)
    if not len(pts):
        return None
    return BBox(float(pts[:, 0].min()), float(pts[:, 1].min()), float(pts[:, 0].max()), float(pts[:, 1].max()))


def bbox_of_points(uv: np.ndarray, cam: CameraIntrinsics,
                   triangles: np.ndarray | None = None) -> tuple[BBox, float]:
    """Box of projected points inside the image, plus the truncation of the full box.

    Truncation is the fraction of the unclipped box area outside the image. With
    ``triangles`` the returned box is tight to the in-image part of the projected
    surface; without, it is the full box clipped to the image.
    """
    full = BBox(float(uv[:, 0].min()), float(uv[:, 1].min()), float(uv[:, 0].max()), float(uv[:, 1].max()))
    clipped = full.clip(cam.width, cam.height)
    truncation = 0.0 if full.area <= 0 else 1.0 - clipped.area / full.area
    if triangles is not None and clipped != full:
        tight = clipped_extent(uv, triangles, cam.width, cam.height)
        if tight is not None:  # nothing inside leaves the degenerate clamped box
            clipped = tight
    return clipped, min(max(truncation, 0.0), 1.0)


def project_bbox(mesh: TexturedMesh, pose: Pose, cam: CameraIntrinsics,
                 scale: float = 1.0) -> tuple[BBox, float]:
    """Tight box of the projected model within the image, plus the clipped-away fraction."""
    uv = project_points(transform_points(mesh.vertices, pose, scale), cam)
    return bbox_of_points(uv, cam, mesh.triangles)


def projected_diameter(radius: float, depth: float, focal: float) -> float:
    """Pixel diameter of a sphere of ``radius`` centered on the optical axis at ``depth``."""
    return 2.0 * focal * radius / math.sqrt(depth * depth - radius * radius)


def radius_for_diameter(diameter: float, depth: float, focal: float) -> float:
    """Inverse of :func:`projected_diameter` for a fixed depth."""
    return diameter * depth / math.sqrt(4.0 * focal * focal + diameter * diameter)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()
