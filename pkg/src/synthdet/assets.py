"""Procedural textured models and stand-in photos for demos and tests.

Real deployments point the config at scanned OBJ models; these generators only
exist so the pipeline can run end to end without external data.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml
from PIL import Image
from scipy import ndimage

from .geometry import Material, TexturedMesh, area_weighted_normals, save_mesh


def box_mesh(sx: float, sy: float, sz: float, texture: np.ndarray, name: str = "box") -> TexturedMesh:
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    faces = [  # (normal, u axis, v axis)
        ((1, 0, 0), (0, 0, -1), (0, 1, 0)), ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
        ((0, 1, 0), (1, 0, 0), (0, 0, -1)), ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
        ((0, 0, 1), (1, 0, 0), (0, 1, 0)), ((0, 0, -1), (-1, 0, 0), (0, 1, 0)),
    ]
    half = np.array([hx, hy, hz])
    verts, norms, uvs, tris = [], [], [], []
    for k, (n, u, v) in enumerate(faces):
        n, u, v = (np.array(a, float) for a in (n, u, v))
        for cu, cv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            verts.append((n + cu * u + cv * v) * half)
            norms.append(n)
            # each face gets a horizontal strip of the texture
            uvs.append(((cu + 1) / 2, (k + (cv + 1) / 2) / 6))
        b = 4 * k
        tris += [(b, b + 1, b + 2), (b, b + 2, b + 3)]
    return TexturedMesh(np.array(verts), np.array(norms), np.array(uvs), np.array(tris), texture, name=name)


def lathe_mesh(profile: list[tuple[float, float]], texture: np.ndarray, segments: int = 32,
               name: str = "lathe") -> TexturedMesh:
    """Surface of revolution about Y from (radius, height) profile points, bottom to top.

    Profile endpoints with radius 0 close the shape.
    """
    rings = len(profile)
    verts, uvs = [], []
    for r_idx, (rad, y) in enumerate(profile):
        for s in range(segments + 1):
            a = 2 * math.pi * s / segments
            verts.append((rad * math.cos(a), y, rad * math.sin(a)))
            uvs.append((s / segments, r_idx / (rings - 1)))
    tris = []
    row = segments + 1
    for r_idx in range(rings - 1):
        for s in range(segments):
            a, b = r_idx * row + s, r_idx * row + s + 1
            c, d = a + row, b + row
            tris += [(a, c, b), (b, c, d)]
    verts = np.array(verts)
    tris = np.array(tris)
    keep = np.linalg.norm(np.cross(verts[tris[:, 1]] - verts[tris[:, 0]],
                                   verts[tris[:, 2]] - verts[tris[:, 0]]), axis=1) > 1e-12
    tris = tris[keep]
    # weld the texture seam (last column onto the first) so shading is smooth across it
    idx = np.arange(len(verts))
    welded = np.where(idx % row == segments, idx - segments, idx)
    normals = area_weighted_normals(verts, welded[tris])[welded]
    return TexturedMesh(verts, normals, np.array(uvs), tris, texture, name=name)


def cylinder_mesh(radius: float, height: float, texture: np.ndarray, segments: int = 32) -> TexturedMesh:
    h = height / 2
    profile = [(0.0, -h), (radius, -h), (radius, -h), (radius, h), (radius, h), (0.0, h)]
    return lathe_mesh(profile, texture, segments, name="cylinder")


def ellipsoid_mesh(rx: float, ry: float, rz: float, texture: np.ndarray, rings: int = 16,
                   segments: int = 32) -> TexturedMesh:
    profile = [(math.sin(math.pi * k / rings), -math.cos(math.pi * k / rings)) for k in range(rings + 1)]
    mesh = lathe_mesh(profile, texture, segments, name="ellipsoid")
    scale = np.array([rx, ry, rz])
    normals = mesh.normals / scale
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return TexturedMesh(mesh.vertices * scale, normals, mesh.uvs, mesh.triangles, texture, name="ellipsoid")


def bottle_mesh(radius: float, height: float, texture: np.ndarray, segments: int = 32) -> TexturedMesh:
    h = height / 2
    profile = [(0.0, -h), (radius, -h), (radius, 0.3 * h), (0.45 * radius, 0.7 * h),
               (0.35 * radius, h), (0.0, h)]
    return lathe_mesh(profile, texture, segments, name="bottle")


def procedural_texture(rng: np.random.Generator, size: int = 128) -> np.ndarray:
    """Random stripes, checkers or smooth blobs in a few random colors."""
    kind = rng.integers(4)
    yy, xx = np.mgrid[0:size, 0:size] / size
    palette = rng.integers(0, 256, size=(4, 3))
    if kind == 0:
        freq = rng.uniform(2, 10)
        angle = rng.uniform(0, math.pi)
        idx = (np.floor((xx * math.cos(angle) + yy * math.sin(angle)) * freq) % 2).astype(int)
    elif kind == 1:
        n = int(rng.integers(2, 9))
        idx = ((np.floor(xx * n) + np.floor(yy * n)) % 2).astype(int)
    elif kind == 2:
        field = ndimage.gaussian_filter(rng.normal(size=(size, size)), size / 12, mode="wrap")
        idx = np.digitize(field, np.quantile(field, [0.25, 0.5, 0.75]))
    else:
        bands = np.sort(rng.uniform(0, 1, size=3))
        idx = np.digitize(yy, bands)
    img = palette[idx].astype(np.float64)
    img += rng.normal(0, 6, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def random_model(rng: np.random.Generator, tex_size: int = 128) -> TexturedMesh:
    tex = procedural_texture(rng, tex_size)
    kind = rng.integers(4)
    if kind == 0:
        dims = rng.uniform(0.5, 1.5, size=3)
        mesh = box_mesh(*dims, tex)
    elif kind == 1:
        mesh = cylinder_mesh(rng.uniform(0.3, 0.7), rng.uniform(0.8, 2.0), tex)
    elif kind == 2:
        mesh = ellipsoid_mesh(*rng.uniform(0.5, 1.2, size=3), tex)
    else:
        mesh = bottle_mesh(rng.uniform(0.3, 0.6), rng.uniform(1.2, 2.2), tex)
    mat = Material(ambient=1.0, diffuse=float(rng.uniform(0.6, 0.8)), specular=float(rng.uniform(0.0, 0.4)),
                   shininess=float(rng.uniform(5, 60)))
    return TexturedMesh(mesh.vertices, mesh.normals, mesh.uvs, mesh.triangles, mesh.texture, mat, mesh.name)


def stand_in_photo(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    """Smooth colored noise standing in for a real background photograph."""
    small = rng.uniform(0, 255, size=(height // 16 + 2, width // 16 + 2, 3))
    img = ndimage.zoom(small, (16, 16, 1), order=3)[:height, :width]
    img += rng.normal(0, 4, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def write_demo_assets(out: str | Path, num_foreground: int = 8, num_background: int = 40,
                      num_photos: int = 6, seed: int = 0, width: int = 960, height: int = 720) -> Path:
    """Write procedural model sets, stand-in photos and a config; return the config path."""
    out = Path(out)
    rng = np.random.default_rng(seed)
    for sub, count in (("foreground", num_foreground), ("background", num_background)):
        for k in range(count):
            save_mesh(random_model(rng), out / sub / f"{sub[:2]}_{k:03d}.obj")
    photos = out / "photos"
    photos.mkdir(parents=True, exist_ok=True)
    for k in range(num_photos):
        Image.fromarray(stand_in_photo(rng, width, height)).save(photos / f"photo_{k:02d}.png")
    config = {
        "seed": 0,
        "num_images": 10,
        "mode": "curriculum",
        "background_mode": "full-synthetic",
        "workers": 1,
        "models": {"foreground": "foreground", "background": "background", "real_backgrounds": "photos"},
        "camera": {"fx": 920.0, "fy": 920.0, "cx": width / 2, "cy": height / 2,
                   "width": width, "height": height, "jitter_fraction": 0.05},
        "pose_space": {"subdivision_level": 1, "inplane_steps": 8, "num_scales": 4,
                       "near_distance": 6.0, "far_distance": 24.0},
    }
    path = out / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False))
    return path
