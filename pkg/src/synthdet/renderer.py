"""Z-buffered software rasterizer with perspective-correct texturing and Phong shading.

Rendering is deferred: a visibility pass records, per pixel, the nearest
triangle and its perspective-correct barycentrics; a shading pass then shades
only visible fragments. The visibility pass alone doubles as the silhouette
renderer the composer uses for coverage bookkeeping, so masks measured during
composition are exactly the masks of the final render.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .geometry import CameraIntrinsics, Material, TexturedMesh

NEAR_PLANE = 1e-3


@dataclass
class RenderBuffer:
    rgb: np.ndarray       # (H, W, 3) uint8
    depth: np.ndarray     # (H, W) float64, +inf where empty
    instance: np.ndarray  # (H, W) int32, 0 = empty, else placement index + 1

    @classmethod
    def empty(cls, cam: CameraIntrinsics, background=None) -> RenderBuffer:
        rgb = np.zeros((cam.height, cam.width, 3), np.uint8)
        if background is not None:
            rgb[...] = np.asarray(background, dtype=np.uint8)
        return cls(rgb, np.full((cam.height, cam.width), np.inf), np.zeros((cam.height, cam.width), np.int32))

    @property
    def shape(self) -> tuple[int, int]:
        return self.instance.shape


@dataclass(frozen=True)
class LightSource:
    """Directional light. ``direction`` is the direction of travel (light toward scene)
    in the camera frame, so a light behind the camera has positive z."""

    direction: tuple
    color: tuple = (1.0, 1.0, 1.0)
    ambient: float = 0.3

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if not n > 0:
            raise ValueError("light direction must be non-zero")
        c = tuple(float(x) for x in self.color)
        if len(c) != 3 or min(c) < 0 or max(c) > 1:
            raise ValueError(f"light color channels must lie in [0, 1], got {c}")
        if not 0 <= self.ambient <= 1:
            raise ValueError(f"ambient must lie in [0, 1], got {self.ambient}")
        object.__setattr__(self, "direction", tuple(float(x) for x in d / n))
        object.__setattr__(self, "color", c)
        object.__setattr__(self, "ambient", float(self.ambient))


def sample_light(rng: np.random.Generator, color_jitter: float = 0.2,
                 ambient_range: tuple[float, float] = (0.25, 0.5)) -> LightSource:
    """Random directional light from the camera-side hemisphere with a tinted color."""
    if not 0 <= color_jitter <= 1:
        raise ValueError(f"color_jitter must lie in [0, 1], got {color_jitter}")
    # uniform on the hemisphere: z uniform in [0, 1], azimuth uniform
    z = rng.uniform(0.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    r = math.sqrt(max(0.0, 1.0 - z * z))
    direction = (r * math.cos(phi), r * math.sin(phi), z)
    color = rng.uniform(1.0 - color_jitter, 1.0, size=3)
    color = color / color.max()
    ambient = rng.uniform(*ambient_range)
    return LightSource(direction, tuple(color), ambient)


def phong_shade(normal, view_dir, light: LightSource | Sequence[LightSource],
                material: Material, base_color) -> np.ndarray:
    """Phong color in [0, 1] for unit ``normal`` and ``view_dir`` (surface to eye).

    Broadcasts over leading dimensions. Specular highlights are suppressed where
    the surface faces away from the light.
    """
    lights = [light] if isinstance(light, LightSource) else list(light)
    n = np.asarray(normal, dtype=np.float64)
    v = np.asarray(view_dir, dtype=np.float64)
    base = np.asarray(base_color, dtype=np.float64)
    ambient = np.mean([lt.ambient for lt in lights])
    color = material.ambient * ambient * base
    for lt in lights:
        to_light = -np.asarray(lt.direction)
        lc = np.asarray(lt.color)
        ndotl = np.sum(n * to_light, axis=-1, keepdims=True)
        diff = np.maximum(ndotl, 0.0)
        refl = 2.0 * ndotl * n - to_light
        rdotv = np.maximum(np.sum(refl * v, axis=-1, keepdims=True), 0.0)
        spec = np.where(ndotl > 0, rdotv ** material.shininess, 0.0)
        color = color + material.diffuse * diff * base * lc + material.specular * spec * lc
    return np.clip(color, 0.0, 1.0)


# --------------------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _raster_kernel(screen, zc, tris, tri_inst, x_off, y_off, depth, inst, tri_id, bary, record):
    h, w = depth.shape
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        z0, z1, z2 = zc[i0], zc[i1], zc[i2]
        if z0 <= NEAR_PLANE or z1 <= NEAR_PLANE or z2 <= NEAR_PLANE:
            continue
        x0, y0 = screen[i0, 0] - x_off, screen[i0, 1] - y_off
        x1, y1 = screen[i1, 0] - x_off, screen[i1, 1] - y_off
        x2, y2 = screen[i2, 0] - x_off, screen[i2, 1] - y_off
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if abs(area) < 1e-12:
            continue
        jmin = max(int(math.ceil(min(x0, x1, x2) - 0.5)), 0)
        jmax = min(int(math.floor(max(x0, x1, x2) - 0.5)), w - 1)
        imin = max(int(math.ceil(min(y0, y1, y2) - 0.5)), 0)
        imax = min(int(math.floor(max(y0, y1, y2) - 0.5)), h - 1)
        if jmin > jmax or imin > imax:
            continue
        inv_area = 1.0 / area
        iz0, iz1, iz2 = 1.0 / z0, 1.0 / z1, 1.0 / z2
        label = tri_inst[t]
        for i in range(imin, imax + 1):
            py = i + 0.5
            for j in range(jmin, jmax + 1):
                px = j + 0.5
                w0 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) * inv_area
                if w0 < 0.0:
                    continue
                w1 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) * inv_area
                if w1 < 0.0:
                    continue
                w2 = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)) * inv_area
                if w2 < 0.0:
                    continue
                q0, q1, q2 = w0 * iz0, w1 * iz1, w2 * iz2
                s = q0 + q1 + q2
                z = 1.0 / s
                if z < depth[i, j]:
                    depth[i, j] = z
                    inst[i, j] = label
                    if record:
                        tri_id[i, j] = t
                        bary[i, j, 0] = q0 / s
                        bary[i, j, 1] = q1 / s
                        bary[i, j, 2] = q2 / s


@numba.njit(cache=True)
def _hue_rotate(r, g, b, shift):
    # shift is a fraction of a full turn
    mx = max(r, g, b)
    mn = min(r, g, b)
    delta = mx - mn
    if delta <= 0.0:
        return r, g, b
    if mx == r:
        hh = ((g - b) / delta) % 6.0
    elif mx == g:
        hh = (b - r) / delta + 2.0
    else:
        hh = (r - g) / delta + 4.0
    hh = (hh / 6.0 + shift) % 1.0 * 6.0
    sector = int(math.floor(hh))
    f = hh - sector
    v = mx
    p = mn
    q = mx - delta * f
    tt = mn + delta * f
    if sector == 0 or sector == 6:
        return v, tt, p
    elif sector == 1:
        return q, v, p
    elif sector == 2:
        return p, v, tt
    elif sector == 3:
        return p, q, v
    elif sector == 4:
        return tt, p, v
    return v, p, q


@numba.njit(cache=True)
def _sample_bilinear(tex, offset, th, tw, u, v, out):
    x = u * tw - 0.5
    y = (1.0 - v) * th - 0.5
    xf = math.floor(x)
    yf = math.floor(y)
    ax = x - xf
    ay = y - yf
    xa = min(max(int(xf), 0), tw - 1)
    xb = min(max(int(xf) + 1, 0), tw - 1)
    ya = min(max(int(yf), 0), th - 1)
    yb = min(max(int(yf) + 1, 0), th - 1)
    for c in range(3):
        t00 = tex[offset + (ya * tw + xa) * 3 + c]
        t01 = tex[offset + (ya * tw + xb) * 3 + c]
        t10 = tex[offset + (yb * tw + xa) * 3 + c]
        t11 = tex[offset + (yb * tw + xb) * 3 + c]
        top = t00 + (t01 - t00) * ax
        bot = t10 + (t11 - t10) * ax
        out[c] = (top + (bot - top) * ay) / 255.0


@numba.njit(cache=True)
def _phong_kernel(nx, ny, nz, vx, vy, vz, light_dirs, light_cols, ambient, mat, base, out):
    ka, kd, ks, shininess = mat[0], mat[1], mat[2], mat[3]
    for c in range(3):
        out[c] = ka * ambient * base[c]
    for k in range(light_dirs.shape[0]):
        lx, ly, lz = -light_dirs[k, 0], -light_dirs[k, 1], -light_dirs[k, 2]
        ndotl = nx * lx + ny * ly + nz * lz
        diff = max(ndotl, 0.0)
        spec = 0.0
        if ndotl > 0.0:
            rx = 2.0 * ndotl * nx - lx
            ry = 2.0 * ndotl * ny - ly
            rz = 2.0 * ndotl * nz - lz
            rdotv = rx * vx + ry * vy + rz * vz
            if rdotv > 0.0:
                spec = rdotv ** shininess
        for c in range(3):
            out[c] += kd * diff * base[c] * light_cols[k, c] + ks * spec * light_cols[k, c]
    for c in range(3):
        out[c] = min(max(out[c], 0.0), 1.0)


@numba.njit(cache=True)
def _shade_kernel(inst, tri_id, bary, tris, pos, nrm, uvs, tex, inst_tex_off, inst_tex_h,
                  inst_tex_w, inst_mat, inst_hue, light_dirs, light_cols, ambient, rgb):
    h, w = inst.shape
    base = np.empty(3)
    col = np.empty(3)
    for i in range(h):
        for j in range(w):
            k = inst[i, j]
            if k == 0:
                continue
            k -= 1
            t = tri_id[i, j]
            a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
            b0, b1, b2 = bary[i, j, 0], bary[i, j, 1], bary[i, j, 2]
            px = b0 * pos[a, 0] + b1 * pos[b, 0] + b2 * pos[c, 0]
            py = b0 * pos[a, 1] + b1 * pos[b, 1] + b2 * pos[c, 1]
            pz = b0 * pos[a, 2] + b1 * pos[b, 2] + b2 * pos[c, 2]
            nx = b0 * nrm[a, 0] + b1 * nrm[b, 0] + b2 * nrm[c, 0]
            ny = b0 * nrm[a, 1] + b1 * nrm[b, 1] + b2 * nrm[c, 1]
            nz = b0 * nrm[a, 2] + b1 * nrm[b, 2] + b2 * nrm[c, 2]
            nl = math.sqrt(nx * nx + ny * ny + nz * nz)
            if nl > 0.0:
                nx, ny, nz = nx / nl, ny / nl, nz / nl
            else:
                nx, ny, nz = 0.0, 0.0, -1.0
            vl = math.sqrt(px * px + py * py + pz * pz)
            vx, vy, vz = -px / vl, -py / vl, -pz / vl
            if nx * vx + ny * vy + nz * vz < 0.0:
                nx, ny, nz = -nx, -ny, -nz
            u = b0 * uvs[a, 0] + b1 * uvs[b, 0] + b2 * uvs[c, 0]
            v = b0 * uvs[a, 1] + b1 * uvs[b, 1] + b2 * uvs[c, 1]
            _sample_bilinear(tex, inst_tex_off[k], inst_tex_h[k], inst_tex_w[k], u, v, base)
            if inst_hue[k] != 0.0:
                r_, g_, b_ = _hue_rotate(base[0], base[1], base[2], inst_hue[k])
                base[0], base[1], base[2] = r_, g_, b_
            _phong_kernel(nx, ny, nz, vx, vy, vz, light_dirs, light_cols, ambient,
                          inst_mat[k], base, col)
            for ch in range(3):
                rgb[i, j, ch] = np.uint8(math.floor(col[ch] * 255.0 + 0.5))


# --------------------------------------------------------------------------- packing

_TEXTURE_CACHE: "weakref.WeakKeyDictionary[TexturedMesh, np.ndarray]" = weakref.WeakKeyDictionary()


def _flat_texture(mesh: TexturedMesh) -> np.ndarray:
    flat = _TEXTURE_CACHE.get(mesh)
    if flat is None:
        flat = np.ascontiguousarray(mesh.texture, dtype=np.float32).reshape(-1)
        _TEXTURE_CACHE[mesh] = flat
    return flat


def camera_geometry(placement, mesh: TexturedMesh, cam: CameraIntrinsics):
    """Camera-frame positions and normals plus pixel coordinates for one placement."""
    rot = placement.pose.rotation
    pos = (mesh.vertices * placement.scale) @ rot.T + np.asarray(placement.pose.translation)
    nrm = mesh.normals @ rot.T
    z = np.where(pos[:, 2] > NEAR_PLANE, pos[:, 2], np.inf)
    screen = np.stack([cam.fx * pos[:, 0] / z + cam.cx, cam.fy * pos[:, 1] / z + cam.cy], axis=1)
    return pos, nrm, screen


@dataclass
class _Packed:
    pos: np.ndarray
    nrm: np.ndarray
    uvs: np.ndarray
    screen: np.ndarray
    tris: np.ndarray
    tri_inst: np.ndarray


def _pack(placements, models, cam, first_id=1) -> _Packed:
    pos, nrm, uvs, screen, tris, tri_inst = [], [], [], [], [], []
    base = 0
    for k, pl in enumerate(placements):
        mesh = models[pl.model_id]
        p, n, s = camera_geometry(pl, mesh, cam)
        pos.append(p)
        nrm.append(n)
        screen.append(s)
        uvs.append(mesh.uvs)
        tris.append(mesh.triangles + base)
        tri_inst.append(np.full(len(mesh.triangles), first_id + k, np.int32))
        base += len(p)
    if not placements:
        return _Packed(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 2)),
                       np.zeros((0, 3), np.int64), np.zeros(0, np.int32))
    return _Packed(np.concatenate(pos), np.concatenate(nrm), np.concatenate(uvs),
                   np.concatenate(screen), np.concatenate(tris).astype(np.int64),
                   np.concatenate(tri_inst))


_DUMMY_TRI = np.zeros((1, 1), np.int64)
_DUMMY_BARY = np.zeros((1, 1, 3))


class SilhouetteCanvas:
    """Depth + instance raster over an image window, drawn into incrementally.

    Uses the same visibility kernel as :func:`rasterize`; drawing placements one
    at a time in a given order yields the instance map of rendering them together.
    """

    def __init__(self, cam: CameraIntrinsics, window: tuple[int, int, int, int] | None = None):
        self.cam = cam
        x0, y0, w, h = window if window is not None else (0, 0, cam.width, cam.height)
        self.x_off, self.y_off = int(x0), int(y0)
        self.depth = np.full((h, w), np.inf)
        self.instance = np.zeros((h, w), np.int32)

    def draw(self, placement, mesh: TexturedMesh, instance_id: int) -> tuple[slice, slice]:
        """Draw one placement; returns the (rows, cols) window slices it can have touched."""
        pos, _, screen = camera_geometry(placement, mesh, self.cam)
        _raster_kernel(screen, np.ascontiguousarray(pos[:, 2]), mesh.triangles,
                       np.full(len(mesh.triangles), instance_id, np.int32),
                       float(self.x_off), float(self.y_off), self.depth, self.instance,
                       _DUMMY_TRI, _DUMMY_BARY, False)
        h, w = self.instance.shape
        front = pos[:, 2] > NEAR_PLANE
        if not front.any():
            return slice(0, 0), slice(0, 0)
        xs, ys = screen[front, 0] - self.x_off, screen[front, 1] - self.y_off
        rows = slice(min(max(int(math.floor(ys.min())), 0), h), min(max(int(math.ceil(ys.max())) + 1, 0), h))
        cols = slice(min(max(int(math.floor(xs.min())), 0), w), min(max(int(math.ceil(xs.max())) + 1, 0), w))
        return rows, cols

    def copy(self) -> SilhouetteCanvas:
        out = SilhouetteCanvas.__new__(SilhouetteCanvas)
        out.cam, out.x_off, out.y_off = self.cam, self.x_off, self.y_off
        out.depth = self.depth.copy()
        out.instance = self.instance.copy()
        return out


def silhouette(placement, mesh: TexturedMesh, cam: CameraIntrinsics,
               window: tuple[int, int, int, int] | None = None) -> np.ndarray:
    """Boolean mask of pixels covered by one placement rendered alone."""
    canvas = SilhouetteCanvas(cam, window)
    canvas.draw(placement, mesh, 1)
    return canvas.instance > 0


def _lights_arrays(light):
    lights = [light] if isinstance(light, LightSource) else list(light)
    if not lights:
        raise ValueError("at least one light source is required")
    dirs = np.array([lt.direction for lt in lights], dtype=np.float64)
    cols = np.array([lt.color for lt in lights], dtype=np.float64)
    ambient = float(np.mean([lt.ambient for lt in lights]))
    return dirs, cols, ambient


def rasterize(placements: Sequence, models, cam: CameraIntrinsics,
              light: LightSource | Sequence[LightSource], background=None) -> RenderBuffer:
    """Render placements (instance ids 1..n in list order) into a fresh buffer.

    ``models[p.model_id]`` supplies each placement's mesh. ``background`` is an
    RGB triple or an (H, W, 3) image shown where nothing is drawn.
    """
    h, w = cam.height, cam.width
    buf = RenderBuffer.empty(cam)
    if background is not None:
        bg = np.asarray(background, dtype=np.uint8)
        if bg.ndim == 3 and bg.shape != (h, w, 3):
            raise ValueError(f"background image shape {bg.shape} does not match {(h, w, 3)}")
        buf.rgb[...] = bg
    if not placements:
        return buf
    packed = _pack(placements, models, cam)
    tri_id = np.zeros((h, w), np.int64)
    bary = np.zeros((h, w, 3))
    _raster_kernel(packed.screen, np.ascontiguousarray(packed.pos[:, 2]), packed.tris,
                   packed.tri_inst, 0.0, 0.0, buf.depth, buf.instance, tri_id, bary, True)

    slots: dict[int, int] = {}
    chunks, offsets, heights, widths = [], [], [], []
    total = 0
    for pl in placements:
        mesh = models[pl.model_id]
        key = id(mesh)
        if key not in slots:
            flat = _flat_texture(mesh)
            slots[key] = total
            chunks.append(flat)
            total += flat.size
        offsets.append(slots[key])
        heights.append(mesh.texture.shape[0])
        widths.append(mesh.texture.shape[1])
    tex = np.concatenate(chunks)
    mats = np.array([models[pl.model_id].material.as_array() for pl in placements])
    hues = np.array([(pl.hue_shift / (2.0 * math.pi)) % 1.0 for pl in placements])
    dirs, cols, ambient = _lights_arrays(light)
    _shade_kernel(buf.instance, tri_id, bary, packed.tris, packed.pos, packed.nrm, packed.uvs, tex,
                  np.array(offsets, np.int64), np.array(heights, np.int64), np.array(widths, np.int64),
                  mats, hues, dirs, cols, ambient, buf.rgb)
    return buf
