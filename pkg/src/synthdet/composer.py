"""Scene layer composition: dense background clutter, scheduled foreground
placements under crop/overlap limits, and occluders sized to a coverage target."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .curriculum import Cursor, ScheduleItem
from .geometry import (BBox, CameraIntrinsics, Pose, TexturedMesh, bbox_of_points, project_bbox,
                       radius_for_diameter, random_rotation)
from .renderer import SilhouetteCanvas, silhouette
from .viewsphere import PoseSpace

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class CompositionError(RuntimeError):
    pass


class Layer(str, Enum):
    BACKGROUND = "background"
    FOREGROUND = "foreground"
    OCCLUDER = "occluder"


@dataclass(frozen=True)
class PlacedObject:
    model_id: int
    pose: Pose
    scale: float = 1.0
    hue_shift: float = 0.0
    layer: Layer = Layer.FOREGROUND
    projected_size: float | None = None     # nominal pixel diameter (background/occluders)
    linked_foreground: int | None = None    # occluders: index into the foreground list
    target_coverage: float | None = None    # occluders: coverage the scale was solved for
    item: ScheduleItem | None = None        # foreground: schedule entry it realizes

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.layer == Layer.FOREGROUND and self.hue_shift != 0:
            raise ValueError("foreground objects keep their original hue")


@dataclass
class LayerComposition:
    background: list[PlacedObject] = field(default_factory=list)
    foreground: list[PlacedObject] = field(default_factory=list)
    occluders: list[PlacedObject] = field(default_factory=list)
    real_background: np.ndarray | None = None


@dataclass(frozen=True)
class ScaleRange:
    """Background size band, both as pixel diameters and as isotropic scales of a
    unit-sphere model at ``depth``."""

    s_min: float
    s_max: float
    size_min: float
    size_max: float
    depth: float
    mean_foreground_size: float


@dataclass(frozen=True)
class ForegroundConstraints:
    max_objects: int = 12
    max_truncation: float = 0.5
    max_overlap: float = 0.3
    attempts: int = 100


# --------------------------------------------------------------------------- color


def rotate_hue(texture: np.ndarray, angle: float) -> np.ndarray:
    """Rotate the HSV hue of an RGB uint8 raster by ``angle`` radians.

    Saturation and value are untouched, so gray texels never change.
    """
    rgb = np.asarray(texture, dtype=np.float64) / 255.0
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = ((h / 6.0 + angle / TWO_PI) % 1.0) * 6.0
    sector = np.floor(h).astype(np.int64) % 6
    f = h - np.floor(h)
    q = mx - delta * f
    t = mn + delta * f
    choices_r = [mx, q, mn, mn, t, mx]
    choices_g = [t, mx, mx, q, mn, mn]
    choices_b = [mn, mn, t, mx, mx, q]
    out = np.stack([np.choose(sector, choices_r), np.choose(sector, choices_g),
                    np.choose(sector, choices_b)], axis=-1)
    out = np.where((delta > 0)[..., None], out, rgb)
    return np.clip(np.floor(out * 255.0 + 0.5), 0, 255).astype(np.uint8)


def hue_shift_texture(texture: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotate hue by an angle drawn uniformly from [0, 2*pi)."""
    return rotate_hue(texture, rng.uniform(0.0, TWO_PI))


# --------------------------------------------------------------------------- background


def _extent(mesh: TexturedMesh, rotation: np.ndarray, translation, cam: CameraIntrinsics) -> float:
    pts = mesh.vertices @ rotation.T + np.asarray(translation)
    u = cam.fx * pts[:, 0] / pts[:, 2] + cam.cx
    v = cam.fy * pts[:, 1] / pts[:, 2] + cam.cy
    return float(max(u.max() - u.min(), v.max() - v.min()))


def background_scale_range(fg_models: Sequence[TexturedMesh], space: PoseSpace, cam: CameraIntrinsics,
                           multipliers: tuple[float, float] = (0.9, 1.5),
                           depth: float | None = None) -> ScaleRange:
    """Background size band relative to the average foreground size.

    The average is the mean projected bounding-box max-dimension over every
    foreground model (canonical orientation, on the optical axis) at every scale
    level. Background models are unit-sphere normalized, so their nominal size is
    the projected diameter of the unit sphere scaled by ``s``.
    """
    if not len(fg_models):
        raise ValueError("need at least one foreground model")
    sizes = [_extent(m, np.eye(3), (0.0, 0.0, d), cam) for m in fg_models for d in space.scale_distances]
    mean = float(np.mean(sizes))
    lo, hi = multipliers[0] * mean, multipliers[1] * mean
    depth = float(depth if depth is not None else space.scale_distances[-1])
    f = cam.focal
    return ScaleRange(radius_for_diameter(lo, depth, f), radius_for_diameter(hi, depth, f),
                      lo, hi, depth, mean)


def draw_subrange(rng: np.random.Generator, lo: float, hi: float, min_fraction: float = 0.1) -> tuple[float, float]:
    """Random sub-interval of [lo, hi] at least ``min_fraction`` of its width."""
    a, b = sorted(rng.uniform(lo, hi, size=2))
    min_width = min_fraction * (hi - lo)
    if b - a < min_width:
        mid = min(max((a + b) / 2.0, lo + min_width / 2.0), hi - min_width / 2.0)
        a, b = mid - min_width / 2.0, mid + min_width / 2.0
    return float(a), float(b)


def uncovered_cells(covered: np.ndarray, factor: int) -> np.ndarray:
    """Low-resolution occupancy: a cell is uncovered if any of its pixels is."""
    h, w = covered.shape
    ch, cw = -(-h // factor), -(-w // factor)
    padded = np.ones((ch * factor, cw * factor), bool)
    padded[:h, :w] = covered
    return ~padded.reshape(ch, factor, cw, factor).all(axis=(1, 3))


def _pick_uncovered_pixel(rng, covered: np.ndarray, factor: int,
                          cell_map: np.ndarray | None = None) -> tuple[int, int] | None:
    if cell_map is None:
        cell_map = uncovered_cells(covered, factor)
    cells = np.flatnonzero(cell_map)
    if cells.size == 0:
        return None
    cw = -(-covered.shape[1] // factor)
    cell = cells[rng.integers(cells.size)]
    ci, cj = divmod(int(cell), cw)
    block = covered[ci * factor:(ci + 1) * factor, cj * factor:(cj + 1) * factor]
    free = np.flatnonzero(~block)
    bi, bj = divmod(int(free[rng.integers(free.size)]), block.shape[1])
    return ci * factor + bi, cj * factor + bj


def _random_clutter_object(rng, pool_size: int, cam: CameraIntrinsics, pixel: tuple[int, int],
                           size: float, depth: float, layer: Layer) -> PlacedObject:
    model_id = int(rng.integers(pool_size))
    rotation = random_rotation(rng)
    hue = float(rng.uniform(0.0, TWO_PI))
    i, j = pixel
    t = cam.ray_point(j + 0.5, i + 0.5, depth)
    scale = radius_for_diameter(size, depth, cam.focal)
    return PlacedObject(model_id, Pose.from_matrix(rotation, t), scale, hue, layer, projected_size=size)


def compose_background(rng: np.random.Generator, bg_pool: Sequence[TexturedMesh], cam: CameraIntrinsics,
                       scale_range: ScaleRange, *, occupancy_factor: int = 8,
                       min_subrange_fraction: float = 0.1, max_placement_factor: float = 10.0,
                       ) -> list[PlacedObject]:
    """Cover the whole frame with randomly posed, hue-shifted background models.

    Each image draws its own size sub-band; sizes are uniform within it. New
    objects are centered on a random uncovered pixel until no occupancy cell has
    an uncovered pixel left.

    Raises:
        CompositionError: coverage did not finish within ``max_placement_factor``
            times the expected number of placements.
    """
    if not len(bg_pool):
        raise ValueError("background pool is empty")
    lo, hi = draw_subrange(rng, scale_range.size_min, scale_range.size_max, min_subrange_fraction)
    mean_size = (lo + hi) / 2.0
    expected = max(1, math.ceil(cam.width * cam.height / (math.pi / 4.0 * mean_size ** 2)))
    limit = int(max_placement_factor * expected)
    canvas = SilhouetteCanvas(cam)
    placements: list[PlacedObject] = []
    f = occupancy_factor
    cell_map = uncovered_cells(canvas.instance > 0, f)
    while True:
        pixel = _pick_uncovered_pixel(rng, canvas.instance > 0, f, cell_map)
        if pixel is None:
            return placements
        if len(placements) >= limit:
            raise CompositionError(
                f"background still has uncovered cells after {len(placements)} placements "
                f"(expected about {expected})")
        size = float(rng.uniform(lo, hi))
        obj = _random_clutter_object(rng, len(bg_pool), cam, pixel, size, scale_range.depth, Layer.BACKGROUND)
        rows, cols = canvas.draw(obj, bg_pool[obj.model_id], len(placements) + 1)
        placements.append(obj)
        if rows.stop > rows.start and cols.stop > cols.start:
            # refresh only the occupancy cells the new object can have touched
            r0, r1 = rows.start // f, -(-rows.stop // f)
            c0, c1 = cols.start // f, -(-cols.stop // f)
            block = canvas.instance[r0 * f:r1 * f, c0 * f:c1 * f] > 0
            cell_map[r0:r1, c0:c1] = uncovered_cells(block, f)


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if directory.is_dir() else []
    if not files:
        raise FileNotFoundError(f"no background photos found in {directory}")
    return files


def load_real_background(path: Path, cam: CameraIntrinsics) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (cam.width, cam.height):
            im = im.resize((cam.width, cam.height), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8).copy()


def compose_mixed_background(rng: np.random.Generator, real_images: Sequence[Path] | str | Path,
                             bg_pool: Sequence[TexturedMesh], cam: CameraIntrinsics, scale_range: ScaleRange,
                             synthetic_fraction: float = 0.1, *, exclude: np.ndarray | None = None,
                             already_synthetic: np.ndarray | None = None, attempts: int = 50,
                             min_subrange_fraction: float = 0.1) -> tuple[np.ndarray, list[PlacedObject]]:
    """Real photo background partially covered by synthetic clutter.

    Synthetic coverage is counted over the image outside ``exclude`` (the
    foreground region), including pixels in ``already_synthetic`` (occluder
    spill). Objects are added while each one brings coverage closer to the target.
    """
    files = list_images(real_images) if isinstance(real_images, (str, Path)) else list(real_images)
    if not files:
        raise FileNotFoundError("no background photos given")
    photo = load_real_background(files[int(rng.integers(len(files)))], cam)
    if synthetic_fraction <= 0:
        return photo, []
    h, w = cam.height, cam.width
    exclude = np.zeros((h, w), bool) if exclude is None else exclude
    base = np.zeros((h, w), bool) if already_synthetic is None else already_synthetic & ~exclude
    target = synthetic_fraction * h * w
    lo, hi = draw_subrange(rng, scale_range.size_min, scale_range.size_max, min_subrange_fraction)
    canvas = SilhouetteCanvas(cam)
    placements: list[PlacedObject] = []
    current = int(base.sum())
    failures = 0
    while current < target and failures < attempts:
        free = ~(exclude | base | (canvas.instance > 0))
        pixel = _pick_uncovered_pixel(rng, ~free, 8)
        if pixel is None:
            break
        obj = _random_clutter_object(rng, len(bg_pool), cam, pixel, float(rng.uniform(lo, hi)),
                                     scale_range.depth, Layer.BACKGROUND)
        trial = canvas.copy()
        trial.draw(obj, bg_pool[obj.model_id], len(placements) + 1)
        new = int(((trial.instance > 0) & ~exclude | base).sum())
        if abs(new - target) < abs(current - target):
            canvas, current = trial, new
            placements.append(obj)
        else:
            failures += 1
    return photo, placements


# --------------------------------------------------------------------------- foreground


def bbox_overlap(a: BBox, b: BBox) -> float:
    """Intersection area over the smaller box's area."""
    smaller = min(a.area, b.area)
    return 0.0 if smaller <= 0 else a.intersection(b) / smaller


def place_foreground(cursor: Cursor, fg_models: Sequence[TexturedMesh], space: PoseSpace,
                     cam: CameraIntrinsics, rng: np.random.Generator,
                     constraints: ForegroundConstraints = ForegroundConstraints(),
                     coverage_target: float | None = None) -> tuple[list[PlacedObject], Cursor]:
    """Fill one foreground scene from the schedule.

    Each scheduled object gets up to ``constraints.attempts`` uniformly random
    image locations; the first satisfying the truncation and pairwise-overlap
    limits is kept. When an object cannot be placed the scene ends and the cursor
    stays on it, so the next scene resumes with the same item.

    With ``coverage_target`` (fraction of the image), the scene ends once the
    union of foreground silhouettes reaches the target, and an object is only
    accepted if it brings the coverage closer to the target.
    """
    num_objects = len(fg_models)
    placements: list[PlacedObject] = []
    boxes: list[BBox] = []
    canvas = SilhouetteCanvas(cam) if coverage_target is not None else None
    covered = 0
    target_px = None if coverage_target is None else coverage_target * cam.width * cam.height
    skipped = 0
    while len(placements) < constraints.max_objects:
        if target_px is not None and covered >= target_px:
            break
        item = cursor.current(num_objects, space)
        mesh = fg_models[item.object_index]
        depth = space.scale_distances[item.scale_index]
        ref = Pose.from_matrix(space.object_rotation(item.view_index, item.inplane_index), (0.0, 0.0, depth),
                               provenance=item.pose_provenance)
        rotated = mesh.vertices @ ref.rotation.T
        accepted = None
        for _ in range(constraints.attempts):
            u = rng.uniform(0.0, cam.width)
            v = rng.uniform(0.0, cam.height)
            t = cam.ray_point(u, v, depth)
            pts = rotated + t
            uv = np.stack([cam.fx * pts[:, 0] / pts[:, 2] + cam.cx, cam.fy * pts[:, 1] / pts[:, 2] + cam.cy], axis=1)
            box, trunc = bbox_of_points(uv, cam, mesh.triangles)
            if trunc > constraints.max_truncation:
                continue
            if any(bbox_overlap(box, other) > constraints.max_overlap for other in boxes):
                continue
            obj = PlacedObject(item.object_index, ref.with_translation(t), 1.0, 0.0, Layer.FOREGROUND, item=item)
            if canvas is not None:
                trial = canvas.copy()
                trial.draw(obj, mesh, len(placements) + 1)
                new = int((trial.instance > 0).sum())
                if abs(new - target_px) >= abs(covered - target_px):
                    continue
                canvas, covered = trial, new
            accepted = (obj, box)
            break
        if accepted is None:
            if placements:
                break
            # an item that fits nowhere even in an empty scene would stall the schedule forever
            skipped += 1
            log.warning("skipping unplaceable schedule item %s", item)
            if skipped > num_objects * space.size:
                raise CompositionError("no schedule item can be placed in an empty image")
            cursor = cursor.advanced(num_objects, space)
            continue
        placements.append(accepted[0])
        boxes.append(accepted[1])
        cursor = cursor.advanced(num_objects, space)
    return placements, cursor


def foreground_canvas(foreground: Sequence[PlacedObject], fg_models, cam: CameraIntrinsics) -> SilhouetteCanvas:
    canvas = SilhouetteCanvas(cam)
    for k, obj in enumerate(foreground):
        canvas.draw(obj, fg_models[obj.model_id], k + 1)
    return canvas


# --------------------------------------------------------------------------- occluders


def _coverage(visible: np.ndarray, occ: np.ndarray) -> float:
    n = visible.sum()
    return 0.0 if n == 0 else float((visible & occ).sum()) / float(n)


def _mask_extent(mask: np.ndarray) -> tuple[slice, slice]:
    rows, cols = np.any(mask, axis=1), np.any(mask, axis=0)
    if not rows.any():
        return slice(0, 0), slice(0, 0)
    r, c = np.flatnonzero(rows), np.flatnonzero(cols)
    return slice(r[0], r[-1] + 1), slice(c[0], c[-1] + 1)


def place_occluders(rng: np.random.Generator, foreground: Sequence[PlacedObject], fg_models,
                    bg_pool: Sequence[TexturedMesh], cam: CameraIntrinsics, *,
                    probability: float = 0.5, coverage_range: tuple[float, float] = (0.1, 0.3),
                    tolerance: float = 0.03, spill: float = 0.02, attempts: int = 5,
                    min_visible_pixels: int = 64, fg_instance: np.ndarray | None = None,
                    ) -> list[PlacedObject]:
    """Occluders drawn from the background pool, one per selected foreground object.

    The occluder is centered at a uniform point of the object's box and its scale
    is bisected until it hides the drawn target fraction of the object's visible
    pixels. A candidate is rejected and redrawn if it hides more than ``spill``
    of any object that has no occluder yet, or pushes an already occluded object
    past its target plus ``tolerance``; after ``attempts`` failures the object
    goes without occluder.
    """
    if not coverage_range[0] > 0:
        raise ValueError("coverage range must exclude zero")
    if not len(foreground):
        return []
    if fg_instance is None:
        fg_instance = foreground_canvas(foreground, fg_models, cam).instance
    n = len(foreground)
    visible = [fg_instance == k + 1 for k in range(n)]
    counts = np.array([v.sum() for v in visible])
    extents = [_mask_extent(v) for v in visible]
    wants = rng.random(n) < probability
    targets = rng.uniform(coverage_range[0], coverage_range[1], size=n)
    wants &= counts >= min_visible_pixels
    occ_mask = np.zeros(fg_instance.shape, bool)
    done = np.zeros(n, bool)
    occluders: list[PlacedObject] = []
    f = cam.focal

    for i in range(n):
        if not wants[i]:
            continue
        fg = foreground[i]
        box, _ = project_bbox(fg_models[fg.model_id], fg.pose, cam, fg.scale)
        x0, y0 = max(0, int(math.floor(box.x0))), max(0, int(math.floor(box.y0)))
        window = (x0, y0, max(1, int(math.ceil(box.x1)) - x0), max(1, int(math.ceil(box.y1)) - y0))
        sl = (slice(y0, y0 + window[3]), slice(x0, x0 + window[2]))
        vis_win = visible[i][sl]
        occ_win = occ_mask[sl]
        depth = fg.pose.translation[2]
        size_cap = 2.0 * f * 0.5 / math.sqrt(1.0 - 0.25)  # radius at most half the depth
        size_hi = min(2.5 * max(box.width, box.height), size_cap)
        target = targets[i]
        for _ in range(attempts):
            model_id = int(rng.integers(len(bg_pool)))
            rotation = random_rotation(rng)
            hue = float(rng.uniform(0.0, TWO_PI))
            t = cam.ray_point(rng.uniform(box.x0, box.x1), rng.uniform(box.y0, box.y1), depth)
            pose = Pose.from_matrix(rotation, t)
            mesh = bg_pool[model_id]

            def make(size):
                return PlacedObject(model_id, pose, radius_for_diameter(size, depth, f), hue,
                                    Layer.OCCLUDER, projected_size=size, linked_foreground=i,
                                    target_coverage=float(target))

            def cov(size):
                return _coverage(vis_win, occ_win | silhouette(make(size), mesh, cam, window))

            lo, hi = 0.0, size_hi
            if cov(hi) < target:
                continue
            size = hi
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                c = cov(mid)
                if abs(c - target) <= tolerance / 4.0:
                    size = mid
                    break
                if c < target:
                    lo = mid
                else:
                    hi = size = mid
            obj = make(size)
            new_occ = occ_mask | silhouette(obj, mesh, cam)
            ok = True
            for k in range(n):
                if counts[k] == 0:
                    continue
                ek = extents[k]
                ck = _coverage(visible[k][ek], new_occ[ek])
                if k == i:
                    ok = abs(ck - target) <= tolerance
                elif done[k]:
                    ok = ck <= min(targets[k], coverage_range[1]) + tolerance
                else:
                    ok = ck <= spill
                if not ok:
                    break
            if ok:
                occ_mask = new_occ
                done[i] = True
                occluders.append(obj)
                break
        else:
            log.debug("no occluder for foreground object %d", i)
    return occluders
