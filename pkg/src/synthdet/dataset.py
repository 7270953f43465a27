"""End-to-end generation: planning, per-image rendering, annotation and output.

Foreground placement consumes the schedule and therefore runs sequentially in a
planning pass. Everything after that depends only on (config, seed, image index,
plan), so images render in any order or process and still come out bit-identical.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .composer import (ForegroundConstraints, Layer, LayerComposition, PlacedObject, ScaleRange,
                       background_scale_range, compose_background, compose_mixed_background,
                       foreground_canvas, list_images, place_foreground, place_occluders)
from .config import GenerationConfig
from .curriculum import CurriculumCursor, Cursor, RandomCursor, cursor_from_dict
from .geometry import CameraIntrinsics, TexturedMesh, load_mesh, normalize_mesh, perturb_intrinsics, project_bbox
from .postprocess import FusedSample, add_white_noise, fuse, random_blur
from .renderer import LightSource, RenderBuffer, rasterize, sample_light
from .viewsphere import PoseSpace

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
COCO_NAME = "annotations.json"
MANIFEST_VERSION = 1


class GenerationError(RuntimeError):
    pass


def rng_for(seed: int, index: int, tag: str) -> np.random.Generator:
    """Independent stream per (master seed, image index, concern)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, zlib.crc32(tag.encode()))))


class ModelPool(Sequence):
    """OBJ models of a directory, loaded and unit-sphere normalized on first use."""

    def __init__(self, directory: str | Path, cache_size: int = 512):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"model directory not found: {self.directory}")
        self.paths = sorted(self.directory.glob("*.obj"))
        if not self.paths:
            raise FileNotFoundError(f"no .obj models in {self.directory}")
        self._get = functools.lru_cache(maxsize=cache_size)(self._read)

    def _read(self, index: int) -> TexturedMesh:
        return normalize_mesh(load_mesh(self.paths[index]))

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        return self._get(int(index))

    @property
    def names(self) -> list[str]:
        return [p.stem for p in self.paths]


@dataclass
class GenerationContext:
    config: GenerationConfig
    camera: CameraIntrinsics
    space: PoseSpace
    fg_models: Sequence[TexturedMesh]
    bg_models: Sequence[TexturedMesh]
    scale_range: ScaleRange
    photos: list[Path] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)

    @classmethod
    def from_config(cls, config: GenerationConfig, fg_models=None, bg_models=None) -> GenerationContext:
        cam = config.camera.intrinsics()
        ps = config.pose_space
        space = PoseSpace.build(ps.subdivision_level, ps.inplane_steps, ps.num_scales,
                                ps.near_distance, ps.far_distance, ps.hemisphere)
        if fg_models is None:
            pool = ModelPool(config.models.foreground, config.model_cache_size)
            fg_models, names = list(pool), pool.names
        else:
            names = [getattr(m, "name", "") or f"object_{k}" for k, m in enumerate(fg_models)]
        if bg_models is None:
            bg_models = ModelPool(config.models.background, config.model_cache_size)
        if not len(bg_models):
            raise ValueError("background pool is empty")
        photos = []
        if config.background_mode == "mixed":
            photos = list_images(config.models.real_backgrounds)
        srange = background_scale_range(fg_models, space, cam, config.background.size_multipliers,
                                        config.background.depth)
        return cls(config, cam, space, fg_models, bg_models, srange, photos, names)

    def initial_cursor(self) -> Cursor:
        if self.config.mode == "random":
            return RandomCursor(seed=self.config.seed)
        return CurriculumCursor()


# --------------------------------------------------------------------------- planning


@dataclass
class ImagePlan:
    index: int
    camera: CameraIntrinsics
    foreground: list[PlacedObject]
    cursor_before: Cursor
    cursor_after: Cursor


def plan_images(ctx: GenerationContext, start: int, count: int, cursor: Cursor) -> list[ImagePlan]:
    """Sequential pass assigning schedule items and foreground placements to images."""
    cfg = ctx.config
    constraints = ForegroundConstraints(cfg.foreground.max_objects, cfg.foreground.max_truncation,
                                        cfg.foreground.max_overlap, cfg.foreground.placement_attempts)
    target = cfg.mixed.foreground_fraction if cfg.background_mode == "mixed" else None
    plans = []
    for index in range(start, start + count):
        cam = perturb_intrinsics(ctx.camera, rng_for(cfg.seed, index, "camera"), cfg.camera.jitter_fraction)
        placements, after = place_foreground(cursor, ctx.fg_models, ctx.space, cam,
                                             rng_for(cfg.seed, index, "foreground"), constraints, target)
        plans.append(ImagePlan(index, cam, placements, cursor, after))
        cursor = after
    return plans


# --------------------------------------------------------------------------- per image


@dataclass
class Annotation:
    class_id: int
    bbox: list[float]               # x, y, w, h in pixels
    quaternion: list[float]         # w, x, y, z
    translation: list[float]
    truncation: float
    occlusion: float
    has_occluder: bool = False
    schedule: dict | None = None

    def to_coco(self, ann_id: int, image_id: int) -> dict:
        return {
            "id": ann_id, "image_id": image_id, "category_id": self.class_id,
            "bbox": self.bbox, "area": self.bbox[2] * self.bbox[3], "iscrowd": 0,
            "pose": {"quaternion_wxyz": self.quaternion, "translation": self.translation},
            "truncation": self.truncation, "occlusion": self.occlusion,
            "has_occluder": self.has_occluder, "schedule": self.schedule,
        }

    @classmethod
    def from_coco(cls, rec: dict) -> Annotation:
        return cls(rec["category_id"], list(rec["bbox"]), list(rec["pose"]["quaternion_wxyz"]),
                   list(rec["pose"]["translation"]), rec["truncation"], rec["occlusion"],
                   rec.get("has_occluder", False), rec.get("schedule"))


def annotate(sample: FusedSample, foreground: Sequence[PlacedObject], cam: CameraIntrinsics,
             fg_models, occluded: set[int] = frozenset()) -> list[Annotation]:
    """One record per foreground placement; boxes come from the full model projection."""
    out = []
    for k, obj in enumerate(foreground):
        box, trunc = project_bbox(fg_models[obj.model_id], obj.pose, cam, obj.scale)
        schedule = None
        if obj.item is not None:
            it = obj.item
            schedule = {"object_index": it.object_index, "scale_index": it.scale_index,
                        "view_index": it.view_index, "inplane_index": it.inplane_index, "epoch": it.epoch}
        out.append(Annotation(obj.model_id + 1, box.xywh(), list(obj.pose.quaternion),
                              list(obj.pose.translation), trunc, float(sample.occlusion(k + 1)),
                              k in occluded, schedule))
    return out


@dataclass
class GeneratedSample:
    index: int
    camera: CameraIntrinsics
    composition: LayerComposition
    lights: list[LightSource]
    layers: tuple[RenderBuffer, RenderBuffer, RenderBuffer]
    fused: FusedSample
    image: np.ndarray
    annotations: list[Annotation]

    def area_fractions(self) -> dict[str, float]:
        """Share of the frame taken by foreground, synthetic clutter and real photo."""
        bg, fg, occ = self.layers
        fg_on = fg.instance > 0
        synth = ~fg_on & ((bg.instance > 0) | (occ.instance > 0))
        fg_frac = float(fg_on.mean())
        synth_frac = float(synth.mean())
        return {"foreground": fg_frac, "synthetic": synth_frac, "real": 1.0 - fg_frac - synth_frac}


def generate_sample(ctx: GenerationContext, plan: ImagePlan) -> GeneratedSample:
    cfg = ctx.config
    seed, index, cam = cfg.seed, plan.index, plan.camera
    lt = cfg.lighting
    lights = [sample_light(rng_for(seed, index, f"light/{k}"), lt.color_jitter, lt.ambient_range)
              for k in range(lt.num_lights)]
    fg = plan.foreground
    fg_instance = foreground_canvas(fg, ctx.fg_models, cam).instance
    oc = cfg.occluders
    occluders = place_occluders(rng_for(seed, index, "occluders"), fg, ctx.fg_models, ctx.bg_models, cam,
                                probability=oc.probability, coverage_range=oc.coverage_range,
                                tolerance=oc.tolerance, spill=oc.spill, attempts=oc.attempts,
                                fg_instance=fg_instance)
    occ_buf = rasterize(occluders, ctx.bg_models, cam, lights)
    bgc = cfg.background
    bg_rng = rng_for(seed, index, "background")
    if cfg.background_mode == "mixed":
        photo, background = compose_mixed_background(
            bg_rng, ctx.photos, ctx.bg_models, cam, ctx.scale_range, cfg.mixed.synthetic_fraction,
            exclude=fg_instance > 0, already_synthetic=occ_buf.instance > 0,
            min_subrange_fraction=bgc.min_subrange_fraction)
        bg_buf = rasterize(background, ctx.bg_models, cam, lights, background=photo)
    else:
        photo = None
        background = compose_background(bg_rng, ctx.bg_models, cam, ctx.scale_range,
                                        occupancy_factor=bgc.occupancy_downsample,
                                        min_subrange_fraction=bgc.min_subrange_fraction,
                                        max_placement_factor=bgc.max_placement_factor)
        bg_buf = rasterize(background, ctx.bg_models, cam, lights, background=cfg.background_color)
    fg_buf = rasterize(fg, ctx.fg_models, cam, lights)
    fused = fuse(bg_buf, fg_buf, occ_buf)
    pp = cfg.postprocess
    img = add_white_noise(fused.rgb, rng_for(seed, index, "noise"), pp.noise_sigma_range)
    img = random_blur(img, rng_for(seed, index, "blur"), pp.blur_kernel_sizes, pp.blur_sigma_range)
    occluded = {o.linked_foreground for o in occluders}
    annotations = annotate(fused, fg, cam, ctx.fg_models, occluded)
    comp = LayerComposition(background, list(fg), occluders, photo)
    return GeneratedSample(index, cam, comp, lights, (bg_buf, fg_buf, occ_buf), fused, img, annotations)


# --------------------------------------------------------------------------- output


def image_file_name(index: int) -> str:
    return f"images/{index:06d}.png"


class CocoDataset:
    """COCO-style detection annotations kept in memory and flushed as one JSON file."""

    def __init__(self, class_names: Sequence[str], info: dict | None = None):
        self.data = {
            "info": info or {"description": "synthetic detection dataset"},
            "images": [],
            "annotations": [],
            "categories": [{"id": k + 1, "name": n, "supercategory": "object"} for k, n in enumerate(class_names)],
        }

    @classmethod
    def load(cls, path: str | Path) -> CocoDataset:
        obj = cls([])
        with open(path) as fh:
            obj.data = json.load(fh)
        return obj

    def add(self, index: int, file_name: str, width: int, height: int, annotations: Sequence[Annotation]) -> None:
        self.data["images"].append({"id": index, "file_name": file_name, "width": width, "height": height})
        next_id = len(self.data["annotations"])
        for k, ann in enumerate(annotations):
            self.data["annotations"].append(ann.to_coco(next_id + k, index))

    def annotations_for(self, image_id: int) -> list[dict]:
        return [a for a in self.data["annotations"] if a["image_id"] == image_id]

    def write(self, path: str | Path) -> None:
        _atomic_json(path, self.data)


def _atomic_json(path: str | Path, data) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(data, fh, indent=1)
    os.replace(tmp, path)


def write_sample(img: np.ndarray, annotations: Sequence[Annotation], out_dir: str | Path, index: int,
                 coco: CocoDataset | None = None) -> tuple[Path, str]:
    """Write the image as PNG and register its annotations; returns (path, sha256)."""
    out_dir = Path(out_dir)
    name = image_file_name(index)
    path = out_dir / name
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(path, format="PNG", compress_level=1)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError as exc:
        raise OSError(f"cannot write sample {index} to {path}: {exc}") from exc
    if coco is not None:
        coco.add(index, name, img.shape[1], img.shape[0], annotations)
    return path, digest


@dataclass
class DatasetManifest:
    config: dict
    seed: int
    cursor: dict
    images: list[dict] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def to_json(self) -> dict:
        return {"version": self.version, "seed": self.seed, "config": self.config,
                "cursor": self.cursor, "images": self.images}

    @classmethod
    def from_json(cls, data: dict) -> DatasetManifest:
        return cls(data["config"], data["seed"], data["cursor"], data["images"], data.get("version", 1))

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def write(self, path: str | Path) -> None:
        _atomic_json(path, self.to_json())

    def generation_config(self) -> GenerationConfig:
        return GenerationConfig.model_validate(self.config)


def config_snapshot(config: GenerationConfig) -> dict:
    # execution settings do not change the produced data, and the image count
    # may grow when a run is resumed
    snap = config.snapshot()
    for key in ("workers", "model_cache_size", "num_images"):
        snap.pop(key, None)
    return snap


# --------------------------------------------------------------------------- workers

_WORKER_CTX: GenerationContext | None = None


def _init_worker(config: GenerationConfig) -> None:
    global _WORKER_CTX
    _WORKER_CTX = GenerationContext.from_config(config)


def _render_and_write(ctx: GenerationContext, plan: ImagePlan, out_dir: Path):
    sample = generate_sample(ctx, plan)
    _, digest = write_sample(sample.image, sample.annotations, out_dir, plan.index)
    return plan.index, sample.annotations, digest, len(sample.composition.background), len(sample.composition.occluders)


def _worker_task(args):
    plan, out_dir = args
    return _render_and_write(_WORKER_CTX, plan, out_dir)


def run_generation(config: GenerationConfig, out_dir: str | Path, *, resume: bool = False,
                   ctx: GenerationContext | None = None, flush_every: int = 8,
                   progress: Callable[[int, int], None] | None = None) -> DatasetManifest:
    """Generate ``config.num_images`` samples into ``out_dir``.

    The manifest and COCO file are rewritten every ``flush_every`` images and at
    the end, so an aborted run leaves a consistent prefix that ``resume`` continues.
    """
    out_dir = Path(out_dir)
    ctx = ctx or GenerationContext.from_config(config)
    manifest_path, coco_path = out_dir / MANIFEST_NAME, out_dir / COCO_NAME
    snapshot = config_snapshot(config)
    if resume and manifest_path.exists():
        manifest = DatasetManifest.load(manifest_path)
        if manifest.config != snapshot or manifest.seed != config.seed:
            raise GenerationError(f"{manifest_path} was produced with a different config or seed")
        coco = CocoDataset.load(coco_path)
        cursor = cursor_from_dict(manifest.cursor)
    else:
        if manifest_path.exists():
            raise GenerationError(f"{out_dir} already holds a dataset; pass resume=True to continue it")
        out_dir.mkdir(parents=True, exist_ok=True)
        cursor = ctx.initial_cursor()
        manifest = DatasetManifest(snapshot, config.seed, cursor.to_dict())
        coco = CocoDataset(ctx.class_names, {"description": "synthetic detection dataset", "seed": config.seed})
    start = len(manifest.images)
    remaining = config.num_images - start
    if remaining <= 0:
        return manifest

    plans = plan_images(ctx, start, remaining, cursor)
    by_index = {p.index: p for p in plans}

    def record(result):
        index, annotations, digest, n_bg, n_occ = result
        plan = by_index[index]
        coco.add(index, image_file_name(index), plan.camera.width, plan.camera.height, annotations)
        manifest.images.append({
            "file_name": image_file_name(index), "index": index, "seed_offset": index,
            "annotation_count": len(annotations), "sha256": digest,
            "background_objects": n_bg, "occluders": n_occ,
            "cursor_after": plan.cursor_after.to_dict(),
        })
        manifest.cursor = plan.cursor_after.to_dict()
        done = len(manifest.images)
        if done % flush_every == 0:
            _flush(manifest, coco, manifest_path, coco_path)
        if progress is not None:
            progress(done, config.num_images)

    try:
        if config.workers == 1:
            for plan in plans:
                record(_render_and_write(ctx, plan, out_dir))
        else:
            tasks = [(plan, out_dir) for plan in plans]
            with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(config,)) as pool:
                for result in pool.map(_worker_task, tasks):
                    record(result)
    except Exception as exc:
        _flush(manifest, coco, manifest_path, coco_path)
        raise GenerationError(f"generation failed at image {len(manifest.images)}: {exc}") from exc
    _flush(manifest, coco, manifest_path, coco_path)
    return manifest


def _flush(manifest, coco, manifest_path, coco_path) -> None:
    coco.write(coco_path)
    manifest.write(manifest_path)


def replay(manifest_path: str | Path, out_dir: str | Path, num_images: int | None = None,
           workers: int = 1) -> DatasetManifest:
    """Regenerate (a prefix of) a dataset from its manifest."""
    manifest = DatasetManifest.load(manifest_path)
    config = manifest.generation_config()
    n = len(manifest.images) if num_images is None else min(num_images, len(manifest.images))
    config = config.with_overrides(num_images=n, workers=workers)
    return run_generation(config, out_dir)


# --------------------------------------------------------------------------- preview


def draw_boxes(img: np.ndarray, annotations: Sequence[dict], class_names: dict[int, str] | None = None) -> Image.Image:
    im = Image.fromarray(img).convert("RGB")
    draw = ImageDraw.Draw(im)
    for ann in annotations:
        x, y, w, h = ann["bbox"]
        color = (255, 64, 64) if ann.get("has_occluder") else (64, 255, 64)
        draw.rectangle([x, y, x + w, y + h], outline=color, width=2)
        label = (class_names or {}).get(ann["category_id"], str(ann["category_id"]))
        draw.text((x + 3, y + 2), label, fill=color)
    return im


def write_previews(dataset_dir: str | Path, out_dir: str | Path, limit: int | None = None) -> list[Path]:
    dataset_dir, out_dir = Path(dataset_dir), Path(out_dir)
    coco = CocoDataset.load(dataset_dir / COCO_NAME)
    names = {c["id"]: c["name"] for c in coco.data["categories"]}
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in coco.data["images"][:limit]:
        with Image.open(dataset_dir / rec["file_name"]) as im:
            img = np.asarray(im.convert("RGB"))
        path = out_dir / Path(rec["file_name"]).name
        draw_boxes(img, coco.annotations_for(rec["id"]), names).save(path)
        written.append(path)
    return written
