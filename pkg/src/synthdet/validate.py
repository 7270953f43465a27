"""Invariant checks over a generated dataset directory."""

from __future__ import annotations

import hashlib
import itertools
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .composer import bbox_overlap
from .dataset import COCO_NAME, MANIFEST_NAME, CocoDataset, DatasetManifest, replay
from .geometry import BBox

EPS = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check(name: str, failures: list[str], checked: int) -> CheckResult:
    if failures:
        shown = "; ".join(failures[:5]) + (" ..." if len(failures) > 5 else "")
        return CheckResult(name, False, f"{len(failures)} of {checked} failed: {shown}")
    return CheckResult(name, True, f"{checked} checked")


def validate_dataset(dataset_dir: str | Path, replay_images: int = 0) -> list[CheckResult]:
    dataset_dir = Path(dataset_dir)
    manifest = DatasetManifest.load(dataset_dir / MANIFEST_NAME)
    coco = CocoDataset.load(dataset_dir / COCO_NAME)
    config = manifest.generation_config()
    fgc, occ = config.foreground, config.occluders
    images = {rec["id"]: rec for rec in coco.data["images"]}
    by_image: dict[int, list[dict]] = {i: [] for i in images}
    for ann in coco.data["annotations"]:
        by_image.setdefault(ann["image_id"], []).append(ann)
    anns = coco.data["annotations"]
    results = []

    bad = []
    for rec in manifest.images:
        path = dataset_dir / rec["file_name"]
        if not path.exists():
            bad.append(f"{rec['file_name']} missing")
        elif hashlib.sha256(path.read_bytes()).hexdigest() != rec["sha256"]:
            bad.append(f"{rec['file_name']} hash mismatch")
        elif rec["annotation_count"] != len(by_image.get(rec["index"], [])):
            bad.append(f"{rec['file_name']} annotation count")
    results.append(_check("image files and hashes", bad, len(manifest.images)))

    bad = []
    for a in anns:
        img = images[a["image_id"]]
        x, y, w, h = a["bbox"]
        if not (x >= -EPS and y >= -EPS and w > 0 and h > 0
                and x + w <= img["width"] + EPS and y + h <= img["height"] + EPS):
            bad.append(f"ann {a['id']} bbox {a['bbox']}")
    results.append(_check("boxes inside image", bad, len(anns)))

    bad = [f"ann {a['id']} truncation {a['truncation']:.3f}" for a in anns
           if not -EPS <= a["truncation"] <= fgc.max_truncation + EPS]
    results.append(_check(f"truncation <= {fgc.max_truncation}", bad, len(anns)))

    bad, pairs = [], 0
    for image_id, group in by_image.items():
        boxes = [BBox(x, y, x + w, y + h) for x, y, w, h in (a["bbox"] for a in group)]
        for (i, a), (j, b) in itertools.combinations(enumerate(boxes), 2):
            pairs += 1
            ov = bbox_overlap(a, b)
            if ov > fgc.max_overlap + EPS:
                bad.append(f"image {image_id} objects {i},{j} overlap {ov:.3f}")
    results.append(_check(f"pairwise overlap <= {fgc.max_overlap}", bad, pairs))

    bad = []
    for a in anns:
        limit = occ.coverage_range[1] + occ.tolerance if a["has_occluder"] else occ.spill
        if not -EPS <= a["occlusion"] <= limit + EPS:
            bad.append(f"ann {a['id']} occlusion {a['occlusion']:.3f} (limit {limit:.3f})")
    results.append(_check("occlusion within limits", bad, len(anns)))

    bad = [f"image {i} has {len(g)}" for i, g in by_image.items() if len(g) > fgc.max_objects]
    results.append(_check(f"at most {fgc.max_objects} objects per image", bad, len(by_image)))

    bad = []
    for a in anns:
        q = np.asarray(a["pose"]["quaternion_wxyz"])
        if abs(np.linalg.norm(q) - 1.0) > 1e-6 or a["pose"]["translation"][2] <= 0:
            bad.append(f"ann {a['id']}")
    results.append(_check("valid poses", bad, len(anns)))

    if config.mode == "curriculum":
        positions = [(s["epoch"], s["scale_index"], s["view_index"], s["inplane_index"], s["object_index"])
                     for s in (a["schedule"] for a in sorted(anns, key=lambda a: (a["image_id"], a["id"])))]
        bad = [f"{p} after {q}" for q, p in zip(positions, positions[1:]) if not p > q]
        results.append(_check("curriculum order", bad, max(0, len(positions) - 1)))

    if replay_images > 0:
        n = min(replay_images, len(manifest.images))
        with tempfile.TemporaryDirectory() as tmp:
            again = replay(dataset_dir / MANIFEST_NAME, Path(tmp) / "replay", n)
        bad = [r["file_name"] for r, s in zip(manifest.images[:n], again.images) if r["sha256"] != s["sha256"]]
        results.append(_check("replay reproduces images", bad, n))
    return results
