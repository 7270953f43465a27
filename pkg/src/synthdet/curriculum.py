"""Deterministic pose/object schedule and its random-sampling counterpart.

Ordering, slowest to fastest: scale (nearest first), out-of-plane view,
in-plane step, object. One pass over all tuples is an epoch; epochs repeat.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .viewsphere import PoseSpace


@dataclass(frozen=True)
class ScheduleItem:
    object_index: int
    scale_index: int
    view_index: int
    inplane_index: int
    epoch: int = 0

    @property
    def pose_provenance(self) -> tuple[int, int, int]:
        return (self.scale_index, self.view_index, self.inplane_index)

    def key(self) -> tuple[int, int, int, int]:
        return (self.object_index, self.scale_index, self.view_index, self.inplane_index)


@dataclass(frozen=True)
class CurriculumCursor:
    scale_index: int = 0
    view_index: int = 0
    inplane_index: int = 0
    object_index: int = 0
    epoch: int = 0

    def validate(self, num_objects: int, space: PoseSpace) -> None:
        bounds = (
            ("scale_index", self.scale_index, space.num_scales),
            ("view_index", self.view_index, space.num_views),
            ("inplane_index", self.inplane_index, space.inplane_steps),
            ("object_index", self.object_index, num_objects),
        )
        for name, value, bound in bounds:
            if not 0 <= value < bound:
                raise ValueError(f"cursor {name}={value} outside [0, {bound})")
        if self.epoch < 0:
            raise ValueError("cursor epoch must be >= 0")

    def current(self, num_objects: int, space: PoseSpace) -> ScheduleItem:
        return ScheduleItem(self.object_index, self.scale_index, self.view_index,
                            self.inplane_index, self.epoch)

    def advanced(self, num_objects: int, space: PoseSpace) -> CurriculumCursor:
        obj, ip, view, scale, epoch = (self.object_index + 1, self.inplane_index, self.view_index,
                                       self.scale_index, self.epoch)
        if obj == num_objects:
            obj, ip = 0, ip + 1
        if ip == space.inplane_steps:
            ip, view = 0, view + 1
        if view == space.num_views:
            view, scale = 0, scale + 1
        if scale == space.num_scales:
            scale, epoch = 0, epoch + 1
        return CurriculumCursor(scale, view, ip, obj, epoch)

    @property
    def position(self) -> tuple[int, int, int, int, int]:
        return (self.epoch, self.scale_index, self.view_index, self.inplane_index, self.object_index)

    def to_dict(self) -> dict:
        return {"kind": "curriculum", **asdict(self)}


@dataclass(frozen=True)
class RandomCursor:
    """Position in an index-addressed stream of independent uniform draws.

    Item ``k`` depends only on (seed, k), so the stream can be resumed from the
    index alone and a failed placement can retry the same item in the next scene.
    """

    seed: int
    index: int = 0

    def current(self, num_objects: int, space: PoseSpace) -> ScheduleItem:
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(0x7A4D, self.index)))
        return random_item(rng, num_objects, space)

    def advanced(self, num_objects: int, space: PoseSpace) -> RandomCursor:
        return replace(self, index=self.index + 1)

    @property
    def position(self) -> tuple[int]:
        return (self.index,)

    def to_dict(self) -> dict:
        return {"kind": "random", **asdict(self)}


Cursor = CurriculumCursor | RandomCursor


def cursor_from_dict(data: dict) -> Cursor:
    data = dict(data)
    kind = data.pop("kind", "curriculum")
    if kind == "curriculum":
        return CurriculumCursor(**data)
    if kind == "random":
        return RandomCursor(**data)
    raise ValueError(f"unknown cursor kind {kind!r}")


def next_item(cursor: Cursor, num_objects: int, space: PoseSpace) -> tuple[ScheduleItem, Cursor]:
    """Return the item under ``cursor`` and the cursor moved one step forward."""
    return cursor.current(num_objects, space), cursor.advanced(num_objects, space)


def random_item(rng: np.random.Generator, num_objects: int, space: PoseSpace) -> ScheduleItem:
    """Independent uniform draw of object, scale, view and in-plane step."""
    obj, scale, view, ip = rng.integers(
        0, [num_objects, space.num_scales, space.num_views, space.inplane_steps])
    return ScheduleItem(int(obj), int(scale), int(view), int(ip))


def epoch_items(num_objects: int, space: PoseSpace, epoch: int = 0):
    """Every item of one epoch in schedule order."""
    cursor: Cursor = CurriculumCursor(epoch=epoch)
    for _ in range(num_objects * space.size):
        item, cursor = next_item(cursor, num_objects, space)
        yield item
