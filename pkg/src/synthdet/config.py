"""Generation settings, loaded from YAML."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .geometry import CameraIntrinsics


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CameraConfig(_Section):
    fx: float = 920.0
    fy: float = 920.0
    cx: float = 480.0
    cy: float = 360.0
    width: int = 960
    height: int = 720
    jitter_fraction: float = Field(0.05, ge=0.0, le=0.2)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


class PoseSpaceConfig(_Section):
    subdivision_level: int = Field(1, ge=0, le=5)
    inplane_steps: int = Field(8, ge=1)
    num_scales: int = Field(4, ge=1)
    near_distance: float = 6.0
    far_distance: float = 24.0
    hemisphere: Literal["full", "upper"] = "full"

    @model_validator(mode="after")
    def _distances(self):
        # normalized models have radius 1; nearer than that the camera sits inside the object
        if not 1.0 < self.near_distance:
            raise ValueError("near_distance must exceed the unit model radius (1.0)")
        if self.num_scales > 1 and not self.near_distance < self.far_distance:
            raise ValueError("near_distance must be smaller than far_distance")
        return self


class ForegroundConfig(_Section):
    max_objects: int = Field(12, ge=1)
    max_truncation: float = Field(0.5, ge=0.0, le=1.0)
    max_overlap: float = Field(0.3, ge=0.0, le=1.0)
    placement_attempts: int = Field(100, ge=1)


class BackgroundConfig(_Section):
    size_multipliers: tuple[float, float] = (0.9, 1.5)
    min_subrange_fraction: float = Field(0.1, ge=0.0, le=1.0)
    occupancy_downsample: int = Field(8, ge=1)
    depth: Optional[float] = None
    max_placement_factor: float = Field(10.0, gt=0)

    @field_validator("size_multipliers")
    @classmethod
    def _ordered(cls, v):
        if not 0 < v[0] < v[1]:
            raise ValueError("size_multipliers must satisfy 0 < low < high")
        return v


class OccluderConfig(_Section):
    probability: float = Field(0.5, ge=0.0, le=1.0)
    coverage_range: tuple[float, float] = (0.1, 0.3)
    tolerance: float = Field(0.03, gt=0.0)
    spill: float = Field(0.02, ge=0.0)
    attempts: int = Field(5, ge=1)

    @field_validator("coverage_range")
    @classmethod
    def _range(cls, v):
        if not 0 < v[0] <= v[1] < 1:
            raise ValueError("coverage_range must satisfy 0 < low <= high < 1")
        return v


class MixedConfig(_Section):
    real_fraction: float = 0.7
    synthetic_fraction: float = 0.1
    foreground_fraction: float = 0.2

    @model_validator(mode="after")
    def _sums_to_one(self):
        total = self.real_fraction + self.synthetic_fraction + self.foreground_fraction
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"mixed-mode fractions must sum to 1, got {total}")
        return self


class LightingConfig(_Section):
    num_lights: int = Field(1, ge=1)
    color_jitter: float = Field(0.2, ge=0.0, le=1.0)
    ambient_range: tuple[float, float] = (0.25, 0.5)


class PostprocessConfig(_Section):
    noise_sigma_range: tuple[float, float] = (0.0, 8.0)
    blur_kernel_sizes: tuple[int, ...] = (1, 3, 5, 7, 9)
    blur_sigma_range: tuple[float, float] = (0.3, 3.0)

    @field_validator("blur_kernel_sizes")
    @classmethod
    def _odd(cls, v):
        if not v or any(k < 1 or k % 2 == 0 for k in v):
            raise ValueError(f"blur kernel sizes must be positive odd integers, got {v}")
        return v

    @field_validator("noise_sigma_range")
    @classmethod
    def _sigma(cls, v):
        if not 0 <= v[0] <= v[1] <= 30:
            raise ValueError("noise sigma range must lie within [0, 30]")
        return v


class ModelPaths(_Section):
    foreground: Path
    background: Path
    real_backgrounds: Optional[Path] = None


class GenerationConfig(_Section):
    seed: int = 0
    num_images: int = Field(1, ge=0)
    mode: Literal["curriculum", "random"] = "curriculum"
    background_mode: Literal["full-synthetic", "mixed"] = "full-synthetic"
    workers: int = Field(1, ge=1)
    model_cache_size: int = Field(512, ge=1)
    background_color: tuple[int, int, int] = (0, 0, 0)
    models: ModelPaths
    camera: CameraConfig = CameraConfig()
    pose_space: PoseSpaceConfig = PoseSpaceConfig()
    foreground: ForegroundConfig = ForegroundConfig()
    background: BackgroundConfig = BackgroundConfig()
    occluders: OccluderConfig = OccluderConfig()
    mixed: MixedConfig = MixedConfig()
    lighting: LightingConfig = LightingConfig()
    postprocess: PostprocessConfig = PostprocessConfig()

    @model_validator(mode="after")
    def _mixed_needs_photos(self):
        if self.background_mode == "mixed" and self.models.real_backgrounds is None:
            raise ValueError("background_mode 'mixed' requires models.real_backgrounds")
        return self

    def resolved(self, base_dir: Path) -> GenerationConfig:
        """Copy with model directories made absolute relative to ``base_dir``."""
        def fix(p):
            return None if p is None else (p if p.is_absolute() else (base_dir / p).resolve())
        m = self.models
        return self.model_copy(update={"models": ModelPaths(
            foreground=fix(m.foreground), background=fix(m.background),
            real_backgrounds=fix(m.real_backgrounds))})

    def with_overrides(self, **kwargs) -> GenerationConfig:
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return GenerationConfig.model_validate({**self.model_dump(), **updates})

    def snapshot(self) -> dict:
        return self.model_dump(mode="json")


def load_config(path: str | Path) -> GenerationConfig:
    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return GenerationConfig.model_validate(data).resolved(path.parent.resolve())
