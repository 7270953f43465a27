"""Layer fusion followed by image-space noise and blur."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .renderer import RenderBuffer

# fused layer codes
EMPTY, BACKGROUND, FOREGROUND, OCCLUDER = 0, 1, 2, 3


@dataclass
class FusedSample:
    rgb: np.ndarray            # (H, W, 3) uint8
    layer: np.ndarray          # (H, W) uint8, one of EMPTY/BACKGROUND/FOREGROUND/OCCLUDER
    instance: np.ndarray       # (H, W) int32, instance id within the winning layer
    visible_before: np.ndarray  # per foreground instance id (index 0 unused)
    visible_after: np.ndarray

    def occlusion(self, fg_id: int) -> float:
        before = self.visible_before[fg_id]
        return 0.0 if before == 0 else 1.0 - self.visible_after[fg_id] / before


def fuse(bg: RenderBuffer, fg: RenderBuffer, occ: RenderBuffer) -> FusedSample:
    """Occluders over foreground over background, decided by layer, not depth."""
    if not (bg.shape == fg.shape == occ.shape):
        raise ValueError(f"layer size mismatch: {bg.shape}, {fg.shape}, {occ.shape}")
    occ_on = occ.instance != 0
    fg_on = (fg.instance != 0) & ~occ_on
    rgb = np.where(occ_on[..., None], occ.rgb, np.where(fg_on[..., None], fg.rgb, bg.rgb))
    instance = np.where(occ_on, occ.instance, np.where(fg_on, fg.instance, bg.instance)).astype(np.int32)
    layer = np.where(occ_on, OCCLUDER, np.where(fg_on, FOREGROUND,
                                                 np.where(bg.instance != 0, BACKGROUND, EMPTY))).astype(np.uint8)
    n = int(fg.instance.max()) + 1
    before = np.bincount(fg.instance.ravel(), minlength=n)
    after = np.bincount(fg.instance[fg_on].ravel(), minlength=n)
    before[0] = after[0] = 0
    return FusedSample(rgb.astype(np.uint8), layer, instance, before, after)


def add_white_noise(img: np.ndarray, rng: np.random.Generator,
                    sigma_range: tuple[float, float] = (0.0, 8.0)) -> np.ndarray:
    """Add i.i.d. per-channel Gaussian noise with a per-image sigma (8-bit units)."""
    lo, hi = sigma_range
    if not 0 <= lo <= hi <= 30:
        raise ValueError(f"noise sigma range must lie within [0, 30], got {sigma_range}")
    sigma = rng.uniform(lo, hi) if hi > lo else lo
    if sigma == 0:
        return img.copy()
    noisy = img.astype(np.float64) + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    if size == 1:
        return np.ones(1)
    x = np.arange(size) - size // 2
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, size: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with mirrored borders (edge pixel repeated)."""
    if size == 1:
        return img.copy()
    k = gaussian_kernel(size, sigma)
    out = ndimage.convolve1d(img.astype(np.float64), k, axis=0, mode="reflect")
    out = ndimage.convolve1d(out, k, axis=1, mode="reflect")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def random_blur(img: np.ndarray, rng: np.random.Generator, kernel_sizes=(1, 3, 5, 7, 9),
                sigma_range: tuple[float, float] = (0.3, 3.0)) -> np.ndarray:
    """Gaussian blur with a randomly chosen kernel size and standard deviation."""
    sizes = list(kernel_sizes)
    for s in sizes:
        gaussian_kernel(s, 1.0)  # validates odd size
    size = int(sizes[rng.integers(len(sizes))])
    sigma = float(rng.uniform(*sigma_range))
    return gaussian_blur(img, size, sigma)
