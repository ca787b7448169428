# /cooking_vit/src/augmentation.py

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import List, Sequence, Tuple

import cv2
import numpy as np
from matplotlib.colors import hsv_to_rgb as _mpl_hsv_to_rgb
from matplotlib.colors import rgb_to_hsv as _mpl_rgb_to_hsv

# Local imports
from .data_pipeline import Sample

# Set up logging for this module
logger = logging.getLogger(__name__)

EXPANSION_FACTOR = 5


@dataclass(frozen=True)
class AugmentSpec:
    """
    Parameter ranges for the training-set transforms.

    Every augmented copy samples all transforms jointly from these ranges.
    """
    rotation_max_degrees: float = 30.0
    hflip_probability: float = 0.5
    hsv_enabled: bool = True
    hue_shift_max: float = 0.05
    saturation_scale_max: float = 0.1
    brightness_delta_max: float = 0.2
    contrast_factor_range: Tuple[float, float] = (0.8, 1.25)
    shift_max_fraction: float = 0.1
    scale_range: Tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'contrast_factor_range', tuple(float(v) for v in self.contrast_factor_range))
        object.__setattr__(self, 'scale_range', tuple(float(v) for v in self.scale_range))
        self.validate()

    def validate(self):
        problems = []
        if not 0.0 <= self.hflip_probability <= 1.0:
            problems.append(f"hflip_probability {self.hflip_probability} outside [0, 1]")
        for name in ('rotation_max_degrees', 'hue_shift_max', 'saturation_scale_max',
                     'brightness_delta_max', 'shift_max_fraction'):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        for name in ('contrast_factor_range', 'scale_range'):
            low, high = getattr(self, name)
            if not 0.0 < low <= high:
                problems.append(f"{name} {(low, high)} is not an increasing positive range")
        if problems:
            logger.error(f"Invalid augmentation spec: {problems}")
            raise ValueError(f"Invalid augmentation spec: {problems}")

    def to_dict(self) -> dict:
        values = asdict(self)
        values['contrast_factor_range'] = list(self.contrast_factor_range)
        values['scale_range'] = list(self.scale_range)
        return values

    @classmethod
    def from_dict(cls, values: dict) -> 'AugmentSpec':
        return cls(**values)


def _warp(pixels: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Bilinear affine warp (forward matrix) with reflect-101 edge fill, clamped to [0, 1]."""
    h, w = pixels.shape[:2]
    src = np.ascontiguousarray(pixels, dtype=np.float64 if pixels.dtype == np.float64 else np.float32)
    out = cv2.warpAffine(src, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)
    if out.ndim < pixels.ndim:
        # OpenCV drops a trailing single channel.
        out = out[..., None]
    return np.clip(out, 0.0, 1.0).astype(pixels.dtype, copy=False)


def rotate(pixels: np.ndarray, degrees: float) -> np.ndarray:
    """
    Counter-clockwise rotation about the image center.

    Bilinear resampling with edge-reflection fill; output clamped to [0, 1].
    """
    if degrees % 360.0 == 0.0:
        return pixels.copy()
    h, w = pixels.shape[:2]
    matrix = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), degrees, 1.0)
    return _warp(pixels, matrix)


def hflip(pixels: np.ndarray) -> np.ndarray:
    return pixels[:, ::-1].copy()


def rgb_to_hsv(pixels: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV; hue normalized to [0, 1), hue 0 when saturation is 0."""
    return _mpl_rgb_to_hsv(np.clip(pixels, 0.0, 1.0)).astype(pixels.dtype, copy=False)


def hsv_to_rgb(pixels: np.ndarray) -> np.ndarray:
    return _mpl_hsv_to_rgb(pixels).astype(pixels.dtype, copy=False)


def hsv_jitter(pixels: np.ndarray, hue_shift: float, saturation_scale: float) -> np.ndarray:
    """Shifts hue (cyclically) and scales saturation in HSV space, then converts back."""
    if hue_shift == 0.0 and saturation_scale == 0.0:
        return pixels.copy()
    hsv = rgb_to_hsv(pixels).astype(np.float64)
    hsv[..., 0] = np.mod(hsv[..., 0] + hue_shift, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + saturation_scale), 0.0, 1.0)
    return np.clip(_mpl_hsv_to_rgb(hsv), 0.0, 1.0).astype(pixels.dtype, copy=False)


def brightness_contrast(pixels: np.ndarray, delta: float, factor: float) -> np.ndarray:
    """clamp(factor * (x - 0.5) + 0.5 + delta, 0, 1)."""
    if delta == 0.0 and factor == 1.0:
        return pixels.copy()
    out = factor * (pixels.astype(np.float64) - 0.5) + 0.5 + delta
    return np.clip(out, 0.0, 1.0).astype(pixels.dtype, copy=False)


def shift_scale(pixels: np.ndarray, dx_frac: float, dy_frac: float, scale: float) -> np.ndarray:
    """
    Translate by fractions of width/height and scale about the center.

    Bilinear resampling with edge-reflection fill.
    """
    if dx_frac == 0.0 and dy_frac == 0.0 and scale == 1.0:
        return pixels.copy()
    h, w = pixels.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    matrix = np.array([[scale, 0.0, (1.0 - scale) * cx + dx_frac * w],
                       [0.0, scale, (1.0 - scale) * cy + dy_frac * h]])
    return _warp(pixels, matrix)


def augment_variant(pixels: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """One augmented copy with every transform's parameters drawn from `rng`."""
    angle = rng.uniform(-spec.rotation_max_degrees, spec.rotation_max_degrees)
    flip = rng.random() < spec.hflip_probability
    hue = rng.uniform(-spec.hue_shift_max, spec.hue_shift_max)
    sat = rng.uniform(-spec.saturation_scale_max, spec.saturation_scale_max)
    delta = rng.uniform(-spec.brightness_delta_max, spec.brightness_delta_max)
    factor = rng.uniform(*spec.contrast_factor_range)
    dx = rng.uniform(-spec.shift_max_fraction, spec.shift_max_fraction)
    dy = rng.uniform(-spec.shift_max_fraction, spec.shift_max_fraction)
    scale = rng.uniform(*spec.scale_range)

    out = rotate(pixels, angle)
    out = shift_scale(out, dx, dy, scale)
    if flip:
        out = hflip(out)
    if spec.hsv_enabled:
        out = hsv_jitter(out, hue, sat)
    return brightness_contrast(out, delta, factor)


def augment_dataset(samples: Sequence[Sample], spec: AugmentSpec, workers: int = 1) -> List[Sample]:
    """
    Five-fold expansion of the training split.

    Each original is kept unmodified and followed by four variants; variant v
    of sample i draws its parameters from the substream (seed, i, v).
    """
    copies = EXPANSION_FACTOR - 1

    def expand(item):
        i, sample = item
        out = [sample]
        for v in range(1, copies + 1):
            rng = np.random.default_rng([spec.seed, i, v])
            out.append(Sample(augment_variant(sample.pixels, spec, rng), sample.label,
                              f"{sample.source_path}#aug{v}"))
        return out

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        groups = list(pool.map(expand, enumerate(samples)))
    expanded = [s for group in groups for s in group]
    logger.info(f"Augmented {len(samples)} training samples to {len(expanded)}.")
    return expanded
