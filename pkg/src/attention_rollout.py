# /cooking_vit/src/attention_rollout.py

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import pandas as pd
from matplotlib import colormaps
from PIL import Image

# Local imports
from .data_pipeline import resize_bilinear
from .vit import AttentionTrace

# Set up logging for this module
logger = logging.getLogger(__name__)

OVERLAY_ALPHA = 0.5
COLORMAP = 'jet'


@dataclass
class RolloutMap:
    """
    Rollout relevance for one image.

    `relevance` is the full S x S product, `class_row` its first row, `raw_grid`
    the patch entries of that row on the patch grid and `grid` the same values
    min-max rescaled to [0, 1].
    """
    relevance: np.ndarray
    class_row: np.ndarray
    raw_grid: np.ndarray
    grid: np.ndarray


def average_heads(attention: np.ndarray) -> np.ndarray:
    """Unweighted mean over the head axis of [heads, S, S]."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 3 or attention.shape[1] != attention.shape[2]:
        logger.error(f"Expected [heads, S, S] attention, got {attention.shape}")
        raise ValueError(f"Expected [heads, S, S] attention, got {attention.shape}")
    return attention.mean(axis=0)


def add_identity_normalize(attention: np.ndarray) -> np.ndarray:
    """(A + I) with every row divided by its sum, i.e. (A + I) / 2 for stochastic A."""
    attention = np.asarray(attention, dtype=np.float64)
    augmented = attention + np.eye(attention.shape[-1])
    return augmented / augmented.sum(axis=-1, keepdims=True)


def rescale(values: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant field maps to 0.5 everywhere."""
    low, high = float(values.min()), float(values.max())
    if high == low:
        return np.full(values.shape, 0.5)
    return (values - low) / (high - low)


def rollout(trace: Union[AttentionTrace, Sequence[np.ndarray]]) -> RolloutMap:
    """
    R = Ã_L ... Ã_1 with Ã_l = add_identity_normalize(average_heads(A_l)).

    The deepest layer is the leftmost factor. The class-token row of R,
    without its self entry, is laid out on the square patch grid.
    """
    layers = trace.per_layer if isinstance(trace, AttentionTrace) else list(trace)
    if not layers:
        logger.error("Rollout needs at least one attention layer.")
        raise ValueError("Rollout needs at least one attention layer.")
    sizes = {np.shape(a)[-1] for a in layers}
    if len(sizes) != 1:
        logger.error(f"Attention layers disagree on sequence length: {[np.shape(a) for a in layers]}")
        raise ValueError(f"Attention layers disagree on sequence length: {sorted(sizes)}")
    s = sizes.pop()
    side = math.isqrt(s - 1)
    if side * side != s - 1:
        logger.error(f"Sequence length {s} is not a class token plus a square patch grid")
        raise ValueError(f"Sequence length {s} is not a class token plus a square patch grid")

    relevance = np.eye(s)
    for attention in layers:
        relevance = add_identity_normalize(average_heads(attention)) @ relevance
    class_row = relevance[0].copy()
    raw_grid = class_row[1:].reshape(side, side)
    return RolloutMap(relevance, class_row, raw_grid, rescale(raw_grid))


def color_ramp(name: str = COLORMAP) -> np.ndarray:
    """Fixed 256-entry RGB lookup table in [0, 1]."""
    return colormaps[name](np.linspace(0.0, 1.0, 256))[:, :3]


def heatmap(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Upsamples a [0, 1] grid to the image size and colors it."""
    upsampled = resize_bilinear(np.asarray(grid, dtype=np.float64), height, width)
    index = np.clip(np.rint(upsampled * 255.0), 0, 255).astype(np.int64)
    return color_ramp()[index]


def blend(grid: np.ndarray, image: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Alpha-blends the colored grid over an RGB image in [0, 1]; returns uint8."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        logger.error(f"Expected an [H, W, 3] image, got {image.shape}")
        raise ValueError(f"Expected an [H, W, 3] image, got {image.shape}")
    colors = heatmap(grid, image.shape[0], image.shape[1])
    mixed = alpha * colors + (1.0 - alpha) * np.clip(image, 0.0, 1.0)
    return np.clip(np.rint(mixed * 255.0), 0, 255).astype(np.uint8)


def overlay(grid: np.ndarray, image: np.ndarray, path: Path) -> Path:
    """Writes the blended heatmap as a PNG with the input image's dimensions."""
    path = Path(path)
    Image.fromarray(blend(grid, image)).save(path, format='PNG')
    logger.debug(f"Overlay written to {path}")
    return path


def write_grid(grid: np.ndarray, path: Path) -> Path:
    """Raw (unscaled) patch-grid relevance as CSV, one grid row per line."""
    path = Path(path)
    pd.DataFrame(grid).to_csv(path, header=False, index=False, float_format='%.8g')
    return path


def output_paths(output_dir: Path, name: str) -> Tuple[Path, Path]:
    output_dir = Path(output_dir)
    return output_dir / f'{name}.rollout.png', output_dir / f'{name}.rollout.csv'
