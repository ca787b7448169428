# /cooking_vit/src/data_pipeline.py

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

# Set up logging for this module
logger = logging.getLogger(__name__)

SUPPORTED_SUFFIXES = ('.png', '.jpg', '.jpeg', '.ppm')
SPLITS = ('train', 'val', 'test')

COOKING_STATES = ('creamy_paste', 'diced', 'grated', 'juiced', 'jullienne', 'sliced', 'whole')
COOKING_STATE_COUNTS = (730, 700, 819, 638, 672, 1315, 1304)

# Split sizes reported for the cooking-state challenge data.
PUBLISHED_SPLIT_COUNTS = (4106, 728, 1068)


class EmptyClassError(ValueError):
    """Raised when a class directory holds no usable images."""


@dataclass
class Sample:
    """A decoded image in [0, 1] with its class index."""
    pixels: np.ndarray
    label: int
    source_path: str


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class names with per-class counts."""
    names: Tuple[str, ...]
    counts: Tuple[int, ...]
    skipped_files: Tuple[str, ...] = ()

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def cooking_states(cls) -> 'ClassCatalog':
        return cls(COOKING_STATES, COOKING_STATE_COUNTS)


@dataclass
class SplitManifest:
    """Deterministic train/val/test assignment of source paths."""
    seed: int
    train: List[str]
    val: List[str]
    test: List[str]
    mode: str = 'fractions'
    fractions: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def split(self, name: str) -> List[str]:
        if name not in SPLITS:
            logger.error(f"Unknown split '{name}'. Expected one of {SPLITS}.")
            raise ValueError(f"Unknown split '{name}'. Expected one of {SPLITS}.")
        return getattr(self, name)

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def save(self, path: Path):
        """
        Writes the line-oriented manifest: one header line carrying the seed and
        fractions, then `<split>\\t<relative path>` per sample.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fractions = ','.join(f'{f:.6f}' for f in self.fractions)
        lines = [f'# seed={self.seed}\tmode={self.mode}\tfractions={fractions}']
        for split in SPLITS:
            lines.extend(f'{split}\t{p}' for p in self.split(split))
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        logger.info(f"Split manifest written to {path} (sizes {self.sizes()}).")

    @classmethod
    def load(cls, path: Path) -> 'SplitManifest':
        path = Path(path)
        if not path.is_file():
            logger.error(f"Manifest not found at {path.resolve()}.")
            raise FileNotFoundError(f"Manifest not found at {path.resolve()}")
        lines = path.read_text(encoding='utf-8').splitlines()
        if not lines or not lines[0].startswith('#'):
            logger.error(f"Manifest {path} is missing its header line.")
            raise ValueError(f"Manifest {path} is missing its header line.")
        header = dict(item.split('=', 1) for item in lines[0][1:].strip().split('\t'))
        lists: Dict[str, List[str]] = {s: [] for s in SPLITS}
        for number, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            split, _, rel = line.partition('\t')
            if split not in lists:
                logger.error(f"Manifest {path} line {number}: unknown split '{split}'")
                raise ValueError(f"Manifest {path} line {number}: unknown split '{split}'")
            lists[split].append(rel)
        fractions = tuple(float(f) for f in header.get('fractions', '0,0,0').split(','))
        return cls(int(header['seed']), lists['train'], lists['val'], lists['test'],
                   header.get('mode', 'fractions'), fractions)


# --- Loading ---

def decode_image(path: Path) -> np.ndarray:
    """Decodes an image file to float32 RGB in [0, 1]."""
    with Image.open(path) as img:
        return np.asarray(img.convert('RGB'), dtype=np.float32) / 255.0


def _load_one(args) -> Optional[Sample]:
    path, rel, label, image_size = args
    try:
        pixels = decode_image(path)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        logger.warning(f"Skipping unreadable image {path}: {e}")
        return None
    if image_size is not None:
        pixels = resize_bilinear(pixels, image_size)
    logger.debug(f"Decoded {rel} with shape {pixels.shape}")
    return Sample(pixels, label, rel)


def load_dataset(root_dir: Path, image_size: Optional[int] = None,
                 workers: int = 1) -> Tuple[List[Sample], ClassCatalog]:
    """
    Loads `root/<class_name>/<image files>`.

    Class indices are the alphabetical rank of the subdirectory names; samples
    are ordered by class, then file name. Unreadable files are skipped with a
    warning; a class directory without any image file is an error.
    """
    root = Path(root_dir)
    if not root.is_dir():
        logger.error(f"Dataset root not found at {root.resolve()}.")
        raise FileNotFoundError(f"Dataset root not found at {root.resolve()}")

    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        logger.error(f"No class directories under {root}")
        raise EmptyClassError(f"No class directories under {root}")

    jobs = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir()
                       if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES)
        if not files:
            logger.error(f"Class directory '{class_dir.name}' holds no image files.")
            raise EmptyClassError(f"Class directory '{class_dir.name}' holds no image files")
        jobs.extend((f, f.relative_to(root).as_posix(), label, image_size) for f in files)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(_load_one, jobs))

    samples = [s for s in results if s is not None]
    skipped = tuple(job[1] for job, s in zip(jobs, results) if s is None)
    counts = [0] * len(class_dirs)
    for s in samples:
        counts[s.label] += 1
    for label, class_dir in enumerate(class_dirs):
        if counts[label] == 0:
            logger.error(f"Every image in class '{class_dir.name}' failed to decode.")
            raise EmptyClassError(f"Every image in class '{class_dir.name}' failed to decode")

    catalog = ClassCatalog(tuple(d.name for d in class_dirs), tuple(counts), skipped)
    if skipped:
        logger.warning(f"Skipped {len(skipped)} unreadable files.")
    logger.info(f"Loaded {len(samples)} samples across {catalog.num_classes} classes from {root}.")
    return samples, catalog


# --- Preprocessing ---

def _source_coords(out_size: int, in_size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-centered source indices and weights along one axis."""
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, src - lo


def resize_bilinear(pixels: np.ndarray, out_h: int, out_w: Optional[int] = None) -> np.ndarray:
    """
    Bilinear resize of [H, W, C] (or [H, W]) with half-pixel-centered sampling.

    Output values stay within [min(input), max(input)].
    """
    out_w = out_h if out_w is None else out_w
    h, w = pixels.shape[:2]
    if (h, w) == (out_h, out_w):
        return pixels.copy()
    y0, y1, wy = _source_coords(out_h, h)
    x0, x1, wx = _source_coords(out_w, w)
    src = pixels.astype(np.float64)
    if src.ndim == 2:
        src = src[..., None]
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = src[y0][:, x0] * (1.0 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1.0 - wx) + src[y1][:, x1] * wx
    out = top * (1.0 - wy) + bottom * wy
    if pixels.ndim == 2:
        out = out[..., 0]
    return np.clip(out, pixels.min(), pixels.max()).astype(pixels.dtype, copy=False)


def standardize(pixels: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-sample (x - mean) / max(std, floor) over all pixels and channels jointly."""
    x = pixels.astype(np.float64)
    mu = x.mean()
    sigma = max(float(x.std()), floor)
    return ((x - mu) / sigma).astype(np.float32)


# --- Splitting ---

def _split_sizes(n: int, fractions: Optional[Sequence[float]], counts: Optional[Sequence[int]],
                 val_from_train: Optional[float]) -> Tuple[Tuple[int, int, int], str, Tuple[float, float, float]]:
    if counts is not None:
        counts = tuple(int(c) for c in counts)
        if len(counts) != 3 or min(counts) < 0:
            logger.error(f"Explicit counts must be three non-negative integers, got {counts}")
            raise ValueError(f"Explicit counts must be three non-negative integers, got {counts}")
        if sum(counts) > n:
            logger.error(f"Split counts {counts} exceed the dataset size {n}.")
            raise ValueError(f"Split counts {counts} sum to {sum(counts)}, exceeding the dataset size {n}")
        if sum(counts) != n:
            logger.error(f"Split counts {counts} sum to {sum(counts)}, but the dataset holds {n} samples")
            raise ValueError(f"Split counts {counts} sum to {sum(counts)}, but the dataset holds {n} samples")
        return counts, 'counts', tuple(c / n for c in counts)

    if fractions is None:
        logger.error("Either fractions or explicit counts are required.")
        raise ValueError("Either fractions or explicit counts are required.")
    fractions = tuple(float(f) for f in fractions)
    if not all(0.0 <= f <= 1.0 for f in fractions):
        logger.error(f"Fractions must lie in [0, 1], got {fractions}")
        raise ValueError(f"Fractions must lie in [0, 1], got {fractions}")
    if len(fractions) == 2:
        # (train, test), with the validation set carved out of train afterwards.
        if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
            logger.error(f"Train/test fractions must sum to 1, got {fractions}")
            raise ValueError(f"Train/test fractions must sum to 1, got {fractions}")
        vf = val_from_train or 0.0
        if not 0.0 <= vf < 1.0:
            logger.error(f"val-from-train fraction must lie in [0, 1), got {vf}")
            raise ValueError(f"val-from-train fraction must lie in [0, 1), got {vf}")
        n_test = math.floor(n * fractions[1])
        n_val = math.floor((n - n_test) * vf)
    elif len(fractions) == 3:
        if val_from_train:
            logger.error("val-from-train is only valid with two fractions (train, test).")
            raise ValueError("val-from-train is only valid with two fractions (train, test).")
        if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
            logger.error(f"Train/val/test fractions must sum to 1, got {fractions}")
            raise ValueError(f"Train/val/test fractions must sum to 1, got {fractions}")
        n_val = math.floor(n * fractions[1])
        n_test = math.floor(n * fractions[2])
    else:
        logger.error(f"Expected two or three fractions, got {fractions}")
        raise ValueError(f"Expected two or three fractions, got {fractions}")
    sizes = (n - n_val - n_test, n_val, n_test)
    return sizes, 'fractions', tuple(s / n for s in sizes)


def _stratified_allocation(class_sizes: Sequence[int], split_sizes: Sequence[int]) -> np.ndarray:
    """
    Per-class split counts whose row sums are the class sizes and column sums
    the split sizes, each cell being the floor of its proportional share or
    one more.
    """
    n = sum(class_sizes)
    ideal = np.outer(class_sizes, split_sizes) / n
    alloc = np.floor(ideal).astype(np.int64)
    frac = ideal - alloc
    row_left = np.asarray(class_sizes) - alloc.sum(axis=1)
    col_left = np.asarray(split_sizes) - alloc.sum(axis=0)
    # Greedy realization of the leftover units: each class hands its extra
    # samples to distinct splits with the most remaining demand.
    for r in sorted(range(len(class_sizes)), key=lambda i: (-row_left[i], i)):
        ranked = sorted((c for c in range(len(split_sizes)) if col_left[c] > 0),
                        key=lambda c: (-col_left[c], -frac[r, c], c))
        for c in ranked[:int(row_left[r])]:
            alloc[r, c] += 1
            col_left[c] -= 1
    return alloc


def split_dataset(samples: Sequence[Sample], fractions: Optional[Sequence[float]] = None,
                  counts: Optional[Sequence[int]] = None, seed: int = 0, stratified: bool = True,
                  val_from_train: Optional[float] = None) -> SplitManifest:
    """
    Deterministic train/val/test partition of the samples.

    Ratio mode floors the test (and validation) sizes and gives the remainder
    to train; explicit-count mode reproduces the given sizes exactly.
    """
    n = len(samples)
    if n == 0:
        logger.error("Cannot split an empty dataset.")
        raise ValueError("Cannot split an empty dataset.")
    sizes, mode, used_fractions = _split_sizes(n, fractions, counts, val_from_train)
    rng = np.random.default_rng(seed)
    out: Dict[str, List[str]] = {s: [] for s in SPLITS}

    if stratified:
        labels = np.array([s.label for s in samples])
        classes = sorted(set(labels.tolist()))
        members = [np.flatnonzero(labels == c) for c in classes]
        alloc = _stratified_allocation([len(m) for m in members], sizes)
        for row, idx in zip(alloc, members):
            idx = rng.permutation(idx)
            bounds = np.cumsum(row)[:-1]
            for split, part in zip(SPLITS, np.split(idx, bounds)):
                out[split].extend(samples[i].source_path for i in part)
        # Interleave classes within each split.
        for split in SPLITS:
            order = rng.permutation(len(out[split]))
            out[split] = [out[split][i] for i in order]
    else:
        idx = rng.permutation(n)
        bounds = np.cumsum(sizes)[:-1]
        for split, part in zip(SPLITS, np.split(idx, bounds)):
            out[split] = [samples[i].source_path for i in part]

    manifest = SplitManifest(seed, out['train'], out['val'], out['test'], mode, used_fractions)
    logger.info(f"Split {n} samples into train/val/test = {manifest.sizes()} (mode={mode}, seed={seed}).")
    return manifest


def select(samples: Sequence[Sample], paths: Sequence[str]) -> List[Sample]:
    """Samples for the given source paths, in manifest order."""
    by_path = {s.source_path: s for s in samples}
    missing = [p for p in paths if p not in by_path]
    if missing:
        logger.error(f"{len(missing)} manifest entries are not in the dataset, e.g. {missing[:3]}")
        raise KeyError(f"Manifest entries missing from the dataset: {missing[:5]}")
    return [by_path[p] for p in paths]


def split_summary(manifest: SplitManifest, samples: Sequence[Sample], catalog: ClassCatalog) -> pd.DataFrame:
    """Per-split per-class sample counts."""
    labels = {s.source_path: catalog.names[s.label] for s in samples}
    rows = [(split, labels[p]) for split in SPLITS for p in manifest.split(split)]
    frame = pd.DataFrame(rows, columns=['split', 'class'])
    table = pd.crosstab(frame['class'], frame['split']).reindex(index=list(catalog.names),
                                                                 columns=list(SPLITS), fill_value=0)
    table.loc['total'] = table.sum()
    return table


# --- Batching ---

class BatchStream:
    """
    Shuffled mini-batches of standardized images.

    The batch order is a function of (seed, epoch, batch index) alone; the
    worker count only changes how preprocessing is scheduled.
    """

    def __init__(self, samples: Sequence[Sample], batch_size: int, seed: int = 0,
                 shuffle: bool = True, workers: int = 1, drop_last: bool = False):
        if not samples:
            logger.error("BatchStream needs at least one sample.")
            raise ValueError("BatchStream needs at least one sample.")
        if batch_size < 1:
            logger.error(f"batch_size must be >= 1, got {batch_size}")
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.samples = list(samples)
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.workers = max(1, workers)
        self.drop_last = drop_last and len(self.samples) >= batch_size

    def __len__(self):
        full, rest = divmod(len(self.samples), self.batch_size)
        return full if (self.drop_last or rest == 0) else full + 1

    def order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.samples))
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.samples))

    def epoch(self, epoch: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = self.order(epoch)
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            for b in range(len(self)):
                idx = order[b * self.batch_size:(b + 1) * self.batch_size]
                batch = [self.samples[i] for i in idx]
                images = np.stack(list(pool.map(lambda s: standardize(s.pixels), batch)))
                labels = np.array([s.label for s in batch], dtype=np.int64)
                yield images, labels

    def forever(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        epoch = 0
        while True:
            yield from self.epoch(epoch)
            epoch += 1
