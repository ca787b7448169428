# /cooking_vit/src/evaluator.py

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

# Local imports
from . import tensor as T
from .data_pipeline import Sample, standardize
from .vit import ModelParams, forward

# Set up logging for this module
logger = logging.getLogger(__name__)


@dataclass
class Prediction:
    labels: np.ndarray
    logits: np.ndarray


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        """Row-normalized view; rows without samples stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape, dtype=np.float64), where=rows > 0)

    def to_frame(self, class_names: Optional[Sequence[str]] = None, normalized: bool = False) -> pd.DataFrame:
        names = list(class_names) if class_names is not None else [str(i) for i in range(self.num_classes)]
        values = self.normalized() if normalized else self.counts
        return pd.DataFrame(values, index=pd.Index(names, name='true'), columns=names)


@dataclass
class ClassReport:
    """Per-class and aggregate classification metrics."""
    class_names: List[str]
    support: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'support': self.support,
        }, index=pd.Index(self.class_names, name='class'))
        total = int(self.support.sum())
        frame.loc['macro avg'] = [self.macro_precision, self.macro_recall, self.macro_f1, total]
        frame.loc['weighted avg'] = [self.weighted_precision, self.weighted_recall, self.weighted_f1, total]
        frame['support'] = frame['support'].astype(int)
        return frame

    def as_key_values(self) -> Dict[str, float]:
        values: Dict[str, float] = {'accuracy': self.accuracy}
        for i, name in enumerate(self.class_names):
            values[f'{name}.precision'] = float(self.precision[i])
            values[f'{name}.recall'] = float(self.recall[i])
            values[f'{name}.f1'] = float(self.f1[i])
            values[f'{name}.support'] = int(self.support[i])
        for avg in ('macro', 'weighted'):
            for metric in ('precision', 'recall', 'f1'):
                values[f'{avg}.{metric}'] = float(getattr(self, f'{avg}_{metric}'))
        return values


def predict(params: ModelParams, samples: Sequence[Sample], batch_size: int = 32,
            workers: int = 1) -> Prediction:
    """
    Argmax predictions over standardized samples.

    Ties resolve to the lowest class index; batching never changes a sample's
    prediction.
    """
    if not samples:
        return Prediction(np.zeros(0, dtype=np.int64), np.zeros((0, params.config.num_classes), dtype=np.float32))
    starts = range(0, len(samples), batch_size)

    def run(start: int) -> np.ndarray:
        batch = samples[start:start + batch_size]
        images = np.stack([standardize(s.pixels) for s in batch])
        with T.no_grad():
            logits, _ = forward(images, params)
        return logits.data

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        logits = np.concatenate(list(pool.map(run, starts)), axis=0)
    return Prediction(np.argmax(logits, axis=-1), logits)


def confusion(true: Sequence[int], pred: Sequence[int], num_classes: int) -> ConfusionMatrix:
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        logger.error(f"Label length mismatch: {true.shape} true vs {pred.shape} predicted.")
        raise ValueError(f"Label length mismatch: {true.shape} true vs {pred.shape} predicted")
    for name, labels in (('true', true), ('predicted', pred)):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            logger.error(f"{name} labels out of range for {num_classes} classes")
            raise ValueError(f"{name} labels out of range for {num_classes} classes")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(counts)


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def report(matrix: ConfusionMatrix, class_names: Optional[Sequence[str]] = None) -> ClassReport:
    """
    Precision = diag / column sum, recall = diag / row sum, F1 their harmonic
    mean; each is 0 when its denominator is 0. Macro averages are unweighted
    means over classes; weighted averages use the support.
    """
    counts = matrix.counts
    k = matrix.num_classes
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    diag = np.diag(counts)
    support = counts.sum(axis=1)
    precision = _safe_divide(diag, counts.sum(axis=0))
    recall = _safe_divide(diag, support)
    f1 = _safe_divide(2.0 * precision * recall, precision + recall)
    total = counts.sum()
    weights = _safe_divide(support, np.full(k, total))
    return ClassReport(
        class_names=names,
        support=support,
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(diag.sum() / total) if total else 0.0,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        weighted_precision=float((precision * weights).sum()),
        weighted_recall=float((recall * weights).sum()),
        weighted_f1=float((f1 * weights).sum()),
    )


def write_outputs(class_report: ClassReport, matrix: ConfusionMatrix, output_dir: Path) -> Dict[str, Path]:
    """Writes the report table, key/value metrics and both confusion CSVs."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        'report': output_dir / 'report.txt',
        'metrics': output_dir / 'metrics.txt',
        'confusion': output_dir / 'confusion.csv',
        'confusion_normalized': output_dir / 'confusion_normalized.csv',
    }
    table = class_report.to_frame().to_string(float_format=lambda v: f'{v:.4f}')
    paths['report'].write_text(f"{table}\n\naccuracy {class_report.accuracy:.4f}\n", encoding='utf-8')
    lines = [f'{key}={value}' for key, value in class_report.as_key_values().items()]
    paths['metrics'].write_text('\n'.join(lines) + '\n', encoding='utf-8')
    names = class_report.class_names
    matrix.to_frame(names).to_csv(paths['confusion'])
    matrix.to_frame(names, normalized=True).to_csv(paths['confusion_normalized'], float_format='%.4f')
    logger.info(f"Evaluation outputs written to {output_dir}")
    return paths
