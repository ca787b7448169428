# /cooking_vit/src/trainer.py

import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Local imports
from . import tensor as T
from .data_pipeline import BatchStream, Sample
from .evaluator import predict
from .tensor import Tensor
from .vit import HEAD_NAMES, ModelParams, forward

# Set up logging for this module
logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ['step', 'lr', 'train_loss', 'val_accuracy']


class NonFiniteLossError(RuntimeError):
    """Raised when training produces a NaN/Inf loss."""

    def __init__(self, step: int, lr: float, detail: str = ''):
        self.step = step
        self.lr = lr
        super().__init__(f"Non-finite loss at step {step} (lr={lr:.6g}). {detail}".strip())


@dataclass(frozen=True)
class TrainConfig:
    """SGD fine-tuning recipe."""
    total_steps: int = 10000
    batch_size: int = 32
    base_lr: float = 0.03
    schedule: str = 'cosine'
    momentum: float = 0.9
    eval_interval_steps: int = 100
    early_stop_patience_evals: int = 10
    warmup_steps: int = 0
    freeze_encoder: bool = False
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        problems = []
        if self.total_steps <= 0:
            problems.append(f"total_steps must be > 0, got {self.total_steps}")
        if self.base_lr <= 0:
            problems.append(f"base_lr must be > 0, got {self.base_lr}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.schedule not in ('cosine', 'constant'):
            problems.append(f"Unknown schedule '{self.schedule}'")
        if not 0.0 <= self.momentum < 1.0:
            problems.append(f"momentum must be in [0, 1), got {self.momentum}")
        if self.eval_interval_steps < 1 or self.early_stop_patience_evals < 1:
            problems.append("eval_interval_steps and early_stop_patience_evals must be >= 1")
        if not 0 <= self.warmup_steps < self.total_steps:
            problems.append(f"warmup_steps must be in [0, total_steps), got {self.warmup_steps}")
        if problems:
            logger.error(f"Invalid training config: {problems}")
            raise ValueError(f"Invalid training config: {problems}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> 'TrainConfig':
        return cls(**values)


@dataclass
class TrainState:
    """
    Mutable loop state.

    `step` counts completed updates. `best_step` and the history `step` column
    are 0-based update indices, the same index `learning_rate` is evaluated at,
    so `best_step` names the history row whose validation accuracy was kept.
    """
    step: int = 0
    current_lr: float = 0.0
    best_val_accuracy: float = -math.inf
    best_step: int = 0
    evals_since_best: int = 0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    history: List[Tuple[int, float, float, float]] = field(default_factory=list)
    stopped_early: bool = False

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=HISTORY_COLUMNS)

    def write_history(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.history_frame().to_csv(path, index=False)
        logger.info(f"Training history written to {path}")


@dataclass
class TrainResult:
    best_params: ModelParams
    final_params: ModelParams
    state: TrainState


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target], via log-sum-exp."""
    logits = T.as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    batch, classes = logits.shape
    if targets.shape != (batch,):
        logger.error(f"targets of shape {targets.shape} do not match logits {logits.shape}")
        raise T.DimensionError(f"targets of shape {targets.shape} do not match logits {logits.shape}")
    if np.any(targets < 0) or np.any(targets >= classes):
        logger.error(f"Target labels {targets.tolist()} out of range for {classes} classes.")
        raise ValueError(f"Target labels out of range for {classes} classes: {targets.tolist()}")
    log_probs = T.log_softmax(logits, axis=-1)
    picked = log_probs[(np.arange(batch), targets)]
    return -picked.mean()


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """0.5 * base_lr * (1 + cos(pi * step / total_steps)), with optional linear warmup."""
    if not 0 <= step <= total_steps:
        logger.error(f"step {step} outside [0, {total_steps}]")
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps and step < warmup_steps:
        return base_lr * step / warmup_steps
    if warmup_steps:
        progress = (step - warmup_steps) / (total_steps - warmup_steps)
        return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


def learning_rate(step: int, config: TrainConfig) -> float:
    if config.schedule == 'constant':
        return config.base_lr
    return cosine_lr(step, config.total_steps, config.base_lr, config.warmup_steps)


def trainable_names(params: ModelParams, freeze_encoder: bool = False) -> List[str]:
    return list(HEAD_NAMES) if freeze_encoder else params.names()


def sgd_step(params: ModelParams, state: TrainState, lr: float, momentum: float = 0.9,
             names: Optional[Sequence[str]] = None):
    """
    In-place momentum SGD: v <- momentum * v + g; w <- w - lr * v.

    Gradients are cleared afterwards.
    """
    names = params.names() if names is None else list(names)
    missing = [name for name in names if params[name].grad is None]
    if missing:
        logger.error(f"Missing gradients for trainable tensors: {missing}")
        raise ValueError(f"Missing gradients for trainable tensors: {missing}")
    for name in names:
        t = params[name]
        g = t.grad.astype(t.dtype, copy=False)
        v = state.velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        state.velocity[name] = v
        t.data -= (lr * v).astype(t.dtype, copy=False)
        t.grad = None


def accuracy(params: ModelParams, samples: Sequence[Sample], batch_size: int = 64) -> float:
    """Top-1 accuracy of the current parameters."""
    predicted = predict(params, samples, batch_size).labels
    return float(np.mean(predicted == np.array([s.label for s in samples])))


def train(params: ModelParams, train_samples: Sequence[Sample], val_samples: Sequence[Sample],
          config: TrainConfig, history_path: Optional[Path] = None) -> TrainResult:
    """
    Runs the SGD loop for `total_steps` batches.

    Validation accuracy is measured every `eval_interval_steps` (and after the
    last step); the best parameters are retained and training stops once
    `evals_since_best` reaches the patience.
    """
    if not train_samples or not val_samples:
        logger.error("Training and validation streams must both be non-empty.")
        raise ValueError("Training and validation streams must both be non-empty.")

    stream = BatchStream(train_samples, config.batch_size, seed=config.seed, workers=config.workers)
    batches: Iterator[Tuple[np.ndarray, np.ndarray]] = stream.forever()
    names = trainable_names(params, config.freeze_encoder)
    params.requires_grad_(names)
    dropout_rng = np.random.default_rng([config.seed, 1])
    state = TrainState()
    best = params.copy()
    logger.info(f"Training {len(names)} tensors for {config.total_steps} steps on {len(train_samples)} samples "
                f"(batch={config.batch_size}, base_lr={config.base_lr}, momentum={config.momentum}).")

    for step in range(config.total_steps):
        lr = learning_rate(step, config)
        state.step, state.current_lr = step + 1, lr
        images, labels = next(batches)
        try:
            logits, _ = forward(images, params, train=True, rng=dropout_rng)
            loss = cross_entropy(logits, labels)
        except T.NumericalError as e:
            logger.error(f"Numerical failure at step {step} (lr={lr:.6g}): {e}")
            raise NonFiniteLossError(step, lr, str(e)) from e
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            logger.error(f"Loss is {loss_value} at step {step} (lr={lr:.6g}).")
            raise NonFiniteLossError(step, lr)
        T.backward(loss)
        sgd_step(params, state, lr, config.momentum, names)
        logger.debug(f"step={step} lr={lr:.6g} loss={loss_value:.6f}")

        val_acc = math.nan
        if state.step % config.eval_interval_steps == 0 or state.step == config.total_steps:
            val_acc = accuracy(params, val_samples, config.batch_size)
            if val_acc > state.best_val_accuracy:
                state.best_val_accuracy, state.best_step, state.evals_since_best = val_acc, step, 0
                best = params.copy()
            else:
                state.evals_since_best += 1
            logger.info(f"step={step} lr={lr:.6g} train_loss={loss_value:.6f} val_accuracy={val_acc:.4f}")
        state.history.append((step, lr, loss_value, val_acc))

        if state.evals_since_best >= config.early_stop_patience_evals:
            state.stopped_early = True
            logger.info(f"Early stopping at step {step}: no improvement in {state.evals_since_best} evaluations "
                        f"(best {state.best_val_accuracy:.4f} at step {state.best_step}).")
            break

    params.requires_grad_([])
    if history_path is not None:
        state.write_history(history_path)
    return TrainResult(best.requires_grad_([]), params, state)
