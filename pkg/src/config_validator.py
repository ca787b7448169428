# /cooking_vit/src/config_validator.py

import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import List

# Local imports
from .config_manager import RunConfig
from .vit import ConfigurationError

logger = logging.getLogger(__name__)

# Inputs each stage cannot run without.
REQUIRED_PATHS = {
    'split': ['dataset_root'],
    'train': ['dataset_root', 'manifest'],
    'eval': ['dataset_root', 'checkpoint'],
    'attend': ['checkpoint'],
}


class RunConfigValidator:
    """
    Validates and cleans a RunConfig assembled from CLI flags and overrides.
    """
    def __init__(self, run_config: RunConfig):
        self.raw_config = run_config
        self.corrections: List[str] = []

    def validate_and_clean(self) -> RunConfig:
        """
        Rejects unusable configurations and self-corrects recoverable values.
        """
        logger.info(f"Validating run configuration for '{self.raw_config.command}'.")
        config = self.raw_config

        # --- Critical checks: exclusive flags and inputs ---
        if config.pretrained and config.from_scratch:
            logger.error("--pretrained and --from-scratch are mutually exclusive.")
            raise ConfigurationError("--pretrained and --from-scratch are mutually exclusive.")
        if config.pretrained and not config.paths.pretrained_weights:
            logger.error("Pretrained mode needs a weights file.")
            raise ConfigurationError("Pretrained mode needs a weights file.")
        self._check_paths(config)
        self._check_split(config)
        if config.workers < 1:
            logger.error(f"workers must be >= 1, got {config.workers}")
            raise ConfigurationError(f"workers must be >= 1, got {config.workers}")

        # --- Self-correction: recoverable training values ---
        if config.command == 'train':
            config = self._clean_train(config)

        logger.info("Run configuration validated.")
        return config

    def _check_paths(self, config: RunConfig):
        paths = config.paths
        for name in REQUIRED_PATHS.get(config.command, []):
            if not getattr(paths, name):
                logger.error(f"'{config.command}' requires paths.{name}.")
                raise ConfigurationError(f"'{config.command}' requires paths.{name}")
        for name in ('dataset_root', 'manifest', 'pretrained_weights', 'checkpoint'):
            value = getattr(paths, name)
            if value and not Path(value).exists():
                logger.error(f"paths.{name} does not exist: {value}")
                raise FileNotFoundError(f"paths.{name} does not exist: {value}")
        if config.command == 'attend' and not paths.images:
            logger.error("'attend' needs at least one image path.")
            raise ConfigurationError("'attend' needs at least one image path.")

    def _check_split(self, config: RunConfig):
        split = config.split
        if config.command != 'split':
            return
        if split.counts is not None:
            if len(split.counts) != 3 or min(split.counts) < 0:
                logger.error(f"--counts needs three non-negative integers, got {split.counts}")
                raise ConfigurationError(f"--counts needs three non-negative integers, got {split.counts}")
            return
        if split.fractions is None or len(split.fractions) not in (2, 3):
            logger.error(f"--fractions needs two or three values, got {split.fractions}")
            raise ConfigurationError(f"--fractions needs two or three values, got {split.fractions}")
        if not math.isclose(sum(split.fractions), 1.0, abs_tol=1e-9):
            logger.error(f"Fractions must sum to 1, got {split.fractions}")
            raise ConfigurationError(f"Fractions must sum to 1, got {split.fractions}")
        if len(split.fractions) == 3 and split.val_from_train:
            logger.error("--val-from-train only combines with two fractions (train, test).")
            raise ConfigurationError("--val-from-train only combines with two fractions (train, test).")

    def _clean_train(self, config: RunConfig) -> RunConfig:
        train = config.train
        if train.eval_interval_steps > train.total_steps:
            msg = (f"eval_interval_steps {train.eval_interval_steps} exceeds total_steps "
                   f"{train.total_steps}; clamping to {train.total_steps}.")
            logger.warning(msg)
            self.corrections.append(msg)
            train = replace(train, eval_interval_steps=train.total_steps)
        if train.early_stop_patience_evals * train.eval_interval_steps < train.total_steps // 100:
            logger.warning(f"Early stopping patience of {train.early_stop_patience_evals} evaluations "
                           f"is very short for {train.total_steps} steps.")
        return replace(config, train=train)
