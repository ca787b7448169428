# /cooking_vit/src/config_manager.py

import json
import logging
from dataclasses import dataclass, field, asdict, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

# Local imports
from .augmentation import AugmentSpec
from .trainer import TrainConfig
from .vit import ConfigurationError, ViTConfig, preset

# Set up logging for this module
logger = logging.getLogger(__name__)

REQUIRED_KEYS = ["database_path", "output_folder"]


def load_config(config_path: Path = None):
    """
    Loads the project-level settings from config.json.

    Args:
        config_path (Path, optional): The path to the config file.
                                      Defaults to './config.json'.

    Returns:
        dict: `database_path` (run ledger) and `output_folder` (root of run directories).

    Raises:
        FileNotFoundError: If config.json is not found.
        json.JSONDecodeError: If there's an issue parsing the JSON file.
        KeyError: If a required key is missing from the config.
    """
    if config_path is None:
        config_path = Path('./config.json')
    config_path = Path(config_path)

    if not config_path.is_file():
        logger.error(f"Configuration file not found at {config_path.resolve()}.")
        raise FileNotFoundError(f"config.json not found at {config_path.resolve()}")

    try:
        with open(config_path, 'r') as f:
            config = json.load(f)
            logger.info("Configuration file loaded successfully.")
    except json.JSONDecodeError as e:
        logger.error(f"Error decoding JSON from config.json: {e}")
        raise

    missing_keys = [key for key in REQUIRED_KEYS if key not in config]
    if missing_keys:
        logger.error(f"Missing required keys in config.json: {missing_keys}")
        raise KeyError(f"Missing required keys: {missing_keys}")

    return config


@dataclass(frozen=True)
class SplitConfig:
    """Either `fractions` (2 or 3 values) or explicit `counts` (train, val, test)."""
    fractions: Optional[Tuple[float, ...]] = (0.85, 0.15)
    counts: Optional[Tuple[int, int, int]] = None
    val_from_train: Optional[float] = 0.15
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.fractions is not None:
            object.__setattr__(self, 'fractions', tuple(float(f) for f in self.fractions))
        if self.counts is not None:
            object.__setattr__(self, 'counts', tuple(int(c) for c in self.counts))


@dataclass(frozen=True)
class PathsConfig:
    dataset_root: Optional[str] = None
    manifest: Optional[str] = None
    pretrained_weights: Optional[str] = None
    checkpoint: Optional[str] = None
    output_dir: Optional[str] = None
    images: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'images', tuple(str(p) for p in self.images))


# Dotted-key prefixes accepted by `apply_overrides`.
SECTIONS = {
    'model': 'model',
    'train': 'train',
    'augment': 'augmentation',
    'augmentation': 'augmentation',
    'split': 'split',
    'paths': 'paths',
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI stage needs; echoed verbatim as run.json."""
    command: str
    preset: str = 'b16'
    model: ViTConfig = field(default_factory=ViTConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augmentation: AugmentSpec = field(default_factory=AugmentSpec)
    split: SplitConfig = field(default_factory=SplitConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    pretrained: bool = False
    from_scratch: bool = False
    augment: bool = True
    seed: int = 0
    workers: int = 1

    def to_dict(self) -> Dict[str, Any]:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values['model'] = self.model.to_dict()
        values['train'] = self.train.to_dict()
        values['augmentation'] = self.augmentation.to_dict()
        values['split'] = asdict(self.split)
        values['paths'] = asdict(self.paths)
        return json.loads(json.dumps(values))

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'RunConfig':
        values = dict(values)
        values['model'] = ViTConfig.from_dict(values.get('model', {}))
        values['train'] = TrainConfig.from_dict(values.get('train', {}))
        values['augmentation'] = AugmentSpec.from_dict(values.get('augmentation', {}))
        values['split'] = SplitConfig(**values.get('split', {}))
        values['paths'] = PathsConfig(**values.get('paths', {}))
        return cls(**values)

    def write(self, run_dir: Path) -> Path:
        """Writes run.json into `run_dir`."""
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / 'run.json'
        path.write_text(json.dumps(self.to_dict(), indent=4) + '\n', encoding='utf-8')
        logger.info(f"Effective configuration written to {path}")
        return path


def build_run_config(command: str, preset_name: str = 'b16', num_classes: int = 7, seed: int = 0,
                     workers: int = 1, model: Optional[dict] = None, train: Optional[dict] = None,
                     augmentation: Optional[dict] = None, split: Optional[dict] = None,
                     paths: Optional[dict] = None, **flags) -> RunConfig:
    """
    Assembles a RunConfig from CLI-level values.

    The single `seed` is handed to every component that draws random numbers
    unless a section sets its own.
    """
    try:
        return RunConfig(
            command=command,
            preset=preset_name,
            model=preset(preset_name, num_classes, **(model or {})),
            train=TrainConfig(**{'seed': seed, 'workers': workers, **(train or {})}),
            augmentation=AugmentSpec(**{'seed': seed, **(augmentation or {})}),
            split=SplitConfig(**{'seed': seed, **(split or {})}),
            paths=PathsConfig(**(paths or {})),
            seed=seed,
            workers=workers,
            **flags,
        )
    except (TypeError, ValueError) as e:
        logger.error(f"Invalid run configuration: {e}")
        raise ConfigurationError(f"Invalid run configuration: {e}") from e


def _parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(lines: Iterable[str]) -> Dict[str, Any]:
    """Parses `key=value` lines; `#` starts a comment, blank lines are skipped."""
    overrides = {}
    for number, line in enumerate(lines, start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            logger.error(f"Override line {number} is not key=value: {line!r}")
            raise ConfigurationError(f"Override line {number} is not key=value: {line!r}")
        key, value = line.split('=', 1)
        overrides[key.strip()] = _parse_value(value)
    return overrides


def read_overrides(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        logger.error(f"Override file not found at {path}")
        raise ConfigurationError(f"Override file not found at {path}")
    return parse_overrides(path.read_text(encoding='utf-8').splitlines())


def apply_overrides(run_config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """
    Returns a copy of `run_config` with dotted-key overrides applied.

    `train.base_lr=0.01` targets a section field; an undotted key such as
    `augment=false` targets a top-level field. Unknown keys are errors.
    """
    sections: Dict[str, Dict[str, Any]] = {}
    top: Dict[str, Any] = {}
    top_fields = {f.name for f in fields(RunConfig)} - set(SECTIONS.values())
    for key, value in overrides.items():
        if '.' in key:
            prefix, name = key.split('.', 1)
            if prefix not in SECTIONS:
                logger.error(f"Unknown config section '{prefix}' in '{key}'")
                raise ConfigurationError(f"Unknown config section '{prefix}' in '{key}'")
            section = SECTIONS[prefix]
            known = {f.name for f in fields(getattr(run_config, section))}
            if name not in known:
                logger.error(f"Unknown config key '{key}'.")
                raise ConfigurationError(f"Unknown config key '{key}'")
            sections.setdefault(section, {})[name] = value
        elif key in top_fields:
            top[key] = value
        else:
            logger.error(f"Unknown config key '{key}'.")
            raise ConfigurationError(f"Unknown config key '{key}'")
    try:
        updated = {section: replace(getattr(run_config, section), **values)
                   for section, values in sections.items()}
        result = replace(run_config, **updated, **top)
    except (TypeError, ValueError) as e:
        logger.error(f"Invalid override: {e}")
        raise ConfigurationError(f"Invalid override: {e}") from e
    if overrides:
        logger.info(f"Applied {len(overrides)} config overrides: {sorted(overrides)}")
    return result


def create_default_config(config_path: Path = None):
    """
    Creates a default config.json file with a standard structure.
    This is useful for initial project setup.
    """
    default_config = {
        "database_path": "db/cooking_vit_runs.db",
        "output_folder": "runs"
    }

    config_path = Path(config_path or './config.json')
    if not config_path.exists():
        with open(config_path, 'w') as f:
            json.dump(default_config, f, indent=4)
        logger.info(f"Default config.json created at {config_path.resolve()}.")
