# /cooking_vit/tests/test_config_validator.py

import pytest
import sys
from pathlib import Path

# Add the project root to the sys.path
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from src.config_manager import build_run_config
from src.config_validator import RunConfigValidator
from src.vit import ConfigurationError


@pytest.fixture
def inputs(tmp_path):
    """A dataset root, a manifest and a weights file on disk."""
    root = tmp_path / "images"
    root.mkdir()
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("# seed=0\n")
    weights = tmp_path / "vit_b16.vitc"
    weights.write_bytes(b"VITC")
    return {'dataset_root': str(root), 'manifest': str(manifest), 'weights': str(weights)}


def train_config(inputs, **kwargs):
    paths = {'dataset_root': inputs['dataset_root'], 'manifest': inputs['manifest'],
             **kwargs.pop('paths', {})}
    return build_run_config('train', 'tiny', paths=paths, **kwargs)


def test_valid_train_config_passes_unchanged(inputs):
    """Tests that a consistent configuration comes back as it went in."""
    config = train_config(inputs, train={'total_steps': 100, 'eval_interval_steps': 10})
    validator = RunConfigValidator(config)
    assert validator.validate_and_clean() == config
    assert validator.corrections == []
    print("\n✅ Test_valid_train_config_passes_unchanged passed.")


def test_pretrained_and_scratch_are_exclusive(inputs):
    config = train_config(inputs, paths={'pretrained_weights': inputs['weights']},
                          pretrained=True, from_scratch=True)
    with pytest.raises(ConfigurationError, match="mutually exclusive"):
        RunConfigValidator(config).validate_and_clean()
    with pytest.raises(ConfigurationError, match="weights"):
        RunConfigValidator(train_config(inputs, pretrained=True)).validate_and_clean()
    print("✅ Test_pretrained_and_scratch_are_exclusive passed.")


def test_missing_and_nonexistent_paths(inputs, tmp_path):
    with pytest.raises(ConfigurationError, match="paths.checkpoint"):
        RunConfigValidator(build_run_config('eval', 'tiny', paths={'dataset_root': inputs['dataset_root']})
                           ).validate_and_clean()
    config = train_config(inputs, paths={'manifest': str(tmp_path / "missing.tsv")})
    with pytest.raises(FileNotFoundError, match="paths.manifest"):
        RunConfigValidator(config).validate_and_clean()
    attend = build_run_config('attend', 'tiny', paths={'checkpoint': inputs['weights']})
    with pytest.raises(ConfigurationError, match="image"):
        RunConfigValidator(attend).validate_and_clean()
    print("✅ Test_missing_and_nonexistent_paths passed.")


def test_split_settings(inputs):
    paths = {'dataset_root': inputs['dataset_root']}
    ok = build_run_config('split', 'tiny', paths=paths, split={'fractions': (0.7, 0.15, 0.15), 'val_from_train': None})
    assert RunConfigValidator(ok).validate_and_clean() == ok
    bad_sum = build_run_config('split', 'tiny', paths=paths, split={'fractions': (0.8, 0.3)})
    with pytest.raises(ConfigurationError, match="sum to 1"):
        RunConfigValidator(bad_sum).validate_and_clean()
    mixed = build_run_config('split', 'tiny', paths=paths, split={'fractions': (0.7, 0.15, 0.15)})
    with pytest.raises(ConfigurationError, match="val-from-train"):
        RunConfigValidator(mixed).validate_and_clean()
    counts = build_run_config('split', 'tiny', paths=paths, split={'counts': (4106, 728, 1068)})
    assert RunConfigValidator(counts).validate_and_clean().split.counts == (4106, 728, 1068)
    print("✅ Test_split_settings passed.")


def test_workers_must_be_positive(inputs):
    config = train_config(inputs, workers=0, train={'workers': 1})
    with pytest.raises(ConfigurationError, match="workers"):
        RunConfigValidator(config).validate_and_clean()
    print("✅ Test_workers_must_be_positive passed.")


def test_eval_interval_is_clamped_with_warning(inputs, caplog):
    """An evaluation interval beyond the run length is corrected, not rejected."""
    config = train_config(inputs, train={'total_steps': 20, 'eval_interval_steps': 100})
    validator = RunConfigValidator(config)
    with caplog.at_level('WARNING'):
        cleaned = validator.validate_and_clean()
    assert cleaned.train.eval_interval_steps == 20
    assert config.train.eval_interval_steps == 100
    assert len(validator.corrections) == 1
    assert "clamping to 20" in caplog.text
    print("✅ Test_eval_interval_is_clamped_with_warning passed.")
