# /cooking_vit/src/main.py

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from PIL import UnidentifiedImageError

# Local imports
from . import tensor as T
from .attention_rollout import output_paths, overlay, rollout, write_grid
from .augmentation import augment_dataset
from .checkpoint_store import (CheckpointFormatError, CheckpointIntegrityError, InventoryError,
                               import_external, load, save)
from .config_manager import (RunConfig, apply_overrides, build_run_config, create_default_config,
                             load_config, read_overrides)
from .config_validator import RunConfigValidator
from .data_pipeline import (EmptyClassError, SplitManifest, decode_image, load_dataset, resize_bilinear,
                            select, split_dataset, split_summary, standardize)
from .db_manager import create_db_and_table, insert_run_record, list_run_records
from .evaluator import confusion, predict, report, write_outputs
from .trainer import NonFiniteLossError, train
from .vit import ConfigurationError, PRESETS, forward, init_params

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_ARTIFACT = 4

ARTIFACT_ERRORS = (CheckpointFormatError, CheckpointIntegrityError, InventoryError, EmptyClassError,
                   FileNotFoundError, KeyError)


class UnusableInputError(RuntimeError):
    """No usable input survived loading."""


def setup_project_directories():
    """Ensures config.json and the project directories exist; returns the project config."""
    create_default_config()
    config = load_config()
    output_folder = Path(config['output_folder'])
    db_path = Path(config['database_path']).parent

    try:
        output_folder.mkdir(parents=True, exist_ok=True)
        db_path.mkdir(parents=True, exist_ok=True)
        logger.debug("Project directories created or verified.")
    except Exception as e:
        logger.error(f"Failed to create project directories: {e}")
        raise
    return config


def make_run_dir(output_folder: Path, command: str, explicit: Optional[str] = None) -> Path:
    if explicit:
        run_dir = Path(explicit)
    else:
        timestamp_str = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
        run_dir = Path(output_folder) / f"{command}_{timestamp_str}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _csv_of(cast):
    def parse(text: str):
        try:
            return tuple(cast(v) for v in text.split(','))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated values, got '{text}'")
    return parse


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, ConfigurationError):
        return EXIT_USAGE
    if isinstance(error, NonFiniteLossError):
        return EXIT_NUMERIC
    if isinstance(error, ARTIFACT_ERRORS + (UnusableInputError,)):
        return EXIT_ARTIFACT
    return EXIT_FAILURE


# --- Stages ---

def run_split(run_config: RunConfig, run_dir: Path) -> Path:
    """Writes manifest.tsv and split_summary.csv; prints the per-split per-class counts."""
    split = run_config.split
    samples, catalog = load_dataset(Path(run_config.paths.dataset_root), workers=run_config.workers)
    try:
        manifest = split_dataset(samples, fractions=split.fractions, counts=split.counts, seed=split.seed,
                                 stratified=split.stratified, val_from_train=split.val_from_train)
    except ValueError as e:
        logger.error(f"Split parameters rejected: {e}")
        raise ConfigurationError(str(e)) from e
    manifest_path = run_dir / 'manifest.tsv'
    manifest.save(manifest_path)
    summary = split_summary(manifest, samples, catalog)
    summary.to_csv(run_dir / 'split_summary.csv')
    print(summary.to_string())
    logger.info(f"Split manifest written to {manifest_path}")
    return manifest_path


def run_train(run_config: RunConfig, run_dir: Path) -> Path:
    """Loads the manifest splits, optionally augments, trains and saves the best checkpoint."""
    paths = run_config.paths
    model = run_config.model
    samples, catalog = load_dataset(Path(paths.dataset_root), image_size=model.image_size,
                                    workers=run_config.workers)
    if catalog.num_classes != model.num_classes:
        logger.info(f"Dataset has {catalog.num_classes} classes; sizing the head accordingly.")
        model = model.with_classes(catalog.num_classes)
        run_config = replace(run_config, model=model)
        run_config.write(run_dir)

    manifest = SplitManifest.load(Path(paths.manifest))
    train_samples = select(samples, manifest.train)
    val_samples = select(samples, manifest.val)
    if not train_samples or not val_samples:
        logger.error(f"Manifest {paths.manifest} has an empty train or validation split.")
        raise UnusableInputError(f"Manifest {paths.manifest} has an empty train or validation split.")
    if run_config.augment:
        train_samples = augment_dataset(train_samples, run_config.augmentation, run_config.workers)

    if run_config.pretrained:
        params = import_external(Path(paths.pretrained_weights), model, seed=run_config.seed)
        source = f"pretrained:{paths.pretrained_weights}"
    else:
        params = init_params(model, seed=run_config.seed)
        source = 'scratch'

    result = train(params, train_samples, val_samples, run_config.train, history_path=run_dir / 'history.csv')
    state = result.state
    metadata = {
        'seed': run_config.seed,
        'source': source,
        'step': state.best_step,
        'best_val_accuracy': state.best_val_accuracy,
        'class_names': list(catalog.names),
    }
    checkpoint_path = save(result.best_params, model, metadata, run_dir / 'checkpoint.vitc')
    logger.info(f"Training finished after {state.step} updates (best val accuracy {state.best_val_accuracy:.4f} "
                f"at step {state.best_step}, early stop: {state.stopped_early}).")
    return checkpoint_path


def run_eval(run_config: RunConfig, run_dir: Path, split_name: str = 'test') -> float:
    """Evaluates a checkpoint on one manifest split (or the whole dataset); prints `accuracy=`."""
    paths = run_config.paths
    checkpoint = load(Path(paths.checkpoint))
    config = checkpoint.config
    samples, catalog = load_dataset(Path(paths.dataset_root), image_size=config.image_size,
                                    workers=run_config.workers)
    if catalog.num_classes != config.num_classes:
        logger.error(f"Checkpoint predicts {config.num_classes} classes but the dataset has {catalog.num_classes}.")
        raise InventoryError(
            f"Checkpoint predicts {config.num_classes} classes but the dataset has {catalog.num_classes}")
    names = checkpoint.metadata.get('class_names')
    if names and list(names) != list(catalog.names):
        logger.error(f"Checkpoint classes {names} differ from dataset classes {list(catalog.names)}")
        raise InventoryError(f"Checkpoint classes {names} differ from dataset classes {list(catalog.names)}")

    if paths.manifest:
        samples = select(samples, SplitManifest.load(Path(paths.manifest)).split(split_name))
    if not samples:
        logger.error(f"No samples to evaluate in split '{split_name}'.")
        raise UnusableInputError(f"No samples to evaluate in split '{split_name}'.")

    prediction = predict(checkpoint.params, samples, run_config.train.batch_size, run_config.workers)
    matrix = confusion([s.label for s in samples], prediction.labels, config.num_classes)
    class_report = report(matrix, catalog.names)
    write_outputs(class_report, matrix, run_dir)
    print(class_report.to_frame().to_string(float_format=lambda v: f'{v:.4f}'))
    print(f"accuracy={class_report.accuracy}")
    return class_report.accuracy


def run_attend(run_config: RunConfig, run_dir: Path) -> List[Path]:
    """One rollout overlay PNG and one raw grid CSV per readable input image."""
    checkpoint = load(Path(run_config.paths.checkpoint))
    params, config = checkpoint.params, checkpoint.config
    names = checkpoint.metadata.get('class_names')
    written = []
    for image_path in map(Path, run_config.paths.images):
        try:
            original = decode_image(image_path)
        except (OSError, UnidentifiedImageError, ValueError) as e:
            logger.warning(f"Skipping unreadable image {image_path}: {e}")
            continue
        pixels = standardize(resize_bilinear(original, config.image_size))
        with T.no_grad():
            logits, trace = forward(pixels, params, capture=True)
        rollout_map = rollout(trace)
        png_path, csv_path = output_paths(run_dir, image_path.stem)
        overlay(rollout_map.grid, original, png_path)
        write_grid(rollout_map.raw_grid, csv_path)
        label = int(logits.data.argmax())
        logger.info(f"{image_path.name}: predicted {names[label] if names else label}; overlay at {png_path}")
        written.extend([png_path, csv_path])
    if not written:
        logger.error("Every input image failed to decode.")
        raise UnusableInputError("Every input image failed to decode.")
    return written


# --- Argument handling ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help="Single seed for every random draw.")
    common.add_argument('--workers', type=int, default=1, help="Data-pipeline worker threads.")
    common.add_argument('--config', type=str, help="key=value override file (dotted keys).")
    common.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--out-dir', type=str, help="Run directory (default: <output_folder>/<command>_<time>).")

    parser = argparse.ArgumentParser(description="Cooking-state ViT - split, train, evaluate and explain.")
    subparsers = parser.add_subparsers(dest='command', help='sub-command help')

    split_parser = subparsers.add_parser('split', parents=[common], help='Write a train/val/test manifest.')
    split_parser.add_argument('--root', type=str, required=True, help="Dataset root (<root>/<class>/<image>).")
    sizes = split_parser.add_mutually_exclusive_group()
    sizes.add_argument('--counts', type=_csv_of(int), help="Explicit train,val,test counts.")
    sizes.add_argument('--fractions', type=_csv_of(float), help="train,test or train,val,test fractions.")
    split_parser.add_argument('--val-from-train', type=float, help="Validation share carved from train.")
    split_parser.add_argument('--no-stratify', action='store_true', help="Plain random split.")

    train_parser = subparsers.add_parser('train', parents=[common], help='Fine-tune or train a ViT.')
    train_parser.add_argument('--root', type=str, required=True)
    train_parser.add_argument('--manifest', type=str, required=True)
    train_parser.add_argument('--preset', default='b16', choices=sorted(PRESETS))
    source = train_parser.add_mutually_exclusive_group()
    source.add_argument('--pretrained', type=str, metavar='PATH', help="Pretrained VITC weights.")
    source.add_argument('--from-scratch', action='store_true')
    train_parser.add_argument('--augment', action=argparse.BooleanOptionalAction, default=True)
    train_parser.add_argument('--steps', type=int, default=10000)
    train_parser.add_argument('--lr', type=float, default=0.03)
    train_parser.add_argument('--batch', type=int, default=32)
    train_parser.add_argument('--schedule', default='cosine', choices=['cosine', 'constant'])
    train_parser.add_argument('--warmup', type=int, default=0)
    train_parser.add_argument('--eval-interval', type=int, default=100)
    train_parser.add_argument('--patience', type=int, default=10)
    train_parser.add_argument('--freeze-encoder', action='store_true', help="Train only the head.")

    eval_parser = subparsers.add_parser('eval', parents=[common], help='Evaluate a checkpoint.')
    eval_parser.add_argument('--checkpoint', type=str, required=True)
    eval_parser.add_argument('--root', type=str, required=True)
    eval_parser.add_argument('--manifest', type=str, help="Evaluate one manifest split instead of all images.")
    eval_parser.add_argument('--split', default='test', choices=['train', 'val', 'test'])
    eval_parser.add_argument('--batch', type=int, default=32)

    attend_parser = subparsers.add_parser('attend', parents=[common], help='Attention-rollout overlays.')
    attend_parser.add_argument('--checkpoint', type=str, required=True)
    attend_parser.add_argument('--images', type=str, nargs='+', required=True)

    subparsers.add_parser('runs', help='List recorded runs.')
    return parser


def config_from_args(args) -> RunConfig:
    command = args.command
    paths = {'dataset_root': getattr(args, 'root', None), 'output_dir': args.out_dir}
    split, train_values, flags = {}, {}, {}
    preset_name = 'b16'
    if command == 'split':
        if args.counts is not None:
            split = {'counts': args.counts, 'fractions': None, 'val_from_train': None}
        elif args.fractions is not None:
            split = {'fractions': args.fractions, 'val_from_train': args.val_from_train}
        elif args.val_from_train is not None:
            split = {'val_from_train': args.val_from_train}
        split['stratified'] = not args.no_stratify
    elif command == 'train':
        preset_name = args.preset
        paths.update(manifest=args.manifest, pretrained_weights=args.pretrained)
        train_values = {
            'total_steps': args.steps, 'base_lr': args.lr, 'batch_size': args.batch,
            'schedule': args.schedule, 'warmup_steps': args.warmup,
            'eval_interval_steps': args.eval_interval, 'early_stop_patience_evals': args.patience,
            'freeze_encoder': args.freeze_encoder,
        }
        flags = {'pretrained': args.pretrained is not None, 'from_scratch': args.from_scratch,
                 'augment': args.augment}
    elif command == 'eval':
        paths.update(checkpoint=args.checkpoint, manifest=args.manifest)
        train_values = {'batch_size': args.batch}
    elif command == 'attend':
        paths.update(checkpoint=args.checkpoint, images=tuple(args.images))

    run_config = build_run_config(command, preset_name, seed=args.seed, workers=args.workers,
                                  train=train_values, split=split, paths=paths, **flags)
    if args.config:
        run_config = apply_overrides(run_config, read_overrides(Path(args.config)))
    return RunConfigValidator(run_config).validate_and_clean()


STAGES = {
    'split': run_split,
    'train': run_train,
    'attend': run_attend,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main function to handle CLI arguments and orchestrate the stages.

    Returns the process exit code: 0 success, 2 usage, 3 non-finite loss,
    4 artifact mismatch or unusable input, 1 anything else.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, getattr(args, 'log_level', 'INFO')),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE

    run_config, run_dir, code = None, None, EXIT_OK
    try:
        project = setup_project_directories()
        create_db_and_table()
        if args.command == 'runs':
            list_run_records()
            return EXIT_OK
        run_config = config_from_args(args)
        run_dir = make_run_dir(Path(project['output_folder']), args.command, run_config.paths.output_dir)
        run_config.write(run_dir)
        if args.command == 'eval':
            run_eval(run_config, run_dir, args.split)
        else:
            STAGES[args.command](run_config, run_dir)
        logger.info(f"'{args.command}' completed successfully. Outputs in {run_dir}")
    except NonFiniteLossError as e:
        code = EXIT_NUMERIC
        logger.critical(f"Training diverged at step {e.step} with lr={e.lr:.6g}: {e}")
        print(f"error: {e}", file=sys.stderr)
    except Exception as e:
        code = exit_code_for(e)
        log = logger.critical if code == EXIT_FAILURE else logger.error
        log(f"'{args.command}' failed: {e}")
        print(f"error: {e}", file=sys.stderr)
    finally:
        if run_dir is not None:
            try:
                insert_run_record(args.command, run_dir, json.dumps(run_config.to_dict()), code)
            except Exception as e:
                logger.warning(f"Could not record the run: {e}")
    return code


if __name__ == "__main__":
    sys.exit(main())
