# /cooking_vit/tests/test_data_pipeline.py

import sys
import pytest
import numpy as np
from pathlib import Path
from PIL import Image

# Add the project root to the sys.path to allow imports from src
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.data_pipeline import (COOKING_STATES, PUBLISHED_SPLIT_COUNTS, BatchStream, ClassCatalog,
                               EmptyClassError, Sample, SplitManifest, load_dataset, resize_bilinear,
                               select, split_dataset, split_summary, standardize)


def write_image(path, rng, size=(12, 10)):
    pixels = (rng.random((size[1], size[0], 3)) * 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)


@pytest.fixture
def image_root(tmp_path):
    """Three class directories of small PNGs plus one corrupt file."""
    rng = np.random.default_rng(0)
    root = tmp_path / "images"
    for name, count in (("sliced", 4), ("diced", 3), ("whole", 5)):
        (root / name).mkdir(parents=True)
        for i in range(count):
            write_image(root / name / f"img_{i:02d}.png", rng)
    (root / "diced" / "broken.png").write_bytes(b"not an image")
    (root / "whole" / "notes.txt").write_text("ignored")
    return root


def listing(n, classes=7):
    return [Sample(np.zeros((1, 1, 3), dtype=np.float32), i % classes, f"c{i % classes}/img_{i:05d}.png")
            for i in range(n)]


def test_load_dataset_orders_classes_and_skips_unreadable(image_root):
    samples, catalog = load_dataset(image_root, image_size=8)
    assert catalog.names == ("diced", "sliced", "whole")
    assert catalog.counts == (3, 4, 5)
    assert catalog.skipped_files == ("diced/broken.png",)
    assert [s.label for s in samples] == [0] * 3 + [1] * 4 + [2] * 5
    assert samples[0].source_path == "diced/img_00.png"
    assert all(s.pixels.shape == (8, 8, 3) and s.pixels.dtype == np.float32 for s in samples)
    assert all(0.0 <= s.pixels.min() and s.pixels.max() <= 1.0 for s in samples)
    print("\n✅ test_load_dataset_orders_classes_and_skips_unreadable passed.")


def test_load_dataset_is_worker_independent(image_root):
    one, _ = load_dataset(image_root, image_size=8, workers=1)
    four, _ = load_dataset(image_root, image_size=8, workers=4)
    assert [s.source_path for s in one] == [s.source_path for s in four]
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(one, four))
    print("✅ test_load_dataset_is_worker_independent passed.")


def test_load_dataset_empty_class_and_missing_root(tmp_path, image_root):
    (image_root / "grated").mkdir()
    with pytest.raises(EmptyClassError, match="grated"):
        load_dataset(image_root)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nowhere")
    print("✅ test_load_dataset_empty_class_and_missing_root passed.")


def test_cooking_state_catalog():
    catalog = ClassCatalog.cooking_states()
    assert catalog.num_classes == 7
    assert catalog.names == COOKING_STATES
    assert catalog.index("creamy_paste") == 0
    print("✅ test_cooking_state_catalog passed.")


def test_resize_checkerboard_values():
    board = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = resize_bilinear(board, 4)
    assert out.shape == (4, 4)
    assert out[1, 1] == pytest.approx(0.375)
    assert out[1, 2] == pytest.approx(0.625)
    print("✅ test_resize_checkerboard_values passed.")


def test_resize_preserves_range_and_identity():
    pixels = np.random.default_rng(1).random((17, 23, 3)).astype(np.float32)
    out = resize_bilinear(pixels, 32, 40)
    assert out.shape == (32, 40, 3)
    assert pixels.min() <= out.min() and out.max() <= pixels.max()
    assert np.array_equal(resize_bilinear(pixels, 17, 23), pixels)
    print("✅ test_resize_preserves_range_and_identity passed.")


def test_standardize_moments_and_constant_image():
    pixels = np.random.default_rng(2).random((8, 8, 3)).astype(np.float32)
    out = standardize(pixels)
    assert abs(float(out.mean())) < 1e-5
    assert abs(float(out.std()) - 1.0) < 1e-4
    flat = standardize(np.full((4, 4, 3), 0.5, dtype=np.float32))
    assert np.all(flat == 0.0)
    print("✅ test_standardize_moments_and_constant_image passed.")


def test_explicit_counts_reproduce_published_split():
    samples = listing(5902)
    manifest = split_dataset(samples, counts=PUBLISHED_SPLIT_COUNTS, seed=7)
    assert manifest.sizes() == (4106, 728, 1068)
    again = split_dataset(samples, counts=PUBLISHED_SPLIT_COUNTS, seed=7)
    assert (manifest.train, manifest.val, manifest.test) == (again.train, again.val, again.test)
    print("✅ test_explicit_counts_reproduce_published_split passed.")


def test_ratio_mode_rounding():
    samples = listing(100, classes=4)
    two = split_dataset(samples, fractions=(0.85, 0.15), val_from_train=0.15, seed=0)
    assert two.sizes() == (73, 12, 15)
    three = split_dataset(samples, fractions=(0.7, 0.15, 0.15), seed=0)
    assert three.sizes() == (70, 15, 15)
    print("✅ test_ratio_mode_rounding passed.")


def test_split_is_a_partition_and_stratified():
    samples = listing(5902)
    manifest = split_dataset(samples, counts=PUBLISHED_SPLIT_COUNTS, seed=3)
    everything = manifest.train + manifest.val + manifest.test
    assert len(everything) == len(set(everything)) == 5902
    labels = {s.source_path: s.label for s in samples}
    class_sizes = np.bincount([s.label for s in samples])
    for split, size in zip(("train", "val", "test"), PUBLISHED_SPLIT_COUNTS):
        per_class = np.bincount([labels[p] for p in manifest.split(split)], minlength=7)
        ideal = class_sizes * size / 5902
        assert np.all(np.abs(per_class - ideal) <= 1.0)
    print("✅ test_split_is_a_partition_and_stratified passed.")


def test_split_rejects_bad_sizes():
    samples = listing(50)
    with pytest.raises(ValueError, match="exceeding"):
        split_dataset(samples, counts=(40, 10, 10))
    with pytest.raises(ValueError):
        split_dataset(samples, fractions=(0.5, 0.6))
    with pytest.raises(ValueError):
        split_dataset([], fractions=(0.85, 0.15))
    print("✅ test_split_rejects_bad_sizes passed.")


def test_manifest_file_is_deterministic(tmp_path):
    samples = listing(300)
    first = split_dataset(samples, fractions=(0.85, 0.15), val_from_train=0.15, seed=11)
    second = split_dataset(samples, fractions=(0.85, 0.15), val_from_train=0.15, seed=11)
    first.save(tmp_path / "a.tsv")
    second.save(tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    loaded = SplitManifest.load(tmp_path / "a.tsv")
    assert loaded.seed == 11
    assert loaded.sizes() == first.sizes()
    assert loaded.test == first.test
    print("✅ test_manifest_file_is_deterministic passed.")


def test_select_and_summary():
    samples = listing(70)
    catalog = ClassCatalog(tuple(f"c{i}" for i in range(7)), tuple([10] * 7))
    manifest = split_dataset(samples, counts=(50, 10, 10), seed=0)
    picked = select(samples, manifest.val)
    assert [s.source_path for s in picked] == manifest.val
    with pytest.raises(KeyError):
        select(samples, ["missing.png"])
    summary = split_summary(manifest, samples, catalog)
    assert list(summary.loc["total"]) == [50, 10, 10]
    assert summary.loc[[f"c{i}" for i in range(7)]].to_numpy().sum(axis=1).tolist() == [10] * 7
    print("✅ test_select_and_summary passed.")


def test_batch_stream_order_is_seeded_and_worker_independent():
    rng = np.random.default_rng(0)
    samples = [Sample(rng.random((4, 4, 3)).astype(np.float32), i % 3, f"s{i}") for i in range(10)]
    a = BatchStream(samples, batch_size=4, seed=5, workers=1)
    b = BatchStream(samples, batch_size=4, seed=5, workers=3)
    assert len(a) == 3
    for (xa, ya), (xb, yb) in zip(a.epoch(0), b.epoch(0)):
        assert np.array_equal(xa, xb) and np.array_equal(ya, yb)
    assert sorted(a.order(1).tolist()) == list(range(10))
    assert not np.array_equal(a.order(0), a.order(1))
    labels = np.concatenate([y for _, y in a.epoch(2)])
    assert sorted(labels.tolist()) == sorted(s.label for s in samples)
    print("✅ test_batch_stream_order_is_seeded_and_worker_independent passed.")
