# /cooking_vit/tests/test_evaluator.py

import sys
import pytest
import numpy as np
import pandas as pd
from pathlib import Path
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

# Add the project root to the sys.path to allow imports from src
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.data_pipeline import COOKING_STATES, Sample
from src.evaluator import ConfusionMatrix, confusion, predict, report, write_outputs
from src.vit import init_params, preset


def random_samples(n, seed=0):
    rng = np.random.default_rng(seed)
    return [Sample(rng.random((32, 32, 3), dtype=np.float32), i % 3, f"s{i}.png") for i in range(n)]


def bias_only_model(bias):
    """A tiny model whose logits equal `bias` for every input."""
    params = init_params(preset('tiny', num_classes=len(bias)))
    params['head.weight'].data[...] = 0.0
    params['head.bias'].data[...] = np.asarray(bias, dtype=np.float32)
    return params


def brute_force_metrics(true, pred, k):
    """Per-pair counting, no matrix algebra."""
    precision, recall, f1 = [], [], []
    for c in range(k):
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        predicted = sum(1 for p in pred if p == c)
        actual = sum(1 for t in true if t == c)
        pc = tp / predicted if predicted else 0.0
        rc = tp / actual if actual else 0.0
        precision.append(pc)
        recall.append(rc)
        f1.append(2 * pc * rc / (pc + rc) if pc + rc else 0.0)
    accuracy = sum(1 for t, p in zip(true, pred) if t == p) / len(true)
    return np.array(precision), np.array(recall), np.array(f1), accuracy


def test_predict_argmax_and_tie_rule():
    samples = random_samples(4)
    assert predict(bias_only_model([0.2, 0.9, 0.1]), samples).labels.tolist() == [1, 1, 1, 1]
    tied = predict(bias_only_model([1.0, 1.0, 0.0]), samples)
    assert tied.labels.tolist() == [0, 0, 0, 0]
    assert tied.logits.shape == (4, 3)
    print("\n✅ test_predict_argmax_and_tie_rule passed.")


def test_predict_is_batch_and_worker_independent():
    params = init_params(preset('tiny', num_classes=3), seed=5)
    rng = np.random.default_rng(1)
    for name in params:
        params[name].data[...] = 0.5 * rng.standard_normal(params[name].shape).astype(np.float32)
    samples = random_samples(10, seed=2)
    single = predict(params, samples, batch_size=1)
    batched = predict(params, samples, batch_size=4, workers=3)
    assert np.allclose(single.logits, batched.logits, atol=1e-5)
    assert np.array_equal(single.labels, batched.labels)
    assert predict(params, []).labels.size == 0
    print("✅ test_predict_is_batch_and_worker_independent passed.")


def test_confusion_hand_counts():
    matrix = confusion([0, 0, 1], [0, 1, 1], 2)
    assert matrix.counts.tolist() == [[1, 1], [0, 1]]
    assert matrix.total == 3
    assert np.allclose(matrix.normalized(), [[0.5, 0.5], [0.0, 1.0]])
    perfect = confusion([0, 1, 2, 2], [0, 1, 2, 2], 4)
    assert np.array_equal(perfect.counts, np.diag([1, 1, 2, 0]))
    # Class 3 never occurs: its normalized row stays zero.
    assert perfect.normalized()[3].tolist() == [0.0] * 4
    assert np.allclose(perfect.normalized()[:3].sum(axis=1), 1.0)
    print("✅ test_confusion_hand_counts passed.")


def test_confusion_rejects_bad_input():
    with pytest.raises(ValueError, match="length mismatch"):
        confusion([0, 1], [0], 2)
    with pytest.raises(ValueError, match="out of range"):
        confusion([0, 2], [0, 1], 2)
    print("✅ test_confusion_rejects_bad_input passed.")


def test_report_hand_arithmetic():
    result = report(ConfusionMatrix(np.array([[2, 0], [1, 1]])))
    assert result.precision[0] == pytest.approx(2 / 3)
    assert result.recall[0] == 1.0
    assert result.f1[0] == pytest.approx(0.8)
    assert result.precision[1] == 1.0
    assert result.recall[1] == 0.5
    assert result.accuracy == 0.75
    assert result.macro_recall == pytest.approx(0.75)
    print("✅ test_report_hand_arithmetic passed.")


def test_report_zero_denominators_and_identity():
    empty_column = report(ConfusionMatrix(np.array([[0, 3], [0, 2]])))
    assert empty_column.precision[0] == 0.0
    assert empty_column.recall[0] == 0.0
    assert empty_column.f1[0] == 0.0
    ideal = report(ConfusionMatrix(np.diag([4, 5, 6])))
    assert ideal.accuracy == 1.0
    assert np.all(ideal.precision == 1.0) and np.all(ideal.recall == 1.0) and np.all(ideal.f1 == 1.0)
    assert ideal.macro_f1 == 1.0 and ideal.weighted_f1 == 1.0
    print("✅ test_report_zero_denominators_and_identity passed.")


def test_report_matches_brute_force_oracle():
    """1000 random 7-class label/prediction sets, checked against per-pair counting and sklearn."""
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        true = rng.integers(0, 7, n)
        pred = np.where(rng.random(n) < 0.6, true, rng.integers(0, 7, n))
        result = report(confusion(true, pred, 7))
        precision, recall, f1, accuracy = brute_force_metrics(true.tolist(), pred.tolist(), 7)
        assert np.allclose(result.precision, precision, rtol=0, atol=1e-12)
        assert np.allclose(result.recall, recall, rtol=0, atol=1e-12)
        assert np.allclose(result.f1, f1, rtol=0, atol=1e-12)
        assert result.accuracy == pytest.approx(accuracy, abs=1e-12)
        assert result.weighted_recall == pytest.approx(result.accuracy, abs=1e-12)
        assert int(result.support.sum()) == n
    print("✅ test_report_matches_brute_force_oracle passed.")


def test_report_agrees_with_sklearn():
    rng = np.random.default_rng(3)
    true = rng.integers(0, 7, 500)
    pred = np.where(rng.random(500) < 0.7, true, rng.integers(0, 7, 500))
    result = report(confusion(true, pred, 7))
    labels = list(range(7))
    p, r, f, s = precision_recall_fscore_support(true, pred, labels=labels, zero_division=0)
    assert np.allclose(result.precision, p) and np.allclose(result.recall, r) and np.allclose(result.f1, f)
    assert np.array_equal(result.support, s)
    mp, mr, mf, _ = precision_recall_fscore_support(true, pred, labels=labels, average='macro', zero_division=0)
    assert (result.macro_precision, result.macro_recall, result.macro_f1) == pytest.approx((mp, mr, mf))
    wp, wr, wf, _ = precision_recall_fscore_support(true, pred, labels=labels, average='weighted', zero_division=0)
    assert (result.weighted_precision, result.weighted_recall, result.weighted_f1) == pytest.approx((wp, wr, wf))
    assert result.accuracy == pytest.approx(accuracy_score(true, pred))
    print("✅ test_report_agrees_with_sklearn passed.")


def test_relabeling_permutes_report():
    rng = np.random.default_rng(7)
    true = rng.integers(0, 5, 200)
    pred = np.where(rng.random(200) < 0.5, true, rng.integers(0, 5, 200))
    perm = rng.permutation(5)
    original = report(confusion(true, pred, 5))
    relabeled = report(confusion(perm[true], perm[pred], 5))
    for metric in ('precision', 'recall', 'f1', 'support'):
        assert np.allclose(getattr(relabeled, metric)[perm], getattr(original, metric))
    assert relabeled.accuracy == original.accuracy
    assert relabeled.macro_f1 == pytest.approx(original.macro_f1)
    print("✅ test_relabeling_permutes_report passed.")


def test_published_test_split_supports():
    supports = [124, 144, 131, 147, 110, 237, 175]
    true = np.repeat(np.arange(7), supports)
    result = report(confusion(true, true, 7), COOKING_STATES)
    assert result.support.tolist() == supports
    assert int(result.support.sum()) == 1068
    assert result.to_frame().loc['macro avg', 'support'] == 1068
    print("✅ test_published_test_split_supports passed.")


def test_write_outputs(tmp_path):
    matrix = ConfusionMatrix(np.array([[2, 0, 0], [1, 1, 0], [0, 0, 0]]))
    names = ['whole', 'sliced', 'diced']
    paths = write_outputs(report(matrix, names), matrix, tmp_path / "eval")
    assert all(p.exists() for p in paths.values())

    metrics = dict(line.split('=', 1) for line in paths['metrics'].read_text().splitlines())
    assert float(metrics['accuracy']) == 0.75
    assert float(metrics['whole.precision']) == pytest.approx(2 / 3)
    assert int(metrics['diced.support']) == 0
    assert 'weighted.f1' in metrics and 'macro.f1' in metrics

    counts = pd.read_csv(paths['confusion'], index_col=0)
    assert counts.to_numpy().tolist() == matrix.counts.tolist()
    assert list(counts.columns) == names
    normalized = pd.read_csv(paths['confusion_normalized'], index_col=0)
    assert normalized.to_numpy().tolist() == [[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 0.0]]
    assert "0.5000" in paths['confusion_normalized'].read_text()
    assert "macro avg" in paths['report'].read_text()
    print("✅ test_write_outputs passed.")
