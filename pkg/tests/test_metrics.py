"""Ranking metric against brute-force pairwise enumeration; export round trips."""

import json

import numpy as np
import pytest

from invlink.metrics import (MetricError, MetricsRecord, export_metrics,
                             read_metrics, roc_auc)


def brute_force_auc(scores, labels):
    """Independent oracle: count wins and half-ties over all +/- pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_perfect_separation():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_all_ties_is_half():
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5


def test_worked_example():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)


def test_single_class_rejected():
    with pytest.raises(MetricError):
        roc_auc([0.1, 0.2], [1, 1])


def test_matches_brute_force_on_random_lists():
    rng = np.random.default_rng(17)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # quantized scores force ties regularly
        scores = np.round(rng.uniform(0, 1, n), 1)
        assert roc_auc(scores, labels) == pytest.approx(
            brute_force_auc(scores, labels), abs=1e-12)


def test_complement_symmetry():
    rng = np.random.default_rng(19)
    for _ in range(50):
        n = int(rng.integers(2, 13))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.uniform(0, 1, n), 1)
        assert roc_auc(scores, labels) + roc_auc(scores, 1 - labels) == pytest.approx(1.0)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(23)
    scores = rng.uniform(0, 1, 10)
    labels = np.array([0, 1] * 5)
    base = roc_auc(scores, labels)
    for transform in (lambda s: 3 * s + 2, np.exp, lambda s: s ** 3 + s):
        assert roc_auc(transform(scores), labels) == pytest.approx(base, abs=1e-12)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def records_for(seeds):
    out = []
    for seed in seeds:
        out.append(MetricsRecord(seed, "test-ood", 10, 0.6 + 0.01 * seed,
                                 0.5, 0.2, 0.7))
    return out


def test_export_round_trip(tmp_path):
    recs = records_for([0, 1, 2])
    table = tmp_path / "metrics.csv"
    export_metrics(recs, table)
    assert read_metrics(table) == recs


def test_export_empty_records_header_only(tmp_path):
    table = tmp_path / "metrics.csv"
    export_metrics([], table)
    lines = table.read_text().strip().splitlines()
    assert lines == ["seed,split,epoch,roc_auc,task_loss,kl_loss,total_loss"]
    assert read_metrics(table) == []


def test_summary_mean_and_sample_std(tmp_path):
    recs = records_for([0, 1, 2, 3, 4])
    table, summary = tmp_path / "m.csv", tmp_path / "s.json"
    export_metrics(recs, table, summary)
    doc = json.loads(summary.read_text())
    assert doc["schema"] == 1
    block = doc["splits"]["test-ood"]
    aucs = [r.roc_auc for r in recs]
    assert block["roc_auc"]["mean"] == pytest.approx(np.mean(aucs))
    assert block["roc_auc"]["std"] == pytest.approx(np.std(aucs, ddof=1))
    assert block["seeds"] == [0, 1, 2, 3, 4]


def test_record_validation():
    with pytest.raises(ValueError):
        MetricsRecord(0, "nope", 1, 0.5, 0, 0, 0)
    with pytest.raises(ValueError):
        MetricsRecord(0, "val", 1, 1.5, 0, 0, 0)
