"""Ranking metrics and metrics-file export.

ROC-AUC is computed as the Mann-Whitney statistic via average ranks: the
probability that a random positive outscores a random negative, counting ties
as one half.  Export writes a comma-separated table plus a JSON summary with
mean and sample standard deviation per metric across seeds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

SPLITS = ("train", "val", "test-in", "test-ood")
SUMMARY_SCHEMA = 1
_COLUMNS = ("seed", "split", "epoch", "roc_auc", "task_loss", "kl_loss", "total_loss")


class MetricError(ValueError):
    """The requested metric is undefined for the given inputs."""


@dataclass(frozen=True)
class MetricsRecord:
    seed: int
    split: str
    epoch: int
    roc_auc: float
    task_loss: float
    kl_loss: float
    total_loss: float

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split '{self.split}'")
        if not 0.0 <= self.roc_auc <= 1.0:
            raise ValueError(f"roc_auc {self.roc_auc} outside [0, 1]")


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0   # 1-based average rank of the tie block
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """P(score of a positive > score of a negative) + half the tie mass."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores/labels shapes differ: {scores.shape} vs {labels.shape}")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc_auc needs both classes present")
    ranks = _average_ranks(scores)
    pos_rank_sum = float(np.sum(ranks[labels == 1]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def export_metrics(records: list[MetricsRecord], table_path, summary_path=None) -> None:
    """Write records as a CSV table and (optionally) a JSON mean/std summary.

    The summary aggregates over seeds within each (split, epoch) group that
    appears in the final epoch per seed, reporting mean and sample standard
    deviation for each metric column.  Output bytes are a pure function of
    the records.
    """
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for r in records:
            writer.writerow([r.seed, r.split, r.epoch,
                             repr(r.roc_auc), repr(r.task_loss),
                             repr(r.kl_loss), repr(r.total_loss)])
    if summary_path is None:
        return
    by_split: dict[str, dict[int, MetricsRecord]] = {}
    for r in records:
        per_seed = by_split.setdefault(r.split, {})
        prev = per_seed.get(r.seed)
        if prev is None or r.epoch >= prev.epoch:
            per_seed[r.seed] = r
    summary = {"schema": SUMMARY_SCHEMA, "splits": {}}
    for split in sorted(by_split):
        rows = [by_split[split][s] for s in sorted(by_split[split])]
        block = {"seeds": [r.seed for r in rows]}
        for metric in ("roc_auc", "task_loss", "kl_loss", "total_loss"):
            vals = np.array([getattr(r, metric) for r in rows])
            block[metric] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
            }
        summary["splits"][split] = block
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_metrics(table_path) -> list[MetricsRecord]:
    """Round-trip reader for tables written by ``export_metrics``."""
    out = []
    with open(table_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(_COLUMNS):
            raise MetricError(f"unexpected metrics header {reader.fieldnames}")
        for row in reader:
            out.append(MetricsRecord(
                seed=int(row["seed"]), split=row["split"], epoch=int(row["epoch"]),
                roc_auc=float(row["roc_auc"]), task_loss=float(row["task_loss"]),
                kl_loss=float(row["kl_loss"]), total_loss=float(row["total_loss"])))
    return out
