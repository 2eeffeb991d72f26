"""Paired selector/control training runs and curve bookkeeping."""

import numpy as np
import pytest

from invlink.ablation import (AblationCurves, lower_ood_loss_fraction,
                              run_ablation, write_curves)
from invlink.data import generate_planted_motif_dataset
from invlink.train import TrainConfig


@pytest.fixture(scope="module")
def small_run():
    ds = generate_planted_motif_dataset(n_nodes=60, n_timestamps=4, seed=4)
    cfg = TrainConfig(d_s=8, d_e=1, d_t=4, hidden=(8, 8, 8), epochs=8,
                      learning_rate=0.02, seed=4, beta=0.1, tau=1.0)
    return run_ablation(ds.train, ds.ood, cfg), cfg, ds


def test_control_variant_has_zero_kl(small_run):
    curves, _, _ = small_run
    assert all(k == 0.0 for k in curves["all-links"].kl)


def test_both_variants_reduce_training_loss(small_run):
    curves, _, _ = small_run
    for variant in ("invariant", "all-links"):
        c = curves[variant]
        assert c.train_task[-1] <= c.train_task[0]


def test_curves_cover_every_epoch(small_run):
    curves, cfg, _ = small_run
    for c in curves.values():
        assert c.epochs == list(range(1, cfg.epochs + 1))
        assert len(c.ood_task) == len(c.ood_auc) == cfg.epochs


def test_rerun_is_identical(small_run):
    curves, cfg, ds = small_run
    again = run_ablation(ds.train, ds.ood, cfg)
    for variant, c in curves.items():
        assert c.ood_task == again[variant].ood_task
        assert c.train_task == again[variant].train_task
        assert c.ood_auc == again[variant].ood_auc


def test_lower_ood_loss_fraction_math():
    inv = AblationCurves("invariant", [1, 2, 3, 4, 5, 6, 7, 8],
                         [0] * 8, [0.5, 0.5, 0.5, 0.5, 0.5, 0.4, 0.6, 0.4],
                         [0] * 8, [0] * 8)
    ctl = AblationCurves("all-links", [1, 2, 3, 4, 5, 6, 7, 8],
                         [0] * 8, [0.5] * 8, [0] * 8, [0] * 8)
    frac = lower_ood_loss_fraction({"invariant": inv, "all-links": ctl},
                                   after_epoch=5)
    assert frac == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        lower_ood_loss_fraction({"invariant": inv, "all-links": ctl},
                                after_epoch=8)


def test_write_curves_is_plottable_csv(tmp_path, small_run):
    curves, _, _ = small_run
    path = tmp_path / "curves.csv"
    write_curves(curves["invariant"], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_task,ood_task,ood_auc,kl"
    assert len(lines) == 1 + len(curves["invariant"].epochs)
    first = lines[1].split(",")
    assert int(first[0]) == 1
    assert np.isfinite([float(x) for x in first[1:]]).all()
