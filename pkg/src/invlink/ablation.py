"""Paired training runs: learned selection versus the all-links control.

Both variants start from identically seeded weights and see the same batches;
the control pins every selection probability to 1 and drops the KL term, so
any gap in OOD behavior is attributable to the invariant-link discovery.
Per-epoch task loss is recorded on the training and OOD-validation splits
(the loss-curve quadrants), along with OOD ROC-AUC.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

from .metrics import roc_auc
from .train import (OptimizerState, TrainConfig, TrainData, eval_queries_for,
                    evaluate, derive_seed, train_epoch)

VARIANTS = ("invariant", "all-links")


@dataclass
class AblationCurves:
    variant: str
    epochs: list[int]
    train_task: list[float]
    ood_task: list[float]
    ood_auc: list[float]
    kl: list[float]

    @property
    def final_ood_auc(self) -> float:
        return self.ood_auc[-1]


def run_ablation(train_data: TrainData, ood_data: TrainData,
                 cfg: TrainConfig, log=None) -> dict[str, AblationCurves]:
    """Train the selector model and the all-links control on identical data.

    Returns per-variant curves keyed by the names in ``VARIANTS``.  The
    control's KL term is identically zero by construction.
    """
    train_eval = eval_queries_for(train_data, cfg, derive_seed(cfg.seed, "ablate-train"))
    ood_eval = eval_queries_for(ood_data, cfg, derive_seed(cfg.seed, "ablate-ood"))
    out: dict[str, AblationCurves] = {}
    for variant in VARIANTS:
        vcfg = replace(cfg, all_links=(variant == "all-links"))
        model = vcfg.build_model(horizon=max(train_data.store.t_max, 1))
        opt = OptimizerState()
        curves = AblationCurves(variant, [], [], [], [], [])
        for epoch in range(1, vcfg.epochs + 1):
            lb = train_epoch(model, opt, train_data, vcfg, epoch)
            _, _, train_lb = evaluate(model, train_data.store, train_eval, vcfg)
            scores, labels, ood_lb = evaluate(model, ood_data.store, ood_eval, vcfg)
            curves.epochs.append(epoch)
            curves.train_task.append(train_lb.task)
            curves.ood_task.append(ood_lb.task)
            curves.ood_auc.append(roc_auc(scores, labels))
            curves.kl.append(lb.kl)
            if log is not None:
                log(f"{variant:10s} {epoch:4d} train_task={train_lb.task:.6f} "
                    f"ood_task={ood_lb.task:.6f} ood_auc={curves.ood_auc[-1]:.4f}")
        out[variant] = curves
    return out


def lower_ood_loss_fraction(curves: dict[str, AblationCurves],
                            after_epoch: int = 5) -> float:
    """Fraction of post-warmup epochs where the selector's OOD task loss is
    at or below the control's."""
    inv, ctl = curves["invariant"], curves["all-links"]
    pairs = [(a, b) for e, a, b in zip(inv.epochs, inv.ood_task, ctl.ood_task)
             if e > after_epoch]
    if not pairs:
        raise ValueError(f"no epochs after {after_epoch}")
    wins = sum(1 for a, b in pairs if a <= b)
    return wins / len(pairs)


def write_curves(curves: AblationCurves, path) -> None:
    """One plottable CSV per variant: epoch, train/OOD task loss, OOD AUC, KL."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_task", "ood_task", "ood_auc", "kl"])
        for i, epoch in enumerate(curves.epochs):
            writer.writerow([epoch, repr(curves.train_task[i]), repr(curves.ood_task[i]),
                             repr(curves.ood_auc[i]), repr(curves.kl[i])])
