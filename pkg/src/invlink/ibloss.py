"""Training objective: mean binary cross entropy plus weighted selection KL.

The task term scores the link predictions; the regularizer sums, over every
query, timestamp, and subgraph edge, the Bernoulli KL divergence between the
selection probability (conditioned on the current snapshot and earlier
selections) and the prior probability (conditioned on earlier selections
only).  Edges are treated as conditionally independent given history, which
factorizes the per-timestep KL into a sum of closed-form Bernoulli terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

Tensor = T.Tensor

# One epsilon for all log-domain safety; probabilities are clamped to
# [PROB_EPS, 1 - PROB_EPS] before any logarithm.
PROB_EPS = 1e-7


def _as_prob(x) -> Tensor:
    t = x if isinstance(x, Tensor) else T.constant(np.asarray(float(x)))
    return T.clamp(t, PROB_EPS, 1.0 - PROB_EPS)


def bce(y_hat, y: int) -> Tensor:
    """Binary cross entropy -[y log(y_hat) + (1-y) log(1-y_hat)].

    ``y_hat`` may be a float or a scalar tensor; it is clamped before the
    logarithm, so the result is finite and non-negative for any input in
    [0, 1].  Returns a scalar tensor (use ``float(...)`` for the value).
    """
    if y not in (0, 1):
        raise T.ContractError(f"label must be 0 or 1, got {y!r}")
    p = _as_prob(y_hat)
    if y == 1:
        return T.scale(T.tsum(T.log(p)), -1.0)
    one_minus = T.add(T.scale(p, -1.0), T.constant(np.ones_like(p.value)))
    return T.scale(T.tsum(T.log(one_minus)), -1.0)


def bernoulli_kl(p, q) -> Tensor:
    """KL(Bernoulli(p) || Bernoulli(q)), differentiable in both arguments."""
    pt, qt = _as_prob(p), _as_prob(q)
    one_p = T.add(T.scale(pt, -1.0), T.constant(np.ones_like(pt.value)))
    one_q = T.add(T.scale(qt, -1.0), T.constant(np.ones_like(qt.value)))
    pos = T.mul(pt, T.add(T.log(pt), T.scale(T.log(qt), -1.0)))
    neg = T.mul(one_p, T.add(T.log(one_p), T.scale(T.log(one_q), -1.0)))
    return T.tsum(T.add(pos, neg))


@dataclass(frozen=True)
class LossBreakdown:
    """The two summands of the objective plus their weighted total.

    ``total == task + beta * kl`` holds bit-exactly because all three floats
    are read from the same tape nodes that performed that accumulation.
    ``node`` is the scalar tape node to backpropagate through (None for
    aggregated report-only records).
    """
    task: float
    kl: float
    beta: float
    total: float
    node: Tensor | None = None

    def as_dict(self) -> dict:
        return {"task": self.task, "kl": self.kl, "beta": self.beta, "total": self.total}


def total_loss(batch: list[tuple[Tensor, int, "EdgeSelectionProbabilities"]],
               beta: float, include_kl: bool = True) -> LossBreakdown:
    """Mean task BCE over a batch plus beta times the summed selection KL.

    ``batch`` holds (prediction, label, probabilities) triples whose tensors
    all live on the current tape; the returned breakdown's ``node`` is ready
    for ``backward``.  With ``include_kl=False`` (the all-links ablation) the
    KL term is identically zero regardless of the probabilities.
    """
    if not batch:
        raise T.ContractError("empty batch")
    task: Tensor | None = None
    for y_hat, y, _probs in batch:
        term = bce(y_hat, y)
        task = term if task is None else T.add(task, term)
    task = T.scale(task, 1.0 / len(batch))

    kl: Tensor | None = None
    if include_kl:
        for _y_hat, _y, probs in batch:
            for eid in sorted(probs.p):
                q = probs.q.get(eid)
                if q is None:
                    raise T.ContractError(f"probability maps disagree on edge {eid}")
                term = bernoulli_kl(probs.p[eid], q)
                kl = term if kl is None else T.add(kl, term)
    if kl is None:
        kl = T.constant(np.asarray(0.0))

    total = T.add(task, T.scale(kl, beta))
    return LossBreakdown(task=task.item(), kl=kl.item(), beta=float(beta),
                         total=total.item(), node=total)


def mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    """Report-only average of per-batch breakdowns (no tape node)."""
    if not parts:
        raise T.ContractError("no loss breakdowns to average")
    task = float(np.mean([b.task for b in parts]))
    kl = float(np.mean([b.kl for b in parts]))
    beta = parts[0].beta
    return LossBreakdown(task=task, kl=kl, beta=beta, total=task + beta * kl)
