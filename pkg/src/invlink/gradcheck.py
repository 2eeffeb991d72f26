"""Finite-difference audit of the full training objective.

Builds small random temporal graphs, extracts a computational subgraph for a
random query, and checks the analytic gradient of the complete loss (task
term plus weighted selection KL) against central differences over every
model parameter.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .ibloss import total_loss
from .nets import ModelParams, forward_selector, init_model, predict_link
from .tgraph import (QueryLink, TemporalEdge, TemporalGraphStore,
                     extract_computational_subgraph)


def random_toy_store(rng: np.random.Generator, max_nodes: int = 8,
                     n_timestamps: int = 3, d_s: int = 2, d_e: int = 1,
                     edge_prob: float = 0.16) -> TemporalGraphStore:
    """A small random temporal graph with static node features."""
    n = int(rng.integers(4, max_nodes + 1))
    edges = []
    for t in range(n_timestamps):
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < edge_prob:
                    edges.append(TemporalEdge(u, v, t, rng.normal(0, 1, d_e)))
    if not edges:
        u, v = 0, 1
        edges.append(TemporalEdge(u, v, 0, rng.normal(0, 1, d_e)))
    feats = {node: rng.normal(0, 1, d_s) for node in range(n)}
    return TemporalGraphStore(n, edges, (d_s, d_e), {}, feats)


def toy_model(rng: np.random.Generator, d_s: int = 2, d_e: int = 1,
              d_t: int = 2, hidden: tuple[int, int, int] = (3, 3, 3),
              tau: float = 1.0, beta: float = 0.5) -> ModelParams:
    return init_model(d_s, d_e, d_t, hidden=hidden, tau=tau, beta=beta,
                      seed=int(rng.integers(0, 2**31)), horizon=3)


def loss_on_subgraph(model: ModelParams, sg, label: int) -> T.Tensor:
    probs = forward_selector(model, sg)
    y_hat = predict_link(model, sg, probs)
    return total_loss([(y_hat, label, probs)], beta=model.beta).node


def check_one(rng: np.random.Generator, step: float = 1e-5) -> float:
    """Max relative gradient error of the full loss on one random subgraph."""
    store = random_toy_store(rng)
    n = store.num_nodes
    u, v = sorted(rng.choice(n, size=2, replace=False))
    query = QueryLink(int(u), int(v), store.t_max + 1, int(rng.integers(0, 2)))
    sg = extract_computational_subgraph(store, query, L=2, K=None, seed=0)
    model = toy_model(rng)
    params = model.parameters()

    def f(_params):
        return loss_on_subgraph(model, sg, query.label)

    return T.finite_difference_check(f, params, step=step)


def run_gradcheck(n_subgraphs: int = 20, seed: int = 0, step: float = 1e-5,
                  verbose: bool = False) -> float:
    """Worst relative error across ``n_subgraphs`` random toy subgraphs."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x6AD)))
    worst = 0.0
    for i in range(n_subgraphs):
        err = check_one(rng, step=step)
        worst = max(worst, err)
        if verbose:
            print(f"subgraph {i + 1:3d}: max_rel_err={err:.3e}")
    return worst
