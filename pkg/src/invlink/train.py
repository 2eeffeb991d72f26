"""Epoch loop: negative sampling, batched forward/backward, adaptive updates,
validation-based model selection with early stopping.

Each timestamp of the training range serves in turn as the prediction target,
with the full earlier history available to its computational subgraphs.
Positives are real edges at the target time; each one is paired with a
destination-corrupted negative.  All randomness flows from the run seed, so a
rerun with the same config and data reproduces the trajectory bit for bit.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .ibloss import LossBreakdown, mean_breakdown, total_loss
from .metrics import roc_auc
from .nets import (ModelParams, forward_selector, init_model,
                   pinned_probabilities, predict_link)
from .tgraph import (ComputationalSubgraph, QueryLink, StoreView,
                     TemporalGraphStore, extract_computational_subgraph)


class SamplingError(RuntimeError):
    """Negative sampling could not find an unconnected destination."""


def derive_seed(seed: int, *tags) -> int:
    """Stable 32-bit child seed from a run seed and string/int tags."""
    h = zlib.crc32(repr((seed,) + tags).encode("ascii"))
    return int(h) & 0x7FFFFFFF


@dataclass
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 400           # positives per batch; negatives double it
    epochs: int = 50
    tau: float = 1.0
    beta: float = 1.0
    L: int = 2
    K: int | None = 20
    seed: int = 0
    d_s: int = 32
    d_e: int = 8
    d_t: int = 9
    hidden: tuple[int, int, int] = (64, 64, 64)
    patience: int = 20
    negative_retries: int = 100
    all_links: bool = False         # ablation: pin selection to 1, drop the KL term
    max_queries_per_time: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def build_model(self, horizon: int) -> ModelParams:
        return init_model(self.d_s, self.d_e, self.d_t, hidden=tuple(self.hidden),
                          tau=self.tau, beta=self.beta, seed=self.seed,
                          horizon=horizon)


@dataclass
class TrainData:
    """A store plus the query source: either a timestamp view (positives are
    its edges, negatives get sampled) or an explicit labeled query list."""
    store: TemporalGraphStore
    view: StoreView | None = None
    queries_by_t: dict[int, list[QueryLink]] | None = None

    @classmethod
    def from_view(cls, view: StoreView) -> "TrainData":
        return cls(store=view.store, view=view)

    @classmethod
    def from_queries(cls, store: TemporalGraphStore,
                     queries: list[QueryLink]) -> "TrainData":
        by_t: dict[int, list[QueryLink]] = {}
        for q in queries:
            by_t.setdefault(q.t_query, []).append(q)
        return cls(store=store, queries_by_t={t: by_t[t] for t in sorted(by_t)})

    def target_times(self) -> list[int]:
        if self.queries_by_t is not None:
            return sorted(self.queries_by_t)
        # t=0 has no history to aggregate; targets start at the second timestamp
        return [t for t in self.view.target_times
                if t >= 1 and self.store.edge_ids_at(t)]

    def all_queries(self) -> list[QueryLink]:
        if self.queries_by_t is None:
            raise T.ContractError("view-backed data has no explicit queries")
        return [q for t in sorted(self.queries_by_t) for q in self.queries_by_t[t]]


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


def sample_negative(store: TemporalGraphStore, u: int, t_query: int,
                    rng: np.random.Generator, retries: int) -> int:
    """A destination not connected to ``u`` at ``t_query`` (and not u itself)."""
    connected = {w for t2, w, _ in store.neighbor_index(u) if t2 == t_query}
    connected.add(u)
    for _ in range(retries):
        w = int(rng.integers(0, store.num_nodes))
        if w not in connected:
            return w
    raise SamplingError(
        f"no unconnected destination for node {u} at t={t_query} "
        f"after {retries} draws")


def sample_training_batch(view: StoreView, t_query: int, batch_size: int,
                          seed: int, retries: int = 100) -> list[QueryLink]:
    """Positive edges at ``t_query`` paired 1:1 with corrupted negatives.

    Keeps at most ``batch_size`` positives (a seeded uniform draw when there
    are more); each positive (u, v) contributes a negative (u, v') with v'
    drawn uniformly among nodes not connected to u at the query time.
    """
    store = view.store
    pos_ids = view.positive_edges_at(t_query)
    if not pos_ids:
        raise T.ContractError(f"no positive edges at t={t_query}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, t_query)))
    ids = list(pos_ids)
    if len(ids) > batch_size:
        picked = rng.choice(len(ids), size=batch_size, replace=False)
        ids = [ids[i] for i in sorted(picked)]
    positives = [QueryLink(store.edges[eid].src, store.edges[eid].dst, t_query, 1)
                 for eid in ids]
    negatives = [QueryLink(q.u, sample_negative(store, q.u, t_query, rng, retries),
                           t_query, 0)
                 for q in positives]
    return positives + negatives


def _batches_for_epoch(data: TrainData, cfg: TrainConfig, epoch: int
                       ) -> list[tuple[int, int, list[QueryLink]]]:
    """(t_query, batch_index, queries) triples for one epoch, in order."""
    out = []
    for t in data.target_times():
        if data.queries_by_t is not None:
            queries = list(data.queries_by_t[t])
            rng = np.random.default_rng(
                np.random.SeedSequence((derive_seed(cfg.seed, "shuffle", epoch), t)))
            rng.shuffle(queries)
            cap = 2 * cfg.batch_size
            chunks = [queries[i:i + cap] for i in range(0, len(queries), cap)]
        else:
            chunks = [sample_training_batch(
                data.view, t, cfg.batch_size,
                derive_seed(cfg.seed, "batch", epoch), cfg.negative_retries)]
        for b, chunk in enumerate(chunks):
            out.append((t, b, chunk))
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Adaptive-moment accumulators, keyed by parameter name."""
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: list[T.Tensor], grads: list[np.ndarray],
              opt: OptimizerState, lr: float) -> tuple[list[T.Tensor], OptimizerState]:
    """One bias-corrected adaptive-moment update, in place."""
    if len(params) != len(grads):
        raise T.ContractError("params/grads length mismatch")
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for p, g in zip(params, grads):
        if g.shape != p.value.shape:
            raise T.ContractError(
                f"gradient shape {g.shape} != parameter shape {p.value.shape} for '{p.name}'")
        m = opt.m.setdefault(p.name, np.zeros_like(p.value))
        v = opt.v.setdefault(p.name, np.zeros_like(p.value))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params, opt


# ---------------------------------------------------------------------------
# forward helpers
# ---------------------------------------------------------------------------


def query_subgraph(store: TemporalGraphStore, q: QueryLink,
                   cfg: TrainConfig) -> ComputationalSubgraph:
    return extract_computational_subgraph(store, q, L=cfg.L, K=cfg.K,
                                          seed=derive_seed(cfg.seed, "subgraph"))


def _forward_query(model: ModelParams, sg: ComputationalSubgraph, cfg: TrainConfig):
    if cfg.all_links:
        probs = pinned_probabilities(sg)
    else:
        probs = forward_selector(model, sg)
    return predict_link(model, sg, probs), probs


def evaluate(model: ModelParams, store: TemporalGraphStore,
             queries: list[QueryLink], cfg: TrainConfig
             ) -> tuple[np.ndarray, np.ndarray, LossBreakdown]:
    """Scores, labels, and loss breakdown for a fixed query list (no update)."""
    if not queries:
        raise T.ContractError("no queries to evaluate")
    triples = []
    scores, labels = [], []
    for q in queries:
        sg = query_subgraph(store, q, cfg)
        y_hat, probs = _forward_query(model, sg, cfg)
        triples.append((y_hat, q.label, probs))
        scores.append(y_hat.item())
        labels.append(q.label)
    lb = total_loss(triples, beta=cfg.beta, include_kl=not cfg.all_links)
    return np.array(scores), np.array(labels), lb


def view_eval_queries(view: StoreView, cfg: TrainConfig, seed: int) -> list[QueryLink]:
    """A fixed, seeded evaluation query set for a timestamp view."""
    queries: list[QueryLink] = []
    cap = cfg.max_queries_per_time
    for t in view.target_times:
        if t < 1 or not view.store.edge_ids_at(t):
            continue
        queries.extend(sample_training_batch(
            view, t, cap if cap is not None else len(view.store.edge_ids_at(t)),
            derive_seed(seed, "eval", t), cfg.negative_retries))
    if not queries:
        raise T.ContractError("view yields no evaluation queries")
    return queries


def eval_queries_for(data: TrainData, cfg: TrainConfig, seed: int) -> list[QueryLink]:
    if data.queries_by_t is not None:
        return data.all_queries()
    return view_eval_queries(data.view, cfg, seed)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_epoch(model: ModelParams, opt: OptimizerState, data: TrainData,
                cfg: TrainConfig, epoch: int = 1) -> LossBreakdown:
    """One pass over all target timestamps; returns the mean batch loss."""
    if not data.target_times():
        raise T.ContractError("training data has no target timestamps")
    params = model.parameters()
    parts = []
    for t, b, batch in _batches_for_epoch(data, cfg, epoch):
        triples = []
        for q in batch:
            sg = query_subgraph(data.store, q, cfg)
            y_hat, probs = _forward_query(model, sg, cfg)
            triples.append((y_hat, q.label, probs))
        lb = total_loss(triples, beta=cfg.beta, include_kl=not cfg.all_links)
        if not np.isfinite(lb.total):
            raise T.NumericError(
                f"non-finite loss {lb.total} in epoch {epoch}, batch {b} at t={t}")
        T.backward(lb.node, params)
        adam_step(params, [p.grad for p in params], opt, cfg.learning_rate)
        parts.append(lb)
    return mean_breakdown(parts)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    task: float
    kl: float
    total: float
    val_auc: float

    def format_line(self) -> str:
        return (f"{self.epoch:5d} {self.task:12.6f} {self.kl:12.6f} "
                f"{self.total:12.6f} {self.val_auc:8.4f}")


@dataclass
class FitResult:
    model: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    best_val_auc: float


def fit(model: ModelParams, train_data: TrainData, val_data: TrainData,
        cfg: TrainConfig, log=None) -> FitResult:
    """Train with per-epoch validation scoring; return the best checkpoint.

    The returned model is the parameter snapshot whose validation ROC-AUC is
    the maximum over the recorded history; training stops early after
    ``patience`` epochs without improvement.
    """
    val_queries = eval_queries_for(val_data, cfg, derive_seed(cfg.seed, "val"))
    opt = OptimizerState()
    history: list[EpochRecord] = []
    best_auc, best_epoch = -1.0, 0
    best_arrays: dict[str, np.ndarray] = {}
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        lb = train_epoch(model, opt, train_data, cfg, epoch)
        scores, labels, _ = evaluate(model, val_data.store, val_queries, cfg)
        auc = roc_auc(scores, labels)
        rec = EpochRecord(epoch, lb.task, lb.kl, lb.total, auc)
        history.append(rec)
        if log is not None:
            log(rec.format_line())
        if auc > best_auc:
            best_auc, best_epoch = auc, epoch
            best_arrays = {p.name: p.value.copy() for p in model.parameters()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    best = model.clone()
    for p in best.parameters():
        p.value = best_arrays[p.name].copy()
    return FitResult(model=best, history=history, best_epoch=best_epoch,
                     best_val_auc=best_auc)
