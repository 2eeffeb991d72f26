"""Selection, prior, and link-prediction networks over computational subgraphs.

Three disjoint parameter branches share one architecture: a neighborhood
aggregation into node representations followed by an MLP head on the
concatenated endpoint representations.

* the selection branch scores every subgraph edge with the probability that
  it belongs to the invariant subgraph, using both earlier selected edges
  (weighted by their probabilities) and unweighted same-time neighbors;
* the prior branch scores the same edges from earlier selected edges only;
* the prediction branch aggregates all subgraph edges, weighted by the
  selection probabilities, into query-endpoint representations and emits the
  link probability.

The forward pass walks timestamps in ascending order so that probabilities
for earlier edges are already on the tape when later aggregations consume
them; everything stays differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tgraph import ComputationalSubgraph

Tensor = T.Tensor


class MissingProbabilityError(T.ContractError):
    """Aggregation needed a selection probability that was never computed."""


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


class TimeEncoder:
    """Learnable cosine bank: entry k of the encoding is d_t^(-1/2) cos(w_k dt).

    Frequencies are initialized geometrically so they span [1/horizon, 1];
    the zero-lag encoding is the constant vector d_t^(-1/2).
    """

    def __init__(self, d_t: int, horizon: int = 1, omega: np.ndarray | None = None):
        if d_t < 1:
            raise ValueError("time encoding dimension must be >= 1")
        self.d_t = int(d_t)
        if omega is None:
            span = max(float(horizon), 1.0)
            if d_t == 1 or span <= 1.0:
                omega = np.ones(d_t)
            else:
                c = np.log10(span) / (d_t - 1)
                omega = 10.0 ** (-c * np.arange(d_t))
        self.omega = T.parameter(np.asarray(omega, dtype=np.float64), name="time.omega")


def encode_time(enc: TimeEncoder, delta_t: float) -> Tensor:
    """Vector encoding of a non-negative time gap; differentiable in omega."""
    if delta_t < 0:
        raise ValueError(f"negative time gap {delta_t}")
    return T.scale(T.cos(T.scale(enc.omega, float(delta_t))), enc.d_t ** -0.5)


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class BranchParams:
    """One parameter branch: aggregation matrices plus an MLP head.

    ``head`` holds (out x in) matrices applied innermost-first with relu
    between layers and none after the last; the final layer maps to a single
    logit.
    """
    name: str
    w_agg1: Tensor
    w_agg2: Tensor
    w_res: Tensor
    head: tuple[Tensor, ...]

    @classmethod
    def create(cls, name: str, d_s: int, d_t: int, d_e: int, h_agg: int,
               head_widths: tuple[int, ...], rng: np.random.Generator) -> "BranchParams":
        d_in = d_s + d_t + d_e
        w_agg1 = T.parameter(_glorot(rng, h_agg, d_in), name=f"{name}.w_agg1")
        w_agg2 = T.parameter(_glorot(rng, d_s, h_agg), name=f"{name}.w_agg2")
        w_res = T.parameter(_glorot(rng, d_s, d_s), name=f"{name}.w_res")
        widths = (2 * d_s,) + tuple(head_widths) + (1,)
        head = tuple(
            T.parameter(_glorot(rng, widths[i + 1], widths[i]), name=f"{name}.head{i + 1}")
            for i in range(len(widths) - 1))
        return cls(name, w_agg1, w_agg2, w_res, head)

    def tensors(self) -> list[Tensor]:
        return [self.w_agg1, self.w_agg2, self.w_res, *self.head]


@dataclass
class ModelParams:
    """The three branches, the time encoder, and the scalar hyperparameters."""
    phi1: BranchParams
    phi2: BranchParams
    phi3: BranchParams
    time_enc: TimeEncoder
    tau: float
    beta: float
    dims: tuple[int, int, int]          # (d_s, d_e, d_t)
    hidden: tuple[int, int, int]        # (h_agg, h1, h2)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    def parameters(self) -> list[Tensor]:
        out = []
        for branch in (self.phi1, self.phi2, self.phi3):
            out.extend(branch.tensors())
        out.append(self.time_enc.omega)
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def clone(self) -> "ModelParams":
        arrays = {p.name: p.value.copy() for p in self.parameters()}
        model = init_model(*self.dims, hidden=self.hidden, tau=self.tau,
                           beta=self.beta, seed=0, horizon=1)
        for p in model.parameters():
            p.value = arrays[p.name].copy()
        return model

    # -- checkpoint manifests -------------------------------------------

    def save(self, path) -> None:
        arrays = {p.name: p.value for p in self.parameters()}
        extras = {"tau": self.tau, "beta": self.beta,
                  "dims": list(self.dims), "hidden": list(self.hidden)}
        T.save_manifest(path, arrays, extras)

    @classmethod
    def load(cls, path) -> "ModelParams":
        arrays, extras = T.load_manifest(path)
        try:
            dims = tuple(int(x) for x in extras["dims"])
            hidden = tuple(int(x) for x in extras["hidden"])
            model = init_model(*dims, hidden=hidden, tau=float(extras["tau"]),
                               beta=float(extras["beta"]), seed=0, horizon=1)
        except (KeyError, TypeError, ValueError) as exc:
            raise T.ManifestError(f"checkpoint extras malformed: {exc}") from exc
        for p in model.parameters():
            if p.name not in arrays:
                raise T.ManifestError(f"checkpoint missing parameter '{p.name}'")
            if arrays[p.name].shape != p.value.shape:
                raise T.ManifestError(
                    f"checkpoint shape mismatch for '{p.name}': "
                    f"{arrays[p.name].shape} != {p.value.shape}")
            p.value = arrays[p.name].copy()
        return model


def init_model(d_s: int, d_e: int, d_t: int, *, hidden: tuple[int, int, int] = (64, 64, 64),
               tau: float = 1.0, beta: float = 1.0, seed: int = 0,
               horizon: int = 1) -> ModelParams:
    """Fresh model with seeded uniform +-sqrt(6/(fan_in+fan_out)) weights."""
    h_agg, h1, h2 = hidden
    rngs = [np.random.default_rng(np.random.SeedSequence((seed, i))) for i in range(4)]
    phi1 = BranchParams.create("phi1", d_s, d_t, d_e, h_agg, (h1,), rngs[0])
    phi2 = BranchParams.create("phi2", d_s, d_t, d_e, h_agg, (h1, h2), rngs[1])
    phi3 = BranchParams.create("phi3", d_s, d_t, d_e, h_agg, (h1, h2), rngs[2])
    enc = TimeEncoder(d_t, horizon=horizon)
    return ModelParams(phi1, phi2, phi3, enc, tau, beta, (d_s, d_e, d_t), (h_agg, h1, h2))


# ---------------------------------------------------------------------------
# forward computations
# ---------------------------------------------------------------------------


@dataclass
class EdgeSelectionProbabilities:
    """Per-edge probabilities from the selection (p) and prior (q) branches.

    Both maps are keyed by store edge id over exactly the subgraph's edges;
    values are scalar tensors strictly inside (0, 1).  ``pinned`` marks the
    all-links ablation variant, where every weight is the constant 1 and no
    prior is computed.
    """
    p: dict[int, Tensor] = field(default_factory=dict)
    q: dict[int, Tensor] = field(default_factory=dict)
    pinned: bool = False


def pinned_probabilities(sg: ComputationalSubgraph) -> EdgeSelectionProbabilities:
    """All-links ablation weights: every selection probability pinned to 1."""
    one = {eid: T.constant(np.ones(1)) for eid in sg.edge_ids}
    return EdgeSelectionProbabilities(p=one, q={}, pinned=True)


def _head_logit(branch: BranchParams, x: Tensor) -> Tensor:
    h = x
    for i, w in enumerate(branch.head):
        if i > 0:
            h = T.relu(h)
        h = T.matmul(w, h)
    return h


def sharpened_sigmoid(logit: Tensor, tau: float) -> Tensor:
    """sigmoid(logit / tau); smaller tau pushes the output toward {0, 1}.

    Outputs are not clamped here: log-domain safety is applied where the
    logarithms happen (the loss terms), so hardening with small tau is
    monotone all the way to saturation.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    return T.sigmoid(T.scale(logit, 1.0 / tau))


def _cached_encoding(enc: TimeEncoder, delta_t: float,
                     cache: dict[float, Tensor] | None) -> Tensor:
    if cache is None:
        return encode_time(enc, delta_t)
    node = cache.get(delta_t)
    if node is None:
        node = cache[delta_t] = encode_time(enc, delta_t)
    return node


def aggregate_node(branch: BranchParams, enc: TimeEncoder, sg: ComputationalSubgraph,
                   a: int, t: int, probs: EdgeSelectionProbabilities,
                   include_current: bool,
                   time_cache: dict[float, Tensor] | None = None) -> Tensor:
    """Representation of node ``a`` at time ``t`` within the subgraph.

    Sums probability-weighted [neighbor feature || time encoding || edge
    feature] blocks over strictly-earlier incident edges, plus unweighted
    blocks over same-time edges when ``include_current``; the sum is pushed
    through the aggregation MLP and combined with the node's own feature
    through a residual tanh.  A node with no qualifying edges aggregates the
    zero vector.  ``time_cache`` shares encoding nodes between calls on one
    tape (the gap encoding is a pure function of the gap).
    """
    store = sg.store
    d_s, d_e, d_t = store.d_s, store.d_e, enc.d_t
    past, current = sg.incident(a, t)
    total: Tensor | None = None
    for rec in past:
        p = probs.p.get(rec.edge_id)
        if p is None:
            raise MissingProbabilityError(
                f"no selection probability for edge {rec.edge_id} at t={rec.t}")
        block = T.concat([
            T.constant(store.node_feature(rec.neighbor, rec.t)),
            _cached_encoding(enc, t - rec.t, time_cache),
            T.constant(rec.feat),
        ])
        term = T.mul(p, block)
        total = term if total is None else T.add(total, term)
    if include_current:
        for rec in current:
            block = T.concat([
                T.constant(store.node_feature(rec.neighbor, t)),
                _cached_encoding(enc, 0.0, time_cache),
                T.constant(rec.feat),
            ])
            total = block if total is None else T.add(total, block)
    if total is None:
        total = T.constant(np.zeros(d_s + d_t + d_e))
    hidden = T.matmul(branch.w_agg2, T.relu(T.matmul(branch.w_agg1, total)))
    s_a = T.constant(store.node_feature(a, t))
    return T.add(s_a, T.tanh(T.add(hidden, T.matmul(branch.w_res, s_a))))


def selection_probability(branch: BranchParams, h_a: Tensor, h_b: Tensor,
                          tau: float) -> Tensor:
    """Probability that the edge between two represented endpoints is kept."""
    return sharpened_sigmoid(_head_logit(branch, T.concat([h_a, h_b])), tau)


def prior_probability(branch: BranchParams, enc: TimeEncoder, sg: ComputationalSubgraph,
                      edge_id: int, probs: EdgeSelectionProbabilities,
                      tau: float) -> Tensor:
    """History-only keep probability for an edge; ignores same-time edges."""
    e = sg.store.edges[edge_id]
    h_a = aggregate_node(branch, enc, sg, e.src, e.t, probs, include_current=False)
    h_b = aggregate_node(branch, enc, sg, e.dst, e.t, probs, include_current=False)
    return sharpened_sigmoid(_head_logit(branch, T.concat([h_a, h_b])), tau)


def forward_selector(model: ModelParams, sg: ComputationalSubgraph
                     ) -> EdgeSelectionProbabilities:
    """Selection and prior probabilities for every subgraph edge.

    Timestamps are processed in ascending order; the aggregation at time t
    consumes exactly the probabilities computed earlier in this pass, so the
    output for an edge depends only on subgraph content at its own and
    earlier timestamps.
    """
    probs = EdgeSelectionProbabilities()
    enc, tau = model.time_enc, model.tau
    time_cache: dict[float, Tensor] = {}
    for t in sg.times():
        cache2: dict[int, Tensor] = {}
        cache3: dict[int, Tensor] = {}
        for eid in sg.per_time_edges[t]:
            e = sg.store.edges[eid]
            for node in (e.src, e.dst):
                if node not in cache2:
                    cache2[node] = aggregate_node(model.phi2, enc, sg, node, t,
                                                  probs, include_current=True,
                                                  time_cache=time_cache)
                    cache3[node] = aggregate_node(model.phi3, enc, sg, node, t,
                                                  probs, include_current=False,
                                                  time_cache=time_cache)
            p = selection_probability(model.phi2, cache2[e.src], cache2[e.dst], tau)
            q = sharpened_sigmoid(
                _head_logit(model.phi3, T.concat([cache3[e.src], cache3[e.dst]])), tau)
            probs.p[eid] = p
            probs.q[eid] = q
    return probs


def predict_link(model: ModelParams, sg: ComputationalSubgraph,
                 probs: EdgeSelectionProbabilities) -> Tensor:
    """Probability that the query link exists, from probability-weighted
    aggregation of the whole subgraph at the query time."""
    q = sg.query
    enc = model.time_enc
    time_cache: dict[float, Tensor] = {}
    h_u = aggregate_node(model.phi1, enc, sg, q.u, q.t_query, probs,
                         include_current=True, time_cache=time_cache)
    h_v = aggregate_node(model.phi1, enc, sg, q.v, q.t_query, probs,
                         include_current=True, time_cache=time_cache)
    logit = _head_logit(model.phi1, T.concat([h_u, h_v]))
    return T.sigmoid(logit)
