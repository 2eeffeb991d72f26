"""OOD experiment construction: attribute hold-out filtering, synthetic
node-feature shift, and a planted-motif benchmark with a known
invariant/spurious decomposition.

The planted generator builds link-prediction problems where the label is
determined exactly by an invariant structural motif (a common neighbor active
at two earlier timestamps) while a separate spurious cue (an edge to a
loud-featured hub node) correlates with the label at a rate that flips
between the training and OOD splits.  That gives desk-scale ground truth for
checking that selection actually suppresses the unstable evidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .tgraph import QueryLink, TemporalEdge, TemporalGraphStore
from .train import TrainData


class FilterError(ValueError):
    """Attribute hold-out could not be applied."""


class ShiftError(ValueError):
    """Shift specification violates its validity constraints."""


@dataclass(frozen=True)
class ShiftSpec:
    """Parameters of a distribution-shift construction.

    For the node-feature kind, the per-timestep sampling probability is
    p(t) = p_bar + sigma * cos(t) and must stay inside [0, 1].
    """
    kind: str                      # edge-attribute | node-feature | planted-motif
    held_out_attr: str | None = None
    p_bar: float = 0.4
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("edge-attribute", "node-feature", "planted-motif"):
            raise ShiftError(f"unknown shift kind '{self.kind}'")
        if self.kind == "node-feature":
            if self.p_bar + self.sigma > 1.0 or self.p_bar - self.sigma < 0.0:
                raise ShiftError(
                    f"p_bar={self.p_bar}, sigma={self.sigma} leave p(t) outside [0, 1]")

    def p_of(self, t: int) -> float:
        return self.p_bar + self.sigma * math.cos(t)


# ---------------------------------------------------------------------------
# edge-attribute hold-out
# ---------------------------------------------------------------------------


def _reindexed_store(store: TemporalGraphStore, edge_ids: list[int]) -> TemporalGraphStore:
    nodes = sorted({n for eid in edge_ids
                    for n in (store.edges[eid].src, store.edges[eid].dst)})
    remap = {old: new for new, old in enumerate(nodes)}
    edges = [TemporalEdge(remap[e.src], remap[e.dst], e.t, e.feat, e.attr)
             for e in (store.edges[eid] for eid in edge_ids)]
    feats_t, feats_static = store.feature_maps()
    new_t = {(remap[n], t): v for (n, t), v in feats_t.items() if n in remap}
    new_s = {remap[n]: v for n, v in feats_static.items() if n in remap}
    return TemporalGraphStore(len(nodes), edges, (store.d_s, store.d_e),
                              new_t, new_s, raw_times=store.raw_times,
                              directed=store.directed,
                              parent_node_ids=tuple(nodes))


def ood_edge_filter(store: TemporalGraphStore, held_out_attr: str
                    ) -> tuple[TemporalGraphStore, TemporalGraphStore]:
    """Partition a store by one categorical edge attribute.

    The OOD store holds exactly the edges carrying ``held_out_attr``; the
    in-distribution store holds everything else.  Node ids are re-indexed
    densely and order-preservingly per side; the original id of each new node
    is available as ``parent_node_ids``.  Dense timestamps are kept as-is so
    the two sides stay aligned on the time axis.
    """
    ood_ids = [eid for eid, e in enumerate(store.edges) if e.attr == held_out_attr]
    if not ood_ids:
        raise FilterError(f"attribute '{held_out_attr}' absent from store")
    in_ids = [eid for eid, e in enumerate(store.edges) if e.attr != held_out_attr]
    if not in_ids:
        raise FilterError(f"attribute '{held_out_attr}' covers the whole store")
    return _reindexed_store(store, in_ids), _reindexed_store(store, ood_ids)


# ---------------------------------------------------------------------------
# synthetic node-feature shift
# ---------------------------------------------------------------------------


def synthesize_node_shift(store: TemporalGraphStore, p_bar: float, sigma: float,
                          d: int, seed: int) -> TemporalGraphStore:
    """Replace node features with ones that spuriously encode future links.

    At each timestamp t a fraction p(t) = p_bar + sigma*cos(t) of the
    next-step link budget is sampled from true next-step links and the rest
    from non-links; the sampled links' node incidence is pushed through a
    seeded random linear map onto d dimensions, and each node takes its row
    as the feature at t.  Higher p(t) means features carry more genuine (and
    when p(t) flips downward, misleading) information about the next
    snapshot.
    """
    spec = ShiftSpec(kind="node-feature", p_bar=p_bar, sigma=sigma, seed=seed)
    if store.num_timestamps < 2:
        raise ShiftError("node-feature shift needs at least two timestamps")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD1F7)))
    feats_t: dict[tuple[int, int], np.ndarray] = {}
    existing_pairs = {t: {frozenset((e.src, e.dst)) for e in store.edges if e.t == t}
                      for t in range(store.num_timestamps)}
    for t in range(store.t_max):
        next_ids = store.edge_ids_at(t + 1)
        n = len(next_ids)
        if n == 0:
            continue
        k = int(math.floor(spec.p_of(t) * n))
        k = min(max(k, 0), n)
        picked = rng.choice(n, size=k, replace=False) if k else np.array([], dtype=int)
        links = [(store.edges[next_ids[i]].src, store.edges[next_ids[i]].dst)
                 for i in sorted(int(i) for i in picked)]
        guard = 0
        while len(links) < n:
            u = int(rng.integers(0, store.num_nodes))
            v = int(rng.integers(0, store.num_nodes))
            if u != v and frozenset((u, v)) not in existing_pairs[t + 1]:
                links.append((u, v))
            guard += 1
            if guard > 1000 * n:
                raise ShiftError("could not sample enough non-links")
        incidence = np.zeros((store.num_nodes, n))
        for col, (u, v) in enumerate(links):
            incidence[u, col] = 1.0
            incidence[v, col] = 1.0
        proj = rng.normal(0.0, 1.0, size=(n, d)) / math.sqrt(n)
        block = incidence @ proj
        for node in range(store.num_nodes):
            feats_t[(node, t)] = block[node]
    return TemporalGraphStore(store.num_nodes, list(store.edges), (d, store.d_e),
                              feats_t, {}, raw_times=store.raw_times,
                              directed=store.directed)


# ---------------------------------------------------------------------------
# planted-motif benchmark
# ---------------------------------------------------------------------------


@dataclass
class PlantedDataset:
    train: TrainData
    ood: TrainData
    train_hubs: frozenset[int]     # hub node ids, per split (id spaces differ)
    ood_hubs: frozenset[int]
    spec: dict

    def splits(self) -> dict[str, TrainData]:
        return {"train": self.train, "ood": self.ood}

    def hubs_for(self, split: str) -> frozenset[int]:
        return self.train_hubs if split == "train" else self.ood_hubs


def has_motif(store: TemporalGraphStore, q: QueryLink) -> bool:
    """True when some node links to both endpoints strictly before the query."""
    before_u = {w for t, w, _ in store.neighbor_index(q.u) if t < q.t_query}
    before_v = {w for t, w, _ in store.neighbor_index(q.v) if t < q.t_query}
    return bool(before_u & before_v)


def motif_oracle_scores(store: TemporalGraphStore, queries: list[QueryLink]) -> np.ndarray:
    return np.array([1.0 if has_motif(store, q) else 0.0 for q in queries])


def spurious_oracle_scores(store: TemporalGraphStore, queries: list[QueryLink],
                           hubs: frozenset[int]) -> np.ndarray:
    """1 when the query source touches a hub before the query time."""
    out = []
    for q in queries:
        touched = any(w in hubs for t, w, _ in store.neighbor_index(q.u)
                      if t < q.t_query)
        out.append(1.0 if touched else 0.0)
    return np.array(out)


def _build_planted_split(n_nodes: int, n_timestamps: int, spurious_rate: float,
                         d_s: int, hub_magnitude: float, background_edges: int,
                         rng: np.random.Generator
                         ) -> tuple[TemporalGraphStore, list[QueryLink], frozenset[int]]:
    # Node roles carry feature signatures so the invariant evidence is
    # expressible by a sum-aggregating encoder: bridge mids (the common
    # neighbor of a positive pair) and distractor mids (two distinct middle
    # nodes of a negative pair) are separable types, while the hub cue is the
    # loudest feature in any neighborhood it joins.  Identity-level leaks are
    # avoided by dedicating every mid and hub to a single query.
    slots = list(range(2, n_timestamps))
    slot_size = n_nodes // len(slots)
    pairs_per_class = (slot_size - 1) // 8
    if pairs_per_class < 1:
        raise ShiftError("not enough nodes per timestamp slot")
    edges: list[tuple[int, int, int]] = []
    queries: list[QueryLink] = []
    hubs: set[int] = set()
    bridges: set[int] = set()
    distractors: set[int] = set()
    role_nodes_by_slot: dict[int, list[int]] = {}

    def cue_mask(n: int, rate: float) -> np.ndarray:
        # exact counts keep the correlation rate sharp at small n
        mask = np.zeros(n, dtype=bool)
        mask[:int(round(rate * n))] = True
        rng.shuffle(mask)
        return mask

    for si, t_q in enumerate(slots):
        cursor = si * slot_size
        limit = cursor + slot_size

        def take(k):
            nonlocal cursor
            if cursor + k > limit:
                raise ShiftError("slot node budget exhausted")
            out = list(range(cursor, cursor + k))
            cursor += k
            return out

        roles: list[int] = []
        pos_cue = cue_mask(pairs_per_class, spurious_rate)
        neg_cue = cue_mask(pairs_per_class, 1.0 - spurious_rate)
        for i in range(pairs_per_class):          # positives: u - m - v wedge
            u, m, v = take(3)
            bridges.add(m)
            roles.append(m)
            edges.append((u, m, t_q - 2))
            edges.append((m, v, t_q - 1))
            edges.append((u, v, t_q))
            if pos_cue[i]:
                hub = take(1)[0]
                hubs.add(hub)
                roles.append(hub)
                edges.append((u, hub, t_q - 1))
            queries.append(QueryLink(u, v, t_q, 1))
        for i in range(pairs_per_class):          # negatives: broken wedge
            u, v, m1, m2 = take(4)
            distractors.update((m1, m2))
            roles.extend((m1, m2))
            edges.append((u, m1, t_q - 2))
            edges.append((m2, v, t_q - 1))
            if neg_cue[i]:
                hub = take(1)[0]
                hubs.add(hub)
                roles.append(hub)
                edges.append((u, hub, t_q - 1))
            queries.append(QueryLink(u, v, t_q, 0))
        role_nodes_by_slot[t_q] = roles

    if background_edges:
        seen = {(min(a, b), max(a, b), t) for a, b, t in edges}
        made, guard = 0, 0
        while made < background_edges and guard < 100 * background_edges:
            guard += 1
            t_q = slots[int(rng.integers(0, len(slots)))]
            roles = role_nodes_by_slot[t_q]
            if len(roles) < 2:
                continue
            a, b = rng.choice(len(roles), size=2, replace=False)
            a, b = roles[int(a)], roles[int(b)]
            t = int(rng.integers(0, t_q))
            key = (min(a, b), max(a, b), t)
            if key in seen:
                continue
            seen.add(key)
            edges.append((a, b, t))
            made += 1

    feat = np.ones(1)
    temporal_edges = [TemporalEdge(a, b, t, feat.copy()) for a, b, t in edges]
    feats_static: dict[int, np.ndarray] = {}
    for node in range(n_nodes):
        vec = rng.normal(0.0, 1.0, size=d_s) * 0.5
        if node in hubs:
            vec = rng.normal(0.0, 1.0, size=d_s) * 0.1
            vec[0] = hub_magnitude
        elif node in bridges:
            vec = rng.normal(0.0, 1.0, size=d_s) * 0.1
            vec[1] = 2.0
        elif node in distractors:
            vec = rng.normal(0.0, 1.0, size=d_s) * 0.1
            vec[2] = 2.0
        feats_static[node] = vec
    store = TemporalGraphStore(n_nodes, temporal_edges, (d_s, 1), {}, feats_static)
    return store, queries, frozenset(hubs)


def generate_planted_motif_dataset(n_nodes: int = 200, n_timestamps: int = 6,
                                   spurious_flip: bool = True, seed: int = 0, *,
                                   train_rate: float = 0.9, d_s: int = 8,
                                   hub_magnitude: float = 3.0,
                                   background_edges: int = 0) -> PlantedDataset:
    """Two stores with identical invariant structure and flipped spurious cue.

    Every positive query is preceded by a common neighbor linking both
    endpoints at two earlier timestamps; negatives get the same degree
    profile from two distinct middle nodes, so only the shared-identity motif
    separates the classes.  A hub edge on the query source appears with
    probability ``train_rate`` for positives (1 - ``train_rate`` for
    negatives) on the training split; the OOD split flips the rate to
    ``1 - train_rate`` when ``spurious_flip`` is set.  Generation fails fast
    if the motif oracle does not achieve ROC-AUC 1.0 on either split.
    """
    if n_nodes < 10:
        raise ShiftError("n_nodes must be >= 10")
    if n_timestamps < 3:
        raise ShiftError("n_timestamps must be >= 3")
    if d_s < 3:
        raise ShiftError("role signatures need d_s >= 3")
    ood_rate = 1.0 - train_rate if spurious_flip else train_rate
    splits = {}
    hub_sets = {}
    for name, rate, tag in (("train", train_rate, 1), ("ood", ood_rate, 2)):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x9A7, tag)))
        store, queries, hubs = _build_planted_split(
            n_nodes, n_timestamps, rate, d_s, hub_magnitude, background_edges, rng)
        scores = motif_oracle_scores(store, queries)
        labels = np.array([q.label for q in queries])
        if not (np.all(scores[labels == 1] == 1.0) and np.all(scores[labels == 0] == 0.0)):
            raise ShiftError(f"planted split '{name}' leaks: motif oracle is not exact")
        splits[name] = TrainData.from_queries(store, queries)
        hub_sets[name] = hubs
    spec = {"kind": "planted-motif", "n_nodes": n_nodes, "n_timestamps": n_timestamps,
            "spurious_flip": spurious_flip, "seed": seed, "train_rate": train_rate,
            "d_s": d_s, "hub_magnitude": hub_magnitude,
            "background_edges": background_edges}
    return PlantedDataset(train=splits["train"], ood=splits["ood"],
                          train_hubs=hub_sets["train"], ood_hubs=hub_sets["ood"],
                          spec=spec)


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def write_store(store: TemporalGraphStore, edge_path, feat_path=None) -> None:
    """Write a store in the loadable text formats (dense timestamps)."""
    with open(edge_path, "w", encoding="utf-8") as fh:
        fh.write("# src dst t feat...\n")
        for e in store.edges:
            feats = " ".join(repr(float(x)) for x in e.feat)
            attr = f" {e.attr}" if e.attr is not None else ""
            fh.write(f"{e.src} {e.dst} {e.t} {feats}{attr}\n")
    if feat_path is None:
        return
    feats_t, feats_static = store.feature_maps()
    with open(feat_path, "w", encoding="utf-8") as fh:
        fh.write("# node [t] feat...\n")
        for node in sorted(feats_static):
            vals = " ".join(repr(float(x)) for x in feats_static[node])
            fh.write(f"{node} {vals}\n")
        for node, t in sorted(feats_t):
            vals = " ".join(repr(float(x)) for x in feats_t[(node, t)])
            fh.write(f"{node} {t} {vals}\n")


def write_queries(queries: list[QueryLink], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# u v t_query label\n")
        for q in queries:
            fh.write(f"{q.u} {q.v} {q.t_query} {q.label}\n")


def read_queries(path) -> list[QueryLink]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            u, v, t, y = line.split()
            out.append(QueryLink(int(u), int(v), int(t), int(y)))
    return out


def write_dataset_manifest(path, spec: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec, fh, sort_keys=True, indent=2)
        fh.write("\n")
