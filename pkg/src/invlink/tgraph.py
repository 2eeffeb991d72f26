"""Time-indexed edge stores, per-query computational subgraphs, chronological splits.

A temporal graph is a sequence of timestamped edges with node and edge
features.  Timestamps are densified to 0..T at load (raw values kept for
reporting).  Stores are immutable after construction and safe to share across
concurrent readers; subgraph extraction takes no locks and mutates nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np


class GraphFormatError(ValueError):
    """Malformed edge/feature table input."""


class SplitError(ValueError):
    """Chronological split counts exceed the available timestamps."""


class NeighborRecord(NamedTuple):
    neighbor: int
    t: int
    feat: np.ndarray
    edge_id: int


@dataclass(frozen=True)
class TemporalEdge:
    src: int
    dst: int
    t: int
    feat: np.ndarray
    attr: str | None = None


@dataclass(frozen=True)
class QueryLink:
    """A candidate edge (u, v) at ``t_query``; label 1 means it exists."""
    u: int
    v: int
    t_query: int
    label: int


class TemporalGraphStore:
    """Immutable store of temporal edges with a per-node time-sorted index.

    Adjacency is undirected by default: an edge contributes a neighbor record
    to both endpoints.  With ``directed=True`` only the source side sees it.
    Node features may be given per (node, t); lookups fall back to a static
    per-node vector and finally to zeros.
    """

    def __init__(self, num_nodes: int, edges: list[TemporalEdge], dims: tuple[int, int],
                 node_feats_t: dict[tuple[int, int], np.ndarray] | None = None,
                 node_feats_static: dict[int, np.ndarray] | None = None,
                 raw_times: tuple | None = None, directed: bool = False,
                 parent_node_ids: tuple[int, ...] | None = None):
        d_s, d_e = dims
        order = sorted(range(len(edges)), key=lambda i: (edges[i].t, edges[i].src, edges[i].dst))
        self.edges: tuple[TemporalEdge, ...] = tuple(edges[i] for i in order)
        self.num_nodes = int(num_nodes)
        self.d_s, self.d_e = int(d_s), int(d_e)
        self.t_max = max((e.t for e in self.edges), default=0)
        self.raw_times = tuple(raw_times) if raw_times is not None else tuple(range(self.t_max + 1))
        self.directed = bool(directed)
        self.parent_node_ids = parent_node_ids
        self._zero_feat = np.zeros(self.d_s)
        self._zero_feat.setflags(write=False)
        self._feats_t = {}
        for key, vec in (node_feats_t or {}).items():
            arr = np.asarray(vec, dtype=np.float64)
            arr.setflags(write=False)
            self._feats_t[key] = arr
        self._feats_static = {}
        for node, vec in (node_feats_static or {}).items():
            arr = np.asarray(vec, dtype=np.float64)
            arr.setflags(write=False)
            self._feats_static[node] = arr

        for e in self.edges:
            if not (0 <= e.src < self.num_nodes and 0 <= e.dst < self.num_nodes):
                raise GraphFormatError(f"edge ({e.src},{e.dst}) out of range for {self.num_nodes} nodes")
            if e.feat.shape != (self.d_e,):
                raise GraphFormatError(f"edge feature arity {e.feat.shape} != ({self.d_e},)")
            e.feat.setflags(write=False)

        adj: list[list[tuple[int, int, int]]] = [[] for _ in range(self.num_nodes)]
        by_time: dict[int, list[int]] = {}
        for eid, e in enumerate(self.edges):
            adj[e.src].append((e.t, e.dst, eid))
            if not self.directed and e.src != e.dst:
                adj[e.dst].append((e.t, e.src, eid))
            by_time.setdefault(e.t, []).append(eid)
        self._adj = tuple(tuple(sorted(lst)) for lst in adj)
        self._by_time = {t: tuple(ids) for t, ids in by_time.items()}

    # -- lookups --------------------------------------------------------

    def node_feature(self, node: int, t: int) -> np.ndarray:
        if not 0 <= node < self.num_nodes:
            raise IndexError(f"node {node} out of range")
        vec = self._feats_t.get((node, t))
        if vec is None:
            vec = self._feats_static.get(node, self._zero_feat)
        return vec

    def edge_ids_at(self, t: int) -> tuple[int, ...]:
        return self._by_time.get(t, ())

    def feature_maps(self) -> tuple[dict[tuple[int, int], np.ndarray], dict[int, np.ndarray]]:
        """The per-time and static feature maps (read-only arrays; do not mutate)."""
        return self._feats_t, self._feats_static

    def neighbor_index(self, node: int) -> tuple[tuple[int, int, int], ...]:
        """Time-sorted (t, neighbor, edge_id) records for ``node``."""
        if not 0 <= node < self.num_nodes:
            raise IndexError(f"node {node} out of range")
        return self._adj[node]

    @property
    def num_timestamps(self) -> int:
        return self.t_max + 1 if self.edges else 0

    def __len__(self) -> int:
        return len(self.edges)


def neighbors_before(store: TemporalGraphStore, a: int, t: int
                     ) -> tuple[list[NeighborRecord], list[NeighborRecord]]:
    """Neighbor records of ``a`` split into strictly-earlier (t' < t) and
    same-time (t' = t) lists, each sorted by (t', neighbor)."""
    past, current = [], []
    for t2, w, eid in store.neighbor_index(a):
        if t2 < t:
            past.append(NeighborRecord(w, t2, store.edges[eid].feat, eid))
        elif t2 == t:
            current.append(NeighborRecord(w, t2, store.edges[eid].feat, eid))
    past.sort(key=lambda r: (r.t, r.neighbor, r.edge_id))
    current.sort(key=lambda r: (r.t, r.neighbor, r.edge_id))
    return past, current


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _parse_rows(lines: Iterable[str], delimiter: str | None = None):
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line.split(delimiter)


def load_temporal_graph(edge_lines: Iterable[str],
                        node_feature_lines: Iterable[str] | None = None,
                        dims: tuple[int, int] = (0, 0), *,
                        delimiter: str | None = None,
                        directed: bool = False,
                        allow_self_loops: bool = False) -> TemporalGraphStore:
    """Build a store from delimiter-separated text rows.

    Edge rows: ``src dst t feat_1 .. feat_{d_e} [attr]``.  Node feature rows:
    ``node t feat_1 .. feat_{d_s}`` (per-time) or ``node feat_1 .. feat_{d_s}``
    (static).  ``#`` comment lines and blank lines are ignored.  Timestamps
    are re-indexed to dense 0..T preserving order; raw values are retained.
    """
    d_s, d_e = dims
    raw_edges = []
    max_node = -1
    for lineno, parts in _parse_rows(edge_lines, delimiter):
        if len(parts) not in (3 + d_e, 4 + d_e):
            raise GraphFormatError(
                f"edge row {lineno}: expected {3 + d_e} or {4 + d_e} fields, got {len(parts)}")
        try:
            src, dst, t = int(parts[0]), int(parts[1]), int(parts[2])
            feat = np.array([float(x) for x in parts[3:3 + d_e]], dtype=np.float64)
        except ValueError as exc:
            raise GraphFormatError(f"edge row {lineno}: {exc}") from exc
        attr = parts[3 + d_e] if len(parts) == 4 + d_e else None
        if src < 0 or dst < 0 or t < 0:
            raise GraphFormatError(f"edge row {lineno}: negative id or timestamp")
        if src == dst and not allow_self_loops:
            raise GraphFormatError(f"edge row {lineno}: self-loop {src}->{dst} not enabled")
        raw_edges.append((src, dst, t, feat, attr))
        max_node = max(max_node, src, dst)
    if not raw_edges:
        raise GraphFormatError("empty graph")

    raw_ts = sorted({t for _, _, t, _, _ in raw_edges})
    dense = {rt: i for i, rt in enumerate(raw_ts)}
    edges = [TemporalEdge(src, dst, dense[t], feat, attr)
             for src, dst, t, feat, attr in raw_edges]

    feats_t: dict[tuple[int, int], np.ndarray] = {}
    feats_static: dict[int, np.ndarray] = {}
    if node_feature_lines is not None:
        for lineno, parts in _parse_rows(node_feature_lines, delimiter):
            try:
                if len(parts) == 2 + d_s:
                    node, t = int(parts[0]), int(parts[1])
                    vec = np.array([float(x) for x in parts[2:]], dtype=np.float64)
                    if t not in dense:
                        raise GraphFormatError(
                            f"node feature row {lineno}: timestamp {t} not present in edge table")
                    feats_t[(node, dense[t])] = vec
                elif len(parts) == 1 + d_s:
                    node = int(parts[0])
                    vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
                    feats_static[node] = vec
                else:
                    raise GraphFormatError(
                        f"node feature row {lineno}: expected {1 + d_s} or {2 + d_s} fields, got {len(parts)}")
            except ValueError as exc:
                raise GraphFormatError(f"node feature row {lineno}: {exc}") from exc
            max_node = max(max_node, node)

    return TemporalGraphStore(max_node + 1, edges, (d_s, d_e), feats_t, feats_static,
                              raw_times=tuple(raw_ts), directed=directed)


# ---------------------------------------------------------------------------
# computational subgraphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComputationalSubgraph:
    """The pre-query L-hop neighborhood a selector pass works on.

    ``per_time_edges`` maps each timestamp strictly before the query time to
    the ascending edge ids included at that time.  ``hop_of`` holds hop
    distances from {u, v} measured on the time-collapsed pre-query graph.
    """
    query: QueryLink
    store: TemporalGraphStore
    per_time_edges: dict[int, tuple[int, ...]]
    node_set: frozenset[int]
    hop_of: dict[int, int]
    _adj: dict[int, tuple[tuple[int, int, int], ...]] = field(repr=False, default_factory=dict)

    @property
    def edge_ids(self) -> list[int]:
        return [eid for t in sorted(self.per_time_edges) for eid in self.per_time_edges[t]]

    @property
    def num_edges(self) -> int:
        return sum(len(v) for v in self.per_time_edges.values())

    def times(self) -> list[int]:
        return sorted(self.per_time_edges)

    def incident(self, node: int, t: int) -> tuple[list[NeighborRecord], list[NeighborRecord]]:
        """Subgraph-internal neighbor records of ``node``: (t' < t, t' = t)."""
        past, current = [], []
        for t2, w, eid in self._adj.get(node, ()):
            if t2 < t:
                past.append(NeighborRecord(w, t2, self.store.edges[eid].feat, eid))
            elif t2 == t:
                current.append(NeighborRecord(w, t2, self.store.edges[eid].feat, eid))
        return past, current

    def canonical_bytes(self) -> bytes:
        """Deterministic serialization used for equality/rerun checks."""
        q = self.query
        lines = [f"q {q.u} {q.v} {q.t_query} {q.label}"]
        for t in sorted(self.per_time_edges):
            ids = " ".join(str(e) for e in self.per_time_edges[t])
            lines.append(f"t {t}: {ids}")
        lines.append("hops " + " ".join(f"{n}:{h}" for n, h in sorted(self.hop_of.items())))
        return "\n".join(lines).encode("ascii")


def _collapsed_hops(store: TemporalGraphStore, seeds: tuple[int, int], t_query: int,
                    max_hop: int) -> dict[int, int]:
    # breadth-first distances over the union of all pre-query edges
    hops = {s: 0 for s in set(seeds)}
    frontier = sorted(set(seeds))
    for hop in range(1, max_hop + 1):
        nxt = []
        for a in frontier:
            for t2, w, _eid in store.neighbor_index(a):
                if t2 < t_query and w not in hops:
                    hops[w] = hop
                    nxt.append(w)
        frontier = sorted(set(nxt))
        if not frontier:
            break
    return hops


def extract_computational_subgraph(store: TemporalGraphStore, query: QueryLink,
                                   L: int = 2, K: int | None = 20,
                                   seed: int = 0) -> ComputationalSubgraph:
    """Extract the L-hop pre-query neighborhood of a query link.

    An edge (a, b, t) with t < t_query is included when both endpoints lie
    within L hops of {u, v} on the time-collapsed pre-query graph.  When a
    node has more than K incident included edges at one timestamp, a seeded
    uniform draw keeps exactly K of them (K=None disables the cap).  The same
    (store, query, L, K, seed) always produces the identical subgraph.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if K is not None and K < 1:
        raise ValueError("K must be >= 1")
    for node in (query.u, query.v):
        if not 0 <= node < store.num_nodes:
            raise IndexError(f"query node {node} out of range")

    hops = _collapsed_hops(store, (query.u, query.v), query.t_query, L)
    kept: set[int] = set()
    for a in sorted(hops):
        for t2, w, eid in store.neighbor_index(a):
            if t2 < query.t_query and hops.get(w, L + 1) <= L:
                kept.add(eid)

    if K is not None:
        rng = np.random.default_rng(np.random.SeedSequence((seed, query.u, query.v, query.t_query)))
        for node in sorted({n for eid in kept for n in
                            (store.edges[eid].src, store.edges[eid].dst)}):
            groups: dict[int, list[int]] = {}
            for t2, _w, eid in store.neighbor_index(node):
                if eid in kept:
                    groups.setdefault(t2, []).append(eid)
            for t2 in sorted(groups):
                ids = sorted(groups[t2])
                if len(ids) > K:
                    keep = rng.choice(len(ids), size=K, replace=False)
                    keep_set = {ids[i] for i in keep}
                    kept -= set(ids) - keep_set

    per_time: dict[int, list[int]] = {}
    node_set = {query.u, query.v}
    for eid in sorted(kept):
        e = store.edges[eid]
        per_time.setdefault(e.t, []).append(eid)
        node_set.add(e.src)
        node_set.add(e.dst)

    adj: dict[int, list[tuple[int, int, int]]] = {}
    for t in sorted(per_time):
        for eid in per_time[t]:
            e = store.edges[eid]
            adj.setdefault(e.src, []).append((t, e.dst, eid))
            if not store.directed and e.src != e.dst:
                adj.setdefault(e.dst, []).append((t, e.src, eid))
    return ComputationalSubgraph(
        query=query,
        store=store,
        per_time_edges={t: tuple(ids) for t, ids in sorted(per_time.items())},
        node_set=frozenset(node_set),
        hop_of={n: h for n, h in sorted(hops.items()) if n in node_set},
        _adj={n: tuple(sorted(lst)) for n, lst in adj.items()},
    )


# ---------------------------------------------------------------------------
# chronological splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StoreView:
    """A contiguous range of target timestamps over a shared store.

    Queries are posed at timestamps in [t_start, t_stop); history for a query
    always reaches back through the whole underlying store, which is
    chronologically sound because subgraphs only use edges before the query.
    """
    store: TemporalGraphStore
    t_start: int
    t_stop: int

    @property
    def target_times(self) -> range:
        return range(self.t_start, self.t_stop)

    def positive_edges_at(self, t: int) -> tuple[int, ...]:
        if t not in self.target_times:
            raise SplitError(f"timestamp {t} outside view range [{self.t_start},{self.t_stop})")
        return self.store.edge_ids_at(t)


def chronological_split(store: TemporalGraphStore,
                        counts: tuple[int, int, int]) -> tuple[StoreView, StoreView, StoreView]:
    """Partition the dense timestamp axis into train / val / test views."""
    n_train, n_val, n_test = counts
    total = store.num_timestamps
    if min(counts) < 0 or n_train + n_val + n_test > total:
        raise SplitError(f"split counts {counts} exceed {total} available timestamps")
    a, b, c = n_train, n_train + n_val, n_train + n_val + n_test
    return (StoreView(store, 0, a), StoreView(store, a, b), StoreView(store, b, c))
