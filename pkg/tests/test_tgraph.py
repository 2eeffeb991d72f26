"""Store loading, neighbor lookups, subgraph extraction vs a brute-force
breadth-first oracle, and chronological splits."""

import numpy as np
import pytest

from invlink.tgraph import (ComputationalSubgraph, GraphFormatError, QueryLink,
                            SplitError, TemporalEdge, TemporalGraphStore,
                            chronological_split, extract_computational_subgraph,
                            load_temporal_graph, neighbors_before)


def make_store(edge_tuples, num_nodes=None, d_s=2, d_e=1):
    edges = [TemporalEdge(u, v, t, np.full(d_e, 1.0)) for u, v, t in edge_tuples]
    n = num_nodes or (max(max(u, v) for u, v, _ in edge_tuples) + 1)
    return TemporalGraphStore(n, edges, (d_s, d_e))


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def test_load_small_graph():
    lines = [
        "# src dst t feat",
        "0 1 0 0.5",
        "1 2 1 0.25",
        "0 2 0 1.0",
    ]
    store = load_temporal_graph(lines, None, (2, 1))
    assert store.t_max == 1
    assert len(store) == 3
    # undirected adjacency: each edge indexed from both endpoints
    assert sum(len(store.neighbor_index(n)) for n in range(store.num_nodes)) == 6


def test_load_empty_table_errors():
    with pytest.raises(GraphFormatError, match="empty graph"):
        load_temporal_graph(["# nothing"], None, (2, 1))


def test_load_malformed_row_names_line():
    with pytest.raises(GraphFormatError, match="row 2"):
        load_temporal_graph(["0 1 0 0.5", "0 x 1 0.5"], None, (2, 1))


def test_load_feature_arity_mismatch():
    # d_e=2 admits 5 or 6 fields per row; 4 is a dimension error
    with pytest.raises(GraphFormatError, match="fields"):
        load_temporal_graph(["0 1 0 0.5"], None, (2, 2))


def test_load_densifies_timestamps_order_preservingly():
    # 16 distinct year-like stamps compress to 0..15
    years = list(range(1990, 2006))
    lines = [f"0 {i + 1} {year} 1.0" for i, year in enumerate(years)]
    store = load_temporal_graph(lines, None, (2, 1))
    assert store.t_max == 15
    assert store.raw_times == tuple(years)
    assert store.num_timestamps == 16


def test_load_with_attr_column():
    store = load_temporal_graph(["0 1 0 0.5 db", "1 2 0 0.5 dm"], None, (2, 1))
    assert [e.attr for e in store.edges] == ["db", "dm"]


def test_load_rejects_self_loop_unless_enabled():
    with pytest.raises(GraphFormatError, match="self-loop"):
        load_temporal_graph(["1 1 0 0.5"], None, (2, 1))
    store = load_temporal_graph(["1 1 0 0.5"], None, (2, 1), allow_self_loops=True)
    assert len(store) == 1


def test_node_features_static_and_per_time():
    store = load_temporal_graph(
        ["0 1 0 1.0", "0 1 3 1.0"],
        ["0 0.1 0.2", "1 0 0.3 0.4"],   # node 0 static, node 1 at raw t=0
        (2, 1))
    assert store.node_feature(0, 1).tolist() == [0.1, 0.2]
    assert store.node_feature(1, 0).tolist() == [0.3, 0.4]
    assert store.node_feature(1, 1).tolist() == [0.0, 0.0]  # zero fallback


def test_store_immutable_feature_views():
    store = make_store([(0, 1, 0)])
    with pytest.raises(ValueError):
        store.node_feature(0, 0)[0] = 9.9
    with pytest.raises(ValueError):
        store.edges[0].feat[0] = 9.9


def test_adjacency_reproduces_edge_list():
    rng = np.random.default_rng(0)
    tuples = {(int(a), int(b), int(t)) for a, b, t in
              zip(rng.integers(0, 10, 40), rng.integers(0, 10, 40),
                  rng.integers(0, 4, 40)) if a != b}
    store = make_store(sorted(tuples), num_nodes=10)
    seen = set()
    for node in range(store.num_nodes):
        for t, _w, eid in store.neighbor_index(node):
            e = store.edges[eid]
            assert t == e.t and node in (e.src, e.dst)
            seen.add(eid)
    assert seen == set(range(len(store)))


# ---------------------------------------------------------------------------
# neighbors_before
# ---------------------------------------------------------------------------


def test_neighbors_before_isolated_node():
    store = make_store([(0, 1, 0)], num_nodes=3)
    past, current = neighbors_before(store, 2, 1)
    assert past == [] and current == []


def test_neighbors_before_splits_past_and_current():
    # a-b at t=0, a-c at t=1: query at t=1
    store = make_store([(0, 1, 0), (0, 2, 1)])
    past, current = neighbors_before(store, 0, 1)
    assert [(r.neighbor, r.t) for r in past] == [(1, 0)]
    assert [(r.neighbor, r.t) for r in current] == [(2, 1)]


def test_neighbors_before_undirected_symmetry():
    store = make_store([(1, 0, 0)])
    past, _ = neighbors_before(store, 0, 1)
    assert [r.neighbor for r in past] == [1]


def test_neighbors_before_out_of_range():
    store = make_store([(0, 1, 0)])
    with pytest.raises(IndexError):
        neighbors_before(store, 7, 1)


# ---------------------------------------------------------------------------
# subgraph extraction vs breadth-first oracle
# ---------------------------------------------------------------------------


def bfs_oracle(store, query, L):
    """Brute-force reference: collapse pre-query edges, BFS hop distances from
    {u, v}, keep edges whose endpoints are both within L hops."""
    pre = [(eid, e) for eid, e in enumerate(store.edges) if e.t < query.t_query]
    dist = {query.u: 0, query.v: 0}
    frontier = {query.u, query.v}
    hop = 0
    while frontier:
        hop += 1
        nxt = set()
        for eid, e in pre:
            if e.src in frontier and e.dst not in dist:
                nxt.add(e.dst)
            if e.dst in frontier and e.src not in dist:
                nxt.add(e.src)
        for n in nxt:
            dist[n] = hop
        frontier = nxt
    return {eid for eid, e in pre
            if dist.get(e.src, 10**9) <= L and dist.get(e.dst, 10**9) <= L}


def test_path_graph_two_hops():
    # u(0) - a(1) - b(2) - c(3); query (u, v=4)
    store = make_store([(0, 1, 0), (1, 2, 0), (2, 3, 0)], num_nodes=5)
    sg = extract_computational_subgraph(store, QueryLink(0, 4, 1, 1), L=2, K=None)
    kept = {(store.edges[eid].src, store.edges[eid].dst) for eid in sg.edge_ids}
    assert kept == {(0, 1), (1, 2)}


def test_saturating_L_includes_all_pre_query_edges():
    store = make_store([(0, 1, 0), (1, 2, 1), (2, 3, 1), (3, 4, 2)])
    sg = extract_computational_subgraph(store, QueryLink(0, 1, 3, 1), L=10, K=None)
    assert sg.num_edges == 4


def test_no_future_leakage():
    store = make_store([(0, 1, 0), (0, 2, 2), (1, 2, 3)])
    sg = extract_computational_subgraph(store, QueryLink(0, 1, 2, 1), L=3, K=None)
    assert all(store.edges[eid].t < 2 for eid in sg.edge_ids)
    assert sorted(sg.per_time_edges) == [0]


def test_neighbor_cap_is_exact_and_seeded():
    # node 0 has 5 same-time neighbors; K=1 keeps exactly one
    store = make_store([(0, i, 0) for i in range(1, 6)])
    q = QueryLink(0, 1, 1, 1)
    sg1 = extract_computational_subgraph(store, q, L=1, K=1, seed=9)
    sg2 = extract_computational_subgraph(store, q, L=1, K=1, seed=9)
    assert sg1.num_edges == 1
    assert sg1.canonical_bytes() == sg2.canonical_bytes()
    sg3 = extract_computational_subgraph(store, q, L=1, K=1, seed=10)
    assert sg3.num_edges == 1  # may differ in which edge, never in count


def test_extraction_matches_bfs_oracle_on_random_graphs():
    rng = np.random.default_rng(42)
    for trial in range(40):
        n = int(rng.integers(4, 31))
        tuples = set()
        for _ in range(int(rng.integers(3, 50))):
            a, b = rng.integers(0, n, 2)
            if a != b:
                tuples.add((int(min(a, b)), int(max(a, b)), int(rng.integers(0, 4))))
        if not tuples:
            continue
        store = make_store(sorted(tuples), num_nodes=n)
        u, v = rng.choice(n, size=2, replace=False)
        L = int(rng.integers(1, 4))
        q = QueryLink(int(u), int(v), int(rng.integers(1, 5)), 1)
        sg = extract_computational_subgraph(store, q, L=L, K=None, seed=0)
        assert set(sg.edge_ids) == bfs_oracle(store, q, L), f"trial {trial}"


def test_extraction_out_of_range_query():
    store = make_store([(0, 1, 0)])
    with pytest.raises(IndexError):
        extract_computational_subgraph(store, QueryLink(0, 99, 1, 1))


def test_subgraph_incident_split():
    store = make_store([(0, 1, 0), (0, 2, 1), (1, 2, 1)])
    sg = extract_computational_subgraph(store, QueryLink(0, 2, 2, 1), L=2, K=None)
    past, current = sg.incident(0, 1)
    assert [(r.neighbor, r.t) for r in past] == [(1, 0)]
    assert [(r.neighbor, r.t) for r in current] == [(2, 1)]


# ---------------------------------------------------------------------------
# chronological splits
# ---------------------------------------------------------------------------


def test_split_collab_shape():
    # 16 timestamps split 10/1/5: validation is exactly the 11th timestamp
    edges = [(0, i % 3 + 1, t) for t in range(16) for i in range(2)]
    store = make_store(edges, num_nodes=4)
    train, val, test = chronological_split(store, (10, 1, 5))
    assert list(train.target_times) == list(range(10))
    assert list(val.target_times) == [10]
    assert list(test.target_times) == list(range(11, 16))
    assert val.store is store


def test_split_act_shape():
    edges = [(0, 1, t) for t in range(30)]
    store = make_store(edges)
    train, val, test = chronological_split(store, (20, 2, 8))
    assert (len(train.target_times), len(val.target_times), len(test.target_times)) == (20, 2, 8)


def test_split_insufficient_timestamps():
    store = make_store([(0, 1, 0), (0, 1, 1)])
    with pytest.raises(SplitError):
        chronological_split(store, (1, 1, 1))


def test_view_rejects_out_of_range_positive_lookup():
    store = make_store([(0, 1, 0), (0, 1, 1)])
    train, val, _ = chronological_split(store, (1, 1, 0))
    with pytest.raises(SplitError):
        val.positive_edges_at(0)
