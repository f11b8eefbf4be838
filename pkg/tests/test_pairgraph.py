import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigsfm.pairgraph import (FrameId, PairGraphConfig, build_pair_graph,
                              build_spatial_edges, build_temporal_edges, frames_for)

from oracles import brute_pairs


def test_spatial_examples():
    ids = ["a", "b"]
    A = np.array([[0, 1], [1, 0]])
    V = frames_for(ids, 3)
    assert len(build_spatial_edges(V, A, 0, ids)) == 3
    assert build_spatial_edges(V, np.zeros((2, 2)), 1, ids) == set()
    e = build_spatial_edges(V, A, 1, ids)
    assert len(e) == 7
    assert {(x.t, y.t) for x, y in e} == {(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)}


def test_temporal_examples():
    V = frames_for(["a"], 5)
    assert len(build_temporal_edges(V, 1)) == 4
    assert len(build_temporal_edges(V, 4)) == math.comb(5, 2)
    assert len(build_temporal_edges(frames_for(["a"], 10), 3)) == sum(10 - d for d in (1, 2, 3))


def test_union_sizes_add():
    ids = ["a", "b"]
    A = np.array([[0, 1], [1, 0]])
    V = frames_for(ids, 3)
    g = build_pair_graph(V, A, PairGraphConfig(K=0, tau=1), ids)
    assert len(g) == 3 + 2 * 2


def test_default_rig_graph_exact_and_bounded():
    from rigsfm.synth.rig import make_default_rig
    rig = make_default_rig()
    V = frames_for(rig.ids, 100)
    cfg = PairGraphConfig(K=1, tau=3)
    g = build_pair_graph(V, rig.adjacency, cfg, rig.ids)
    assert set(g.edges) == brute_pairs(V, rig.adjacency, rig.ids, 1, 3)
    assert len(g) <= len(V) * 3 + len(V) * rig.max_degree() * 3
    assert g.connected


def test_quadratic_baseline():
    from rigsfm.synth.rig import make_default_rig
    rig = make_default_rig()
    V = frames_for(rig.ids, 100)
    g = build_pair_graph(V, rig.adjacency, PairGraphConfig(), rig.ids)
    assert len(V) == 1400 and len(g) < math.comb(1400, 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(1, 8), st.integers(0, 2), st.integers(1, 4), st.data())
def test_matches_bruteforce_random(nc, nt, K, tau, data):
    ids = [f"c{i}" for i in range(nc)]
    upper = data.draw(st.lists(st.integers(0, 1), min_size=nc * nc, max_size=nc * nc))
    A = np.triu(np.array(upper).reshape(nc, nc), 1)
    A = A + A.T
    V = frames_for(ids, nt)
    g = build_pair_graph(V, A, PairGraphConfig(K=K, tau=tau), ids)
    assert set(g.edges) == brute_pairs(V, A, ids, K, tau)
    assert all(a != b for a, b in g.edges)
    # monotone in K and tau
    g2 = build_pair_graph(V, A, PairGraphConfig(K=K + 1, tau=tau + 1), ids)
    assert set(g.edges) <= set(g2.edges)
    # determinism and canonical order
    assert g.edge_list() == build_pair_graph(list(reversed(V)), A, PairGraphConfig(K=K, tau=tau), ids).edge_list()


def test_spatial_slice_is_rig_adjacency():
    ids = ["a", "b", "c"]
    A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    g = build_pair_graph(frames_for(ids, 4), A, PairGraphConfig(K=1, tau=2), ids)
    same_t = {(a.camera, b.camera) for a, b in g.edges if a.t == b.t == 2 and a.camera != b.camera}
    assert same_t == {("a", "b"), ("b", "c")}


def test_disconnected_flag():
    ids = ["a", "b", "c"]
    A = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    g = build_pair_graph(frames_for(ids, 2), A, PairGraphConfig(), ids)
    assert not g.connected
