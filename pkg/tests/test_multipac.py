import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdnpath.multipac import (AllFiltered, ClusterNode, EmptySequence, MultiPacParams, build_tree, cluster_step,
                              consolidate, dbscan, extract_paths, filter_mixes, proposals_to_json, retained)
from mdnpath.types import MdnStep, MixtureComponent, PredictionSequence, Variant

from oracles import components_union_find, mode_sequence, partition


def step_with(weights, means=None):
    means = means or [(float(k), 0.0) for k in range(len(weights))]
    return MdnStep(0.1, tuple(MixtureComponent(w, m, (1.0, 1.0), 0.0) for w, m in zip(weights, means)))


def node(t, xy, w, index=0):
    return ClusterNode(t, [(0, w)], xy, w, index)


# ---------------------------------------------------------------- filtering


def test_filter_threshold():
    st0 = step_with([0.05, 0.10, 0.25, 0.2, 0.2, 0.2])
    kept = [j for j, _ in filter_mixes(st0, 0.5)]
    assert 0.5 / 6 == pytest.approx(0.08333, abs=1e-5)
    assert kept == [1, 2, 3, 4, 5]


@given(st.integers(1, 12), st.floats(0, 1))
def test_uniform_weights_survive(M, tau):
    assert len(filter_mixes(step_with([1 / M] * M), tau)) == M


def test_tau_zero_keeps_all():
    assert len(filter_mixes(step_with([0.999, 0.001]), 0.0)) == 2


def test_all_filtered_falls_back_to_heaviest():
    st0 = step_with([0.5, 0.3, 0.2])
    with pytest.raises(AllFiltered):
        filter_mixes(st0, 3.0)
    assert [j for j, _ in retained(st0, 3.0)] == [0]


# ---------------------------------------------------------------- dbscan


def test_dbscan_examples():
    assert len(set(dbscan([(0, 0), (1, 0)], 2))) == 1
    assert len(set(dbscan([(0, 0), (10, 0)], 2))) == 2
    assert len(set(dbscan([(0, 0), (1.5, 0), (3, 0)], 2))) == 1


def test_dbscan_min_pts_noise():
    labels = dbscan([(0, 0), (0.5, 0), (1, 0), (20, 0)], 1.0, min_pts=3)
    assert labels[3] == -1 and len(set(labels[:3])) == 1


def test_dbscan_rejects_bad_params():
    with pytest.raises(ValueError):
        dbscan([(0, 0)], 0.0)


points = st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=0, max_size=20)


@given(points, st.floats(0.1, 6))
def test_dbscan_equals_connected_components(pts, eps):
    labels = dbscan(pts, eps, 1)
    assert (labels >= 0).all()
    assert partition(labels) == (components_union_find(pts, eps) if pts else set())


# ---------------------------------------------------------------- tree


def test_single_chain():
    per = [[node(t, (0.0, float(t)), 1.0)] for t in range(1, 6)]
    props = extract_paths(build_tree(per))
    assert len(props) == 1 and [p[2] for p in props[0].points] == [1, 2, 3, 4, 5]
    assert props[0].weight == pytest.approx(5.0)


def test_nearest_parent():
    per = [[node(1, (0.0, 5.0), 0.5, 0), node(1, (0.0, -5.0), 0.5, 1)], [node(2, (0.0, 4.0), 1.0, 2)]]
    build_tree(per)
    assert per[1][0].parent is per[0][0]


def test_tie_goes_to_heavier_then_earlier():
    per = [[node(1, (-1.0, 0.0), 0.3, 0), node(1, (1.0, 0.0), 0.7, 1)], [node(2, (0.0, 3.0), 1.0, 2)]]
    build_tree(per)
    assert per[1][0].parent is per[0][1]
    per = [[node(1, (-1.0, 0.0), 0.5, 0), node(1, (1.0, 0.0), 0.5, 1)], [node(2, (0.0, 3.0), 1.0, 2)]]
    build_tree(per)
    assert per[1][0].parent is per[0][0]


def test_fork_shares_prefix():
    per = [[node(t, (0.0, float(t)), 1.0, t)] for t in range(1, 4)]
    per.append([node(4, (-3.0, 4.0), 0.6, 10), node(4, (3.0, 4.0), 0.4, 11)])
    props = extract_paths(build_tree(per))
    assert len(props) == 2
    assert props[0].points[:3] == props[1].points[:3]
    assert props[0].points[3][0] == -3.0


def test_empty_sequence():
    with pytest.raises(EmptySequence):
        build_tree([])


def test_parent_depth_invariant():
    seq = mode_sequence([[(0, k) for k in range(1, 9)], [(k, k) for k in range(1, 9)]], [0.6, 0.4])
    per = []
    for t, st0 in enumerate(seq.steps, start=1):
        per.append(cluster_step(t, retained(st0, 0.5), 2.0, 1, 10 * t))
    root = build_tree(per)
    for nodes in per:
        for n in nodes:
            assert n.parent.t_index == n.t_index - 1
            assert n.weight_sum > 0
    assert root.t_index == 0


# ---------------------------------------------------------------- consolidate


def two_mode(weights=(0.7, 0.3), n=12, pad_from=None):
    left = [(-1.5 * k, 2.0 * k) for k in range(1, n + 1)]
    right = [(1.5 * k, 2.0 * k) for k in range(1, n + 1)]
    return mode_sequence([left, right], weights, pad_from=pad_from)


def test_two_mode_ranked():
    props = consolidate(two_mode())
    assert len(props) == 2
    assert props[0].points[-1][0] < 0  # the 0.7 chain bends left
    assert props[0].weight == pytest.approx(0.7 * 12)
    assert props[1].weight == pytest.approx(0.3 * 12)


def test_identical_components_single_path():
    seq = mode_sequence([[(0.0, k) for k in range(1, 7)]] * 3, [0.5, 0.3, 0.2])
    props = consolidate(seq)
    assert len(props) == 1 and props[0].points[-1][:2] == (0.0, 6.0)


@given(st.floats(0.05, 0.95), st.floats(0.1, 10))
def test_common_scaling_keeps_ranking(w0, factor):
    base = consolidate(two_mode((w0, 1 - w0)))
    raw = np.array([w0, 1 - w0]) * factor
    scaled = consolidate(two_mode(tuple(raw / raw.sum())))
    assert len(base) == len(scaled)
    for a, b in zip(base, scaled):
        assert np.allclose(a.xy, b.xy, atol=1e-12)


def test_pad_cutoff_length():
    props = consolidate(two_mode(n=60, pad_from=30))
    assert all(len(p.points) <= 30 for p in props)
    assert max(len(p.points) for p in props) == 30


def test_pad_from_first_step_keeps_one_point():
    props = consolidate(two_mode(n=10, pad_from=0))
    assert max(len(p.points) for p in props) == 1


@given(st.integers(0, 10_000))
def test_proposal_invariants(seed):
    rng = np.random.default_rng(seed)
    M, n = 4, 8
    steps = []
    for _ in range(n):
        w = rng.dirichlet(np.ones(M))
        comps = tuple(MixtureComponent(float(w[j]), tuple(rng.normal(size=2) * 4), (1.0, 1.0), 0.0) for j in range(M))
        steps.append(MdnStep(float(rng.uniform(0.01, 0.49)), comps))
    seq = PredictionSequence(tuple(steps), Variant.FF)
    params = MultiPacParams()
    props = consolidate(seq, params)
    ws = [p.weight for p in props]
    assert ws == sorted(ws, reverse=True)
    # every retained component is in exactly one node of its step
    for t, st0 in enumerate(seq.steps, start=1):
        kept = retained(st0, params.tau)
        nodes = cluster_step(t, kept, params.eps, params.min_pts)
        members = sorted(j for nd in nodes for j, _ in nd.members)
        assert members == sorted(j for j, _ in kept)
    # eps -> infinity gives one proposal
    assert len(consolidate(seq, MultiPacParams(eps=1e9))) == 1


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_tiny_eps_leaf_count(seed, M):
    # modes that stay well apart: each proposal follows one distinct mean track
    rng = np.random.default_rng(seed)
    offsets = rng.permutation(M) * 10.0
    paths = [[(off, 2.0 * k) for k in range(1, 7)] for off in offsets]
    seq = mode_sequence(paths, [1 / M] * M)
    props = consolidate(seq, MultiPacParams(eps=1e-9))
    assert len(props) == M


def test_json_shape():
    out = proposals_to_json(consolidate(two_mode(n=3)))
    assert [d["rank"] for d in out] == [1, 2]
    assert set(out[0]) == {"rank", "weight", "points"}
    assert out[0]["points"][0] == [-1.5, 2.0, 1]
