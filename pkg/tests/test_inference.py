import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gdmcf.corruption import make_schedules, marginal_from_graph
from gdmcf.dataio import synthetic_blocks
from gdmcf.denoiser import init_params
from gdmcf.graph import DegreeStats, InteractionMatrix, build_adjacency, degree_stats
from gdmcf.inference import (
    generate,
    guided_edge_update,
    rank_topk,
    read_recommendations,
    sample_activation,
    write_recommendations,
)

from conftest import random_graph
from oracles import full_sort_topk


def deg_from_ratios(ratios, d_max=10):
    degrees = np.round(np.asarray(ratios) * d_max).astype(np.int64)
    return DegreeStats(degrees, d_max, np.zeros(degrees.size), degrees.size)


def test_activation_extremes():
    deg = deg_from_ratios([1.0, 0.0, 1.0, 0.0])
    for t in range(50):
        assert sample_activation(deg, 3, t).tolist() == [1, 0, 1, 0]


def test_activation_frequency():
    deg = deg_from_ratios([0.4] * 3)
    trials = 10_000
    freq = np.mean([sample_activation(deg, 0, t) for t in range(trials)], axis=0)
    assert np.all(np.abs(freq - 0.4) <= 0.01)
    assert np.all(np.abs(freq - 0.4) <= 4 * np.sqrt(0.24 / trials))


def test_activation_rejects_empty_graph():
    with pytest.raises(ValueError):
        sample_activation(degree_stats(build_adjacency(InteractionMatrix.empty(3, 3))), 0, 1)


def test_activation_deterministic_per_seed_and_step():
    deg = deg_from_ratios(np.linspace(0, 1, 40), d_max=100)
    a = sample_activation(deg, 5, 2)
    assert np.array_equal(a, sample_activation(deg, 5, 2))
    assert not np.array_equal(a, sample_activation(deg, 5, 3))
    assert set(np.unique(a)) <= {0, 1}


def test_guided_update_inactive_is_noop(rng):
    r = random_graph(rng, 10, 12)
    q = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert guided_edge_update(r, np.zeros(10, dtype=int), q, 0) == r


def test_guided_update_identity_transition(rng):
    r = random_graph(rng, 10, 12)
    assert guided_edge_update(r, np.ones(10, dtype=int), np.eye(2), 0) == r


def test_guided_update_single_user_switch_on_count():
    n = 10_000
    state = InteractionMatrix.empty(3, n)
    s = np.array([0, 1, 0])
    q = np.array([[0.8, 0.2], [0.0, 1.0]])
    out = guided_edge_update(state, s, q, 4)
    assert out.row_counts()[[0, 2]].tolist() == [0, 0]
    assert abs(out.row_counts()[1] - 2000) <= 4 * np.sqrt(1600)


def test_guided_update_with_source_rows(rng):
    state = random_graph(rng, 6, 9)
    source = random_graph(rng, 6, 9)
    s = np.array([1, 0, 1, 0, 0, 1])
    out = guided_edge_update(state, s, np.eye(2), 0, source=source)
    for u in range(6):
        expect = source.row(u) if s[u] else state.row(u)
        assert out.row(u).tolist() == expect.tolist()
    with pytest.raises(ValueError):
        guided_edge_update(state, s, np.eye(2), 0, source=InteractionMatrix.empty(6, 8))
    with pytest.raises(ValueError):
        guided_edge_update(state, s[:3], np.eye(2), 0)


@pytest.fixture(scope="module")
def small_model():
    split = synthetic_blocks(60, 30, 3, 0.4, 0.03, seed=1)
    r = split.train
    sched = make_schedules(4, 0.1, 0.05, marginal_from_graph(r))
    params = init_params(r.num_users, r.num_items, r.num_items, 6, 6, 4, seed=0)
    return r, sched, params


def test_generate_single_step_bounded():
    split = synthetic_blocks(40, 20, 2, 0.4, 0.05, seed=0)
    r = split.train
    sched = make_schedules(1, marginal=marginal_from_graph(r))
    params = init_params(r.num_users, r.num_items, r.num_items, 4, 4, 1, seed=0)
    res = generate(r, params, sched, seed=0)
    assert len(res.edges_per_step) == 1
    assert res.scores.shape == r.shape and np.all(np.abs(res.scores) <= 1 + 1e-12)


def test_generate_deterministic(small_model):
    r, sched, params = small_model
    a = generate(r, params, sched, seed=9)
    b = generate(r, params, sched, seed=9)
    assert a.scores.tobytes() == b.scores.tobytes() and a.edges_per_step == b.edges_per_step
    c = generate(r, params, sched, seed=10)
    assert not np.array_equal(a.scores, c.scores)


def test_generate_chunks_propagate_over_their_own_subgraph(small_model):
    # users are denoised in chunks of batch_size, each over its own rows of the
    # structure, mirroring how training batches see the graph
    r, sched, params = small_model
    whole = generate(r, params, sched, seed=2)
    assert np.array_equal(whole.scores, generate(r, params, sched, seed=2, batch_size=r.num_users).scores)
    chunked = generate(r, params, sched, seed=2, batch_size=7)
    assert chunked.edges_per_step == whole.edges_per_step
    assert chunked.scores.shape == whole.scores.shape and np.all(np.abs(chunked.scores) <= 1 + 1e-12)


def test_guided_generation_processes_fewer_edges(small_model):
    r, sched, params = small_model
    on = generate(r, params, sched, seed=3, user_active=True)
    off = generate(r, params, sched, seed=3, user_active=False)
    assert on.total_edges < off.total_edges
    # activation only removes proposals: per step, guided edges stay at or below the corrupted graph's
    assert all(a <= b for a, b in zip(on.edges_per_step, off.edges_per_step))


def test_generate_without_activation_uses_corrupted_graph(small_model):
    r, sched, params = small_model
    off = generate(r, params, sched, seed=3, user_active=False, corruption_mode="continuous_only")
    assert off.edges_per_step == [r.nnz] * sched[0].T


def test_generate_rejects_bad_inputs(small_model):
    r, sched, params = small_model
    bad = params.copy()
    bad.user_embed[0, 0] = np.nan
    with pytest.raises(ValueError):
        generate(r, bad, sched)
    with pytest.raises(ValueError):
        generate(r.take_rows(np.arange(5)), params, sched)
    with pytest.raises(ValueError):
        generate(r, params, sched, corruption_mode="sideways")
    empty = InteractionMatrix.empty(*r.shape)
    with pytest.raises(ValueError):
        generate(empty, params, sched, user_active=True)


def test_rank_topk_ties_go_to_small_ids():
    scores = np.zeros((2, 6))
    mask = InteractionMatrix.from_rows([[0, 2], []], 6)
    recs = rank_topk(scores, mask, 3)
    assert recs.items[0].tolist() == [1, 3, 4]
    assert recs.items[1].tolist() == [0, 1, 2]


def test_rank_topk_fully_masked_user():
    mask = InteractionMatrix.from_rows([[0, 1, 2], [1]], 3)
    recs = rank_topk(np.random.default_rng(0).random((2, 3)), mask, 2)
    assert recs.items[0].size == 0 and recs.flagged[0]
    assert recs.items[1].size == 2 and not recs.flagged[1]


def test_rank_topk_short_list_flagged():
    mask = InteractionMatrix.from_rows([[0, 1]], 4)
    recs = rank_topk(np.ones((1, 4)), mask, 3)
    assert recs.items[0].tolist() == [2, 3] and recs.flagged[0]


def test_rank_topk_matches_sort_oracle(rng):
    for _ in range(20):
        scores = rng.integers(0, 4, (5, 8)).astype(float)  # coarse values force ties
        mask = rng.random((5, 8)) < 0.3
        k = int(rng.integers(1, 9))
        recs = rank_topk(scores, InteractionMatrix(mask.astype(float)), k)
        assert [r.tolist() for r in recs.items] == full_sort_topk(scores, mask, k)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(1, 15), st.integers(1, 15), st.integers(0, 2**32 - 1))
def test_masking_soundness(m, n, k, seed):
    rng = np.random.default_rng(seed)
    mask = InteractionMatrix((rng.random((m, n)) < 0.4).astype(float))
    recs = rank_topk(rng.standard_normal((m, n)), mask, k)
    for u in range(m):
        assert not set(recs.items[u].tolist()) & set(mask.row(u).tolist())
        assert recs.items[u].size == min(k, n - mask.row_counts()[u])


def test_rank_topk_rejects_bad_input():
    with pytest.raises(ValueError):
        rank_topk(np.array([[np.nan, 1.0]]), None, 1)
    with pytest.raises(ValueError):
        rank_topk(np.ones((1, 2)), None, 0)
    with pytest.raises(ValueError):
        rank_topk(np.ones((1, 2)), InteractionMatrix.empty(1, 3), 1)


def test_recommendations_csv_round_trip(tmp_path, rng):
    scores = rng.standard_normal((4, 6))
    recs = rank_topk(scores, InteractionMatrix.from_rows([[0], [], [1, 2], []], 6), 3)
    path = tmp_path / "recs.csv"
    write_recommendations(recs, path)
    header = open(path).readline().strip()
    assert header == "user_id,rank,item_id,score"
    back = read_recommendations(path, 4)
    for a, b, va, vb in zip(recs.items, back.items, recs.scores, back.scores):
        assert a.tolist() == b.tolist() and np.array_equal(va, vb)
