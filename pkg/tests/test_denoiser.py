import math

import numpy as np
import pytest

from gdmcf.corruption import ContinuousSchedule, DiscreteSchedule, cumulative_transition, make_schedules, transition_matrix
from gdmcf.denoiser import (
    ModelParams,
    UnifiedGraph,
    ViewPair,
    build_unified,
    denoise,
    feature_posterior,
    init_params,
    interaction_features,
    predict_clean,
    project_views,
    reverse_step,
    structure_posterior,
    ugc_loss,
)
from gdmcf.graph import InteractionMatrix

from conftest import random_graph
from oracles import gcn_forward, infonce, posterior_by_enumeration


def make_params(rng, m, n, d=3, dp=2, ds=2, steps=3, dx=None):
    dx = n if dx is None else dx
    return ModelParams(
        user_embed=rng.standard_normal((m, d)),
        item_embed=rng.standard_normal((n, d)),
        proj_structure=rng.standard_normal((n, dp)),
        proj_feature=rng.standard_normal((dx, dp)),
        fuse=rng.standard_normal((2 * dp + d + ds, d)),
        step_embed=rng.standard_normal((steps, ds)),
    )


def test_init_params_shapes_and_defaults():
    p = init_params(5, 7, 7, dim=4, proj_dim=3, steps=6, seed=0)
    assert p.user_embed.shape == (5, 4) and p.item_embed.shape == (7, 4)
    assert p.proj_structure.shape == (7, 3) and p.proj_feature.shape == (7, 3)
    assert p.step_embed.shape == (6, 10)
    assert p.fuse.shape == (2 * 3 + 4 + 10, 4)
    assert p.is_finite()
    q = init_params(5, 7, 7, dim=4, proj_dim=3, steps=6, seed=0)
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays().values(), q.arrays().values()))


def test_params_reject_inconsistent_widths(rng):
    p = make_params(rng, 2, 3)
    with pytest.raises(ValueError):
        ModelParams(**{**p.arrays(), "fuse": np.zeros((3, 3))})


def test_interaction_features_unit_rows():
    r = InteractionMatrix.from_rows([[0, 1, 3], [], [2]], 4)
    x = interaction_features(r)
    assert np.allclose(np.linalg.norm(x[[0, 2]], axis=1), 1.0)
    assert not x[1].any()
    assert x[0, 0] == pytest.approx(1 / math.sqrt(3))


def test_project_views_examples(rng):
    p = make_params(rng, 1, 3, dp=2)
    r = InteractionMatrix.from_rows([[0, 2]], 3)
    v = project_views(r, np.zeros((1, 3)), p)
    assert np.allclose(v.x_prime[0], p.proj_structure[0] + p.proj_structure[2], atol=1e-15)
    empty = project_views(InteractionMatrix.empty(1, 3), np.zeros((1, 3)), p)
    assert not empty.x_prime.any()
    q = make_params(rng, 2, 3, dp=3, dx=3)
    q.proj_feature = np.eye(3)
    x = rng.standard_normal((2, 3))
    assert np.array_equal(project_views(InteractionMatrix.empty(2, 3), x, q).x_double, x)


def test_project_views_dimension_mismatch(rng):
    p = make_params(rng, 2, 3)
    with pytest.raises(ValueError):
        project_views(InteractionMatrix.empty(2, 4), np.zeros((2, 3)), p)
    with pytest.raises(ValueError):
        project_views(InteractionMatrix.empty(2, 3), np.zeros((2, 5)), p)


def test_ugc_loss_single_user_is_zero(rng):
    v = ViewPair(rng.standard_normal((1, 4)), rng.standard_normal((1, 4)))
    assert ugc_loss(v, 0.2) == 0.0


def test_ugc_loss_identical_rows():
    m = 6
    row = np.array([[1.0, 2.0, -1.0]])
    v = ViewPair(np.repeat(row, m, axis=0), np.repeat(row, m, axis=0))
    assert ugc_loss(v, 0.2) == pytest.approx(m * math.log(m), rel=1e-12)


def test_ugc_loss_orthonormal_rows():
    m = 5
    v = ViewPair(np.eye(m), np.eye(m))
    expect = m * math.log(math.e + (m - 1)) - m
    assert ugc_loss(v, 1.0) == pytest.approx(expect, rel=1e-12)


def test_ugc_loss_matches_oracle_and_is_nonnegative(rng):
    for _ in range(10):
        m = int(rng.integers(1, 8))
        a, b = rng.standard_normal((m, 4)), rng.standard_normal((m, 4))
        a[0] = 0.0  # zero-norm row: similarities defined as 0
        tau = rng.uniform(0.1, 2.0)
        val = ugc_loss(ViewPair(a, b), tau)
        assert val >= 0
        assert val == pytest.approx(infonce(a, b, tau), rel=1e-12, abs=1e-12)


def test_ugc_loss_rejects_bad_tau(rng):
    with pytest.raises(ValueError):
        ugc_loss(ViewPair(np.ones((2, 2)), np.ones((2, 2))), 0.0)


def test_build_unified_concatenation():
    p = ModelParams(
        user_embed=np.array([[3.0]]),
        item_embed=np.array([[0.0]]),
        proj_structure=np.zeros((1, 1)),
        proj_feature=np.zeros((1, 1)),
        fuse=np.zeros((4, 1)),
        step_embed=np.array([[5.0], [6.0]]),
    )
    v = ViewPair(np.array([[1.0]]), np.array([[2.0]]))
    assert build_unified(v, p, 1).tolist() == [[1.0, 2.0, 3.0, 5.0]]
    assert build_unified(v, p, 2).tolist() == [[1.0, 2.0, 3.0, 6.0]]
    with pytest.raises(ValueError):
        build_unified(v, p, 3)


def test_build_unified_width_and_step_dependence(rng):
    p = init_params(4, 6, 6, dim=5, proj_dim=3, steps=4, seed=1)
    v = ViewPair(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
    a, b = build_unified(v, p, 1), build_unified(v, p, 3)
    assert a.shape == (4, 2 * 3 + 5 + 10)
    assert np.array_equal(a[:, :-10], b[:, :-10])
    assert not np.array_equal(a[:, -10:], b[:, -10:])


def _unit_fuse_params(user_vec, item_vec):
    """Params whose fused user row equals ``user_vec`` when X-bar has a 1 in the user-embed slot."""
    d = len(user_vec)
    fuse = np.zeros((2 + d + 1, d))
    fuse[2 : 2 + d] = np.eye(d)
    return ModelParams(
        user_embed=np.array([user_vec], dtype=float),
        item_embed=np.array([item_vec], dtype=float),
        proj_structure=np.zeros((1, 1)),
        proj_feature=np.zeros((1, 1)),
        fuse=fuse,
        step_embed=np.zeros((1, 1)),
    )


def test_denoise_layer_zero_cosine_examples():
    r = InteractionMatrix.empty(1, 1)
    p = _unit_fuse_params([1.0, 2.0], [2.0, 4.0])
    xbar = np.array([[0.0, 0.0, 1.0, 2.0, 0.0]])
    assert denoise(UnifiedGraph(xbar, r, 1), p, layers=0)[0, 0] == pytest.approx(1.0, abs=1e-15)
    p = _unit_fuse_params([1.0, 0.0], [0.0, 3.0])
    xbar = np.array([[0.0, 0.0, 1.0, 0.0, 0.0]])
    assert denoise(UnifiedGraph(xbar, r, 1), p, layers=0)[0, 0] == 0.0


def test_denoise_two_node_oracle():
    r = InteractionMatrix(np.ones((1, 1)))
    p = _unit_fuse_params([1.0, 0.5], [-0.3, 2.0])
    xbar = np.array([[0.0, 0.0, 1.0, 0.5, 0.0]])
    for readout in ("mean", "last"):
        got = denoise(UnifiedGraph(xbar, r, 1), p, layers=1, readout=readout)
        expect = gcn_forward(xbar, p.fuse, p.item_embed, r.toarray(), 1, readout)
        assert np.abs(got - expect).max() < 1e-12


def test_denoise_matches_dense_oracle(rng):
    for _ in range(8):
        m, n = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        r = random_graph(rng, m, n, 0.4, ensure_row=False)
        p = make_params(rng, m, n)
        xbar = rng.standard_normal((m, p.fuse.shape[0]))
        for layers in (0, 1, 2, 3):
            for readout in ("mean", "last"):
                got = denoise(UnifiedGraph(xbar, r, 1), p, layers, readout)
                expect = gcn_forward(xbar, p.fuse, p.item_embed, r.toarray(), layers, readout)
                assert np.abs(got - expect).max() < 1e-12


def test_denoise_rejects_bad_inputs(rng):
    p = make_params(rng, 2, 3)
    xbar = rng.standard_normal((2, p.fuse.shape[0]))
    with pytest.raises(ValueError):
        denoise(UnifiedGraph(xbar, InteractionMatrix.empty(2, 4), 1), p)
    with pytest.raises(ValueError):
        denoise(UnifiedGraph(xbar[:, :-1], InteractionMatrix.empty(2, 3), 1), p)
    with pytest.raises(ValueError):
        denoise(UnifiedGraph(xbar, InteractionMatrix.empty(2, 3), 1), p, layers=-1)
    with pytest.raises(ValueError):
        UnifiedGraph(xbar, InteractionMatrix.empty(3, 3), 1)


def test_scores_bounded(rng):
    for scale in (1e-8, 1.0, 1e6):
        r = random_graph(rng, 10, 12)
        p = init_params(10, 12, 12, dim=6, proj_dim=4, steps=3, seed=2)
        p.user_embed *= scale
        pred = predict_clean(r, interaction_features(r), p, 2, layers=2)
        assert np.all(np.abs(pred.scores) <= 1.0 + 1e-12)


def test_user_scale_invariance(rng):
    r = random_graph(rng, 8, 10)
    p = make_params(rng, 8, 10)
    xbar = rng.standard_normal((8, p.fuse.shape[0]))
    # user rows of Z scale with X-bar; with layer-0 or last-layer readout each
    # output row comes from one side only, so cosine scores cannot change
    for layers, readout in ((0, "mean"), (1, "last"), (2, "last")):
        base = denoise(UnifiedGraph(xbar, r, 1), p, layers, readout)
        scaled = denoise(UnifiedGraph(3.7 * xbar, r, 1), p, layers, readout)
        assert np.abs(base - scaled).max() < 1e-12
        assert np.array_equal(np.argsort(-base, axis=1, kind="stable"), np.argsort(-scaled, axis=1, kind="stable"))


def test_permutation_equivariance(rng):
    m, n = 9, 11
    r = random_graph(rng, m, n)
    p = init_params(m, n, n, dim=5, proj_dim=4, steps=3, seed=3)
    x = rng.standard_normal((m, n))
    base = predict_clean(r, x, p, 2, layers=2).scores
    pu, pi = rng.permutation(m), rng.permutation(n)
    q = ModelParams(
        user_embed=p.user_embed[pu],
        item_embed=p.item_embed[pi],
        proj_structure=p.proj_structure[pi],
        proj_feature=p.proj_feature[pi],
        fuse=p.fuse,
        step_embed=p.step_embed,
    )
    rp = InteractionMatrix(r.toarray()[pu][:, pi])
    got = predict_clean(rp, x[pu][:, pi], q, 2, layers=2).scores
    assert np.abs(got - base[pu][:, pi]).max() < 1e-12


def test_prediction_features_are_normalized_scores(rng):
    r = random_graph(rng, 5, 6)
    p = init_params(5, 6, 6, dim=4, proj_dim=4, steps=2, seed=0)
    pred = predict_clean(r, interaction_features(r), p, 1)
    norms = np.linalg.norm(pred.scores, axis=1, keepdims=True)
    assert np.allclose(pred.features, pred.scores / norms, atol=1e-15)


def test_structure_posterior_matches_enumeration(rng):
    for _ in range(50):
        a1, a2 = rng.uniform(0.05, 1.0, 2)
        p = rng.uniform()
        s = DiscreteSchedule([a1, a2], [1 - p, p])
        q_t, qbar_prev = transition_matrix(s, 2), cumulative_transition(s, 1)
        for state in (0, 1):
            for p_hat in (0.0, 0.3, 0.9, 1.0):
                got = float(structure_posterior(q_t, qbar_prev, state, p_hat))
                assert abs(got - posterior_by_enumeration(q_t, qbar_prev, state, p_hat)) < 1e-12
                assert 0.0 <= got <= 1.0


def test_structure_posterior_toy_case():
    s = DiscreteSchedule([0.8, 0.6], [0.7, 0.3])
    q_t, qbar_prev = transition_matrix(s, 2), cumulative_transition(s, 1)
    got = float(structure_posterior(q_t, qbar_prev, 1, 0.9))
    absent = float(1 - got)
    assert got + absent == pytest.approx(1.0, abs=1e-15)
    assert got == pytest.approx(posterior_by_enumeration(q_t, qbar_prev, 1, 0.9), abs=1e-12)


def test_feature_posterior_matches_gaussian_product():
    s = ContinuousSchedule([0.05, 0.1, 0.2])
    x_t, x0 = np.array([0.3, -1.2]), np.array([1.0, 0.5])
    for t in (2, 3):
        alpha, beta = 1 - s.beta[t - 1], s.beta[t - 1]
        ab_prev = s.alpha_bar[t - 2]
        prec = 1 / (1 - ab_prev) + alpha / beta
        var = 1 / prec
        mean = var * (math.sqrt(ab_prev) * x0 / (1 - ab_prev) + math.sqrt(alpha) * x_t / beta)
        got_mean, got_var = feature_posterior(x_t, x0, s, t)
        assert np.allclose(got_mean, mean, atol=1e-13) and got_var == pytest.approx(var, rel=1e-12)
    with pytest.raises(ValueError):
        feature_posterior(x_t, x0, s, 1)


def test_reverse_step_final_and_intermediate(rng):
    r = random_graph(rng, 6, 8)
    disc, cont = make_schedules(3, 0.1, 0.2, (0.7, 0.3))
    p = init_params(6, 8, 8, dim=4, proj_dim=4, steps=3, seed=0)
    x = interaction_features(r)
    pred, (scores, feats) = reverse_step(r, x, p, (disc, cont), 1, seed=0)
    expect = predict_clean(r, x, p, 1)
    assert np.array_equal(scores, expect.scores) and np.array_equal(feats, expect.features)
    pred, (r_prev, x_prev) = reverse_step(r, x, p, (disc, cont), 3, seed=0)
    assert r_prev.shape == r.shape and x_prev.shape == x.shape and np.all(np.isfinite(x_prev))
    again = reverse_step(r, x, p, (disc, cont), 3, seed=0)[1]
    assert again[0] == r_prev and np.array_equal(again[1], x_prev)
    with pytest.raises(ValueError):
        reverse_step(r, x, p, (disc, cont), 4, seed=0)
