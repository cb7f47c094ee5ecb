"""Graph-based denoiser: two corrupted views -> unified user features -> GCN -> cosine scores."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autograd as ag
from .corruption import (
    ContinuousSchedule,
    DiscreteSchedule,
    as_generator,
    cumulative_transition,
    transition_matrix,
)
from .graph import InteractionMatrix, build_adjacency, degree_stats, propagate

STEP_DIM = 10


@dataclass
class ModelParams:
    user_embed: np.ndarray  # M x d
    item_embed: np.ndarray  # N x d
    proj_structure: np.ndarray  # N x d_p
    proj_feature: np.ndarray  # d_x x d_p
    fuse: np.ndarray  # (2 d_p + d + d_s) x d
    step_embed: np.ndarray  # T x d_s

    def __post_init__(self):
        d = self.user_embed.shape[1]
        dp = self.proj_structure.shape[1]
        ds = self.step_embed.shape[1]
        if self.item_embed.shape[1] != d or self.proj_feature.shape[1] != dp:
            raise ValueError("inconsistent embedding / projection widths")
        if self.fuse.shape != (2 * dp + d + ds, d):
            raise ValueError(f"fuse must be {(2 * dp + d + ds, d)}, got {self.fuse.shape}")

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.names()}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())

    @property
    def num_users(self) -> int:
        return self.user_embed.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_embed.shape[0]

    @property
    def dim(self) -> int:
        return self.user_embed.shape[1]

    @property
    def proj_dim(self) -> int:
        return self.proj_structure.shape[1]

    @property
    def steps(self) -> int:
        return self.step_embed.shape[0]

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays().values())


def init_params(
    num_users: int,
    num_items: int,
    feature_dim: int,
    dim: int,
    proj_dim: int,
    steps: int,
    step_dim: int = STEP_DIM,
    seed=0,
) -> ModelParams:
    """Gaussian embeddings and Xavier-normal linear maps."""
    rng = as_generator(seed)

    def xavier(fan_in, fan_out):
        return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))

    return ModelParams(
        user_embed=rng.normal(0.0, 0.1, size=(num_users, dim)),
        item_embed=rng.normal(0.0, 0.1, size=(num_items, dim)),
        proj_structure=xavier(num_items, proj_dim),
        proj_feature=xavier(feature_dim, proj_dim),
        fuse=xavier(2 * proj_dim + dim + step_dim, dim),
        step_embed=rng.normal(0.0, 0.1, size=(steps, step_dim)),
    )


class ViewPair(NamedTuple):
    x_prime: np.ndarray
    x_double: np.ndarray


@dataclass(frozen=True, eq=False)
class UnifiedGraph:
    unified_features: np.ndarray
    structure: InteractionMatrix
    step: int

    def __post_init__(self):
        if self.unified_features.shape[0] != self.structure.num_users:
            raise ValueError("unified features and structure disagree on user count")


class Prediction(NamedTuple):
    """Clean-graph estimate: cosine scores and the implied user features."""

    scores: np.ndarray
    features: np.ndarray


def interaction_features(r: InteractionMatrix) -> np.ndarray:
    """Default user features: each user's interaction row scaled to unit length."""
    x = r.toarray()
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _consts(p: ModelParams) -> dict[str, ag.Tensor]:
    return {k: ag.Tensor(v) for k, v in p.arrays().items()}


# --- tensor-level building blocks (shared by forward and gradient paths) ---


def views_t(r_t: InteractionMatrix, x_t, th: dict) -> tuple[ag.Tensor, ag.Tensor]:
    if r_t.num_items != th["proj_structure"].shape[0]:
        raise ValueError("structure width does not match the structure projection")
    if np.shape(x_t)[1] != th["proj_feature"].shape[0]:
        raise ValueError("feature width does not match the feature projection")
    if np.shape(x_t)[0] != r_t.num_users:
        raise ValueError("views disagree on user count")
    x1 = ag.sparse_matmul(r_t.csr, th["proj_structure"])
    x2 = ag.Tensor(x_t) @ th["proj_feature"]
    return x1, x2


def ugc_loss_t(x1: ag.Tensor, x2: ag.Tensor, tau: float) -> ag.Tensor:
    if tau <= 0:
        raise ValueError("temperature must be positive")
    return ag.log_softmax_diag_sum(ag.cosine_matrix(x1, x2) / tau)


def unified_t(x1, x2, th: dict, users, t: int) -> ag.Tensor:
    steps = th["step_embed"].shape[0]
    if not 1 <= t <= steps:
        raise ValueError(f"step {t} outside 1..{steps}")
    users = np.asarray(users)
    step_rows = th["step_embed"][np.full(users.size, t - 1)]
    return ag.concat([x1, x2, th["user_embed"][users], step_rows], axis=1)


def denoise_t(xbar: ag.Tensor, structure: InteractionMatrix, th: dict, layers: int, readout="mean", items=None):
    """GCN over the unified graph; returns (user-by-item cosine scores, node reps)."""
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if xbar.shape[1] != th["fuse"].shape[0]:
        raise ValueError("unified feature width does not match the fuse map")
    item_rows = th["item_embed"] if items is None else th["item_embed"][items]
    if structure.num_users != xbar.shape[0] or structure.num_items != item_rows.shape[0]:
        raise ValueError("structure shape does not match node counts")
    m = xbar.shape[0]
    z = ag.concat([xbar @ th["fuse"], item_rows], axis=0)
    adj = build_adjacency(structure)
    deg = degree_stats(adj)
    hops = [z]
    for _ in range(layers):
        # normalized adjacency is symmetric, so the op is its own adjoint
        hops.append(ag.linear_op(lambda v: propagate(v, adj, deg), hops[-1]))
    if readout == "mean":
        out = ag.stack_mean(hops)
    elif readout == "last":
        out = hops[-1]
    else:
        raise ValueError(f"unknown readout {readout!r}")
    p_rows = out[:m]
    q_rows = out[m:]
    return ag.cosine_matrix(p_rows, q_rows), out


def reconstruct_features_t(scores: ag.Tensor) -> ag.Tensor:
    return ag.normalize_rows(scores)


# --- public value-level operations ---


def project_views(r_t: InteractionMatrix, x_t: np.ndarray, p: ModelParams) -> ViewPair:
    x1, x2 = views_t(r_t, x_t, _consts(p))
    return ViewPair(x1.value, x2.value)


def ugc_loss(v: ViewPair, tau: float) -> float:
    if v.x_prime.shape != v.x_double.shape:
        raise ValueError("views must have the same shape")
    return float(ugc_loss_t(ag.Tensor(v.x_prime), ag.Tensor(v.x_double), tau).value)


def build_unified(v: ViewPair, p: ModelParams, t: int, users=None) -> np.ndarray:
    users = np.arange(v.x_prime.shape[0]) if users is None else users
    return unified_t(ag.Tensor(v.x_prime), ag.Tensor(v.x_double), _consts(p), users, t).value


def denoise(u: UnifiedGraph, p: ModelParams, layers: int = 2, readout: str = "mean") -> np.ndarray:
    scores, _ = denoise_t(ag.Tensor(u.unified_features), u.structure, _consts(p), layers, readout)
    return scores.value


def predict_clean(
    r_t: InteractionMatrix,
    x_t: np.ndarray,
    p: ModelParams,
    t: int,
    layers: int = 2,
    readout: str = "mean",
    structure: InteractionMatrix | None = None,
    users=None,
) -> Prediction:
    """Full forward pass: views from (r_t, x_t), propagation over ``structure`` (default r_t)."""
    th = _consts(p)
    users = np.arange(r_t.num_users) if users is None else np.asarray(users)
    x1, x2 = views_t(r_t, x_t, th)
    xbar = unified_t(x1, x2, th, users, t)
    scores, _ = denoise_t(xbar, r_t if structure is None else structure, th, layers, readout)
    return Prediction(scores.value, reconstruct_features_t(scores).value)


def structure_posterior(q_t: np.ndarray, qbar_prev: np.ndarray, state, p_present) -> np.ndarray:
    """P(r_{t-1} = present | r_t = state, predicted clean presence probability).

    Weights are (column ``state`` of Q_t) times (clean distribution pushed
    through Q_bar_{t-1}), normalized over the two outcomes.
    """
    state = np.asarray(state, dtype=np.int64)
    p1 = np.clip(np.asarray(p_present, dtype=np.float64), 0.0, 1.0)
    prior_abs = (1.0 - p1) * qbar_prev[0, 0] + p1 * qbar_prev[1, 0]
    prior_pre = (1.0 - p1) * qbar_prev[0, 1] + p1 * qbar_prev[1, 1]
    w_abs = q_t[0, state] * prior_abs
    w_pre = q_t[1, state] * prior_pre
    total = w_abs + w_pre
    return np.where(total > 0, w_pre / np.where(total > 0, total, 1.0), 0.0)


def feature_posterior(x_t, x0_hat, s: ContinuousSchedule, t: int):
    """Mean and variance of q(x_{t-1} | x_t, x_0) for t >= 2."""
    if not 2 <= t <= s.T:
        raise ValueError(f"feature posterior needs 2 <= t <= {s.T}")
    beta = s.beta[t - 1]
    ab = s.alpha_bar[t - 1]
    ab_prev = s.alpha_bar[t - 2]
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    ct = np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)
    var = beta * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * np.asarray(x0_hat) + ct * np.asarray(x_t), var


def reverse_step(
    r_t: InteractionMatrix,
    x_t: np.ndarray,
    p: ModelParams,
    schedules: tuple[DiscreteSchedule, ContinuousSchedule],
    t: int,
    seed,
    layers: int = 2,
    readout: str = "mean",
):
    """One ancestral step G_t -> G_{t-1} with a clean-graph (x0) parameterization.

    Returns ``(prediction, (r_prev, x_prev))``. At t = 1 the prediction is
    final and is returned in place of a sampled state.
    """
    disc, cont = schedules
    if not 1 <= t <= disc.T:
        raise ValueError(f"step {t} outside 1..{disc.T}")
    pred = predict_clean(r_t, x_t, p, t, layers, readout)
    if t == 1:
        return pred, (pred.scores, pred.features)
    rng = as_generator(seed)
    state = r_t.toarray().astype(np.int64)
    prob = structure_posterior(
        transition_matrix(disc, t), cumulative_transition(disc, t - 1), state, pred.scores
    )
    present = rng.random(prob.shape) < prob
    r_prev = InteractionMatrix(present.astype(np.float64))
    mean, var = feature_posterior(x_t, pred.features, cont, t)
    x_prev = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    return pred, (r_prev, x_prev)
