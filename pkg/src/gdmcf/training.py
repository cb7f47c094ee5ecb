"""Losses, gradients, Adam, and the training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .config import TrainConfig
from .corruption import (
    ContinuousSchedule,
    DiscreteSchedule,
    as_generator,
    corrupt_features,
    corrupt_structure,
    make_schedules,
    marginal_from_graph,
)
from .denoiser import (
    ModelParams,
    Prediction,
    denoise_t,
    init_params,
    interaction_features,
    reconstruct_features_t,
    ugc_loss_t,
    unified_t,
    views_t,
)
from .graph import InteractionMatrix
from .inference import uses_continuous, uses_discrete

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteLossError(FloatingPointError):
    pass


def diffusion_loss(pred: Prediction, target: tuple[InteractionMatrix, np.ndarray]) -> float:
    """MSE(scores, R0) + MSE(reconstructed features, X0), each averaged over entries."""
    r0, x0 = target
    if pred.scores.shape != r0.shape or pred.features.shape != np.shape(x0):
        raise ValueError("prediction and target shapes differ")
    structural = np.mean((pred.scores - r0.toarray()) ** 2)
    feature = np.mean((pred.features - np.asarray(x0)) ** 2)
    return float(structural + feature)


def total_loss(l_ugc: float, l_diff: float, lambda1: float) -> float:
    return lambda1 * l_ugc + l_diff


@dataclass
class CorruptedBatch:
    """Everything random about one training step, frozen so the loss is deterministic."""

    users: np.ndarray
    t: int
    r0: InteractionMatrix
    x0: np.ndarray
    r_t: InteractionMatrix
    x_t: np.ndarray
    columns: np.ndarray | None = None


def sample_batch(
    r: InteractionMatrix,
    users,
    schedules: tuple[DiscreteSchedule, ContinuousSchedule],
    t: int,
    disc_rng,
    cont_rng,
    corruption_mode: str = "both",
    neg_sample: int = 0,
    col_rng=None,
) -> CorruptedBatch:
    disc, cont = schedules
    users = np.asarray(users, dtype=np.int64)
    r0 = r.take_rows(users)
    x0 = interaction_features(r0)
    r_t = corrupt_structure(r0, disc, t, disc_rng) if uses_discrete(corruption_mode) else r0
    x_t = corrupt_features(x0, cont, t, cont_rng) if uses_continuous(corruption_mode) else x0
    columns = None
    if neg_sample and neg_sample < r.num_items:
        rng = as_generator(col_rng if col_rng is not None else 0)
        sampled = rng.choice(r.num_items, size=neg_sample, replace=False)
        columns = np.union1d(sampled, r0.csr.indices)
    return CorruptedBatch(users, int(t), r0, x0, r_t, x_t, columns)


@dataclass
class BatchLoss:
    ugc: float
    diff: float
    total: float
    grads: dict | None = None


def batch_objective(params: ModelParams, batch: CorruptedBatch, cfg: TrainConfig, with_grad=True) -> BatchLoss:
    """Forward pass of lambda1 * L_ugc + L_diff on a frozen batch, optionally with gradients."""
    th = {k: (ag.parameter(v) if with_grad else ag.Tensor(v)) for k, v in params.arrays().items()}
    x1, x2 = views_t(batch.r_t, batch.x_t, th)
    l_ugc = ugc_loss_t(x1, x2, cfg.tau)
    xbar = unified_t(x1, x2, th, batch.users, batch.t)
    scores, _ = denoise_t(xbar, batch.r_t, th, cfg.layers, cfg.readout)
    feats = reconstruct_features_t(scores)
    target = batch.r0.toarray()
    if batch.columns is not None:
        structural = (scores[:, batch.columns] - target[:, batch.columns]).square().mean()
    else:
        structural = (scores - target).square().mean()
    l_diff = structural + (feats - batch.x0).square().mean()
    total = l_ugc * cfg.lambda1 + l_diff
    value = float(total.value)
    if not np.isfinite(value):
        raise NonFiniteLossError(
            f"non-finite loss at step t={batch.t} (ugc={float(l_ugc.value)}, diff={float(l_diff.value)})"
        )
    grads = None
    if with_grad:
        total.backward()
        grads = {k: (v.grad if v.grad is not None else np.zeros(v.shape)) for k, v in th.items()}
    return BatchLoss(float(l_ugc.value), float(l_diff.value), value, grads)


def grad(
    params: ModelParams,
    batch_users,
    r: InteractionMatrix,
    schedules,
    t: int,
    seed,
    cfg: TrainConfig,
) -> dict[str, np.ndarray]:
    """Gradient of the composite loss for one batch; corruption noise is drawn from ``seed``."""
    if len(batch_users) == 0:
        raise ValueError("batch must contain at least one user")
    root = np.random.SeedSequence(seed)
    g_disc, g_cont, g_col = (np.random.Generator(np.random.PCG64(s)) for s in root.spawn(3))
    batch = sample_batch(
        r, batch_users, schedules, t, g_disc, g_cont, cfg.corruption_mode, cfg.neg_sample, g_col
    )
    return batch_objective(params, batch, cfg).grads


def finite_diff_report(
    params: ModelParams,
    batch: CorruptedBatch,
    cfg: TrainConfig,
    eps: float = 1e-5,
    coords_per_group: int = 8,
    seed=0,
    grad_fn=None,
) -> dict[str, float]:
    """Max relative error between analytic and central-difference partials, per parameter group.

    ``grad_fn(params, batch, cfg)`` overrides the analytic gradient (used to
    prove the harness catches a broken gradient).
    """
    rng = as_generator(seed)
    analytic = (grad_fn or (lambda p, b, c: batch_objective(p, b, c).grads))(params, batch, cfg)
    report = {}
    for name, value in params.arrays().items():
        flat_size = value.size
        picks = rng.choice(flat_size, size=min(coords_per_group, flat_size), replace=False)
        worst = 0.0
        for flat in picks:
            idx = np.unravel_index(flat, value.shape)
            bumped = params.copy()
            arr = getattr(bumped, name)
            orig = arr[idx]
            arr[idx] = orig + eps
            up = batch_objective(bumped, batch, cfg, with_grad=False).total
            arr[idx] = orig - eps
            down = batch_objective(bumped, batch, cfg, with_grad=False).total
            numeric = (up - down) / (2 * eps)
            a = analytic[name][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return report


def finite_diff_check(params: ModelParams, batch: CorruptedBatch, cfg: TrainConfig, eps: float = 1e-5, **kw) -> float:
    return max(finite_diff_report(params, batch, cfg, eps, **kw).values())


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptimizerState":
        arrays = params.arrays()
        return cls({k: np.zeros_like(a) for k, a in arrays.items()}, {k: np.zeros_like(a) for k, a in arrays.items()})


def adam_step(params: ModelParams, grads: dict, state: OptimizerState, lr: float):
    """Bias-corrected Adam; returns new (params, state) without mutating the inputs."""
    step = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for name, value in params.arrays().items():
        g = grads[name]
        m = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1**step)
        v_hat = v / (1 - ADAM_BETA2**step)
        new_p[name] = value - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[name], new_v[name] = m, v
    return ModelParams(**new_p), OptimizerState(new_m, new_v, step)


@dataclass
class TrainResult:
    params: ModelParams
    schedules: tuple[DiscreteSchedule, ContinuousSchedule]
    trace: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    diverged: bool = False
    stopped_early: bool = False
    initial_params: ModelParams | None = None


def sample_step(rng: np.random.Generator, steps: int) -> int:
    """Diffusion step t drawn uniformly from 1..T."""
    return int(rng.integers(1, steps + 1))


def training_streams(seed: int):
    """Independent generators for (init, discrete, continuous, step, batching, column) draws."""
    root = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(6)]


def train(
    r: InteractionMatrix,
    cfg: TrainConfig,
    val: InteractionMatrix | None = None,
    validate=None,
) -> TrainResult:
    """Training loop: per batch, sample t, corrupt, denoise, Adam step.

    ``validate(params, schedules) -> float`` scores a candidate (higher is
    better); when given, the best-scoring parameters are returned and the
    loop stops after ``cfg.patience`` epochs without improvement.
    """
    if r.nnz < 1:
        raise ValueError("training graph has no interactions")
    g_init, g_disc, g_cont, g_step, g_batch, g_col = training_streams(cfg.seed)
    schedules = make_schedules(cfg.steps, cfg.scc, cfg.sdc, marginal_from_graph(r))
    params = init_params(
        r.num_users, r.num_items, r.num_items, cfg.dim, cfg.effective_proj_dim, cfg.steps, cfg.step_dim, g_init
    )
    result = TrainResult(params, schedules, initial_params=params.copy())
    state = OptimizerState.zeros_like(params)
    best_score, best_params, stale = -np.inf, params, 0
    m = r.num_users
    for epoch in range(1, cfg.epochs + 1):
        order = g_batch.permutation(m)
        sums = np.zeros(3)
        batches = 0
        try:
            for lo in range(0, m, cfg.batch_size):
                users = np.sort(order[lo : lo + cfg.batch_size])
                t = sample_step(g_step, cfg.steps)
                batch = sample_batch(
                    r, users, schedules, t, g_disc, g_cont, cfg.corruption_mode, cfg.neg_sample, g_col
                )
                out = batch_objective(params, batch, cfg)
                new_params, new_state = adam_step(params, out.grads, state, cfg.lr)
                if not new_params.is_finite():
                    raise NonFiniteLossError(f"parameters became non-finite at epoch {epoch}")
                params, state = new_params, new_state
                sums += (out.ugc, out.diff, out.total)
                batches += 1
        except NonFiniteLossError as exc:
            log.warning("training diverged: %s; keeping last good parameters", exc)
            result.diverged = True
            break
        row = {"epoch": epoch, "ugc": sums[0] / batches, "diff": sums[1] / batches, "total": sums[2] / batches}
        if validate is not None:
            score = float(validate(params, schedules))
            row["val_ndcg"] = score
            if score > best_score:
                best_score, best_params, stale = score, params, 0
                result.best_epoch = epoch
            else:
                stale += 1
        result.trace.append(row)
        log.info("epoch %d: %s", epoch, row)
        if validate is not None and cfg.patience and stale >= cfg.patience:
            result.stopped_early = True
            break
    if validate is not None and np.isfinite(best_score):
        result.params = best_params
    else:
        result.params = params
        result.best_epoch = len(result.trace)
    return result


def write_trace(trace: list[dict], path, label: str = "GDMCF") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "epoch", "L_ugc", "L_diff", "total", "val_ndcg@20"])
        for row in trace:
            val = row.get("val_ndcg")
            w.writerow(
                [label, row["epoch"], repr(float(row["ugc"])), repr(float(row["diff"])), repr(float(row["total"])),
                 "" if val is None else repr(float(val))]
            )
