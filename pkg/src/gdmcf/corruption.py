"""Forward corruption: discrete edge-state transitions and Gaussian feature noise.

Randomness comes from numpy's ``Generator`` with the PCG64 bit generator.
Functions accept either an integer seed or an existing generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import InteractionMatrix

ABSENT, PRESENT = 0, 1


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class DiscreteSchedule:
    """Per-step retention weights alpha_t for the 2-state edge chain."""

    alpha: np.ndarray
    marginal: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64).ravel()
        m = np.asarray(self.marginal, dtype=np.float64).ravel()
        if alpha.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(alpha <= 0) or np.any(alpha > 1) or not np.all(np.isfinite(alpha)):
            raise ValueError("alpha must lie in (0, 1]")
        if m.shape != (2,) or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("marginal must be a length-2 probability row")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "marginal", m)

    @property
    def T(self) -> int:
        return self.alpha.size

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    def with_marginal(self, marginal) -> "DiscreteSchedule":
        return DiscreteSchedule(self.alpha, marginal)


@dataclass(frozen=True, eq=False)
class ContinuousSchedule:
    """Per-step Gaussian noise variances beta_t."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64).ravel()
        if beta.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(beta <= 0) or np.any(beta >= 1) or not np.all(np.isfinite(beta)):
            raise ValueError("beta must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)

    @property
    def T(self) -> int:
        return self.beta.size

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(1.0 - self.beta)


def _check_step(t: int, T: int) -> int:
    t = int(t)
    if not 1 <= t <= T:
        raise ValueError(f"step {t} outside 1..{T}")
    return t


def marginal_from_graph(r: InteractionMatrix) -> np.ndarray:
    cells = r.num_users * r.num_items
    if cells == 0:
        raise ValueError("interaction matrix has an empty dimension")
    p = r.nnz / cells
    return np.array([1.0 - p, p])


def _mix(weight: float, m: np.ndarray) -> np.ndarray:
    return weight * np.eye(2) + (1.0 - weight) * np.tile(m, (2, 1))


def transition_matrix(s: DiscreteSchedule, t: int) -> np.ndarray:
    """One-step matrix Q_t = a_t I + (1 - a_t) 1 m."""
    t = _check_step(t, s.T)
    return _mix(s.alpha[t - 1], s.marginal)


def cumulative_transition(s: DiscreteSchedule, t: int) -> np.ndarray:
    """Closed form of Q_1 ... Q_t, valid because (1 m)^2 = 1 m."""
    t = _check_step(t, s.T)
    return _mix(s.alpha_bar[t - 1], s.marginal)


def transition_cells(r: InteractionMatrix, q: np.ndarray, rng, rows=None) -> InteractionMatrix:
    """Move every cell of ``r`` one step through the 2x2 chain ``q``.

    Present edges survive with probability q[1,1]; absent cells switch on
    with probability q[0,1]. Instead of touching all M*N cells, each row
    draws a binomial count of switch-ons and places them uniformly among its
    absent cells. Rows outside ``rows`` (if given) are copied unchanged.
    """
    rng = as_generator(rng)
    csr = r.csr
    m, n = r.shape
    keep_p = float(q[PRESENT, PRESENT])
    add_p = float(q[ABSENT, PRESENT])
    counts = np.diff(csr.indptr)
    active = np.ones(m, dtype=bool) if rows is None else np.asarray(rows, dtype=bool)

    keep = np.ones(csr.nnz, dtype=bool)
    row_of = np.repeat(np.arange(m), counts)
    live = active[row_of]
    keep[live] = rng.random(int(live.sum())) < keep_p

    n_add = np.zeros(m, dtype=np.int64)
    if add_p > 0:
        n_add[active] = rng.binomial(n - counts[active], add_p)
    new_rows, new_cols = [], []
    for u in np.flatnonzero(n_add):
        present = csr.indices[csr.indptr[u] : csr.indptr[u + 1]]
        picks = np.sort(rng.choice(n - present.size, size=n_add[u], replace=False))
        # j-th absent column = j + number of present columns at or before it
        cols = picks + np.searchsorted(present - np.arange(present.size), picks, side="right")
        new_rows.append(np.full(cols.size, u))
        new_cols.append(cols)

    rows_out = np.concatenate([row_of[keep]] + new_rows)
    cols_out = np.concatenate([csr.indices[keep].astype(np.int64)] + new_cols)
    return InteractionMatrix(
        sp.csr_matrix((np.ones(rows_out.size), (rows_out, cols_out)), shape=(m, n))
    )


def corrupt_structure(r0: InteractionMatrix, s: DiscreteSchedule, t: int, seed) -> InteractionMatrix:
    """Sample R_t ~ q(R_t | R_0) cell-wise from the cumulative transition."""
    qbar = cumulative_transition(s, t)
    if qbar[ABSENT, PRESENT] == 0.0 and qbar[PRESENT, PRESENT] == 1.0:
        return r0
    return transition_cells(r0, qbar, seed)


def corrupt_features(x0: np.ndarray, s: ContinuousSchedule, t: int, seed) -> np.ndarray:
    t = _check_step(t, s.T)
    rng = as_generator(seed)
    ab = s.alpha_bar[t - 1]
    eps = rng.standard_normal(np.shape(x0))
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * eps


def noise_features_step(x_prev: np.ndarray, s: ContinuousSchedule, t: int, seed) -> np.ndarray:
    """Single transition X_{t-1} -> X_t."""
    t = _check_step(t, s.T)
    rng = as_generator(seed)
    b = s.beta[t - 1]
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * rng.standard_normal(np.shape(x_prev))


CONTINUOUS_FLOOR = 1e-5


def make_schedules(
    steps: int,
    scc: float = 0.1,
    sdc: float = 0.0008,
    marginal=(1.0, 0.0),
    shape: str = "linear",
) -> tuple[DiscreteSchedule, ContinuousSchedule]:
    """Build both noise schedules from their scale knobs.

    Continuous variances rise linearly from ``min(1e-5, scc)`` so that the
    last step equals ``scc``; discrete retention falls linearly as
    ``1 - sdc * t / T``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if shape != "linear":
        raise ValueError(f"unknown schedule shape {shape!r}")
    if not 0 < scc < 1:
        raise ValueError("continuous scale must lie in (0, 1)")
    if not 0 <= sdc < 1:
        raise ValueError("discrete scale must lie in [0, 1)")
    frac = np.arange(1, steps + 1) / steps
    lo = min(CONTINUOUS_FLOOR, scc)
    beta = lo + (scc - lo) * frac
    alpha = 1.0 - sdc * frac
    return DiscreteSchedule(alpha, marginal), ContinuousSchedule(beta)
