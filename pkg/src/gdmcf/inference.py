"""User-active guided generation and top-K ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .config import CORRUPTION_MODES
from .corruption import (
    ContinuousSchedule,
    DiscreteSchedule,
    corrupt_features,
    corrupt_structure,
    transition_cells,
    transition_matrix,
)
from .denoiser import ModelParams, interaction_features, predict_clean
from .graph import DegreeStats, InteractionMatrix, build_adjacency, degree_stats



def uses_discrete(mode: str) -> bool:
    return mode in ("both", "discrete_only")


def uses_continuous(mode: str) -> bool:
    return mode in ("both", "continuous_only")


def check_mode(mode: str) -> str:
    if mode not in CORRUPTION_MODES:
        raise ValueError(f"corruption mode must be one of {CORRUPTION_MODES}, got {mode!r}")
    return mode


def _step_generator(seed, t: int) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(t),))))


def activation_probabilities(deg: DegreeStats) -> np.ndarray:
    if deg.max_user_degree <= 0:
        raise ValueError("maximum user degree is 0; training graph has no edges")
    return deg.degrees[: deg.num_users] / deg.max_user_degree


def sample_activation(deg: DegreeStats, seed, t: int) -> np.ndarray:
    """Bernoulli(d_u / D) per user, reproducible for a given (seed, t)."""
    probs = activation_probabilities(deg)
    rng = _step_generator(seed, t)
    return (rng.random(probs.size) < probs).astype(np.int8)


def guided_edge_update(
    state: InteractionMatrix,
    s: np.ndarray,
    q: np.ndarray,
    seed,
    source: InteractionMatrix | None = None,
) -> InteractionMatrix:
    """Advance activated users' rows through ``q``; other rows stay as they were.

    Each activated row is replaced by one transition of the matching row of
    ``source`` (default: the current state itself). Passing the corrupted
    observed graph as ``source`` lets activated users take on their own
    proposed edges, while inactive users' proposals are discarded.
    """
    s = np.asarray(s)
    if s.shape != (state.num_users,):
        raise ValueError("activation vector length must equal the user count")
    if source is not None and source.shape != state.shape:
        raise ValueError("proposal source must match the state's shape")
    if not s.any():
        return state
    active = s.astype(bool)
    proposal = transition_cells(state if source is None else source, q, seed, rows=active)
    if source is None:
        return proposal
    keep = sp.diags(active.astype(np.float64)) @ proposal.csr
    rest = sp.diags((~active).astype(np.float64)) @ state.csr
    return InteractionMatrix(keep + rest)


@dataclass
class GenerationResult:
    scores: np.ndarray
    edges_per_step: list[int] = field(default_factory=list)

    @property
    def total_edges(self) -> int:
        return int(sum(self.edges_per_step))


def generate(
    r: InteractionMatrix,
    params: ModelParams,
    schedules: tuple[DiscreteSchedule, ContinuousSchedule],
    *,
    x: np.ndarray | None = None,
    layers: int = 2,
    readout: str = "mean",
    corruption_mode: str = "both",
    user_active: bool = True,
    batch_size: int | None = None,
    seed=0,
) -> GenerationResult:
    """Reverse generation from an empty graph, guided by user activity.

    Each step re-corrupts the observed graph for the two views; users
    activated at that step take their proposed edges (one more transition
    of their corrupted row) into the guided edge set, and the denoiser runs
    with the guided edges as the propagation structure. With ``user_active=False`` the corrupted
    structure itself is propagated over. Only the last step's scores are kept.
    """
    check_mode(corruption_mode)
    if not params.is_finite():
        raise ValueError("model parameters contain non-finite values")
    disc, cont = schedules
    if r.shape != (params.num_users, params.num_items):
        raise ValueError("interaction matrix does not match the model's user/item counts")
    x = interaction_features(r) if x is None else np.asarray(x, dtype=np.float64)
    deg = degree_stats(build_adjacency(r))
    if user_active:
        activation_probabilities(deg)

    root = np.random.SeedSequence(seed if not isinstance(seed, np.random.Generator) else seed.integers(2**63))
    g_disc, g_cont, g_act, g_edge = (np.random.Generator(np.random.PCG64(s)) for s in root.spawn(4))

    m = r.num_users
    batch_size = batch_size or m
    chunks = [np.arange(lo, min(lo + batch_size, m)) for lo in range(0, m, batch_size)]
    guided = InteractionMatrix.empty(*r.shape)
    result = GenerationResult(np.zeros(r.shape))
    for t in range(disc.T, 0, -1):
        r_t = corrupt_structure(r, disc, t, g_disc) if uses_discrete(corruption_mode) else r
        x_t = corrupt_features(x, cont, t, g_cont) if uses_continuous(corruption_mode) else x
        if user_active:
            s = sample_activation(deg, g_act, t)
            guided = guided_edge_update(guided, s, transition_matrix(disc, t), g_edge, source=r_t)
            structure = guided
        else:
            structure = r_t
        result.edges_per_step.append(structure.nnz)
        for users in chunks:
            pred = predict_clean(
                r_t.take_rows(users),
                x_t[users],
                params,
                t,
                layers,
                readout,
                structure=structure.take_rows(users),
                users=users,
            )
            result.scores[users] = pred.scores
    return result


@dataclass
class RecommendationList:
    items: list[np.ndarray]
    scores: list[np.ndarray]
    flagged: np.ndarray  # users whose list is shorter than k

    def __len__(self):
        return len(self.items)

    def truncate(self, k: int) -> "RecommendationList":
        return RecommendationList(
            [a[:k] for a in self.items], [s[:k] for s in self.scores], self.flagged.copy()
        )


def rank_topk(scores: np.ndarray, train_mask: InteractionMatrix | None, k: int) -> RecommendationList:
    """Top-k unmasked items per user; ties go to the smaller item id."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a 2-d user x item matrix")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    if k < 1:
        raise ValueError("k must be >= 1")
    m, n = scores.shape
    neg = -scores
    if train_mask is not None:
        if train_mask.shape != scores.shape:
            raise ValueError("mask shape does not match scores")
        rows, cols = train_mask.pairs()
        neg[rows, cols] = np.inf
        available = n - train_mask.row_counts()
    else:
        available = np.full(m, n)
    # stable sort keeps ascending item id among equal scores
    order = np.argsort(neg, axis=1, kind="stable")[:, :k]
    lengths = np.minimum(available, k)
    items = [order[u, : lengths[u]] for u in range(m)]
    vals = [scores[u, items[u]] for u in range(m)]
    return RecommendationList(items, vals, available < k)


def write_recommendations(recs: RecommendationList, path, user_ids=None, item_ids=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "rank", "item_id", "score"])
        for u, (items, vals) in enumerate(zip(recs.items, recs.scores)):
            uid = u if user_ids is None else user_ids[u]
            for rank, (i, v) in enumerate(zip(items, vals), start=1):
                iid = int(i) if item_ids is None else item_ids[int(i)]
                w.writerow([uid, rank, iid, repr(float(v))])


def read_recommendations(path, num_users: int, user_index=None, item_index=None) -> RecommendationList:
    """Inverse of ``write_recommendations``; ``*_index`` map external ids back to rows."""
    items = [[] for _ in range(num_users)]
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            u = int(row["user_id"]) if user_index is None else user_index[row["user_id"]]
            i = int(row["item_id"]) if item_index is None else item_index[row["item_id"]]
            items[u].append((int(row["rank"]), i, float(row["score"])))
    out_items, out_vals = [], []
    for u in range(num_users):
        entries = sorted(items[u])
        out_items.append(np.array([e[1] for e in entries], dtype=np.int64))
        out_vals.append(np.array([e[2] for e in entries]))
    return RecommendationList(out_items, out_vals, np.zeros(num_users, dtype=bool))
