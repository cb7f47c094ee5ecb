"""Reference rankers for sanity comparisons."""

import numpy as np

from .corruption import as_generator
from .graph import InteractionMatrix


def popularity_scores(train: InteractionMatrix) -> np.ndarray:
    """Every user gets the items' training interaction counts."""
    counts = np.asarray(train.csr.sum(axis=0)).ravel()
    return np.tile(counts, (train.num_users, 1))


def random_scores(num_users: int, num_items: int, seed=0) -> np.ndarray:
    return as_generator(seed).random((num_users, num_items))


def random_recall_expectation(train: InteractionMatrix, truth: InteractionMatrix, k: int) -> float:
    """Expected micro Recall@k of a uniform random ranking over each user's unmasked items.

    A user with ``a`` unmasked items and ``h`` held-out ones expects
    ``h * min(k, a) / a`` hits.
    """
    available = train.num_items - train.row_counts()
    held = truth.row_counts()
    ok = (held > 0) & (available > 0)
    hits = held[ok] * np.minimum(k, available[ok]) / available[ok]
    return float(hits.sum() / held.sum())
