"""Sparse user-item bipartite graph and symmetric-normalized propagation."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class InteractionMatrix:
    """Binary user x item interaction structure stored row-compressed.

    Rows are users, columns items; every stored value is 1, indices within a
    row are sorted and unique.
    """

    def __init__(self, csr, shape=None):
        csr = sp.csr_matrix(csr, shape=shape, dtype=np.float64)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        csr.data[:] = 1.0
        self.csr = csr

    @classmethod
    def from_pairs(cls, users, items, num_users: int, num_items: int) -> "InteractionMatrix":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise ValueError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= num_items):
            raise ValueError("item index out of range")
        coo = sp.coo_matrix(
            (np.ones(users.size), (users, items)), shape=(num_users, num_items)
        )
        return cls(coo.tocsr())

    @classmethod
    def from_rows(cls, rows, num_items: int) -> "InteractionMatrix":
        users = np.repeat(np.arange(len(rows)), [len(r) for r in rows])
        items = np.concatenate([np.asarray(r, dtype=np.int64) for r in rows]) if rows else []
        return cls.from_pairs(users, items, len(rows), num_items)

    @classmethod
    def empty(cls, num_users: int, num_items: int) -> "InteractionMatrix":
        return cls(sp.csr_matrix((num_users, num_items)))

    @property
    def num_users(self) -> int:
        return self.csr.shape[0]

    @property
    def num_items(self) -> int:
        return self.csr.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def row(self, u: int) -> np.ndarray:
        return self.csr.indices[self.csr.indptr[u] : self.csr.indptr[u + 1]]

    def row_counts(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    def take_rows(self, users) -> "InteractionMatrix":
        return InteractionMatrix(self.csr[np.asarray(users)])

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        coo = self.csr.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, InteractionMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.csr.indptr, other.csr.indptr)
            and np.array_equal(self.csr.indices, other.csr.indices)
        )

    def __repr__(self):
        return f"InteractionMatrix(num_users={self.num_users}, num_items={self.num_items}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class BipartiteAdjacency:
    """The (M+N)x(M+N) block matrix [[0, R], [R^T, 0]], kept as its two blocks."""

    r: sp.csr_matrix
    _rt: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def num_users(self) -> int:
        return self.r.shape[0]

    @property
    def num_items(self) -> int:
        return self.r.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @cached_property
    def rt(self) -> sp.csr_matrix:
        # built once per structure; item-side propagation reads it
        if self._rt is not None:
            return self._rt
        return self.r.T.tocsr()

    @property
    def nnz(self) -> int:
        return 2 * self.r.nnz

    def toarray(self) -> np.ndarray:
        m, n = self.r.shape
        a = np.zeros((m + n, m + n))
        a[:m, m:] = self.r.toarray()
        a[m:, :m] = a[:m, m:].T
        return a


@dataclass(frozen=True)
class DegreeStats:
    degrees: np.ndarray
    max_user_degree: int
    inv_sqrt_degrees: np.ndarray
    num_users: int


def build_adjacency(r: InteractionMatrix) -> BipartiteAdjacency:
    return BipartiteAdjacency(r.csr)


def degree_stats(a: BipartiteAdjacency) -> DegreeStats:
    user_deg = np.diff(a.r.indptr)
    item_deg = np.diff(a.rt.indptr)
    degrees = np.concatenate([user_deg, item_deg]).astype(np.int64)
    inv = np.zeros(degrees.shape, dtype=np.float64)
    nz = degrees > 0
    inv[nz] = 1.0 / np.sqrt(degrees[nz])
    max_user = int(user_deg.max()) if user_deg.size else 0
    return DegreeStats(degrees, max_user, inv, a.num_users)


def propagate(z: np.ndarray, a: BipartiteAdjacency, deg: DegreeStats | None = None) -> np.ndarray:
    """Return D^-1/2 A D^-1/2 z for node features ``z`` (users first, then items).

    Each output row is summed by scipy's CSR kernel in ascending column
    order, so results are deterministic. Isolated nodes get zero rows.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != a.num_nodes:
        raise ValueError(f"expected {a.num_nodes} node rows, got shape {z.shape}")
    if deg is None:
        deg = degree_stats(a)
    m = a.num_users
    dinv = deg.inv_sqrt_degrees[:, None]
    scaled = dinv * z
    out = np.empty_like(z)
    out[:m] = a.r @ scaled[m:]
    out[m:] = a.rt @ scaled[:m]
    out *= dinv
    return out


def normalized_adjacency_dense(r: InteractionMatrix) -> np.ndarray:
    """Dense D^-1/2 A D^-1/2, for small graphs and reference checks."""
    a = build_adjacency(r).toarray()
    d = a.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return inv[:, None] * a * inv[None, :]
