"""Independent reference implementations used as test oracles.

Everything here is written with plain loops or dense numpy and shares no
code with the package under test.
"""

import itertools
import math
from fractions import Fraction

import numpy as np


def dense_adjacency(r: np.ndarray) -> np.ndarray:
    m, n = r.shape
    a = np.zeros((m + n, m + n))
    for u in range(m):
        for i in range(n):
            if r[u, i]:
                a[u, m + i] = a[m + i, u] = 1.0
    return a


def dense_normalized(r: np.ndarray) -> np.ndarray:
    a = dense_adjacency(r)
    d = a.sum(axis=1)
    out = np.zeros_like(a)
    for i in range(a.shape[0]):
        for j in range(a.shape[0]):
            if a[i, j]:
                out[i, j] = 1.0 / math.sqrt(d[i] * d[j])
    return out


def power_iteration_radius(mat: np.ndarray, iters=2000, seed=0) -> float:
    v = np.random.default_rng(seed).standard_normal(mat.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = mat @ (mat @ v)  # square to avoid sign oscillation for bipartite spectra
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        lam = math.sqrt(nrm / np.linalg.norm(v))
        v = w / nrm
    return lam


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def dense_scores(zu: np.ndarray, zi: np.ndarray) -> np.ndarray:
    return np.array([[cosine(zu[u], zi[i]) for i in range(zi.shape[0])] for u in range(zu.shape[0])])


def gcn_forward(xbar, fuse, item_embed, r, layers, readout="mean"):
    """Dense forward pass of the denoiser: fuse, propagate, read out, cosine."""
    m = xbar.shape[0]
    z = np.vstack([xbar @ fuse, item_embed])
    norm = dense_normalized(r)
    hops = [z]
    for _ in range(layers):
        hops.append(norm @ hops[-1])
    out = np.mean(hops, axis=0) if readout == "mean" else hops[-1]
    return dense_scores(out[:m], out[m:])


def infonce(x1: np.ndarray, x2: np.ndarray, tau: float) -> float:
    m = x1.shape[0]
    total = 0.0
    for u in range(m):
        logits = [cosine(x1[u], x2[v]) / tau for v in range(m)]
        mx = max(logits)
        lse = mx + math.log(sum(math.exp(l - mx) for l in logits))
        total += lse - logits[u]
    return total


def matrix_power_chain(mats):
    out = np.eye(2)
    for q in mats:
        out = out @ q
    return out


def posterior_by_enumeration(q_t, qbar_prev, state, p_present):
    """P(r_{t-1}=1 | r_t=state) by summing the joint over (r0, r_{t-1})."""
    joint = {0: 0.0, 1: 0.0}
    for r0, prev in itertools.product((0, 1), (0, 1)):
        p0 = p_present if r0 == 1 else 1.0 - p_present
        joint[prev] += p0 * qbar_prev[r0, prev] * q_t[prev, state]
    z = joint[0] + joint[1]
    return joint[1] / z if z > 0 else 0.0


def recall_exact(ranked, truth, k) -> Fraction:
    hits = total = 0
    for items, rel in zip(ranked, truth):
        if rel:
            hits += sum(1 for i in list(items)[:k] if i in rel)
            total += len(rel)
    return Fraction(hits, total)


def ndcg_exact(ranked, truth, k) -> float:
    vals = []
    for items, rel in zip(ranked, truth):
        if not rel:
            continue
        dcg = sum(1 / math.log2(p + 2) for p, i in enumerate(list(items)[:k]) if i in rel)
        idcg = sum(1 / math.log2(p + 2) for p in range(min(k, len(rel))))
        vals.append(dcg / idcg)
    return sum(vals) / len(vals)


def full_sort_topk(scores, mask, k):
    out = []
    for u in range(scores.shape[0]):
        cand = sorted((i for i in range(scores.shape[1]) if not mask[u, i]), key=lambda i: (-scores[u, i], i))
        out.append(cand[:k])
    return out


def chi2_two_sample(a, b, bins):
    """Two-sample chi-square homogeneity statistic and degrees of freedom."""
    ca, _ = np.histogram(a, bins=bins)
    cb, _ = np.histogram(b, bins=bins)
    keep = (ca + cb) > 0
    ca, cb = ca[keep], cb[keep]
    na, nb = ca.sum(), cb.sum()
    stat = 0.0
    for x, y in zip(ca, cb):
        tot = x + y
        ea, eb = tot * na / (na + nb), tot * nb / (na + nb)
        stat += (x - ea) ** 2 / ea + (y - eb) ** 2 / eb
    return stat, max(int(keep.sum()) - 1, 1)
