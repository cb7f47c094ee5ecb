"""Numeric self-checks run by ``gdmcf selftest``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .config import TrainConfig
from .corruption import DiscreteSchedule, cumulative_transition, make_schedules, marginal_from_graph, transition_matrix
from .denoiser import init_params
from .graph import DegreeStats, InteractionMatrix
from .inference import rank_topk, sample_activation
from .metrics import ndcg_at_k, recall_at_k
from .training import finite_diff_report, sample_batch, sample_step, training_streams


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} measured={self.measured:.3e}  tolerance={self.tolerance:.1e}"


def check_closed_form(num_schedules=50, steps=100, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_schedules):
        p = rng.random()
        s = DiscreteSchedule(rng.uniform(0.5, 1.0, size=steps), [1 - p, p])
        prod = np.eye(2)
        for t in range(1, steps + 1):
            prod = prod @ transition_matrix(s, t)
            worst = max(worst, float(np.abs(prod - cumulative_transition(s, t)).max()))
    return CheckResult("closed-form transition", worst < 1e-12, worst, 1e-12)


def small_gradient_problem(seed: int, users=12, items=12, dim=8, steps=5):
    """Random 12x12 graph, d=8 model and a frozen corrupted batch for gradient checks."""
    rng = np.random.default_rng(seed)
    dense = rng.random((users, items)) < 0.3
    dense[np.arange(users), rng.integers(0, items, users)] = True
    r = InteractionMatrix(dense.astype(float))
    cfg = TrainConfig(dim=dim, steps=steps, batch_size=users, lambda1=0.1, tau=0.5, sdc=0.2, scc=0.2)
    schedules = make_schedules(steps, cfg.scc, cfg.sdc, marginal_from_graph(r))
    _, g_disc, g_cont, g_step, *_ = training_streams(seed)
    params = init_params(users, items, items, dim, dim, steps, seed=seed)
    t = sample_step(g_step, steps)
    batch = sample_batch(r, np.arange(users), schedules, t, g_disc, g_cont)
    return params, batch, cfg


def check_gradients(seeds=range(3), tol=1e-4, grad_fn=None) -> CheckResult:
    worst = 0.0
    for seed in seeds:
        params, batch, cfg = small_gradient_problem(seed)
        report = finite_diff_report(params, batch, cfg, eps=1e-5, seed=seed, grad_fn=grad_fn)
        worst = max(worst, max(report.values()))
    return CheckResult("gradient vs finite differences", worst < tol, worst, tol)


def brute_recall(ranked, truth, k) -> Fraction:
    hits = total = 0
    for items, rel in zip(ranked, truth):
        if rel:
            hits += len(set(list(items)[:k]) & rel)
            total += len(rel)
    return Fraction(hits, total)


def brute_ndcg(ranked, truth, k) -> float:
    per_user = []
    for items, rel in zip(ranked, truth):
        if not rel:
            continue
        dcg = sum(1.0 / math.log2(pos + 2) for pos, i in enumerate(list(items)[:k]) if i in rel)
        idcg = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(rel))))
        per_user.append(dcg / idcg)
    return sum(per_user) / len(per_user)


def brute_rank(scores, mask, k):
    ranked = []
    for u in range(scores.shape[0]):
        cand = [i for i in range(scores.shape[1]) if not mask[u, i]]
        cand.sort(key=lambda i: (-scores[u, i], i))
        ranked.append(cand[:k])
    return ranked


def check_metric_oracles(instances=100, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        m, n = int(rng.integers(1, 51)), int(rng.integers(2, 101))
        k = int(rng.integers(1, n + 1))
        scores = rng.integers(0, 5, size=(m, n)).astype(float)  # coarse values force ties
        mask = rng.random((m, n)) < 0.2
        truth = [set(np.flatnonzero((rng.random(n) < 0.1) & ~mask[u]).tolist()) for u in range(m)]
        if not any(truth):
            truth[0] = {int(np.flatnonzero(~mask[0])[0])} if (~mask[0]).any() else set()
            if not any(truth):
                continue
        recs = rank_topk(scores, InteractionMatrix(mask.astype(float)), k)
        ranked = brute_rank(scores, mask, k)
        if [list(r) for r in recs.items] != ranked:
            return CheckResult("metric oracles", False, 1.0, 0.0)
        if recall_at_k(recs, truth, k) != float(brute_recall(ranked, truth, k)):
            return CheckResult("metric oracles", False, 1.0, 0.0)
        worst = max(worst, abs(ndcg_at_k(recs, truth, k) - brute_ndcg(ranked, truth, k)))
    return CheckResult("metric oracles", worst <= 1e-12, worst, 1e-12)


def check_activation(trials=10_000, seed=0) -> CheckResult:
    ratios = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    degrees = (ratios * 4).astype(np.int64)
    deg = DegreeStats(degrees, 4, np.zeros(degrees.size), degrees.size)
    counts = np.zeros(ratios.size)
    for t in range(trials):
        counts += sample_activation(deg, seed, t)
    worst = float(np.abs(counts / trials - ratios).max())
    return CheckResult("activation frequency", worst <= 0.01, worst, 0.01)


def run_selftest(grad_fn=None, out=print) -> bool:
    results = [
        check_closed_form(),
        check_gradients(grad_fn=grad_fn),
        check_metric_oracles(),
        check_activation(),
    ]
    for res in results:
        out(res.line())
    ok = all(r.passed for r in results)
    out(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return ok
