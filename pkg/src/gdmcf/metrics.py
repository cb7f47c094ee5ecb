"""Recall@K / NDCG@K, full-split evaluation and the long-tail user slice."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .graph import InteractionMatrix
from .inference import RecommendationList, rank_topk

ALL_USERS = "all"
LONGTAIL = "longtail-bottom-20%"


def truth_sets(r: InteractionMatrix) -> list[set]:
    return [set(r.row(u).tolist()) for u in range(r.num_users)]


def _check_truth(recs: RecommendationList, truth) -> None:
    if len(recs) != len(truth):
        raise ValueError("recommendations and truth cover different user counts")
    if not any(len(t) for t in truth):
        raise ValueError("every user has an empty relevant set")


def recall_at_k(recs: RecommendationList, truth, k: int) -> float:
    """Hits summed over users divided by relevant items summed over users."""
    _check_truth(recs, truth)
    hits = 0
    total = 0
    for items, rel in zip(recs.items, truth):
        if not rel:
            continue
        hits += sum(1 for i in items[:k] if int(i) in rel)
        total += len(rel)
    return hits / total


_DISCOUNT = 1.0 / np.log2(np.arange(2, 4096 + 2))


def _discounts(n: int) -> np.ndarray:
    if n <= _DISCOUNT.size:
        return _DISCOUNT[:n]
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at_k(recs: RecommendationList, truth, k: int) -> float:
    """Binary-gain NDCG averaged over users with a nonempty relevant set."""
    _check_truth(recs, truth)
    disc = _discounts(k)
    vals = []
    for items, rel in zip(recs.items, truth):
        if not rel:
            continue
        top = items[:k]
        gains = np.fromiter((int(i) in rel for i in top), dtype=np.float64, count=len(top))
        dcg = float(gains @ disc[: len(top)])
        idcg = float(disc[: min(k, len(rel))].sum())
        vals.append(dcg / idcg)
    return float(np.mean(vals))


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)  # k -> {"recall": .., "ndcg": ..}
    num_users: int = 0
    label: str = ALL_USERS

    def to_rows(self):
        for k in sorted(self.metrics):
            yield {"slice": self.label, "k": k, "users": self.num_users, **self.metrics[k]}

    def table(self) -> str:
        lines = [f"[{self.label}] users={self.num_users}", f"{'K':>4}  {'Recall':>8}  {'NDCG':>8}"]
        for k in sorted(self.metrics):
            m = self.metrics[k]
            lines.append(f"{k:>4}  {m['recall']:8.4f}  {m['ndcg']:8.4f}")
        return "\n".join(lines)


def write_reports(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["slice", "k", "users", "recall", "ndcg"])
        w.writeheader()
        for rep in reports:
            for row in rep.to_rows():
                w.writerow({**row, "recall": repr(row["recall"]), "ndcg": repr(row["ndcg"])})


def evaluate_recommendations(recs: RecommendationList, truth, ks, users=None, label=ALL_USERS) -> EvalReport:
    if users is not None:
        users = np.asarray(users)
        recs = RecommendationList(
            [recs.items[u] for u in users], [recs.scores[u] for u in users], recs.flagged[users]
        )
        truth = [truth[u] for u in users]
    ks = sorted(set(int(k) for k in ks))
    report = EvalReport(num_users=sum(1 for t in truth if t), label=label)
    if users is not None and report.num_users == 0:
        # a slice can legitimately hold no held-out items; report NaN rather than fail
        report.metrics = {k: {"recall": float("nan"), "ndcg": float("nan")} for k in ks}
        return report
    for k in ks:
        report.metrics[k] = {"recall": recall_at_k(recs, truth, k), "ndcg": ndcg_at_k(recs, truth, k)}
    return report


def evaluate(scores: np.ndarray, truth, ks, mask: InteractionMatrix | None = None, users=None, label=ALL_USERS) -> EvalReport:
    """Rank once at max(ks) with training items masked, then score every K."""
    if isinstance(truth, InteractionMatrix):
        truth = truth_sets(truth)
    if len(truth) != np.shape(scores)[0]:
        raise ValueError("truth and scores disagree on user count")
    recs = rank_topk(scores, mask, max(ks))
    return evaluate_recommendations(recs, truth, ks, users, label)


def longtail_users(train_degrees, fraction: float = 0.2) -> np.ndarray:
    """Bottom ``fraction`` of users by training degree; ties go to smaller ids."""
    deg = np.asarray(train_degrees)
    if deg.size < 5:
        raise ValueError("long-tail slice needs at least 5 users")
    n = int(np.floor(fraction * deg.size))
    order = np.lexsort((np.arange(deg.size), deg))
    return np.sort(order[:n])


def longtail_slice(scores, truth, ks, mask: InteractionMatrix, train_degrees=None) -> EvalReport:
    if train_degrees is None:
        train_degrees = mask.row_counts()
    users = longtail_users(train_degrees)
    return evaluate(scores, truth, ks, mask, users=users, label=LONGTAIL)
