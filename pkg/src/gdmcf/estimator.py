"""scikit-learn style front end: ``GDMCF().fit(R).recommend(k=20)``."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .config import TrainConfig, train_config_from_strings, train_config_to_dict
from .dataio import Checkpoint, load_checkpoint, save_checkpoint
from .graph import InteractionMatrix
from .inference import RecommendationList, generate, rank_topk
from .metrics import evaluate, truth_sets
from .training import train


def check_interactions(X, shape=None) -> InteractionMatrix:
    """Coerce dense/sparse/InteractionMatrix input to a binary InteractionMatrix.

    Any positive entry counts as an interaction; negative or non-finite
    entries are rejected.
    """
    if isinstance(X, InteractionMatrix):
        r = X
    else:
        arr = check_array(X, accept_sparse="csr", dtype=np.float64, ensure_min_samples=1, ensure_min_features=1)
        values = arr.data if sp.issparse(arr) else arr
        if np.any(values < 0):
            raise ValueError("interaction values must be non-negative")
        r = InteractionMatrix(arr)
    if shape is not None and r.shape != tuple(shape):
        raise ValueError(f"expected a {shape[0]} x {shape[1]} interaction matrix, got {r.shape}")
    return r


class GDMCF(BaseEstimator):
    """Graph diffusion model for collaborative filtering.

    Hyperparameters mirror :class:`gdmcf.config.TrainConfig`. ``fit`` takes a
    user x item interaction matrix (any positive entry is an interaction);
    ``decision_function`` returns user x item scores from guided reverse
    generation, and ``recommend`` ranks them with training items masked.
    """

    def __init__(
        self,
        epochs=100,
        batch_size=400,
        lr=0.001,
        lambda1=0.1,
        steps=5,
        tau=0.2,
        layers=2,
        dim=1000,
        proj_dim=0,
        step_dim=10,
        scc=0.1,
        sdc=0.0008,
        corruption_mode="both",
        user_active=True,
        readout="mean",
        neg_sample=0,
        patience=10,
        eval_k=20,
        seed=0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lambda1 = lambda1
        self.steps = steps
        self.tau = tau
        self.layers = layers
        self.dim = dim
        self.proj_dim = proj_dim
        self.step_dim = step_dim
        self.scc = scc
        self.sdc = sdc
        self.corruption_mode = corruption_mode
        self.user_active = user_active
        self.readout = readout
        self.neg_sample = neg_sample
        self.patience = patience
        self.eval_k = eval_k
        self.seed = seed

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    @property
    def variant(self) -> str:
        return self.train_config().variant

    def fit(self, X, y=None, X_val=None):
        """Train on interactions ``X``; with ``X_val``, keep the epoch with best validation NDCG."""
        cfg = self.train_config()
        r = check_interactions(X)
        validate = None
        if X_val is not None:
            val = check_interactions(X_val, r.shape)
            truth = truth_sets(val)
            if any(truth):

                def validate(params, schedules):
                    scores = self._generate(r, params, schedules, cfg, cfg.seed).scores
                    return evaluate(scores, truth, [cfg.eval_k], mask=r).metrics[cfg.eval_k]["ndcg"]

        result = train(r, cfg, validate=validate)
        self.params_ = result.params
        self.schedules_ = result.schedules
        self.trace_ = result.trace
        self.best_epoch_ = result.best_epoch
        self.diverged_ = result.diverged
        self.train_matrix_ = r
        self.n_users_, self.n_items_ = r.shape
        return self

    @staticmethod
    def _generate(r, params, schedules, cfg: TrainConfig, seed, user_active=None):
        return generate(
            r,
            params,
            schedules,
            layers=cfg.layers,
            readout=cfg.readout,
            corruption_mode=cfg.corruption_mode,
            user_active=cfg.user_active if user_active is None else user_active,
            batch_size=cfg.batch_size,
            seed=seed,
        )

    def _observed(self, X):
        check_is_fitted(self, "params_")
        if X is None:
            if not hasattr(self, "train_matrix_"):
                raise ValueError("no observed interactions: pass X or load with train_matrix")
            return self.train_matrix_
        return check_interactions(X, (self.n_users_, self.n_items_))

    def generate(self, X=None, seed=None, user_active=None):
        """Full generation result (scores plus per-step edge counts)."""
        r = self._observed(X)
        self.last_generation_ = self._generate(
            r, self.params_, self.schedules_, self.train_config(), self.seed if seed is None else seed, user_active
        )
        return self.last_generation_

    def decision_function(self, X=None, seed=None):
        return self.generate(X, seed).scores

    def recommend(self, X=None, k=20, seed=None) -> RecommendationList:
        r = self._observed(X)
        return rank_topk(self.decision_function(r, seed), r, k)

    def predict(self, X=None, k=20, seed=None) -> np.ndarray:
        """Top-k item ids per user as an (n_users, k) array, padded with -1."""
        recs = self.recommend(X, k, seed)
        out = np.full((len(recs), k), -1, dtype=np.int64)
        for u, items in enumerate(recs.items):
            out[u, : items.size] = items
        return out

    def score(self, X_test, X=None, k=None):
        """NDCG@k of held-out interactions ``X_test`` (default k = ``eval_k``)."""
        k = k or self.eval_k
        r = self._observed(X)
        truth = check_interactions(X_test, r.shape)
        return evaluate(self.decision_function(r), truth, [k], mask=r).metrics[k]["ndcg"]

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        cfg = {k: ("true" if v is True else "false" if v is False else v) for k, v in train_config_to_dict(self.train_config()).items()}
        save_checkpoint(Checkpoint(self.params_, self.schedules_, cfg, self.seed), path)

    @classmethod
    def load(cls, path, train_matrix=None) -> "GDMCF":
        ckpt = load_checkpoint(path)
        cfg = train_config_from_strings(ckpt.config)
        est = cls(**train_config_to_dict(cfg))
        est.params_ = ckpt.params
        est.schedules_ = ckpt.schedules
        est.n_users_, est.n_items_ = ckpt.params.num_users, ckpt.params.num_items
        est.trace_ = []
        if train_matrix is not None:
            est.train_matrix_ = check_interactions(train_matrix, (est.n_users_, est.n_items_))
        return est

    def __sklearn_is_fitted__(self):
        return hasattr(self, "params_")

