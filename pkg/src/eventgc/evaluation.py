"""Scores for an estimated causality matrix against ground truth, and hold-out fit.

Both ranking metrics use all ``K * K`` entries, the diagonal included.
AUC binarizes the truth strictly at zero; Kendall's tau uses the weights.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .npp import dataset_nll

__all__ = [
    "EvalError",
    "EvalReport",
    "auc",
    "kendall_tau",
    "holdout_nll",
    "poisson_nll",
    "evaluate",
]


class EvalError(ValueError):
    """Raised when a metric is undefined for its inputs."""


def _pair(scores, truth):
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if scores.shape != truth.shape:
        raise EvalError(f"shape mismatch: scores {scores.shape} vs truth {truth.shape}")
    if not (np.all(np.isfinite(scores)) and np.all(np.isfinite(truth))):
        raise EvalError("non-finite entries")
    return scores.ravel(), truth.ravel()


def auc(scores, truth):
    """Probability a positive entry (truth > 0) outscores a non-positive one; ties count half."""
    s, t = _pair(scores, truth)
    pos = t > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvalError("AUC needs both positive and non-positive truth entries")
    # Mann-Whitney U from midranks
    ranks = stats.rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def kendall_tau(scores, truth):
    """Tie-corrected Kendall tau-b over flattened entries."""
    s, t = _pair(scores, truth)
    if s.size < 2:
        raise EvalError("Kendall tau needs at least two entries")
    if np.ptp(s) == 0 or np.ptp(t) == 0:
        raise EvalError("Kendall tau undefined for a constant argument")
    return float(stats.kendalltau(s, t, variant="b").statistic)


def holdout_nll(model, dataset):
    """Negative log-likelihood of ``dataset`` under ``model``, per event."""
    n = dataset.num_events() if len(dataset) else 0
    if n == 0:
        raise EvalError("empty test set")
    return dataset_nll(model, dataset) / n


def poisson_nll(train, test):
    """Per-event hold-out NLL of the per-type homogeneous Poisson MLE fitted on ``train``.

    Types never seen in training get a floor rate of half an event over the
    training exposure so the likelihood stays finite.
    """
    n = test.num_events() if len(test) else 0
    if n == 0:
        raise EvalError("empty test set")
    exposure = sum(s.T for s in train.sequences)
    if exposure <= 0:
        raise EvalError("training set has no exposure")
    counts = np.maximum(train.type_counts().astype(np.float64), 0.5)
    lam = counts / exposure
    total = sum(s.T for s in test.sequences) * lam.sum() - np.dot(test.type_counts(), np.log(lam))
    return float(total / n)


@dataclass
class EvalReport:
    auc: float | None
    kendall_tau: float | None
    holdout_nll_per_event: float | None = None
    oriented: bool = False
    baselines: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(estimate, truth, model=None, test=None, config=None):
    """Build an :class:`EvalReport`.

    When the truth has no positive entry but some negative ones (a purely
    inhibitory graph) both matrices are negated before scoring, so AUC asks
    whether the inhibiting pairs are ranked first; tau is unchanged by the
    double negation. ``oriented`` records that this happened.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    oriented = bool(np.all(truth <= 0) and np.any(truth < 0))
    if oriented:
        estimate, truth = -estimate, -truth
    try:
        a = auc(estimate, truth)
    except EvalError:
        a = None
    try:
        tau = kendall_tau(estimate, truth)
    except EvalError:
        tau = None
    nll = holdout_nll(model, test) if model is not None and test is not None else None
    return EvalReport(a, tau, nll, oriented=oriented, config=dict(config or {}))
