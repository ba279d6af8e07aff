"""Post-metric correction baselines for the binary fairness gap score.

These rescale a proxy score (computed from predicted labels) using the
classifier's error rates instead of correcting the prevalence estimates
themselves. Binary-only by construction. In the second correction's ``y``
term the source formula ends with an undefined symbol ``b``; it is read here
as ``beta`` (the positive-class prior), the only prior in scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RATE_SOURCES = ("classifier_training_set", "query_biased_lq")
_DENOM_TOL = 1e-6
_XY_TOL = 1e-9


@dataclass(frozen=True)
class PmcRates:
    """p = P(predicted 1 | true 0), w = P(predicted 0 | true 1), beta = P(true 1)."""

    p: float
    w: float
    beta: float
    source: str = "classifier_training_set"

    def __post_init__(self):
        for name, value in (("p", self.p), ("w", self.w), ("beta", self.beta)):
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.source not in RATE_SOURCES:
            raise ValueError(f"unknown rate source {self.source!r}")


def estimate_pmc_rates(labels, predictions, source: str) -> PmcRates:
    """Empirical error rates and positive prior from paired labels/predictions."""
    y = np.asarray(labels, dtype=int)
    yhat = np.asarray(predictions, dtype=int)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError("labels and predictions must be aligned 1-d arrays")
    if not (np.all((y == 0) | (y == 1)) and np.all((yhat == 0) | (yhat == 1))):
        raise ValueError("PMC rates are binary-only")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present to estimate rates")
    p = float((yhat[y == 0] == 1).mean())
    w = float((yhat[y == 1] == 0).mean())
    return PmcRates(p=p, w=w, beta=n_pos / y.size, source=source)


def pmc_b_correct(rnd_proxy: float, rates: PmcRates) -> float:
    """proxy / ((1-p) - w), clipped into [0, 1]."""
    denom = (1.0 - rates.p) - rates.w
    if abs(denom) < _DENOM_TOL:
        raise ValueError("degenerate PMC denominator")
    return min(max(rnd_proxy / denom, 0.0), 1.0)


def pmc_d_correct(rnd_proxy: float, rates: PmcRates) -> float:
    """proxy * ((1-w)*beta/x - w*beta/y), clipped into [0, 1],
    with x = (1-w)*beta + p*(1-beta) and y = w*beta + (1-p)*(1-beta)."""
    p, w, beta = rates.p, rates.w, rates.beta
    x = (1.0 - w) * beta + p * (1.0 - beta)
    y = w * beta + (1.0 - p) * (1.0 - beta)
    if x < _XY_TOL or y < _XY_TOL:
        raise ValueError("degenerate PMC mixture terms")
    factor = (1.0 - w) * beta / x - w * beta / y
    return min(max(rnd_proxy * factor, 0.0), 1.0)
