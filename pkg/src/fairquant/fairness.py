"""Rank-discounted fairness metrics, quantification error measures, and the
benchmark report container with its CSV/JSON serialization.

Conventions fixed here: natural log for KL, class index 1 is the protected
group in the binary metric, and reported spreads are across queries.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np

from .core import validate_prevalence

KL_SMOOTHING = 1e-6


@dataclass(frozen=True)
class CutoffSchedule:
    """Rank cutoffs K with the 1/log2(k) discount normalizer Z."""

    cutoffs: tuple[int, ...] = (50, 100, 500, 1000)

    def __post_init__(self):
        if len(self.cutoffs) == 0:
            raise ValueError("schedule needs at least one cutoff")
        if any(k < 2 for k in self.cutoffs):
            raise ValueError("cutoffs must be >= 2 (log2 k must be positive)")
        if list(self.cutoffs) != sorted(set(self.cutoffs)):
            raise ValueError("cutoffs must be strictly increasing")

    @property
    def normalizer(self) -> float:
        return sum(1.0 / math.log2(k) for k in self.cutoffs)

    def weights(self) -> dict[int, float]:
        return {k: 1.0 / math.log2(k) for k in self.cutoffs}


def _smooth(vec: np.ndarray, eps: float) -> np.ndarray:
    return (vec + eps) / (1.0 + vec.size * eps)


def kl_divergence(p, q, smoothing: float = KL_SMOOTHING) -> float:
    """KL(p || q) with symmetric additive smoothing (add eps, renormalize).

    Smoothing both arguments keeps the divergence finite and non-negative even
    when the estimate places zero mass where the target does not.
    """
    p = validate_prevalence(p)
    q = validate_prevalence(q, class_count=p.size)
    ps = _smooth(p, smoothing)
    qs = _smooth(q, smoothing)
    return float(np.sum(ps * np.log(ps / qs)))


def rkl(distributions_at_k: Mapping[int, object], target,
        schedule: CutoffSchedule = CutoffSchedule()) -> float:
    """Discount-weighted mean of KL(p^k || p*) over the cutoff schedule."""
    target = validate_prevalence(target)
    total = 0.0
    for k, weight in schedule.weights().items():
        if k not in distributions_at_k:
            raise ValueError(f"missing cutoff {k} in distributions_at_k")
        total += weight * kl_divergence(distributions_at_k[k], target)
    return total / schedule.normalizer


def rnd(distributions_at_k: Mapping[int, object], target,
        schedule: CutoffSchedule = CutoffSchedule()) -> float:
    """Binary-only discounted gap in protected-group (class 1) prevalence."""
    target = validate_prevalence(target)
    if target.size != 2:
        raise ValueError("rND is binary-only")
    total = 0.0
    for k, weight in schedule.weights().items():
        if k not in distributions_at_k:
            raise ValueError(f"missing cutoff {k} in distributions_at_k")
        pk = validate_prevalence(distributions_at_k[k], class_count=2)
        total += weight * abs(pk[1] - target[1])
    return total / schedule.normalizer


def rae(true_prevalence, estimate, bag_size: int) -> float:
    """Relative absolute error with additive smoothing eps = 1/(2m).

    The per-class ratio makes errors on low-prevalence (disadvantaged) groups
    count in proportion to how small the group is.
    """
    if bag_size <= 0:
        raise ValueError("bag_size must be positive")
    p = validate_prevalence(true_prevalence)
    q = validate_prevalence(estimate, class_count=p.size)
    eps = 1.0 / (2.0 * bag_size)
    ps = _smooth(p, eps)
    qs = _smooth(q, eps)
    return float(np.mean(np.abs(qs - ps) / ps))


def ae_over_queries(true_scores: Mapping[str, float],
                    est_scores: Mapping[str, float]) -> float:
    """Mean absolute error between true and estimated per-query metric scores."""
    if set(true_scores) != set(est_scores):
        raise ValueError("mismatched query sets")
    if not true_scores:
        raise ValueError("empty query set")
    return float(np.mean([abs(true_scores[q] - est_scores[q]) for q in sorted(true_scores)]))


def wilcoxon_signed_rank(errors_a: Sequence[float], errors_b: Sequence[float]) -> float:
    """Two-sided Wilcoxon signed-rank p-value via the normal approximation.

    Zero differences are dropped, ranks of |d| are averaged over ties and the
    variance gets the usual tie correction. Needs >= 6 nonzero differences.
    """
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be one-dimensional and equal-length")
    d = a - b
    d = d[d != 0.0]
    m = d.size
    if m < 6:
        raise ValueError("sample too small: fewer than 6 nonzero differences")

    order = np.argsort(np.abs(d), kind="stable")
    ranks = np.empty(m, dtype=float)
    ranks[order] = np.arange(1, m + 1, dtype=float)
    # average ranks over tied |d| groups; collect tie sizes for the variance
    tie_correction = 0.0
    abs_sorted = np.abs(d)[order]
    i = 0
    while i < m:
        j = i
        while j + 1 < m and abs_sorted[j + 1] == abs_sorted[i]:
            j += 1
        if j > i:
            t = j - i + 1
            avg = (i + 1 + j + 1) / 2.0
            ranks[order[i:j + 1]] = avg
            tie_correction += t ** 3 - t
        i = j + 1

    w_plus = float(ranks[d > 0].sum())
    mean = m * (m + 1) / 4.0
    var = m * (m + 1) * (2 * m + 1) / 24.0 - tie_correction / 48.0
    if var <= 0:
        raise ValueError("sample too small: zero variance after tie correction")
    z = (w_plus - mean) / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2.0))


def wilcoxon_statistic(errors_a: Sequence[float], errors_b: Sequence[float]) -> float:
    """The W statistic (smaller of the signed rank sums) for the same test."""
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    d = (a - b)[(a - b) != 0.0]
    m = d.size
    if m < 6:
        raise ValueError("sample too small: fewer than 6 nonzero differences")
    order = np.argsort(np.abs(d), kind="stable")
    ranks = np.empty(m, dtype=float)
    ranks[order] = np.arange(1, m + 1, dtype=float)
    abs_sorted = np.abs(d)[order]
    i = 0
    while i < m:
        j = i
        while j + 1 < m and abs_sorted[j + 1] == abs_sorted[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    return min(w_plus, w_minus)


# ---------------------------------------------------------------------------
# Benchmark report
# ---------------------------------------------------------------------------

@dataclass
class QueryOutcome:
    query_id: str
    retrieved: int
    true_fairness: dict[str, float]                  # metric -> value
    est_fairness: dict[str, dict[str, float]]        # metric -> method -> value
    rae_at_k: dict[str, dict[int, float]]            # method -> k -> RAE
    fallback_classes: list[int] = field(default_factory=list)


@dataclass
class PoolReport:
    size: int
    requested_size: int
    queries: list[QueryOutcome] = field(default_factory=list)
    skipped_queries: list[str] = field(default_factory=list)
    ae: dict[str, dict[str, float]] = field(default_factory=dict)
    ae_std: dict[str, dict[str, float]] = field(default_factory=dict)
    rae_mean: dict[str, dict[int, float]] = field(default_factory=dict)
    significance: dict[str, dict[str, float | None]] = field(default_factory=dict)


@dataclass
class FairnessReport:
    class_count: int
    attribute_name: str
    target_prevalence: list[float]
    target_source: str
    config: dict
    pools: list[PoolReport] = field(default_factory=list)
    timings: dict[str, dict[str, float]] = field(default_factory=dict)

    def summary(self) -> dict:
        """Aggregate view mirroring the AE tables: mean +/- std + significance."""
        out: dict = {
            "class_count": self.class_count,
            "attribute": self.attribute_name,
            "target_prevalence": list(self.target_prevalence),
            "target_source": self.target_source,
            "pools": [],
        }
        for pool in self.pools:
            out["pools"].append({
                "size": pool.size,
                "queries": len(pool.queries),
                "skipped": list(pool.skipped_queries),
                "ae": pool.ae,
                "ae_std": pool.ae_std,
                "rae_mean": {m: {str(k): v for k, v in ks.items()}
                             for m, ks in pool.rae_mean.items()},
                "significance": pool.significance,
            })
        return out


def finalize_pool(pool: PoolReport, metrics: tuple[str, ...]) -> None:
    """Fill the aggregate AE / mean-RAE / significance fields from per-query data."""
    per_method_errors: dict[str, dict[str, list[float]]] = {m: {} for m in metrics}
    for outcome in pool.queries:
        for metric in metrics:
            if metric not in outcome.true_fairness:
                continue
            truth = outcome.true_fairness[metric]
            for method, est in outcome.est_fairness.get(metric, {}).items():
                per_method_errors[metric].setdefault(method, []).append(abs(truth - est))
    for metric in metrics:
        methods = sorted(per_method_errors[metric])
        if not methods:
            continue
        pool.ae[metric] = {m: float(np.mean(per_method_errors[metric][m])) for m in methods}
        pool.ae_std[metric] = {m: float(np.std(per_method_errors[metric][m])) for m in methods}
        sig: dict[str, float | None] = {}
        for i, ma in enumerate(methods):
            for mb in methods[i + 1:]:
                try:
                    p = wilcoxon_signed_rank(per_method_errors[metric][ma],
                                             per_method_errors[metric][mb])
                except ValueError:
                    p = None
                sig[f"{ma}|{mb}"] = p
        pool.significance[metric] = sig

    rae_acc: dict[str, dict[int, list[float]]] = {}
    for outcome in pool.queries:
        for method, at_k in outcome.rae_at_k.items():
            for k, value in at_k.items():
                rae_acc.setdefault(method, {}).setdefault(k, []).append(value)
    pool.rae_mean = {
        method: {k: float(np.mean(vals)) for k, vals in sorted(ks.items())}
        for method, ks in sorted(rae_acc.items())
    }


def _pool_to_json(pool: PoolReport) -> dict:
    return {
        "size": pool.size,
        "requested_size": pool.requested_size,
        "skipped_queries": list(pool.skipped_queries),
        "ae": pool.ae,
        "ae_std": pool.ae_std,
        "rae_mean": {m: {str(k): v for k, v in ks.items()} for m, ks in pool.rae_mean.items()},
        "significance": pool.significance,
        "queries": [
            {
                "query_id": q.query_id,
                "retrieved": q.retrieved,
                "true_fairness": q.true_fairness,
                "est_fairness": q.est_fairness,
                "rae": {m: {str(k): v for k, v in ks.items()} for m, ks in q.rae_at_k.items()},
                "fallback_classes": q.fallback_classes,
            }
            for q in pool.queries
        ],
    }


def write_report_json(report: FairnessReport, path) -> None:
    """Deterministic JSON dump of everything except wall-clock timings."""
    payload = {
        "class_count": report.class_count,
        "attribute": report.attribute_name,
        "target_prevalence": list(report.target_prevalence),
        "target_source": report.target_source,
        "config": report.config,
        "pools": [_pool_to_json(p) for p in report.pools],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_rae_csv(report: FairnessReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pool_size", "query_id", "method", "k", "rae"])
        for pool in report.pools:
            rows = []
            for q in pool.queries:
                for method, at_k in q.rae_at_k.items():
                    for k, value in at_k.items():
                        rows.append((pool.size, q.query_id, method, k, value))
            for row in sorted(rows, key=lambda r: (r[0], r[1], r[2], r[3])):
                writer.writerow([row[0], row[1], row[2], row[3], repr(row[4])])


def write_fairness_ae_csv(report: FairnessReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pool_size", "metric", "method", "ae", "std"])
        for pool in report.pools:
            for metric in sorted(pool.ae):
                for method in sorted(pool.ae[metric]):
                    writer.writerow([
                        pool.size, metric, method,
                        repr(pool.ae[metric][method]),
                        repr(pool.ae_std[metric][method]),
                    ])


def write_timings_csv(report: FairnessReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "phase", "mean_ms", "events"])
        for method in sorted(report.timings):
            entry = report.timings[method]
            for phase in ("learn", "predict"):
                key = f"{phase}_ms"
                if key in entry:
                    writer.writerow([method, phase, repr(entry[key]),
                                     int(entry.get(f"{phase}_events", 0))])
