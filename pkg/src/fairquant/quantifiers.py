"""Prevalence estimators for ranked bags: Naive@k, CC, ACC, PACC and the
KDE-based maximum-likelihood quantifier, plus the shared simplex-constrained
solver.

The correction-based methods (ACC/PACC/KDEy) are fitted per query on a
labeled sample retrieved with the same engine and query as the bag under
evaluation, which is what makes them robust to the selection bias that
retrieval induces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import project_to_simplex, validate_posteriors

LIKELIHOOD_FLOOR = 1e-10
SOLVER_MOVE_TOL = 1e-10
SOLVER_MAX_ITER = 10_000

VARIANTS = ("naive", "cc", "acc", "pacc", "kdey")


def classify_and_count(crisp_labels, class_count: int) -> np.ndarray:
    """Fraction of bag items predicted per class."""
    labels = np.asarray(crisp_labels, dtype=int)
    if labels.size == 0:
        raise ValueError("cannot quantify an empty bag")
    counts = np.bincount(labels, minlength=class_count).astype(float)
    return counts / labels.size


def euclidean_simplex_projection(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def solve_least_squares_simplex(M, t) -> np.ndarray:
    """argmin over the simplex of ||t - M p||^2 by projected gradient.

    Fixed step 1/L with L = ||M||_F^2 (an upper bound on the largest
    eigenvalue of M^T M); starts from uniform, stops when the iterate moves
    less than 1e-10 or after 10,000 iterations, and returns the best iterate
    seen (objective within 1e-8 of the best found, by construction).
    """
    M = np.asarray(M, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite inputs to simplex solver")
    n = M.shape[1]
    step = 1.0 / max(float((M * M).sum()), 1e-12)
    MtM = M.T @ M
    Mtt = M.T @ t

    p = np.full(n, 1.0 / n)
    best_p, best_f = p, float(((M @ p - t) ** 2).sum())
    for _ in range(SOLVER_MAX_ITER):
        grad = 2.0 * (MtM @ p - Mtt)
        p_new = euclidean_simplex_projection(p - step * grad)
        f_new = float(((M @ p_new - t) ** 2).sum())
        if f_new < best_f:
            best_f, best_p = f_new, p_new
        moved = float(np.linalg.norm(p_new - p))
        p = p_new
        if moved < SOLVER_MOVE_TOL:
            break
    return best_p


def _solve_nll_simplex(Q: np.ndarray) -> np.ndarray:
    """argmin over the simplex of -mean(log(Q p + eps)) by projected gradient
    with Armijo backtracking, from the uniform starting point. Same stopping
    contract as the least-squares solver."""
    m, n = Q.shape
    p = np.full(n, 1.0 / n)

    def objective(vec):
        return float(-np.log(Q @ vec + LIKELIHOOD_FLOOR).mean())

    f = objective(p)
    best_p, best_f = p, f
    step = 1.0
    for _ in range(SOLVER_MAX_ITER):
        grad = -(Q.T @ (1.0 / (Q @ p + LIKELIHOOD_FLOOR))) / m
        p_new = euclidean_simplex_projection(p - step * grad)
        f_new = objective(p_new)
        while f_new > f + 1e-4 * float(grad @ (p_new - p)) and step > 1e-14:
            step *= 0.5
            p_new = euclidean_simplex_projection(p - step * grad)
            f_new = objective(p_new)
        if f_new < best_f:
            best_f, best_p = f_new, p_new
        moved = float(np.linalg.norm(p_new - p))
        p, f = p_new, f_new
        step = min(step * 2.0, 1e6)
        if moved < SOLVER_MOVE_TOL:
            break
    return best_p


# ---------------------------------------------------------------------------
# Gaussian KDE over posterior vectors
# ---------------------------------------------------------------------------

def kde_log_density(centers: np.ndarray, bandwidth: float, points: np.ndarray) -> np.ndarray:
    """Log density of an isotropic Gaussian KDE at each point (row)."""
    diff = points[:, None, :] - centers[None, :, :]
    sq = (diff * diff).sum(axis=2)
    log_kernels = -sq / (2.0 * bandwidth * bandwidth)
    peak = log_kernels.max(axis=1)
    lse = peak + np.log(np.exp(log_kernels - peak[:, None]).sum(axis=1))
    dim = centers.shape[1]
    log_norm = math.log(centers.shape[0]) + 0.5 * dim * math.log(2.0 * math.pi * bandwidth * bandwidth)
    return lse - log_norm


@dataclass
class CorrectionModel:
    """Per-query learned state for one quantifier variant."""

    variant: str
    class_count: int
    rate_matrix: np.ndarray | None = None                 # acc / pacc
    class_centers: list[np.ndarray] | None = None         # kdey
    bandwidth: float | None = None                        # kdey
    naive_prevalences: dict[int, np.ndarray] | None = None
    fallback_classes: tuple[int, ...] = ()


def fit_correction(variant: str, posteriors, labels, *,
                   class_count: int | None = None,
                   bandwidth: float | None = None,
                   cutoffs: Sequence[int] | None = None,
                   fallback: CorrectionModel | None = None) -> CorrectionModel:
    """Learn the per-query correction state from a labeled retrieved sample.

    For ``naive`` the labels must be in rank order and ``cutoffs`` gives the
    k values to snapshot; posteriors are unused. For the other variants a
    class with no members raises "class unseen in correction sample" unless a
    ``fallback`` model (fitted globally, e.g. on out-of-fold classifier
    predictions) supplies that class's column or density.
    """
    if variant not in VARIANTS or variant == "cc":
        if variant == "cc":
            raise ValueError("cc learns no correction; use classify_and_count directly")
        raise ValueError(f"unknown variant {variant!r}; valid: {VARIANTS}")

    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("empty correction sample")

    if variant == "naive":
        if class_count is None:
            raise ValueError("class_count is required for the naive variant")
        if not cutoffs:
            raise ValueError("naive variant needs the cutoff list at fit time")
        prevs = {
            int(k): classify_and_count(labels[: min(int(k), labels.size)], class_count)
            for k in cutoffs
        }
        return CorrectionModel("naive", class_count, naive_prevalences=prevs)

    post = validate_posteriors(posteriors, class_count)
    if post.shape[0] != labels.size:
        raise ValueError("posteriors and labels must be aligned")
    n = post.shape[1]

    present = np.unique(labels)
    missing = sorted(set(range(n)) - set(present.tolist()))
    if missing and fallback is None:
        raise ValueError(f"class unseen in correction sample: {missing}")
    if missing and fallback is not None:
        if fallback.variant != variant or fallback.class_count != n:
            raise ValueError("fallback model must match variant and class count")

    if variant == "acc":
        predicted = np.argmax(post, axis=1)
        M = np.zeros((n, n))
        for j in range(n):
            if j in missing:
                M[:, j] = fallback.rate_matrix[:, j]
            else:
                members = predicted[labels == j]
                for i in range(n):
                    M[i, j] = np.mean(members == i)
        return CorrectionModel("acc", n, rate_matrix=M,
                               fallback_classes=tuple(missing))

    if variant == "pacc":
        M = np.zeros((n, n))
        for j in range(n):
            if j in missing:
                M[:, j] = fallback.rate_matrix[:, j]
            else:
                M[:, j] = post[labels == j].mean(axis=0)
        return CorrectionModel("pacc", n, rate_matrix=M,
                               fallback_classes=tuple(missing))

    # kdey
    if bandwidth is None or bandwidth <= 0:
        raise ValueError("kdey needs a positive bandwidth")
    centers = []
    for j in range(n):
        if j in missing:
            centers.append(fallback.class_centers[j])
        else:
            centers.append(post[labels == j].copy())
    return CorrectionModel("kdey", n, class_centers=centers, bandwidth=bandwidth,
                           fallback_classes=tuple(missing))


def acc_estimate(model: CorrectionModel, crisp_labels) -> np.ndarray:
    """Adjusted counts: the binary closed form (clipped), or the simplex
    least-squares solution for more than two classes."""
    if model.variant != "acc":
        raise ValueError("model is not an acc correction")
    cc = classify_and_count(crisp_labels, model.class_count)
    M = model.rate_matrix
    if model.class_count == 2:
        tpr, fpr = M[1, 1], M[1, 0]
        if abs(tpr - fpr) < 1e-6:
            raise ValueError("uninformative classifier rates")
        positive = min(max((cc[1] - fpr) / (tpr - fpr), 0.0), 1.0)
        return project_to_simplex(np.array([1.0 - positive, positive]))
    return solve_least_squares_simplex(M, cc)


def pacc_estimate(model: CorrectionModel, posteriors) -> np.ndarray:
    if model.variant != "pacc":
        raise ValueError("model is not a pacc correction")
    post = validate_posteriors(posteriors, model.class_count)
    if post.shape[0] == 0:
        raise ValueError("cannot quantify an empty bag")
    t = post.mean(axis=0)
    return solve_least_squares_simplex(model.rate_matrix, t)


def kdey_density_matrix(model: CorrectionModel, posteriors: np.ndarray) -> np.ndarray:
    """(m, n) matrix of class-conditional KDE densities at the bag posteriors."""
    post = validate_posteriors(posteriors, model.class_count)
    Q = np.empty((post.shape[0], model.class_count))
    for j, centers in enumerate(model.class_centers):
        Q[:, j] = np.exp(kde_log_density(centers, model.bandwidth, post))
    return Q


def kdey_estimate(model: CorrectionModel, posteriors) -> np.ndarray:
    """Mixture weights minimizing the negative mean log-likelihood of the bag
    posteriors under the class-conditional KDEs."""
    if model.variant != "kdey":
        raise ValueError("model is not a kdey correction")
    post = validate_posteriors(posteriors, model.class_count)
    if post.shape[0] == 0:
        raise ValueError("cannot quantify an empty bag")
    Q = kdey_density_matrix(model, post)
    return _solve_nll_simplex(Q)


def naive_estimate(model: CorrectionModel, k: int) -> np.ndarray:
    """The stored prevalence of the top-k correction documents; the test bag
    is never inspected."""
    if model.variant != "naive":
        raise ValueError("model is not a naive correction")
    if model.naive_prevalences is None or int(k) not in model.naive_prevalences:
        raise ValueError(f"cutoff {k} was not stored at fit time")
    return model.naive_prevalences[int(k)].copy()


# ---------------------------------------------------------------------------
# Bandwidth selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandwidthQuery:
    """One held-out validation query for tuning the KDE bandwidth."""

    correction_posteriors: np.ndarray
    correction_labels: np.ndarray
    test_posteriors: np.ndarray          # the k=100 bag
    true_prevalence: np.ndarray


def bandwidth_rae_table(validation_queries: Sequence[BandwidthQuery],
                        candidate_bandwidths: Sequence[float]) -> dict[float, float]:
    """Mean RAE at k=100 per candidate bandwidth over the validation queries."""
    from .fairness import rae

    if not validation_queries:
        raise ValueError("empty validation set")
    if not candidate_bandwidths:
        raise ValueError("no candidate bandwidths")
    table: dict[float, float] = {}
    for h in candidate_bandwidths:
        errors = []
        for q in validation_queries:
            model = fit_correction(
                "kdey", q.correction_posteriors, q.correction_labels, bandwidth=float(h))
            estimate = kdey_estimate(model, q.test_posteriors)
            errors.append(rae(q.true_prevalence, estimate, q.test_posteriors.shape[0]))
        table[float(h)] = float(np.mean(errors))
    return table


def select_kdey_bandwidth(validation_queries: Sequence[BandwidthQuery],
                          candidate_bandwidths: Sequence[float]) -> float:
    """The bandwidth minimizing mean validation RAE; ties go to the smaller h."""
    table = bandwidth_rae_table(validation_queries, candidate_bandwidths)
    return min(sorted(table), key=lambda h: (table[h], h))
