"""Probabilistic group classifier: tf-idf features + multinomial logistic
regression trained from scratch with full-batch gradient descent.

The classifier is trained once, offline, on its own labeled pool; everything
downstream consumes its posterior probabilities. Out-of-fold prediction
helpers estimate classification rates without letting a datapoint score
itself.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Corpus, Document

GRAD_TOL = 1e-5
MAX_ITER = 1000


@dataclass(frozen=True)
class ClassifierHyperParams:
    regularization_strength: float = 1.0          # C; larger = weaker penalty
    class_weighting: str = "balanced"             # "balanced" or "none"

    def __post_init__(self):
        if self.regularization_strength <= 0:
            raise ValueError("C must be positive")
        if self.class_weighting not in ("balanced", "none"):
            raise ValueError("class_weighting must be 'balanced' or 'none'")


def default_grid() -> list[ClassifierHyperParams]:
    """The model-selection grid: C in 10^-4..10^4 crossed with class weighting."""
    return [
        ClassifierHyperParams(10.0 ** i, weighting)
        for i in range(-4, 5)
        for weighting in ("balanced", "none")
    ]


@dataclass
class LogisticModel:
    weights: np.ndarray                  # (n, d+1); last column is the bias
    vocabulary: dict[str, int]
    idf: np.ndarray                      # (d,)
    class_count: int
    hyperparams: ClassifierHyperParams
    fingerprint: str = ""
    group_names: tuple[str, ...] | None = None
    attribute_name: str = "group"


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def fit_vocabulary(docs: Sequence[Document], min_count: int = 2):
    """Vocabulary (terms with total count >= min_count, sorted) and smooth idf."""
    totals: Counter[str] = Counter()
    doc_freq: Counter[str] = Counter()
    for doc in docs:
        counts = Counter(doc.tokens)
        totals.update(counts)
        doc_freq.update(counts.keys())
    terms = sorted(t for t, c in totals.items() if c >= min_count)
    vocabulary = {t: i for i, t in enumerate(terms)}
    m = len(docs)
    idf = np.array([math.log((1 + m) / (1 + doc_freq[t])) + 1.0 for t in terms])
    return vocabulary, idf


def featurize(tokens: Sequence[str], vocabulary: dict[str, int],
              idf: np.ndarray) -> list[tuple[int, float]]:
    """Sparse L2-normalized tf-idf vector; out-of-vocabulary terms are dropped."""
    counts: Counter[int] = Counter()
    for term in tokens:
        idx = vocabulary.get(term)
        if idx is not None:
            counts[idx] += 1
    if not counts:
        return []
    pairs = [(idx, tf * idf[idx]) for idx, tf in sorted(counts.items())]
    norm = math.sqrt(sum(w * w for _, w in pairs))
    return [(idx, w / norm) for idx, w in pairs]


def feature_matrix(docs: Sequence[Document], vocabulary: dict[str, int],
                   idf: np.ndarray) -> np.ndarray:
    X = np.zeros((len(docs), len(vocabulary)))
    for row, doc in enumerate(docs):
        for idx, w in featurize(doc.tokens, vocabulary, idf):
            X[row, idx] = w
    return X


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def sample_weights(labels: np.ndarray, class_count: int, weighting: str) -> np.ndarray:
    if weighting == "none":
        return np.ones(labels.size)
    counts = np.bincount(labels, minlength=class_count).astype(float)
    counts[counts == 0] = 1.0
    return labels.size / (class_count * counts[labels])


def loss_and_gradient(W: np.ndarray, X1: np.ndarray, labels: np.ndarray,
                      weights: np.ndarray, C: float):
    """Weighted cross-entropy + L2/(2C) on the non-bias weights, jointly scaled
    by the total sample weight (same optimum as the usual sum-loss convention
    for C, but with O(1) gradients so the convergence tolerance is meaningful).
    """
    total = weights.sum()
    logp = _log_softmax(X1 @ W.T)
    ce = -(weights * logp[np.arange(labels.size), labels]).sum()
    penalty = float((W[:, :-1] ** 2).sum()) / (2.0 * C)
    P = np.exp(logp)
    Y = np.zeros_like(P)
    Y[np.arange(labels.size), labels] = 1.0
    G = ((P - Y) * weights[:, None]).T @ X1
    G[:, :-1] += W[:, :-1] / C
    return (ce + penalty) / total, G / total


def _loss_only(W, X1, labels, weights, C) -> float:
    total = weights.sum()
    logp = _log_softmax(X1 @ W.T)
    ce = -(weights * logp[np.arange(labels.size), labels]).sum()
    return (ce + float((W[:, :-1] ** 2).sum()) / (2.0 * C)) / total


def _labels_of(docs: Sequence[Document]) -> np.ndarray:
    labels = []
    for doc in docs:
        if doc.group is None:
            raise ValueError(f"unlabeled document in training set: {doc.id!r}")
        labels.append(doc.group)
    return np.asarray(labels, dtype=int)


def _fit_weights(X: np.ndarray, labels: np.ndarray, class_count: int,
                 hp: ClassifierHyperParams) -> np.ndarray:
    m = X.shape[0]
    X1 = np.hstack([X, np.ones((m, 1))])
    W = np.zeros((class_count, X1.shape[1]))
    weights = sample_weights(labels, class_count, hp.class_weighting)
    C = hp.regularization_strength

    step = 1.0
    f, G = loss_and_gradient(W, X1, labels, weights, C)
    for _ in range(MAX_ITER):
        if np.abs(G).max() < GRAD_TOL:
            break
        g2 = float((G * G).sum())
        # Armijo backtracking, warm-started from the last accepted step
        while step > 1e-12:
            W_try = W - step * G
            f_try = _loss_only(W_try, X1, labels, weights, C)
            if f_try <= f - 1e-4 * step * g2:
                break
            step *= 0.5
        W = W - step * G
        f, G = loss_and_gradient(W, X1, labels, weights, C)
        step = min(step * 2.0, 1e6)
    return W


def train(corpus: Corpus, hp: ClassifierHyperParams = ClassifierHyperParams()) -> LogisticModel:
    """Fit vocabulary, idf and LR weights on a fully labeled corpus."""
    docs = corpus.documents
    labels = _labels_of(docs)
    counts = np.bincount(labels, minlength=corpus.class_count)
    if np.any(counts == 0):
        raise ValueError("empty class in training set")
    vocabulary, idf = fit_vocabulary(docs)
    X = feature_matrix(docs, vocabulary, idf)
    W = _fit_weights(X, labels, corpus.class_count, hp)
    return LogisticModel(
        weights=W,
        vocabulary=vocabulary,
        idf=idf,
        class_count=corpus.class_count,
        hyperparams=hp,
        fingerprint=corpus_fingerprint(corpus),
        group_names=corpus.group_names,
        attribute_name=corpus.attribute_name,
    )


def posteriors(model: LogisticModel, docs: Sequence[Document]) -> np.ndarray:
    X = feature_matrix(docs, model.vocabulary, model.idf)
    X1 = np.hstack([X, np.ones((X.shape[0], 1))])
    return _softmax(X1 @ model.weights.T)


def crisp_predict(model: LogisticModel, docs: Sequence[Document]) -> np.ndarray:
    """Argmax of the posteriors; ties resolve to the lowest class index."""
    return np.argmax(posteriors(model, docs), axis=1)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Per-class shuffled round-robin assignment into ``folds`` index arrays."""
    rng = np.random.default_rng(seed)
    assignment = np.zeros(labels.size, dtype=int)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        assignment[idx] = np.arange(idx.size) % folds
    return [np.flatnonzero(assignment == f) for f in range(folds)]


def _check_fold_feasible(labels: np.ndarray, class_count: int, folds: int) -> None:
    counts = np.bincount(labels, minlength=class_count)
    if np.any(counts == 0):
        raise ValueError("empty class in training set")
    if np.any(counts < folds):
        raise ValueError(f"every class needs >= {folds} examples for {folds}-fold CV")


def cv_posteriors(corpus: Corpus, hp: ClassifierHyperParams,
                  folds: int = 5, seed: int = 0):
    """Out-of-fold posterior matrix plus the aligned label vector.

    Features (vocabulary, idf) are fitted once on the whole corpus; only the
    LR weights are re-fit per fold, so no datapoint is scored by weights it
    helped train.
    """
    docs = corpus.documents
    labels = _labels_of(docs)
    _check_fold_feasible(labels, corpus.class_count, folds)
    vocabulary, idf = fit_vocabulary(docs)
    X = feature_matrix(docs, vocabulary, idf)
    X1 = np.hstack([X, np.ones((X.shape[0], 1))])
    out = np.zeros((len(docs), corpus.class_count))
    for fold in stratified_folds(labels, folds, seed):
        mask = np.ones(len(docs), dtype=bool)
        mask[fold] = False
        W = _fit_weights(X[mask], labels[mask], corpus.class_count, hp)
        out[fold] = _softmax(X1[fold] @ W.T)
    return out, labels


def rate_matrix_from_predictions(predicted: np.ndarray, labels: np.ndarray,
                                 class_count: int) -> np.ndarray:
    """M[i, j] = fraction of true-class-j items predicted as i; columns sum to 1."""
    M = np.zeros((class_count, class_count))
    for j in range(class_count):
        members = predicted[labels == j]
        if members.size == 0:
            raise ValueError(f"class {j} has no examples to estimate rates from")
        for i in range(class_count):
            M[i, j] = np.mean(members == i)
    return M


def cv_rate_matrix(corpus: Corpus, hp: ClassifierHyperParams,
                   folds: int = 5, seed: int = 0) -> np.ndarray:
    """Classification-rate matrix M with M[i, j] = P(predicted=i | true=j),
    estimated from out-of-fold crisp predictions. Columns sum to 1."""
    post, labels = cv_posteriors(corpus, hp, folds=folds, seed=seed)
    return rate_matrix_from_predictions(np.argmax(post, axis=1), labels,
                                        corpus.class_count)


def select_model(corpus: Corpus, grid: Sequence[ClassifierHyperParams] | None = None,
                 folds: int = 5, seed: int = 0) -> ClassifierHyperParams:
    """Pick the grid point with the best mean k-fold accuracy.

    Ties break toward smaller C, then toward class_weighting='none'.
    """
    if grid is None:
        grid = default_grid()
    if not grid:
        raise ValueError("empty hyperparameter grid")
    docs = corpus.documents
    labels = _labels_of(docs)
    _check_fold_feasible(labels, corpus.class_count, folds)
    vocabulary, idf = fit_vocabulary(docs)
    X = feature_matrix(docs, vocabulary, idf)
    X1 = np.hstack([X, np.ones((X.shape[0], 1))])
    fold_indices = stratified_folds(labels, folds, seed)

    best: tuple[float, float, int, ClassifierHyperParams] | None = None
    for hp in grid:
        correct = 0
        for fold in fold_indices:
            mask = np.ones(len(docs), dtype=bool)
            mask[fold] = False
            W = _fit_weights(X[mask], labels[mask], corpus.class_count, hp)
            pred = np.argmax(X1[fold] @ W.T, axis=1)
            correct += int((pred == labels[fold]).sum())
        accuracy = correct / len(docs)
        weight_rank = 0 if hp.class_weighting == "none" else 1
        key = (-accuracy, hp.regularization_strength, weight_rank)
        if best is None or key < best[:3]:
            best = (*key, hp)
    return best[3]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def corpus_fingerprint(corpus: Corpus) -> str:
    payload = json.dumps(
        [[d.id, d.group, len(d.tokens)] for d in corpus.documents],
        sort_keys=True,
    ).encode()
    return hashlib.sha256(payload).hexdigest()


def save_model(model: LogisticModel, path) -> None:
    terms = sorted(model.vocabulary, key=model.vocabulary.get)
    payload = {
        "format": "fairquant-logistic-model",
        "class_count": model.class_count,
        "attribute": model.attribute_name,
        "group_names": list(model.group_names) if model.group_names else None,
        "vocabulary": terms,
        "idf": model.idf.tolist(),
        "weights": model.weights.tolist(),
        "hyperparams": {
            "C": model.hyperparams.regularization_strength,
            "class_weighting": model.hyperparams.class_weighting,
        },
        "fingerprint": model.fingerprint,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> LogisticModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "fairquant-logistic-model":
        raise ValueError(f"{path}: not a recognized model file")
    terms = payload["vocabulary"]
    return LogisticModel(
        weights=np.asarray(payload["weights"]),
        vocabulary={t: i for i, t in enumerate(terms)},
        idf=np.asarray(payload["idf"]),
        class_count=int(payload["class_count"]),
        hyperparams=ClassifierHyperParams(
            payload["hyperparams"]["C"], payload["hyperparams"]["class_weighting"]
        ),
        fingerprint=payload.get("fingerprint", ""),
        group_names=tuple(payload["group_names"]) if payload.get("group_names") else None,
        attribute_name=payload.get("attribute", "group"),
    )
