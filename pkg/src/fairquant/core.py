"""Shared domain types: documents, corpora, prevalence vectors, rankings.

Group labels are dense integer indices ``0..n-1``; the mapping back to the
original group names lives in a sidecar table on the corpus so that all metric
and quantifier code stays label-agnostic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True)
class Document:
    """A single item: normalized tokens plus optional group / relevance labels."""

    id: str
    tokens: tuple[str, ...]
    group: int | None = None
    relevant: bool | None = None


@dataclass(frozen=True)
class Corpus:
    """An immutable collection of documents with a declared class count."""

    documents: tuple[Document, ...]
    class_count: int
    attribute_name: str = "group"
    group_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        seen = set()
        max_group = -1
        for doc in self.documents:
            if doc.id in seen:
                raise ValueError(f"duplicate document id: {doc.id!r}")
            seen.add(doc.id)
            if doc.group is not None:
                if not (0 <= doc.group < self.class_count):
                    raise ValueError(
                        f"group index {doc.group} out of range for "
                        f"class_count={self.class_count} (doc {doc.id!r})"
                    )
                max_group = max(max_group, doc.group)

    def __len__(self) -> int:
        return len(self.documents)

    def subset(self, doc_ids: Iterable[str]) -> "Corpus":
        wanted = set(doc_ids)
        docs = tuple(d for d in self.documents if d.id in wanted)
        return Corpus(docs, self.class_count, self.attribute_name, self.group_names)

    def without(self, doc_ids: Iterable[str]) -> "Corpus":
        banned = set(doc_ids)
        docs = tuple(d for d in self.documents if d.id not in banned)
        return Corpus(docs, self.class_count, self.attribute_name, self.group_names)


@dataclass(frozen=True)
class RankedList:
    """Retrieval output: (doc_id, score) pairs with non-increasing scores."""

    query_id: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        ids = [doc_id for doc_id, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate doc_id in ranked list")
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranked list scores must be non-increasing")

    def __len__(self) -> int:
        return len(self.entries)

    def top(self, k: int) -> "RankedList":
        return RankedList(self.query_id, self.entries[:k])

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]


def validate_prevalence(values, class_count: int | None = None) -> np.ndarray:
    """Check simplex membership (entries >= 0, sum == 1 within 1e-9) and return
    the vector as a float array. Raises ValueError otherwise."""
    vec = np.asarray(values, dtype=float)
    if vec.ndim != 1:
        raise ValueError("prevalence vector must be one-dimensional")
    if class_count is not None and vec.shape[0] != class_count:
        raise ValueError(f"expected {class_count} entries, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("prevalence vector has non-finite entries")
    if np.any(vec < 0):
        raise ValueError("prevalence vector has negative entries")
    if abs(vec.sum() - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"prevalence vector sums to {vec.sum()!r}, not 1")
    return vec


def validate_posteriors(rows, class_count: int | None = None) -> np.ndarray:
    """Check that every row of an (m, n) posterior matrix lies on the simplex."""
    mat = np.asarray(rows, dtype=float)
    if mat.ndim != 2:
        raise ValueError("posterior matrix must be two-dimensional")
    if class_count is not None and mat.shape[1] != class_count:
        raise ValueError(f"expected {class_count} columns, got {mat.shape[1]}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("posterior matrix has non-finite entries")
    if np.any(mat < 0):
        raise ValueError("posterior matrix has negative entries")
    if np.any(np.abs(mat.sum(axis=1) - 1.0) > SIMPLEX_ATOL):
        raise ValueError("posterior rows must sum to 1")
    return mat


def prevalence_of(docs: Sequence[Document], class_count: int) -> np.ndarray:
    """Empirical class frequencies of a fully labeled slice of documents.

    Every document must carry a group label; this is the ground-truth counting
    path and silently accepting unlabeled items would corrupt evaluation.
    """
    if len(docs) == 0:
        raise ValueError("cannot compute prevalence of an empty slice")
    counts = np.zeros(class_count, dtype=float)
    for doc in docs:
        if doc.group is None:
            raise ValueError(f"unlabeled item in ground-truth count: {doc.id!r}")
        counts[doc.group] += 1.0
    return counts / counts.sum()


def project_to_simplex(raw) -> np.ndarray:
    """Clip negatives to zero and renormalize; all-zero clips fall back to uniform.

    This is the cheap feasibility repair used on unconstrained estimates (the
    binary adjusted count can leave [0, 1]); it is not the Euclidean projection.
    Inputs already on the simplex are returned unchanged, which makes the
    operation exactly idempotent.
    """
    vec = np.asarray(raw, dtype=float)
    if vec.ndim != 1 or vec.size == 0:
        raise ValueError("expected a non-empty one-dimensional vector")
    if not np.all(np.isfinite(vec)):
        raise ValueError("cannot project non-finite values")
    if np.all(vec >= 0) and abs(vec.sum() - 1.0) <= SIMPLEX_ATOL:
        return vec.copy()
    clipped = np.clip(vec, 0.0, None)
    total = clipped.sum()
    if total <= 0.0:
        return np.full(vec.size, 1.0 / vec.size)
    return clipped / total


# ---------------------------------------------------------------------------
# Corpus file I/O (JSON Lines; one document per line)
# ---------------------------------------------------------------------------

def load_corpus_jsonl(path, attribute_name: str = "group",
                      tokenizer=None, class_count: int | None = None) -> Corpus:
    """Load a corpus from JSON Lines.

    Each line is an object with fields ``id`` (str), ``text`` (str), ``group``
    (str or null) and optional ``relevant`` (bool). The group-name-to-index
    table is the sorted order of the distinct group strings present in the
    file; pass ``class_count`` to widen the label space beyond what the file
    contains (e.g. an unlabeled pool sharing another pool's table).
    """
    if tokenizer is None:
        from .retrieval import tokenize
        tokenizer = tokenize

    raw: list[tuple[str, str, str | None, bool | None]] = []
    names: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSONL at line {lineno}: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise ValueError(f"{path}: malformed JSONL at line {lineno}: "
                                 "expected object with 'id' and 'text'")
            group = obj.get("group")
            if group is not None and not isinstance(group, str):
                raise ValueError(f"{path}: malformed JSONL at line {lineno}: "
                                 "'group' must be a string or null")
            relevant = obj.get("relevant")
            raw.append((str(obj["id"]), str(obj["text"]), group, relevant))
            if group is not None:
                names.add(group)

    group_names = tuple(sorted(names))
    index = {name: i for i, name in enumerate(group_names)}
    n = max(len(group_names), class_count or 0, 2)
    docs = tuple(
        Document(
            id=doc_id,
            tokens=tuple(tokenizer(text)),
            group=index[group] if group is not None else None,
            relevant=relevant,
        )
        for doc_id, text, group, relevant in raw
    )
    return Corpus(docs, class_count=n, attribute_name=attribute_name,
                  group_names=group_names or None)


def save_corpus_jsonl(corpus: Corpus, path) -> None:
    """Write a corpus as JSON Lines; tokens are re-joined into ``text``."""
    names = corpus.group_names
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            if doc.group is None:
                group = None
            elif names is not None:
                group = names[doc.group]
            else:
                group = str(doc.group)
            obj = {"id": doc.id, "text": " ".join(doc.tokens), "group": group}
            if doc.relevant is not None:
                obj["relevant"] = doc.relevant
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
