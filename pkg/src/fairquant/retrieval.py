"""Tokenization, inverted indexing and BM25 ranking.

The same engine retrieves the test ranking and the correction sample for a
query, which is what lets a per-query correction cancel the selection bias of
retrieval. Retrieval quality only has to be deterministic and reasonable, not
state of the art, so the tokenizer uses a small fixed rule set instead of a
full stemmer.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .core import Corpus, RankedList

# 50 high-frequency English function words, fixed for reproducibility.
STOP_WORDS = frozenset("""
a an and are as at be been but by for from had has have he her his i if in
into is it its no not of on or our she so that the their them then there
these they this to was we were which will with you
""".split())

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def _undouble(stem: str) -> str:
    if len(stem) >= 2 and stem[-1] == stem[-2] and stem[-1] not in "aeiou":
        return stem[:-1]
    return stem


def _normalize_suffix(term: str) -> str:
    # plural forms first, then -ing/-ed; both passes may apply ("meetings" -> "meet")
    if term.endswith("ies") and len(term) > 3:
        term = term[:-3] + "y"
    elif term.endswith("es") and len(term) > 3:
        term = term[:-2]
    elif term.endswith("s") and not term.endswith("ss") and len(term) > 3:
        term = term[:-1]
    if term.endswith("ing") and len(term) - 3 >= 3:
        term = _undouble(term[:-3])
    elif term.endswith("ed") and len(term) - 2 >= 3:
        term = _undouble(term[:-2])
    return term


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, drop stop words, normalize suffixes.

    Deterministic by construction; empty text yields an empty list.
    """
    terms = []
    for raw in _TOKEN_RE.findall(text.lower()):
        if raw in STOP_WORDS:
            continue
        terms.append(_normalize_suffix(raw))
    return terms


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not (0.0 <= self.b <= 1.0):
            raise ValueError("b must lie in [0, 1]")


@dataclass
class InvertedIndex:
    """Term -> (doc_index, term_frequency) postings over one corpus.

    Immutable once built; safe to share across concurrent retrievals.
    """

    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    doc_ids: list[str]
    avg_doc_length: float = field(init=False)

    def __post_init__(self):
        n = len(self.doc_lengths)
        if n == 0:
            raise ValueError("cannot index an empty corpus")
        self.avg_doc_length = sum(self.doc_lengths) / n

    @property
    def doc_count(self) -> int:
        return len(self.doc_lengths)


def build_index(corpus: Corpus) -> InvertedIndex:
    if len(corpus) == 0:
        raise ValueError("cannot index an empty corpus")
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    doc_ids: list[str] = []
    for idx, doc in enumerate(corpus.documents):
        doc_ids.append(doc.id)
        doc_lengths.append(len(doc.tokens))
        for term, tf in sorted(Counter(doc.tokens).items()):
            postings.setdefault(term, []).append((idx, tf))
    return InvertedIndex(postings=postings, doc_lengths=doc_lengths, doc_ids=doc_ids)


def idf(index: InvertedIndex, term: str) -> float:
    """Lucene-style floored IDF: ln((N - df + 0.5)/(df + 0.5) + 1), never negative."""
    df = len(index.postings.get(term, ()))
    n = index.doc_count
    return math.log((n - df + 0.5) / (df + 0.5) + 1.0)


def retrieve(index: InvertedIndex, query: list[str], top_k: int,
             params: Bm25Params = Bm25Params(), query_id: str = "") -> RankedList:
    """Score the query with BM25 and return the top_k matches.

    Documents scoring zero (no query term present) are excluded. Ties are
    broken by ascending doc_id so rankings are identical across platforms.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    scores: dict[int, float] = {}
    k1, b = params.k1, params.b
    avgdl = index.avg_doc_length
    for term in query:
        plist = index.postings.get(term)
        if not plist:
            continue
        w = idf(index, term)
        for doc_idx, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_lengths[doc_idx] / avgdl)
            scores[doc_idx] = scores.get(doc_idx, 0.0) + w * (tf * (k1 + 1.0)) / (tf + norm)
    scored = [(s, index.doc_ids[i]) for i, s in scores.items() if s > 0.0]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    entries = tuple((doc_id, score) for score, doc_id in scored[:top_k])
    return RankedList(query_id=query_id, entries=entries)


def load_queries_tsv(path) -> list[tuple[str, str]]:
    """Read queries from UTF-8 text, one per line: ``query_id<TAB>query text``."""
    queries: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}: line {lineno} has no tab separator")
            qid, text = line.split("\t", 1)
            queries.append((qid, text))
    return queries


def save_queries_tsv(queries: list[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, text in queries:
            fh.write(f"{qid}\t{text}\n")
