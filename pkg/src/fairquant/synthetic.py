"""Synthetic two-pool corpus generator for desk-scale benchmark runs.

Documents mix background, group-specific and topic-specific unigram
vocabularies. Relevance is coupled to groups through the topic-group affinity
matrix: inside a topic, documents of strongly affine groups are far more
likely to be relevant, and relevant documents up-weight topic terms so they
rank higher. Retrieval therefore sees a group mix that differs from the
pool's — the selection bias the correction-based quantifiers are meant to
absorb. With a uniform affinity matrix relevance decouples from groups and
the bias disappears, which the tests use as a control.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Corpus, Document


def cyclic_affinity(topic_count: int, class_count: int, dominant_mass: float = 0.35) -> np.ndarray:
    """Affinity matrix whose rows concentrate on one group each, cycling
    through the groups; rows lie on the simplex."""
    if not (0.0 < dominant_mass <= 1.0):
        raise ValueError("dominant_mass must be in (0, 1]")
    rest = (1.0 - dominant_mass) / (class_count - 1)
    A = np.full((topic_count, class_count), rest)
    for t in range(topic_count):
        A[t, t % class_count] = dominant_mass
    return A


def uniform_affinity(topic_count: int, class_count: int) -> np.ndarray:
    return np.full((topic_count, class_count), 1.0 / class_count)


@dataclass
class SyntheticSpec:
    group_priors: tuple[float, ...] = (0.55, 0.25, 0.15, 0.05)
    topic_count: int = 50
    docs_per_pool: int = 40_000
    background_vocab: int = 150
    group_vocab: int = 40                 # per group
    topic_vocab: int = 10                 # per topic
    tokens_per_doc: int = 30
    mixture_weights: tuple[float, float, float] = (0.50, 0.20, 0.30)  # bg, group, topic
    relevant_topic_boost: float = 3.0
    relevance_rate: float = 0.15
    relevance_sharpness: float = 3.0      # exponent steepening the group tilt of relevance
    group_confusion: float = 0.45         # group-token mass spread over all groups
    topic_noise: float = 0.20             # topic-token mass spread over all topics
    group_topic_affinity: np.ndarray | None = None   # rows on the simplex; default cyclic

    def __post_init__(self):
        priors = np.asarray(self.group_priors, dtype=float)
        if priors.ndim != 1 or priors.size < 2 or np.any(priors < 0) \
                or abs(priors.sum() - 1.0) > 1e-9:
            raise ValueError("group_priors must be a probability vector over >= 2 groups")
        if self.topic_count < 1:
            raise ValueError("topic_count must be positive")
        n = priors.size
        if self.docs_per_pool < 10 * n * self.topic_count:
            raise ValueError("docs_per_pool must be >= 10 * class_count * topic_count")
        if self.tokens_per_doc < 1:
            raise ValueError("tokens_per_doc must be positive")
        w = np.asarray(self.mixture_weights, dtype=float)
        if w.size != 3 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("mixture_weights must be three non-negative values")
        if not (0.0 <= self.relevance_rate <= 1.0):
            raise ValueError("relevance_rate must lie in [0, 1]")
        if not (0.0 <= self.group_confusion <= 1.0):
            raise ValueError("group_confusion must lie in [0, 1]")
        if not (0.0 <= self.topic_noise <= 1.0):
            raise ValueError("topic_noise must lie in [0, 1]")
        if self.relevance_sharpness < 1.0:
            raise ValueError("relevance_sharpness must be >= 1")
        if self.relevant_topic_boost < 1.0:
            raise ValueError("relevant_topic_boost must be >= 1")
        if self.group_topic_affinity is not None:
            A = np.asarray(self.group_topic_affinity, dtype=float)
            if A.shape != (self.topic_count, n):
                raise ValueError("group_topic_affinity must be (topic_count, class_count)")
            if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("group_topic_affinity rows must lie on the simplex")

    @property
    def class_count(self) -> int:
        return len(self.group_priors)

    def affinity(self) -> np.ndarray:
        if self.group_topic_affinity is not None:
            return np.asarray(self.group_topic_affinity, dtype=float)
        return cyclic_affinity(self.topic_count, self.class_count)


def _vocabulary(spec: SyntheticSpec):
    """Term table plus index blocks: background | per-group | per-topic."""
    terms: list[str] = []
    bg = np.arange(len(terms), len(terms) + spec.background_vocab)
    terms += [f"com{i:04d}" for i in range(spec.background_vocab)]
    group_blocks = []
    for g in range(spec.class_count):
        block = np.arange(len(terms), len(terms) + spec.group_vocab)
        terms += [f"grp{g}x{i:03d}" for i in range(spec.group_vocab)]
        group_blocks.append(block)
    topic_blocks = []
    for t in range(spec.topic_count):
        block = np.arange(len(terms), len(terms) + spec.topic_vocab)
        terms += [f"top{t:02d}x{i:02d}" for i in range(spec.topic_vocab)]
        topic_blocks.append(block)
    return terms, bg, group_blocks, topic_blocks


def _token_plan(spec: SyntheticSpec, relevant: bool) -> tuple[int, int, int, int]:
    """Per-document token counts (own-topic, noise-topic, group, background).

    Counts are the rounded expected shares of the mixture, fixed per stratum,
    so a document's rank under a topical query depends on which terms it drew
    but not on a lucky surplus of topic tokens. Without this, the top of a
    ranking collects composition extremes whose classifier posteriors differ
    systematically from the average document of the same group, and
    correction samples stop transferring to top-k bags.
    """
    w = np.asarray(spec.mixture_weights, dtype=float)
    w = w / w.sum()
    total = spec.tokens_per_doc
    # group-token count is stratum-independent: the classifier's per-class
    # evidence must not depend on relevance, or corrections fitted on mixed
    # samples stop matching mostly-relevant top-k bags
    n_group = round(w[1] * total)
    if relevant:
        boosted = w[2] * spec.relevant_topic_boost
        n_topic = round(boosted / (w[0] + boosted) * (total - n_group))
    else:
        n_topic = round(w[2] * total)
    n_topic = min(n_topic, total - n_group)
    n_noise = round(n_topic * spec.topic_noise)
    n_own = n_topic - n_noise
    n_bg = total - n_topic - n_group
    return n_own, n_noise, n_group, max(n_bg, 0)


def _component_distributions(spec: SyntheticSpec, bg, group_blocks, topic_blocks):
    """Unigram distributions for each mixture component, over the full vocab."""
    vocab_size = bg.size + sum(b.size for b in group_blocks) + sum(b.size for b in topic_blocks)
    # background: mild 1/rank skew so document frequencies vary
    bg_dist = np.zeros(vocab_size)
    bg_weights = 1.0 / np.arange(1, bg.size + 1)
    bg_dist[bg] = bg_weights / bg_weights.sum()

    group_dists = []
    all_group = np.concatenate(group_blocks)
    for g, own in enumerate(group_blocks):
        dist = np.zeros(vocab_size)
        dist[own] += (1.0 - spec.group_confusion) / own.size
        dist[all_group] += spec.group_confusion / all_group.size
        group_dists.append(dist)

    all_topic = np.concatenate(topic_blocks)
    noise_dist = np.zeros(vocab_size)
    noise_dist[all_topic] = 1.0 / all_topic.size
    return bg_dist, group_dists, noise_dist


def relevance_probability(spec: SyntheticSpec, affinity: np.ndarray,
                          topic: int, group: int) -> float:
    """P(relevant | topic, group): the base rate tilted toward groups affine
    to the topic, with the tilt steepened by the sharpness exponent. Under a
    uniform affinity this reduces exactly to the base rate (relevance
    decoupled from groups)."""
    weights = affinity[topic] ** spec.relevance_sharpness
    tilt = spec.class_count * weights[group] / weights.sum()
    return float(min(1.0, spec.relevance_rate * tilt))


def _generate_pool(spec: SyntheticSpec, rng: np.random.Generator, prefix: str,
                   terms, bg, group_blocks, topic_blocks) -> Corpus:
    n = spec.class_count
    m = spec.docs_per_pool
    affinity = spec.affinity()
    priors = np.asarray(spec.group_priors, dtype=float)

    groups = rng.choice(n, size=m, p=priors)
    topics = np.zeros(m, dtype=int)
    for g in range(n):
        members = np.flatnonzero(groups == g)
        if members.size == 0:
            continue
        col = affinity[:, g] / affinity[:, g].sum()
        topics[members] = rng.choice(spec.topic_count, size=members.size, p=col)
    rel_draw = rng.random(m)
    relevant = np.zeros(m, dtype=bool)
    for t in range(spec.topic_count):
        for g in range(n):
            mask = (topics == t) & (groups == g)
            if mask.any():
                relevant[mask] = rel_draw[mask] < relevance_probability(spec, affinity, t, g)

    tokens = np.zeros((m, spec.tokens_per_doc), dtype=int)
    bg_dist, group_dists, noise_dist = _component_distributions(
        spec, bg, group_blocks, topic_blocks)
    for t in range(spec.topic_count):
        own_block = topic_blocks[t]
        for g in range(n):
            for flag in (False, True):
                mask = (topics == t) & (groups == g) & (relevant == flag)
                count = int(mask.sum())
                if count == 0:
                    continue
                n_own, n_noise, n_group, n_bg = _token_plan(spec, flag)
                parts = [
                    rng.choice(own_block, size=(count, n_own)),
                    rng.choice(len(noise_dist), size=(count, n_noise), p=noise_dist),
                    rng.choice(len(noise_dist), size=(count, n_group), p=group_dists[g]),
                    rng.choice(len(noise_dist), size=(count, n_bg), p=bg_dist),
                ]
                tokens[mask] = np.hstack(parts)

    docs = tuple(
        Document(
            id=f"{prefix}{i:06d}",
            tokens=tuple(terms[j] for j in tokens[i]),
            group=int(groups[i]),
            relevant=bool(relevant[i]),
        )
        for i in range(m)
    )
    group_names = tuple(f"group{g}" for g in range(n))
    return Corpus(docs, class_count=n, attribute_name="group", group_names=group_names)


def topic_queries(spec: SyntheticSpec) -> list[tuple[str, str]]:
    """One query per topic: the first few terms of the topic's vocabulary."""
    _, _, _, topic_blocks = _vocabulary(spec)
    take = min(3, spec.topic_vocab)
    return [
        (f"q{t:03d}", " ".join(f"top{t:02d}x{i:02d}" for i in range(take)))
        for t in range(spec.topic_count)
    ]


def generate_synthetic(spec: SyntheticSpec, seed: int):
    """Two pools drawn from the identical generative process, plus queries.

    Returns (labeled_pool, test_pool, queries); the same seed reproduces the
    exact same corpora.
    """
    rng = np.random.default_rng(seed)
    terms, bg, group_blocks, topic_blocks = _vocabulary(spec)
    labeled = _generate_pool(spec, rng, "L", terms, bg, group_blocks, topic_blocks)
    test = _generate_pool(spec, rng, "U", terms, bg, group_blocks, topic_blocks)
    return labeled, test, topic_queries(spec)
