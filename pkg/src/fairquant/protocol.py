"""End-to-end benchmark harness: pool splitting, distribution hiding, the
correction-pool size sweep, per-query retrieval and correction learning, and
per-cutoff evaluation against ground truth.

Flow per run: draw a fixed number of documents per group to train the
classifier (hiding the training prior), then for every correction-pool size
and every query retrieve the test ranking and the correction sample with the
same engine and query, cap the correction sample per group (hiding the
correction prior), fit each method's correction on it, and score prevalence
estimates (RAE) and fairness estimates (rKL, and rND when binary) against the
labels that only the evaluator may read.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from . import classifier as clf
from . import quantifiers as qn
from .core import Corpus, Document, prevalence_of
from .fairness import (
    CutoffSchedule,
    FairnessReport,
    PoolReport,
    QueryOutcome,
    finalize_pool,
    rae,
    rkl,
    rnd,
)
from .pmc import estimate_pmc_rates, pmc_b_correct, pmc_d_correct
from .retrieval import Bm25Params, build_index, retrieve, tokenize

logger = logging.getLogger("fairquant.protocol")

PREVALENCE_METHODS = ("naive", "cc", "acc", "pacc", "kdey")
PMC_METHODS = ("pmc_b", "pmc_b_plus", "pmc_d", "pmc_d_plus")
ALL_METHODS = PREVALENCE_METHODS + PMC_METHODS


@dataclass(frozen=True)
class ProtocolConfig:
    seed: int = 0
    methods: tuple[str, ...] = ("naive", "cc", "acc", "pacc", "kdey")
    cutoffs: tuple[int, ...] = (50, 100, 500, 1000)
    pool_sizes: tuple[int, ...] = (10_000, 20_000, 40_000)
    retrieval_depth: int = 1000
    classifier_docs_per_group: int = 500
    lq_cap_per_group: int = 200
    kdey_bandwidth: float = 0.05
    classifier_C: float = 1.0
    classifier_weighting: str = "balanced"
    model_selection: bool = False

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {sorted(ALL_METHODS)}")
        if not self.methods:
            raise ValueError("at least one method is required")
        if not self.cutoffs or any(k < 2 for k in self.cutoffs):
            raise ValueError("cutoffs must be >= 2")
        if max(self.cutoffs) > self.retrieval_depth:
            raise ValueError("cutoffs cannot exceed the retrieval depth")
        if self.lq_cap_per_group < 1:
            raise ValueError("lq_cap_per_group must be >= 1")
        if not self.pool_sizes or any(s < 1 for s in self.pool_sizes):
            raise ValueError("pool_sizes must be positive")

    def hyperparams(self) -> clf.ClassifierHyperParams:
        return clf.ClassifierHyperParams(self.classifier_C, self.classifier_weighting)


# ---------------------------------------------------------------------------
# Pool manipulation
# ---------------------------------------------------------------------------

def undersample_pool(corpus: Corpus, size: int, seed: int) -> Corpus:
    """Uniform subset without replacement; same seed with growing sizes gives
    nested subsets (one permutation, prefixes)."""
    if size > len(corpus):
        raise ValueError(f"requested size {size} exceeds pool size {len(corpus)}")
    perm = np.random.default_rng(seed).permutation(len(corpus))
    chosen = np.sort(perm[:size])
    docs = tuple(corpus.documents[i] for i in chosen)
    return Corpus(docs, corpus.class_count, corpus.attribute_name, corpus.group_names)


def draw_per_group(corpus: Corpus, per_group: int, seed: int) -> Corpus:
    """Uniform per-group draw (the classifier-training pool). Groups with
    fewer documents contribute all of them, with a log note."""
    rng = np.random.default_rng(seed)
    by_group: dict[int, list[int]] = {}
    for idx, doc in enumerate(corpus.documents):
        if doc.group is None:
            raise ValueError(f"unlabeled document in labeled pool: {doc.id!r}")
        by_group.setdefault(doc.group, []).append(idx)
    chosen: list[int] = []
    for g in range(corpus.class_count):
        members = by_group.get(g, [])
        if not members:
            raise ValueError(f"empty group {g} in labeled pool")
        if len(members) < per_group:
            logger.info("group %d has only %d documents (requested %d); taking all",
                        g, len(members), per_group)
            chosen.extend(members)
        else:
            picks = rng.permutation(len(members))[:per_group]
            chosen.extend(members[i] for i in sorted(picks))
    chosen.sort()
    docs = tuple(corpus.documents[i] for i in chosen)
    return Corpus(docs, corpus.class_count, corpus.attribute_name, corpus.group_names)


def strip_group_labels(docs) -> list[Document]:
    """Unlabeled copies of test documents; quantifier code paths only ever see
    these, so ground truth cannot leak into estimation."""
    return [replace(d, group=None) for d in docs]


def cap_per_group(ranked_docs: list[Document], cap: int) -> list[Document]:
    """Keep the ``cap`` highest-ranked documents of every group, preserving
    rank order (the input must already be in rank order)."""
    counts: Counter[int] = Counter()
    kept: list[Document] = []
    for doc in ranked_docs:
        if counts[doc.group] < cap:
            counts[doc.group] += 1
            kept.append(doc)
    return kept


# ---------------------------------------------------------------------------
# Method dispatch
# ---------------------------------------------------------------------------

def _builtin_quantifier(method: str, config: ProtocolConfig, class_count: int):
    """(fit, predict) pair for one prevalence method.

    fit(posteriors, labels, fallback) -> state; labels are in rank order.
    predict(state, posteriors_k, crisp_k, k) -> prevalence vector.
    """
    if method == "cc":
        return (lambda post, labels, fallback: None,
                lambda state, post_k, crisp_k, k: qn.classify_and_count(crisp_k, class_count))
    if method == "naive":
        def fit_naive(post, labels, fallback):
            if labels.size == 0:
                raise ValueError("empty correction sample")
            return qn.fit_correction("naive", None, labels, class_count=class_count,
                                     cutoffs=config.cutoffs)
        return fit_naive, (lambda state, post_k, crisp_k, k: qn.naive_estimate(state, k))
    if method == "acc":
        def fit_acc(post, labels, fallback):
            return qn.fit_correction("acc", post, labels, fallback=fallback)
        return fit_acc, (lambda state, post_k, crisp_k, k: qn.acc_estimate(state, crisp_k))
    if method == "pacc":
        def fit_pacc(post, labels, fallback):
            return qn.fit_correction("pacc", post, labels, fallback=fallback)
        return fit_pacc, (lambda state, post_k, crisp_k, k: qn.pacc_estimate(state, post_k))
    if method == "kdey":
        def fit_kdey(post, labels, fallback):
            return qn.fit_correction("kdey", post, labels,
                                     bandwidth=config.kdey_bandwidth, fallback=fallback)
        return fit_kdey, (lambda state, post_k, crisp_k, k: qn.kdey_estimate(state, post_k))
    raise ValueError(f"no built-in quantifier for {method!r}")


def _global_fallbacks(cv_post: np.ndarray, cv_labels: np.ndarray,
                      class_count: int, bandwidth: float) -> dict[str, qn.CorrectionModel]:
    """Correction models fitted on out-of-fold classifier-pool predictions;
    these stand in for classes a query's correction sample never retrieved."""
    predicted = np.argmax(cv_post, axis=1)
    acc_M = clf.rate_matrix_from_predictions(predicted, cv_labels, class_count)
    pacc_M = np.zeros((class_count, class_count))
    centers: list[np.ndarray] = []
    for j in range(class_count):
        members = cv_post[cv_labels == j]
        pacc_M[:, j] = members.mean(axis=0)
        centers.append(members.copy())
    return {
        "acc": qn.CorrectionModel("acc", class_count, rate_matrix=acc_M),
        "pacc": qn.CorrectionModel("pacc", class_count, rate_matrix=pacc_M),
        "kdey": qn.CorrectionModel("kdey", class_count, class_centers=centers,
                                   bandwidth=bandwidth),
    }


# ---------------------------------------------------------------------------
# The harness
# ---------------------------------------------------------------------------

@dataclass
class _QueryContext:
    query_id: str
    terms: list[str]
    docs: list[Document]                    # labeled, rank order (evaluation only)
    posteriors: np.ndarray | None
    crisp: np.ndarray | None
    true_prev: dict[int, np.ndarray]
    true_fairness: dict[str, float]


class _Timer:
    def __init__(self):
        self.samples: dict[tuple[str, str], list[float]] = {}

    def add(self, method: str, phase: str, seconds: float):
        self.samples.setdefault((method, phase), []).append(seconds)

    def summary(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for (method, phase), values in sorted(self.samples.items()):
            entry = out.setdefault(method, {})
            entry[f"{phase}_ms"] = float(np.mean(values) * 1000.0)
            entry[f"{phase}_events"] = float(len(values))
        return out


def run_protocol(config: ProtocolConfig, labeled_pool: Corpus, test_pool: Corpus,
                 queries: list[tuple[str, str]], classifier: clf.LogisticModel | None = None,
                 quantifier_factory=None) -> FairnessReport:
    """Execute the full benchmark and return the populated report.

    ``labeled_pool`` must be fully labeled; ``test_pool`` labels are read only
    by the evaluator. Passing a pre-trained ``classifier`` skips the
    per-group draw and training stage (the caller then guarantees it was
    trained on documents disjoint from both pools). ``quantifier_factory``
    may map a method name to a custom (fit, predict) pair.
    """
    n = labeled_pool.class_count
    if test_pool.class_count != n:
        raise ValueError("labeled and test pools disagree on class count")
    overlap = {d.id for d in labeled_pool.documents} & {d.id for d in test_pool.documents}
    if overlap:
        raise ValueError(f"labeled and test pools share document ids: {sorted(overlap)[:5]}")
    if any(d.group is None for d in test_pool.documents):
        raise ValueError("test pool must carry ground-truth labels for evaluation")
    if any(m in PMC_METHODS for m in config.methods) and n != 2:
        raise ValueError("PMC baselines are binary-only")

    metrics = ("rkl", "rnd") if n == 2 else ("rkl",)
    schedule = CutoffSchedule(config.cutoffs)
    params = Bm25Params()
    prevalence_methods = [m for m in config.methods if m in PREVALENCE_METHODS]
    pmc_methods = [m for m in config.methods if m in PMC_METHODS]
    needs_classifier = bool(pmc_methods) or any(m != "naive" for m in prevalence_methods)

    # target distribution p*: judged-relevant documents when available
    relevant_docs = [d for d in test_pool.documents if d.relevant]
    if relevant_docs:
        target, target_source = prevalence_of(relevant_docs, n), "relevant"
    else:
        target, target_source = prevalence_of(test_pool.documents, n), "all"
        logger.info("test pool has no relevance flags; p* falls back to the whole pool")

    # classifier stage (Algorithm lines 2-4) and global fallbacks
    correction_root = labeled_pool
    model = classifier
    fallbacks: dict[str, qn.CorrectionModel] = {}
    pmc_base_rates = None
    if needs_classifier and model is None:
        if config.classifier_docs_per_group > 0:
            train_pool = draw_per_group(labeled_pool, config.classifier_docs_per_group,
                                        config.seed)
            correction_root = labeled_pool.without(d.id for d in train_pool.documents)
        else:
            train_pool = labeled_pool
        hp = config.hyperparams()
        if config.model_selection:
            hp = clf.select_model(train_pool, seed=config.seed + 2)
            logger.info("model selection picked C=%g weighting=%s",
                        hp.regularization_strength, hp.class_weighting)
        model = clf.train(train_pool, hp)
        cv_post, cv_labels = clf.cv_posteriors(train_pool, hp, seed=config.seed + 2)
        fallbacks = _global_fallbacks(cv_post, cv_labels, n, config.kdey_bandwidth)
        if pmc_methods:
            pmc_base_rates = estimate_pmc_rates(
                cv_labels, np.argmax(cv_post, axis=1), "classifier_training_set")
    elif needs_classifier:
        cv_post, cv_labels = None, None  # caller-supplied model: no global stats
        logger.info("using caller-supplied classifier; no global fallback available")

    quantifiers = {}
    for method in prevalence_methods:
        impl = quantifier_factory(method) if quantifier_factory else None
        quantifiers[method] = impl if impl is not None else _builtin_quantifier(
            method, config, n)

    # per-query test-side context is independent of the pool-size sweep
    test_index = build_index(test_pool)
    test_by_id = {d.id: d for d in test_pool.documents}
    contexts: list[_QueryContext] = []
    skipped: list[str] = []
    for qid, qtext in queries:
        terms = tokenize(qtext)
        ranking = retrieve(test_index, terms, config.retrieval_depth, params, qid)
        if len(ranking) == 0:
            skipped.append(qid)
            logger.info("query %s retrieved no test documents; skipped", qid)
            continue
        docs = [test_by_id[i] for i in ranking.doc_ids()]
        post = crisp = None
        if needs_classifier:
            post = clf.posteriors(model, strip_group_labels(docs))
            crisp = np.argmax(post, axis=1)
        true_prev = {k: prevalence_of(docs[: min(k, len(docs))], n) for k in config.cutoffs}
        true_fair = {"rkl": rkl(true_prev, target, schedule)}
        if n == 2:
            true_fair["rnd"] = rnd(true_prev, target, schedule)
        contexts.append(_QueryContext(qid, terms, docs, post, crisp, true_prev, true_fair))

    timer = _Timer()
    report = FairnessReport(
        class_count=n,
        attribute_name=labeled_pool.attribute_name,
        target_prevalence=[float(v) for v in target],
        target_source=target_source,
        config=_config_dict(config),
    )

    perm_seed = config.seed + 1
    for requested in config.pool_sizes:
        size = min(int(requested), len(correction_root))
        if size < requested:
            logger.info("pool size %d clamped to %d (available labeled documents)",
                        requested, size)
        corr_pool = undersample_pool(correction_root, size, perm_seed)
        pool_report = PoolReport(size=size, requested_size=int(requested),
                                 skipped_queries=list(skipped))
        corr_index = build_index(corr_pool)
        corr_by_id = {d.id: d for d in corr_pool.documents}

        for ctx in contexts:
            outcome = _run_query(ctx, corr_index, corr_by_id, config, quantifiers,
                                 fallbacks, model, n, target, schedule, metrics,
                                 pmc_methods, pmc_base_rates, timer)
            pool_report.queries.append(outcome)
        pool_report.queries.sort(key=lambda q: q.query_id)
        finalize_pool(pool_report, metrics)
        report.pools.append(pool_report)

    report.timings = timer.summary()
    return report


def _run_query(ctx: _QueryContext, corr_index, corr_by_id, config: ProtocolConfig,
               quantifiers, fallbacks, model, n, target, schedule, metrics,
               pmc_methods, pmc_base_rates, timer: _Timer) -> QueryOutcome:
    lq_ranking = retrieve(corr_index, ctx.terms, config.retrieval_depth,
                          Bm25Params(), ctx.query_id)
    lq_docs = cap_per_group([corr_by_id[i] for i in lq_ranking.doc_ids()],
                            config.lq_cap_per_group)
    lq_labels = np.asarray([d.group for d in lq_docs], dtype=int)
    lq_post = None
    if model is not None and lq_docs:
        lq_post = clf.posteriors(model, lq_docs)

    missing = sorted(set(range(n)) - set(lq_labels.tolist()))
    if missing:
        logger.info("query %s: classes %s unseen in correction sample; using global fallback",
                    ctx.query_id, missing)

    outcome = QueryOutcome(
        query_id=ctx.query_id,
        retrieved=len(ctx.docs),
        true_fairness=dict(ctx.true_fairness),
        est_fairness={m: {} for m in metrics},
        rae_at_k={},
        fallback_classes=missing,
    )

    est_prevalences: dict[str, dict[int, np.ndarray]] = {}
    for method, (fit, predict) in quantifiers.items():
        state = None
        try:
            start = time.perf_counter()
            if lq_labels.size == 0 and method in fallbacks:
                state = fallbacks[method]
                logger.info("query %s: empty correction sample; %s uses the global model",
                            ctx.query_id, method)
            else:
                state = fit(lq_post, lq_labels, fallbacks.get(method))
            timer.add(method, "learn", time.perf_counter() - start)
        except ValueError as exc:
            logger.info("query %s: %s correction unavailable (%s)", ctx.query_id, method, exc)
            continue
        at_k: dict[int, np.ndarray] = {}
        failed = False
        for k in config.cutoffs:
            m_k = min(k, len(ctx.docs))
            post_k = ctx.posteriors[:m_k] if ctx.posteriors is not None else None
            crisp_k = ctx.crisp[:m_k] if ctx.crisp is not None else None
            try:
                start = time.perf_counter()
                estimate = predict(state, post_k, crisp_k, k)
                timer.add(method, "predict", time.perf_counter() - start)
            except ValueError as exc:
                logger.info("query %s: %s estimate failed at k=%d (%s)",
                            ctx.query_id, method, k, exc)
                failed = True
                break
            at_k[k] = estimate
        if failed or not at_k:
            continue
        est_prevalences[method] = at_k
        outcome.rae_at_k[method] = {
            k: rae(ctx.true_prev[k], at_k[k], min(k, len(ctx.docs)))
            for k in config.cutoffs
        }
        outcome.est_fairness["rkl"][method] = rkl(at_k, target, schedule)
        if "rnd" in metrics:
            outcome.est_fairness["rnd"][method] = rnd(at_k, target, schedule)

    if pmc_methods:
        _run_pmc(ctx, config, outcome, est_prevalences, lq_labels, lq_post,
                 model, n, target, schedule, pmc_methods, pmc_base_rates, timer)
    return outcome


def _run_pmc(ctx, config, outcome, est_prevalences, lq_labels, lq_post, model,
             n, target, schedule, pmc_methods, pmc_base_rates, timer) -> None:
    """Post-metric corrections of the proxy fairness gap (binary only)."""
    if "cc" in est_prevalences:
        cc_at_k = est_prevalences["cc"]
    else:
        cc_at_k = {k: qn.classify_and_count(ctx.crisp[: min(k, len(ctx.docs))], n)
                   for k in config.cutoffs}
    proxy = rnd(cc_at_k, target, schedule)

    plus_rates = None
    if lq_labels.size:
        try:
            plus_rates = estimate_pmc_rates(
                lq_labels, np.argmax(lq_post, axis=1), "query_biased_lq")
        except ValueError as exc:
            logger.info("query %s: query-biased PMC rates unavailable (%s); "
                        "falling back to training-set rates", ctx.query_id, exc)
    if plus_rates is None:
        plus_rates = pmc_base_rates

    corrections = {"pmc_b": pmc_b_correct, "pmc_d": pmc_d_correct}
    for method in pmc_methods:
        base_name = method.removesuffix("_plus")
        rates = plus_rates if method.endswith("_plus") else pmc_base_rates
        try:
            start = time.perf_counter()
            corrected = corrections[base_name](proxy, rates)
            timer.add(method, "predict", time.perf_counter() - start)
        except ValueError as exc:
            logger.info("query %s: %s failed (%s)", ctx.query_id, method, exc)
            continue
        outcome.est_fairness["rnd"][method] = corrected


def _config_dict(config: ProtocolConfig) -> dict:
    return {
        "seed": config.seed,
        "methods": list(config.methods),
        "cutoffs": list(config.cutoffs),
        "pool_sizes": [int(s) for s in config.pool_sizes],
        "retrieval_depth": config.retrieval_depth,
        "classifier_docs_per_group": config.classifier_docs_per_group,
        "lq_cap_per_group": config.lq_cap_per_group,
        "kdey_bandwidth": config.kdey_bandwidth,
        "classifier_C": config.classifier_C,
        "classifier_weighting": config.classifier_weighting,
        "model_selection": config.model_selection,
    }


# ---------------------------------------------------------------------------
# Timing measurement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingWorkload:
    """One query's worth of inputs for the timing benchmark."""

    correction_posteriors: np.ndarray
    correction_labels: np.ndarray
    test_posteriors: np.ndarray


def measure_timings(quantifier, workload: list[TimingWorkload], *,
                    bandwidth: float = 0.05, cutoff: int = 100) -> dict[str, float]:
    """Mean wall-clock learn/predict times (ms) over a per-query workload.

    ``quantifier`` is a built-in variant name or a custom (fit, predict) pair
    with fit(posteriors, labels) -> state and predict(state, posteriors) ->
    estimate.
    """
    if isinstance(quantifier, str):
        variant = quantifier
        if variant == "cc":
            fit = lambda post, labels: None
            predict = lambda state, post: qn.classify_and_count(
                np.argmax(post, axis=1), post.shape[1])
        elif variant == "naive":
            fit = lambda post, labels: qn.fit_correction(
                "naive", None, labels, class_count=post.shape[1], cutoffs=(cutoff,))
            predict = lambda state, post: qn.naive_estimate(state, cutoff)
        elif variant == "acc":
            fit = lambda post, labels: qn.fit_correction("acc", post, labels)
            predict = lambda state, post: qn.acc_estimate(state, np.argmax(post, axis=1))
        elif variant == "pacc":
            fit = lambda post, labels: qn.fit_correction("pacc", post, labels)
            predict = lambda state, post: qn.pacc_estimate(state, post)
        elif variant == "kdey":
            fit = lambda post, labels: qn.fit_correction(
                "kdey", post, labels, bandwidth=bandwidth)
            predict = lambda state, post: qn.kdey_estimate(state, post)
        else:
            raise ValueError(f"unknown variant {variant!r}")
    else:
        fit, predict = quantifier

    learn_times, predict_times = [], []
    for item in workload:
        start = time.perf_counter()
        state = fit(item.correction_posteriors, item.correction_labels)
        learn_times.append(time.perf_counter() - start)
        start = time.perf_counter()
        predict(state, item.test_posteriors)
        predict_times.append(time.perf_counter() - start)
    return {
        "learn_ms": float(np.mean(learn_times) * 1000.0),
        "predict_ms": float(np.mean(predict_times) * 1000.0),
        "queries": float(len(workload)),
    }
