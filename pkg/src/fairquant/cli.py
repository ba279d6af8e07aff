"""Command-line front end.

stdout carries machine-readable JSON only; progress and warnings go to
stderr. Exit codes: 0 success, 1 internal error, 2 usage or input error.
All randomness flows from --seed (or the config's seed), so equal invocations
produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import quantifiers as qn
from .core import Corpus, load_corpus_jsonl, prevalence_of, save_corpus_jsonl
from .fairness import (
    CutoffSchedule,
    rkl,
    rnd,
    write_fairness_ae_csv,
    write_rae_csv,
    write_report_json,
    write_timings_csv,
)
from .protocol import ALL_METHODS, ProtocolConfig, run_protocol
from .retrieval import build_index, load_queries_tsv, retrieve, save_queries_tsv, tokenize
from .synthetic import SyntheticSpec, generate_synthetic

USAGE_ERROR = 2


class CliError(Exception):
    """Usage or input error; maps to exit code 2."""


def _fail(message: str) -> "CliError":
    return CliError(message)


def _load_synthetic_spec(payload: dict) -> SyntheticSpec:
    known = {
        "group_priors", "topic_count", "docs_per_pool", "background_vocab",
        "group_vocab", "topic_vocab", "tokens_per_doc", "mixture_weights",
        "relevant_topic_boost", "relevance_rate", "group_confusion",
    }
    unknown = set(payload) - known
    if unknown:
        raise _fail(f"unknown synthetic spec keys: {sorted(unknown)}")
    kwargs = dict(payload)
    for key in ("group_priors", "mixture_weights"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return SyntheticSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise _fail(f"invalid synthetic spec: {exc}") from exc


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise _fail(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _fail(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise _fail(f"{path}: expected a JSON object")
    return payload


def _ensure_out_dir(out: str) -> Path:
    path = Path(out)
    if not path.parent.exists():
        raise _fail(f"parent directory of {out} does not exist")
    path.mkdir(exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = _load_synthetic_spec(_read_json(args.spec)) if args.spec else SyntheticSpec()
    out = _ensure_out_dir(args.out)
    labeled, test, queries = generate_synthetic(spec, args.seed)
    save_corpus_jsonl(labeled, out / "L.jsonl")
    save_corpus_jsonl(test, out / "U.jsonl")
    save_queries_tsv(queries, out / "queries.tsv")
    print(json.dumps({
        "labeled": str(out / "L.jsonl"),
        "test": str(out / "U.jsonl"),
        "queries": str(out / "queries.tsv"),
        "documents_per_pool": len(labeled),
        "class_count": labeled.class_count,
        "seed": args.seed,
    }, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    try:
        corpus = load_corpus_jsonl(args.corpus, attribute_name=args.attribute)
    except (OSError, ValueError) as exc:
        raise _fail(str(exc)) from exc
    labeled = [d for d in corpus.documents if d.group is not None]
    if not labeled:
        raise _fail(f"{args.corpus}: no labeled documents to train on")
    if len(labeled) < len(corpus):
        print(f"dropping {len(corpus) - len(labeled)} unlabeled documents",
              file=sys.stderr)
        corpus = Corpus(tuple(labeled), corpus.class_count, corpus.attribute_name,
                        corpus.group_names)
    try:
        if args.select:
            hp = clf.select_model(corpus, seed=args.seed)
            print(f"model selection picked C={hp.regularization_strength:g} "
                  f"weighting={hp.class_weighting}", file=sys.stderr)
        else:
            hp = clf.ClassifierHyperParams(args.C, args.class_weighting)
        model = clf.train(corpus, hp)
    except ValueError as exc:
        raise _fail(str(exc)) from exc
    clf.save_model(model, args.out)
    accuracy = float(np.mean(clf.crisp_predict(model, corpus.documents)
                             == np.array([d.group for d in corpus.documents])))
    print(json.dumps({
        "model": args.out,
        "classes": model.class_count,
        "vocabulary": len(model.vocabulary),
        "training_accuracy": accuracy,
        "C": model.hyperparams.regularization_strength,
        "class_weighting": model.hyperparams.class_weighting,
        "fingerprint": model.fingerprint,
    }, sort_keys=True))
    return 0


def _parse_target(text: str) -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise _fail(f"invalid --target: {exc}") from exc
    if np.any(values < 0) or abs(values.sum() - 1.0) > 1e-6:
        raise _fail("--target must be a comma-separated probability vector")
    return values / values.sum()


def cmd_estimate(args) -> int:
    method = args.method
    if method not in ("naive", "cc", "acc", "pacc", "kdey"):
        raise _fail(f"unknown method {method!r}; valid: naive, cc, acc, pacc, kdey")
    cutoffs = tuple(args.k)
    try:
        ranking = load_corpus_jsonl(args.ranking)
    except (OSError, ValueError) as exc:
        raise _fail(str(exc)) from exc
    ranked_docs = list(ranking.documents)
    if not ranked_docs:
        raise _fail(f"{args.ranking}: empty ranking")

    model = None
    if method != "naive":
        if not args.model:
            raise _fail(f"method {method} needs a trained classifier (--model)")
        try:
            model = clf.load_model(args.model)
        except (OSError, ValueError) as exc:
            raise _fail(str(exc)) from exc

    pool = None
    if method == "cc":
        if args.pool:
            print("warning: cc ignores the correction pool", file=sys.stderr)
    else:
        if not args.pool:
            raise _fail(f"method {method} needs a labeled correction pool (--pool)")
        try:
            pool = load_corpus_jsonl(args.pool)
        except (OSError, ValueError) as exc:
            raise _fail(str(exc)) from exc
        if any(d.group is None for d in pool.documents):
            raise _fail(f"method {method} needs labels it lacks: "
                        f"{args.pool} contains unlabeled documents")

    n = model.class_count if model is not None else pool.class_count

    # query-biased correction sample from the pool, via the same engine
    lq_docs: list = []
    if pool is not None:
        index = build_index(pool)
        lq = retrieve(index, tokenize(args.query), args.depth, query_id="cli")
        by_id = {d.id: d for d in pool.documents}
        lq_docs = [by_id[i] for i in lq.doc_ids()]
        if not lq_docs and method != "cc":
            raise _fail("the query retrieved no correction-pool documents")

    if args.target:
        target = _parse_target(args.target)
        target_source = "flag"
        if target.size != n:
            raise _fail(f"--target has {target.size} entries but there are {n} classes")
    elif pool is not None:
        rel = [d for d in pool.documents if d.relevant]
        target_source = "pool_relevant" if rel else "pool_all"
        target = prevalence_of(rel or list(pool.documents), n)
    else:
        raise _fail("cc needs an explicit --target (no labeled pool to derive it from)")

    post = crisp = None
    if model is not None:
        post = clf.posteriors(model, ranked_docs)
        crisp = np.argmax(post, axis=1)

    state = None
    try:
        if method == "naive":
            state = qn.fit_correction("naive", None,
                                      np.array([d.group for d in lq_docs]),
                                      class_count=n, cutoffs=cutoffs)
        elif method in ("acc", "pacc", "kdey"):
            lq_post = clf.posteriors(model, lq_docs)
            lq_labels = np.array([d.group for d in lq_docs])
            state = qn.fit_correction(method, lq_post, lq_labels,
                                      bandwidth=args.bandwidth)
    except ValueError as exc:
        raise _fail(str(exc)) from exc

    per_k = {}
    dists = {}
    for k in cutoffs:
        bag = slice(0, min(k, len(ranked_docs)))
        try:
            if method == "naive":
                estimate = qn.naive_estimate(state, k)
            elif method == "cc":
                estimate = qn.classify_and_count(crisp[bag], n)
            elif method == "acc":
                estimate = qn.acc_estimate(state, crisp[bag])
            elif method == "pacc":
                estimate = qn.pacc_estimate(state, post[bag])
            else:
                estimate = qn.kdey_estimate(state, post[bag])
        except ValueError as exc:
            raise _fail(f"estimate failed at k={k}: {exc}") from exc
        dists[k] = estimate
        per_k[str(k)] = [float(v) for v in estimate]

    schedule = CutoffSchedule(cutoffs)
    result = {
        "method": method,
        "query": args.query,
        "class_count": n,
        "target": [float(v) for v in target],
        "target_source": target_source,
        "prevalence": per_k,
        "rkl": rkl(dists, target, schedule),
    }
    if n == 2:
        result["rnd"] = rnd(dists, target, schedule)
    print(json.dumps(result, sort_keys=True))
    return 0


def _config_from_file(args) -> tuple[ProtocolConfig, dict]:
    payload = _read_json(args.config)
    known = {
        "seed", "methods", "cutoffs", "pool_sizes", "retrieval_depth",
        "classifier_docs_per_group", "lq_cap_per_group", "kdey_bandwidth",
        "classifier_C", "classifier_weighting", "model_selection",
        "synthetic", "corpus", "out",
    }
    unknown = set(payload) - known
    if unknown:
        raise _fail(f"unknown config keys: {sorted(unknown)}")

    if args.seed is not None:
        payload["seed"] = args.seed
    if args.methods:
        payload["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.cutoffs:
        payload["cutoffs"] = [int(k) for k in args.cutoffs.split(",")]
    if args.pool_sizes:
        payload["pool_sizes"] = [int(s) for s in args.pool_sizes.split(",")]
    if args.out:
        payload["out"] = args.out
    if "out" not in payload:
        raise _fail("no output directory: set 'out' in the config or pass --out")

    bad = [m for m in payload.get("methods", []) if m not in ALL_METHODS]
    if bad:
        raise _fail(f"unknown method names {bad}; valid: {sorted(ALL_METHODS)}")
    kwargs = {k: v for k, v in payload.items() if k not in ("synthetic", "corpus", "out")}
    for key in ("methods", "cutoffs", "pool_sizes"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        config = ProtocolConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise _fail(f"invalid config: {exc}") from exc
    return config, payload


def cmd_benchmark(args) -> int:
    config, payload = _config_from_file(args)
    out = _ensure_out_dir(payload["out"])

    log_handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    log_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    run_logger = logging.getLogger("fairquant")
    run_logger.setLevel(logging.INFO)
    run_logger.addHandler(log_handler)
    try:
        if "synthetic" in payload:
            spec = _load_synthetic_spec(payload["synthetic"])
            labeled, test, queries = generate_synthetic(spec, config.seed)
        elif "corpus" in payload:
            section = payload["corpus"]
            for key in ("labeled", "test", "queries"):
                if key not in section:
                    raise _fail(f"config corpus section is missing {key!r}")
            attribute = section.get("attribute", "group")
            try:
                labeled = load_corpus_jsonl(section["labeled"], attribute_name=attribute)
                test = load_corpus_jsonl(section["test"], attribute_name=attribute,
                                         class_count=labeled.class_count)
                queries = load_queries_tsv(section["queries"])
            except (OSError, ValueError) as exc:
                raise _fail(str(exc)) from exc
        else:
            raise _fail("config needs either a 'synthetic' or a 'corpus' section")

        print(f"benchmark: {len(labeled)} labeled / {len(test)} test documents, "
              f"{len(queries)} queries, methods={','.join(config.methods)}",
              file=sys.stderr)
        report = run_protocol(config, labeled, test, queries)
    finally:
        run_logger.removeHandler(log_handler)
        log_handler.close()

    write_report_json(report, out / "report.json")
    write_rae_csv(report, out / "rae.csv")
    write_fairness_ae_csv(report, out / "fairness_ae.csv")
    write_timings_csv(report, out / "timings.csv")
    print(json.dumps({
        "out": str(out),
        "files": ["report.json", "rae.csv", "fairness_ae.csv", "timings.csv", "run.log"],
        "pools": [p.size for p in report.pools],
        "queries": sum(len(p.queries) for p in report.pools),
    }, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    path = Path(args.run_dir) / "report.json"
    if not path.exists():
        raise _fail(f"{path} not found")
    payload = _read_json(str(path))
    summary = {
        "attribute": payload.get("attribute"),
        "class_count": payload.get("class_count"),
        "target_prevalence": payload.get("target_prevalence"),
        "target_source": payload.get("target_source"),
        "pools": [
            {
                "size": pool.get("size"),
                "queries": len(pool.get("queries", [])),
                "skipped": pool.get("skipped_queries", []),
                "ae": pool.get("ae", {}),
                "ae_std": pool.get("ae_std", {}),
                "rae_mean": pool.get("rae_mean", {}),
                "significance": pool.get("significance", {}),
            }
            for pool in payload.get("pools", [])
        ],
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairquant",
        description="Estimate group prevalence and fairness of ranked retrieval "
                    "results when item group labels are unknown.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark corpus")
    p.add_argument("--spec", help="JSON file with synthetic-spec overrides")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the group classifier on a labeled corpus")
    p.add_argument("--corpus", required=True, help="labeled JSONL corpus")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--attribute", default="group")
    p.add_argument("--C", type=float, default=1.0, help="regularization strength")
    p.add_argument("--class-weighting", dest="class_weighting",
                   choices=["balanced", "none"], default="balanced")
    p.add_argument("--select", action="store_true",
                   help="pick hyperparameters by 5-fold cross-validation")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate",
                       help="estimate group prevalence and fairness of one ranking")
    p.add_argument("--model", help="trained classifier file")
    p.add_argument("--pool", help="labeled correction-pool JSONL")
    p.add_argument("--ranking", required=True,
                   help="JSONL of ranked documents (rank order, unlabeled)")
    p.add_argument("--query", required=True, help="the query that produced the ranking")
    p.add_argument("--method", required=True)
    p.add_argument("--k", type=int, nargs="+", default=[50, 100, 500, 1000])
    p.add_argument("--bandwidth", type=float, default=0.05, help="KDEy bandwidth")
    p.add_argument("--depth", type=int, default=1000, help="correction retrieval depth")
    p.add_argument("--target", help="comma-separated target distribution p*")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("benchmark", help="run the full experimental protocol")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--methods", help="comma-separated method subset")
    p.add_argument("--cutoffs", help="comma-separated rank cutoffs")
    p.add_argument("--pool-sizes", dest="pool_sizes",
                   help="comma-separated correction-pool sizes")
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="summarize a benchmark run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # internal error
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
