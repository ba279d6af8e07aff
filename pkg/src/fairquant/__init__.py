"""Group-prevalence quantification and fairness estimation for ranked
retrieval results when item group labels are unknown."""

from .core import (
    Corpus,
    Document,
    RankedList,
    load_corpus_jsonl,
    prevalence_of,
    project_to_simplex,
    save_corpus_jsonl,
    validate_posteriors,
    validate_prevalence,
)
from .retrieval import Bm25Params, InvertedIndex, build_index, retrieve, tokenize
from .classifier import (
    ClassifierHyperParams,
    LogisticModel,
    crisp_predict,
    cv_posteriors,
    cv_rate_matrix,
    featurize,
    load_model,
    posteriors,
    save_model,
    select_model,
    train,
)
from .quantifiers import (
    BandwidthQuery,
    CorrectionModel,
    acc_estimate,
    classify_and_count,
    fit_correction,
    kdey_estimate,
    naive_estimate,
    pacc_estimate,
    select_kdey_bandwidth,
    solve_least_squares_simplex,
)
from .fairness import (
    CutoffSchedule,
    FairnessReport,
    ae_over_queries,
    kl_divergence,
    rae,
    rkl,
    rnd,
    wilcoxon_signed_rank,
)
from .pmc import PmcRates, estimate_pmc_rates, pmc_b_correct, pmc_d_correct
from .synthetic import SyntheticSpec, generate_synthetic
from .protocol import (
    ProtocolConfig,
    TimingWorkload,
    draw_per_group,
    measure_timings,
    run_protocol,
    undersample_pool,
)

__version__ = "0.1.0"
