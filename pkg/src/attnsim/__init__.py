"""Fixed-point attention simulator: exact oracle, quantized pipeline, greedy
candidate selection with post-scoring, cycle model, and an experiment harness."""

from .fixedpoint import (
    ContractViolation,
    PrecisionSchedule,
    QArray,
    QFormat,
    QValue,
    ceil_log2,
    make_schedule,
    q_add,
    q_div,
    q_mul,
    quantize,
    quantize_array,
    to_real,
)
from .reference import attention_exact, softmax, top_k, true_scores
from .pipeline import (
    ExpLutPair,
    ExpTable,
    PipelineResult,
    attention_base,
    build_exp_luts,
    dot_product_stage,
    exp_lut_eval,
    exponent_stage,
    make_exp_luts,
    output_stage,
)
from .candidates import (
    ApproxResult,
    CandidateSet,
    GreedyState,
    SelectionConfig,
    SortedKey,
    attention_approx,
    candidate_selection,
    naive_greedy_oracle,
    post_scoring_select,
    preprocess_key,
)
from .cycles import (
    CycleParams,
    CycleReport,
    approx_latency,
    approx_report,
    approx_throughput,
    base_latency,
    base_report,
    base_throughput,
)
from .harness import (
    ExperimentConfig,
    RunReport,
    compute_metrics,
    gen_synthetic,
    load_matrix,
    run_experiment,
    save_matrix,
    self_check,
)

__version__ = "0.1.0"
