"""Plan-hint generation and refinement with retrieval-augmented prompts and latency feedback."""

from __future__ import annotations

__version__ = "0.1.0"

from .engine import (
    EngineRequest,
    ReplayEngine,
    SimEngine,
    SimQuery,
    SimWorkload,
    enumerate_hint_space,
    generate_workload,
    load_workload,
    save_workload,
)
from .errors import HintOptError
from .generators import GeneratorSpec, generate, make_generator, mutate_hint
from .hints import (
    ErrorKind,
    Hint,
    HintMode,
    HintValidationError,
    hint_equals_default,
    normalize_generated_text,
    parse_hint,
    serialize_hint,
    translate_to_join_sequence,
)
from .metrics import MetricsSummary, filtered_gain, homogeneous_rate, overall_gain, percentile_table, ret
from .orchestrator import IterationLog, RunConfig, SelfEvolvingOptimizer, prepare, run, schedule_episodes
from .plan import (
    ExecutionOutcome,
    Operator,
    PlanNode,
    PlanStats,
    extract_hint,
    extract_tables,
    parse_plan_json,
    simplify_plan,
)
from .prompts import PromptBundle, build_prompt, compute_gain, evolve_prompt
from .reward import GrpoConfig, RewardGroup, clipped_surrogate, gradient_coefficient, latency_reward, normalize_advantages, score_group
from .sft_dataset import SftDatasetEntry, build_sft_dataset, read_dataset, write_dataset
from .store import ExecutionRecord, RecordStore, ReplacementDecision, SimilarityMetric, embed, similarity
from .training import QGrpoTrainer, SftPair, SftTrainer, TabularPolicy, kl_divergence, qgrpo_train, sft_step

__all__ = [
    "__version__",
    "build_prompt",
    "build_sft_dataset",
    "clipped_surrogate",
    "compute_gain",
    "embed",
    "EngineRequest",
    "enumerate_hint_space",
    "ErrorKind",
    "evolve_prompt",
    "ExecutionOutcome",
    "ExecutionRecord",
    "extract_hint",
    "extract_tables",
    "filtered_gain",
    "generate",
    "generate_workload",
    "GeneratorSpec",
    "gradient_coefficient",
    "GrpoConfig",
    "Hint",
    "hint_equals_default",
    "HintMode",
    "HintOptError",
    "HintValidationError",
    "homogeneous_rate",
    "IterationLog",
    "kl_divergence",
    "latency_reward",
    "load_workload",
    "make_generator",
    "MetricsSummary",
    "mutate_hint",
    "normalize_advantages",
    "normalize_generated_text",
    "Operator",
    "overall_gain",
    "parse_hint",
    "parse_plan_json",
    "percentile_table",
    "PlanNode",
    "PlanStats",
    "prepare",
    "PromptBundle",
    "qgrpo_train",
    "QGrpoTrainer",
    "read_dataset",
    "RecordStore",
    "ReplacementDecision",
    "ReplayEngine",
    "ret",
    "RewardGroup",
    "run",
    "RunConfig",
    "save_workload",
    "schedule_episodes",
    "score_group",
    "SelfEvolvingOptimizer",
    "serialize_hint",
    "sft_step",
    "SftDatasetEntry",
    "SftPair",
    "SftTrainer",
    "SimEngine",
    "similarity",
    "SimilarityMetric",
    "simplify_plan",
    "SimQuery",
    "SimWorkload",
    "TabularPolicy",
    "translate_to_join_sequence",
    "write_dataset",
]
