"""Verified execution of agentic workflow graphs.

Workflows are DAGs of LLM subtasks. Selected nodes get a verifier pipeline;
verification latency is hidden by speculatively running descendants inside
the verifier's latency window, and a similarity-gated rollback decides
whether a revision invalidates the speculated work. Supporting pieces:
budgeted verifier placement, a learned verifier selector, a fault-injection
lab, a GPU-time cost model, and virtual/wall clocks for reproducible runs.
"""

from __future__ import annotations

from .costs import (
    CostConfig,
    CostEntry,
    CostLedger,
    ModelPrice,
    UnknownRole,
    gpu_cost,
    model_cost,
    tally_call,
    tally_verifier_cost,
)
from .executors import (
    BUILTIN_EXECUTORS,
    ExecRequest,
    ExecResult,
    FunctionExecutor,
    HttpExecutor,
    HttpExecutorConfig,
    ProviderError,
    ScriptEntry,
    ScriptExhausted,
    ScriptedExecutor,
    build_prompt,
    gather_upstream,
)
from .faults import (
    FAULT_FREQUENCIES,
    FaultClass,
    FaultSpec,
    NoUpstreamContext,
    VulnerabilityEstimate,
    VulnerabilityReport,
    estimate_vulnerability,
    execute_baseline,
    inject_fault,
    run_campaign,
    run_with_fault,
    sample_fault,
)
from .graph import (
    CycleDetected,
    DuplicateNodeId,
    GraphError,
    MalformedDocument,
    MultipleTerminals,
    NoTerminal,
    TaskNode,
    TopoProfile,
    UnknownEdgeEndpoint,
    WorkflowGraph,
    load_workflow,
    load_workflow_file,
    topo_profile,
    workflow_to_document,
)
from .placement import PlacementPlan, place_verifiers, verifier_priority
from .prompts import PROMPT_NAMES, UnknownPrompt, fill, load_prompt, render_numbered
from .runtime import (
    ExecutionMode,
    FsmInput,
    IllegalTransition,
    NodeState,
    PolicySelection,
    RollbackEvent,
    RunMetrics,
    RunResult,
    StaticSelection,
    TabularSelection,
    run_workflow,
    transition,
)
from .scenarios import (
    BUNDLED_SCENARIOS,
    Scenario,
    ScriptedVerifierRunner,
    UnknownScenario,
    load_scenario,
    run_scenario,
)
from .selector import (
    DEFAULT_CANDIDATES,
    NonFiniteLoss,
    SelectorPolicy,
    TrainingSample,
    featurize,
    grpo_update,
    load_checkpoint,
    oracle_select,
    save_checkpoint,
    select_verifier,
    synthetic_dominant_dataset,
    train_selector,
    utility,
)
from .similarity import (
    LabeledPair,
    Metric,
    RollbackDecision,
    SimilarityScore,
    TaskCategory,
    UnknownMetric,
    calibrate_threshold,
    cosine,
    decide_rollback,
    jaccard,
    rouge_l,
    similarity,
)
from .speculation import (
    BudgetExceeded,
    NodeCostEstimate,
    SpeculationPlan,
    eligible_spec_set,
    expected_spec_cost,
    plan_speculation,
)
from .verifiers import (
    ExecutorPool,
    MissingExecutor,
    OutcomeVerdict,
    UnparseableVerdict,
    Verdict,
    VerifierFamily,
    VerifierKind,
    VerifierOutcome,
    VerifierTask,
    parse_verdict,
    run_verifier,
)

__version__ = "0.1.0"
