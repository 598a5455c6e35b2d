"""The five verifier pipelines, verdict parsing, and majority selection.

Every pipeline runs over an :class:`ExecutorPool` of role-tagged executor
handles and returns a :class:`VerifierOutcome` whose ``verdict`` is ``Kept``
iff the revised output is byte-identical to the original. Latency is the
critical path of the pipeline's internal call DAG: sequential steps add,
concurrent groups contribute their slowest member.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .executors import ExecRequest, ExecResult, Executor
from .prompts import fill, load_prompt, render_numbered
from .similarity import rouge_l


class VerifierError(Exception):
    pass


class UnparseableVerdict(VerifierError):
    """Judge output carried no bracket verdict token, even after a re-ask."""


class MissingExecutor(VerifierError):
    """The pipeline needs an executor role that was not configured."""


class VerifierFamily(str, Enum):
    SELF_REFINE = "self_refine"
    ADVANCED_REFINE = "advanced_refine"
    SELF_CONSISTENCY = "self_consistency"
    LLM_AS_JUDGE = "llm_as_judge"
    DEBATE = "debate"


@dataclass(frozen=True)
class VerifierKind:
    """One configured verifier pipeline.

    ``samples`` and ``variant`` only matter for self-consistency; ``rounds``
    only for debate.
    """

    family: VerifierFamily
    samples: int = 3
    rounds: int = 1
    variant: str = "select"

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", VerifierFamily(self.family))
        if self.samples < 2 or self.samples % 2 == 0:
            raise ValueError("samples must be an odd count of at least 3")
        if self.variant not in ("gen", "select"):
            raise ValueError("variant must be 'gen' or 'select'")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    @property
    def name(self) -> str:
        if self.family is VerifierFamily.SELF_CONSISTENCY:
            return f"{self.family.value}_{self.variant}_{self.samples}"
        if self.family is VerifierFamily.DEBATE:
            return f"{self.family.value}_{self.rounds}"
        return self.family.value


DEFAULT_CANDIDATES: tuple[VerifierKind, ...] = (
    VerifierKind(VerifierFamily.SELF_REFINE),
    VerifierKind(VerifierFamily.ADVANCED_REFINE),
    VerifierKind(VerifierFamily.SELF_CONSISTENCY, samples=3, variant="select"),
    VerifierKind(VerifierFamily.LLM_AS_JUDGE),
    VerifierKind(VerifierFamily.DEBATE, rounds=1),
)


class Verdict(str, Enum):
    """Parsed judge verdict (bracket-token grammar)."""

    CORRECT = "Correct"
    INCORRECT = "Incorrect"
    PREFER_A = "PreferA"
    PREFER_B = "PreferB"
    TIE = "Tie"


class OutcomeVerdict(str, Enum):
    """Did the pipeline keep the original output or revise it?"""

    KEPT = "Kept"
    REVISED = "Revised"


_VERDICT_RE = re.compile(r"\[\[(Correct|Incorrect|A|B|C)\]\]")
_VERDICT_MAP = {
    "Correct": Verdict.CORRECT,
    "Incorrect": Verdict.INCORRECT,
    "A": Verdict.PREFER_A,
    "B": Verdict.PREFER_B,
    "C": Verdict.TIE,
}


def parse_verdict(text: str) -> Verdict:
    """Extract the last bracket verdict token from judge output."""
    matches = _VERDICT_RE.findall(text)
    if not matches:
        raise UnparseableVerdict(f"no verdict token in {text!r}")
    return _VERDICT_MAP[matches[-1]]


@dataclass(frozen=True)
class VerifierCall:
    role: str
    result: ExecResult


@dataclass(frozen=True)
class VerifierOutcome:
    kind: VerifierKind
    verdict: OutcomeVerdict
    revised_output: str
    calls: tuple[VerifierCall, ...]
    latency: float
    detail: Mapping[str, object] = field(default_factory=dict)

    @property
    def call_count(self) -> int:
        return len(self.calls)


@dataclass
class ExecutorPool:
    """Role-tagged executor handles a pipeline draws from."""

    executor: Executor
    secondary: Executor | None = None
    judge: Executor | None = None
    advanced: Executor | None = None

    def get(self, role: str) -> Executor:
        if role not in ("executor", "secondary", "judge", "advanced"):
            raise MissingExecutor(f"unknown executor role {role!r}")
        handle: Executor | None = getattr(self, role)
        if handle is None:
            raise MissingExecutor(f"pipeline needs a {role!r} executor handle")
        return handle


@dataclass(frozen=True)
class VerifierTask:
    """What the verifier sees: the node's prompt and its produced output."""

    node_id: str
    question: str
    original: str
    context: str = ""


class _Session:
    """Per-run call recorder: collects calls and tracks critical-path latency."""

    def __init__(self, pool: ExecutorPool, parallel: bool = False) -> None:
        self.pool = pool
        self.parallel = parallel
        self.calls: list[VerifierCall] = []
        self.latency = 0.0

    def call(self, role: str, prompt: str, node_id: str) -> ExecResult:
        result = self.pool.get(role).execute(ExecRequest(node_id=node_id, prompt=prompt, role=role))
        self.calls.append(VerifierCall(role, result))
        self.latency += result.latency
        return result

    def call_group(self, specs: Sequence[tuple[str, str]], node_id: str) -> list[ExecResult]:
        """Run a concurrent group of (role, prompt) calls; latency adds the
        slowest member only."""

        def _one(spec: tuple[str, str]) -> ExecResult:
            role, prompt = spec
            return self.pool.get(role).execute(
                ExecRequest(node_id=node_id, prompt=prompt, role=role)
            )

        if self.parallel and len(specs) > 1:
            with ThreadPoolExecutor(max_workers=len(specs)) as tp:
                results = list(tp.map(_one, specs))
        else:
            results = [_one(spec) for spec in specs]
        for (role, _), result in zip(specs, results):
            self.calls.append(VerifierCall(role, result))
        self.latency += max(r.latency for r in results)
        return results

    def ask_judge(self, role: str, prompt: str, node_id: str) -> Verdict:
        """One judge call, one re-ask on an unparseable answer, then give up."""
        for attempt in range(2):
            result = self.call(role, prompt, node_id)
            try:
                return parse_verdict(result.output)
            except UnparseableVerdict:
                if attempt == 1:
                    raise
        raise AssertionError("unreachable")


def _select_majority(samples: Sequence[str]) -> tuple[int, str]:
    """Sample with the highest mean pairwise ROUGE-L to the others; ties go
    to the earliest index."""
    best_index = 0
    best_score = -1.0
    for i, candidate in enumerate(samples):
        others = [samples[j] for j in range(len(samples)) if j != i]
        score = sum(rouge_l(candidate, other) for other in others) / len(others)
        if score > best_score:
            best_index, best_score = i, score
    return best_index, samples[best_index]


def _majority_prompt(question: str, answers: Sequence[str]) -> str:
    template = fill(load_prompt("majority_vote"), {"QUESTION": question})
    return render_numbered(template, "Assistant", answers)


def majority_select(
    samples: Sequence[str],
    mode: str = "select",
    executor: Executor | None = None,
    question: str = "",
) -> str:
    """Pick the majority answer from ``samples``.

    ``select`` mode keeps the sample closest to the others (mean pairwise
    ROUGE-L, ties to the earliest); ``gen`` mode asks ``executor`` to vote
    with the majority prompt. A single sample is returned as-is.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    if len(samples) == 1:
        return samples[0]
    if mode == "select":
        return _select_majority(samples)[1]
    if mode != "gen":
        raise ValueError("mode must be 'gen' or 'select'")
    if executor is None:
        raise MissingExecutor("gen-mode majority vote needs an executor handle")
    result = executor.execute(
        ExecRequest(node_id="majority-vote", prompt=_majority_prompt(question, samples))
    )
    return result.output


def _run_refine(task: VerifierTask, session: _Session, feedback_role: str) -> tuple[str, dict]:
    feedback_prompt = fill(
        load_prompt("refine_feedback"),
        {"QUESTION": task.question, "ORIGINAL_ANSWER": task.original},
    )
    feedback = session.call(feedback_role, feedback_prompt, task.node_id)
    revision_prompt = fill(
        load_prompt("refine_revision"),
        {
            "QUESTION": task.question,
            "ORIGINAL_ANSWER": task.original,
            "FEEDBACK": feedback.output,
        },
    )
    revision = session.call("executor", revision_prompt, task.node_id)
    return revision.output, {"feedback_role": feedback_role}


def _run_self_consistency(task: VerifierTask, session: _Session, kind: VerifierKind) -> tuple[str, dict]:
    specs = [("executor", task.question)] * kind.samples
    answers = [r.output for r in session.call_group(specs, task.node_id)]
    if kind.variant == "select":
        index, chosen = _select_majority(answers)
        return chosen, {"selected_index": index, "samples": kind.samples}
    vote = session.call("executor", _majority_prompt(task.question, answers), task.node_id)
    return vote.output, {"samples": kind.samples}


def _run_llm_as_judge(task: VerifierTask, session: _Session) -> tuple[str, dict]:
    fresh, secondary = session.call_group(
        [("executor", task.question), ("secondary", task.question)], task.node_id
    )
    judge_prompt = fill(
        load_prompt("judge"),
        {
            "QUESTION": task.question,
            "PREDICTION_A": fresh.output,
            "PREDICTION_B": secondary.output,
        },
    )
    verdict = session.ask_judge("judge", judge_prompt, task.node_id)
    # [[B]] adopts the secondary answer; [[A]] and a tie stand by the
    # already-committed original.
    revised = secondary.output if verdict is Verdict.PREFER_B else task.original
    return revised, {"judge_verdict": verdict.value}


def _run_debate(task: VerifierTask, session: _Session, kind: VerifierKind) -> tuple[str, dict]:
    base, secondary = session.call_group(
        [("executor", task.question), ("secondary", task.question)], task.node_id
    )
    answers = {"executor": base.output, "secondary": secondary.output}
    for _ in range(kind.rounds):
        prompts = {}
        for side, other in (("executor", "secondary"), ("secondary", "executor")):
            rebuttal = fill(
                load_prompt("debate_round2"),
                {"QUESTION": task.question, "ORIGINAL_ANSWER": answers[side]},
            )
            prompts[side] = render_numbered(rebuttal, "Colleague", [answers[other]])
        revised_base, revised_secondary = session.call_group(
            [("executor", prompts["executor"]), ("secondary", prompts["secondary"])],
            task.node_id,
        )
        answers = {"executor": revised_base.output, "secondary": revised_secondary.output}
    judge_template = fill(
        load_prompt("debate_judge"), {"CONTEXT": task.context, "QUESTION": task.question}
    )
    judge_prompt = render_numbered(
        judge_template, "Assistant", [answers["executor"], answers["secondary"]]
    )
    verdict = session.ask_judge("judge", judge_prompt, task.node_id)
    if verdict is Verdict.PREFER_A:
        revised = answers["executor"]
    elif verdict is Verdict.PREFER_B:
        revised = answers["secondary"]
    else:
        revised = task.original
    return revised, {"judge_verdict": verdict.value, "rounds": kind.rounds}


_REQUIRED_ROLES: Mapping[VerifierFamily, tuple[str, ...]] = {
    VerifierFamily.SELF_REFINE: ("executor",),
    VerifierFamily.ADVANCED_REFINE: ("executor", "advanced"),
    VerifierFamily.SELF_CONSISTENCY: ("executor",),
    VerifierFamily.LLM_AS_JUDGE: ("executor", "secondary", "judge"),
    VerifierFamily.DEBATE: ("executor", "secondary", "judge"),
}


def run_verifier(
    kind: VerifierKind,
    task: VerifierTask,
    pool: ExecutorPool,
    parallel: bool = False,
) -> VerifierOutcome:
    """Run one pipeline over one node's (question, original output) pair.

    ``parallel`` dispatches concurrent groups on real threads; leave it off
    for deterministic scripted runs — latency accounting is identical either
    way.
    """
    for role in _REQUIRED_ROLES[kind.family]:
        pool.get(role)
    session = _Session(pool, parallel=parallel)
    if kind.family is VerifierFamily.SELF_REFINE:
        revised, detail = _run_refine(task, session, "executor")
    elif kind.family is VerifierFamily.ADVANCED_REFINE:
        revised, detail = _run_refine(task, session, "advanced")
    elif kind.family is VerifierFamily.SELF_CONSISTENCY:
        revised, detail = _run_self_consistency(task, session, kind)
    elif kind.family is VerifierFamily.LLM_AS_JUDGE:
        revised, detail = _run_llm_as_judge(task, session)
    else:
        revised, detail = _run_debate(task, session, kind)
    verdict = OutcomeVerdict.KEPT if revised == task.original else OutcomeVerdict.REVISED
    return VerifierOutcome(
        kind=kind,
        verdict=verdict,
        revised_output=revised,
        calls=tuple(session.calls),
        latency=session.latency,
        detail=detail,
    )
