"""End-to-end acceptance suite.

Nine numbered criteria cover the package's load-bearing guarantees: FSM
conformance, fault-class frequencies, placement invariants, speculation math,
speculative-vs-sequential latency dominance with byte-identical outputs,
selector training, similarity metrics, the cost model, and verifier pipeline
call patterns. Each test prints one PASS/FAIL line (with its runtime) and
enforces a wall-clock bound.
"""

from __future__ import annotations

import hashlib
import random
import time
from collections import Counter

import numpy as np
from scipy import stats

from veriflow.costs import CostConfig, CostLedger, gpu_cost, tally_call
from veriflow.executors import FunctionExecutor, ScriptEntry, ScriptedExecutor
from veriflow.faults import FAULT_FREQUENCIES, FaultClass, sample_fault
from veriflow.graph import topo_profile
from veriflow.placement import place_verifiers, verifier_priority
from veriflow.runtime import (
    ExecutionMode,
    FsmInput,
    IllegalTransition,
    NodeState,
    run_workflow,
    transition,
)
from veriflow.scenarios import ScriptedVerifierRunner, load_scenario, run_scenario
from veriflow.selector import (
    SelectorPolicy,
    TrainingSample,
    grpo_loss,
    grpo_update,
    group_advantage,
    selection_accuracy,
    synthetic_dominant_dataset,
    train_selector,
    utility,
)
from veriflow.similarity import bleu, cosine, jaccard, rouge_l
from veriflow.speculation import (
    NodeCostEstimate,
    eligible_spec_set,
    expected_spec_cost,
)
from veriflow.verifiers import (
    ExecutorPool,
    OutcomeVerdict,
    VerifierFamily,
    VerifierKind,
    VerifierTask,
    run_verifier,
)

from conftest import brute_force_eligible, make_random_dag


def report(num: int, label: str, failures: list[str], started: float, bound: float) -> None:
    elapsed = time.perf_counter() - started
    if elapsed >= bound:
        failures.append(f"runtime {elapsed:.3f}s exceeded the {bound:g}s bound")
    status = "PASS" if not failures else "FAIL"
    print(f"{status}: criterion {num} — {label} ({elapsed:.3f}s)")
    assert not failures, f"criterion {num}: " + "; ".join(failures)


# ---------------------------------------------------------------------------
# 1. state machine


def test_criterion_1_fsm_conformance():
    started = time.perf_counter()
    failures: list[str] = []
    legal = {
        (NodeState.WAITING, FsmInput.RUN): NodeState.RUNNING,
        (NodeState.RUNNING, FsmInput.VERIFY): NodeState.VERIFYING,
        (NodeState.RUNNING, FsmInput.NO_VERIFY): NodeState.COMPLETED,
        (NodeState.VERIFYING, FsmInput.SUCCESS): NodeState.COMPLETED,
        (NodeState.VERIFYING, FsmInput.FAIL): NodeState.FAILED,
        (NodeState.FAILED, FsmInput.RERUN): NodeState.COMPLETED,
    }
    legal_seen = 0
    illegal_seen = 0
    for state in NodeState:
        for fsm_input in FsmInput:
            if (state, fsm_input) in legal:
                result = transition(state, fsm_input)
                legal_seen += 1
                if result is not legal[(state, fsm_input)]:
                    failures.append(
                        f"({state.value}, {fsm_input.value}) -> {result.value}, "
                        f"expected {legal[(state, fsm_input)].value}"
                    )
            else:
                try:
                    transition(state, fsm_input)
                except IllegalTransition:
                    illegal_seen += 1
                else:
                    failures.append(f"({state.value}, {fsm_input.value}) was accepted")
    if legal_seen != 6 or illegal_seen != 24:
        failures.append(f"saw {legal_seen} legal / {illegal_seen} illegal, expected 6/24")
    report(1, "FSM table: 6 legal transitions, 24 rejections", failures, started, 1.0)


# ---------------------------------------------------------------------------
# 2. fault-class frequencies


def test_criterion_2_fault_distribution():
    started = time.perf_counter()
    failures: list[str] = []
    n = 10_000
    rng = random.Random(20260819)
    counts = Counter(sample_fault(rng) for _ in range(n))
    observed = [counts[fc] for fc in FaultClass]
    expected = [FAULT_FREQUENCIES[fc] * n for fc in FaultClass]
    result = stats.chisquare(f_obs=observed, f_exp=expected)
    if not result.pvalue > 0.01:
        failures.append(
            f"chi-squared p={result.pvalue:.5f} <= 0.01 for observed {observed}"
        )
    report(
        2,
        f"10,000 draws match 28.63/18.68/52.69% (p={result.pvalue:.3f})",
        failures,
        started,
        1.0,
    )


# ---------------------------------------------------------------------------
# 3. placement invariants


def test_criterion_3_placement_invariants():
    started = time.perf_counter()
    failures: list[str] = []
    rng = random.Random(3)
    for case in range(500):
        graph = make_random_dag(rng, max_nodes=12)
        profile = topo_profile(graph)
        priority = verifier_priority(graph, profile)
        n = len(graph.nodes)
        terminal = graph.terminal_id
        initials = sorted(
            nid for nid in profile.nodes if not graph.parents(nid) and nid != terminal
        )
        if priority[0] != terminal:
            failures.append(f"case {case}: priority starts with {priority[0]}, not the terminal")
            break
        if priority[1 : 1 + len(initials)] != initials:
            failures.append(f"case {case}: initials block {priority[1:1+len(initials)]} != {initials}")
            break
        rest = priority[1 + len(initials) :]
        keys = [(-len(graph.parents(nid)), nid) for nid in rest]
        if keys != sorted(keys):
            failures.append(f"case {case}: intermediates not ordered by fan-in then id: {rest}")
            break
        previous: tuple[str, ...] = ()
        for k in range(n + 1):
            plan = place_verifiers(graph, profile, k)
            if len(plan.selected) != min(k, n):
                failures.append(f"case {case}: k={k} selected {len(plan.selected)} nodes")
                break
            if plan.selected[: len(previous)] != previous:
                failures.append(f"case {case}: k={k} is not an extension of k={k-1}")
                break
            previous = plan.selected
        if failures:
            break
    report(3, "500 random DAGs satisfy all four placement invariants", failures, started, 5.0)


# ---------------------------------------------------------------------------
# 4. speculation math


def test_criterion_4_speculation_math():
    started = time.perf_counter()
    failures: list[str] = []
    rng = random.Random(4)
    for case in range(200):
        graph = make_random_dag(rng, max_nodes=12)
        ids = [node.id for node in graph.nodes]
        exec_latencies = {nid: rng.uniform(0.1, 3.0) for nid in ids}
        verifier_latency = rng.uniform(0.5, 6.0)
        verifying = rng.choice(ids)
        fast = eligible_spec_set(graph, verifying, exec_latencies, verifier_latency)
        brute = brute_force_eligible(graph, verifying, exec_latencies, verifier_latency)
        if set(fast) != set(brute):
            failures.append(
                f"case {case}: eligible {sorted(fast)} != brute-force {sorted(brute)} "
                f"(verifying {verifying}, window {verifier_latency:.3f})"
            )
            break
        match_rate = rng.uniform(0.0, 1.0)
        costs = {
            nid: NodeCostEstimate(
                exec_cost=rng.uniform(0.0, 2.0), verifier_cost=rng.uniform(0.0, 2.0)
            )
            for nid in fast
        }
        got = expected_spec_cost(match_rate, costs)
        want = (1.0 - match_rate) * sum(c.exec_cost + c.verifier_cost for c in costs.values())
        if abs(got - want) > 1e-9:
            failures.append(f"case {case}: expected cost {got!r} != {want!r}")
            break
    report(
        4,
        "eligible sets match brute force on 200 DAGs; expected cost to 1e-9",
        failures,
        started,
        5.0,
    )


# ---------------------------------------------------------------------------
# 5. latency dominance and output equivalence


def _random_scenario_pair(seed: int):
    """One random graph run both ways with identical scripted verdicts."""
    rng = random.Random(seed)
    graph = make_random_dag(rng, max_nodes=10)
    ids = [node.id for node in graph.nodes]
    latencies = {nid: round(rng.uniform(0.5, 3.0), 3) for nid in ids}
    executor = FunctionExecutor(
        lambda nid, prompt: f"{nid}#{hashlib.blake2b(prompt.encode()).hexdigest()[:8]}",
        latency=lambda nid, prompt: latencies[nid],
    )
    plan = place_verifiers(graph, topo_profile(graph), rng.randint(0, len(ids)))
    behaviors = {}
    vrf_estimates = {}
    for nid in plan.selected:
        latency = round(rng.uniform(0.5, 4.0), 3)
        behaviors[nid] = {
            "action": "revise" if rng.random() < 0.35 else "keep",
            "latency": latency,
            "revised_output": f"corrected-{nid}",
            "prompt_tokens": 50,
            "output_tokens": 20,
        }
        vrf_estimates[nid] = latency
    results = []
    for mode in (ExecutionMode.SEQUENTIAL, ExecutionMode.SPECULATIVE):
        results.append(
            run_workflow(
                graph,
                ExecutorPool(executor),
                placement=plan,
                selection=VerifierKind(VerifierFamily.SELF_REFINE),
                mode=mode,
                rollback_policy="always",
                verifier_runner=ScriptedVerifierRunner(behaviors),
                latency_estimates=latencies,
                verifier_latency_estimates=vrf_estimates,
            )
        )
    return results


def test_criterion_5_latency_dominance_and_equivalence():
    started = time.perf_counter()
    failures: list[str] = []
    for seed in range(100):
        sequential, speculative = _random_scenario_pair(seed)
        if speculative.metrics.t_exec > sequential.metrics.t_exec + 1e-9:
            failures.append(
                f"seed {seed}: speculative t_exec {speculative.metrics.t_exec} > "
                f"sequential {sequential.metrics.t_exec}"
            )
        if speculative.metrics.final_output != sequential.metrics.final_output:
            failures.append(f"seed {seed}: final outputs differ")
        if failures:
            break
    scenario = load_scenario("chain3")
    sequential = run_scenario(scenario, ExecutionMode.SEQUENTIAL)
    speculative = run_scenario(scenario, ExecutionMode.SPECULATIVE)
    if sequential.metrics.t_exec != 5.0 or speculative.metrics.t_exec != 3.0:
        failures.append(
            f"chain3 t_exec {sequential.metrics.t_exec} -> {speculative.metrics.t_exec}, "
            "expected 5.0 -> 3.0"
        )
    if speculative.metrics.final_output != sequential.metrics.final_output:
        failures.append("chain3 final outputs differ across modes")
    report(
        5,
        "speculative never slower on 100 random runs, outputs byte-identical; "
        "chain3 saves exactly 40% (5s -> 3s)",
        failures,
        started,
        10.0,
    )


# ---------------------------------------------------------------------------
# 6. selector


def test_criterion_6_selector():
    started = time.perf_counter()
    failures: list[str] = []

    # finite-difference gradient check over 20 random policy/batch pairs
    h = 1e-5
    worst = 0.0
    rng = np.random.default_rng(6)
    for trial in range(20):
        dim = 12
        policy = SelectorPolicy(dim=dim, seed=trial)
        batch = [
            TrainingSample(
                prompt=f"trial {trial} sample {i} "
                + " ".join(rng.choice(["sort", "prove", "count", "rank", "argue"], 4)),
                perf=rng.uniform(0, 1, 5),
                cost=rng.uniform(0.1, 2.0, 5),
            )
            for i in range(int(rng.integers(1, 4)))
        ]
        lam = float(rng.uniform(0.0, 2.0))
        w0, b0 = policy.weights.copy(), policy.bias.copy()
        step = 0.05
        grpo_update(policy, batch, lam, step_size=step)
        analytic_w = (w0 - policy.weights) / step
        analytic_b = (b0 - policy.bias) / step
        policy.weights[:], policy.bias[:] = w0, b0
        coords = [(int(rng.integers(0, 5)), int(rng.integers(0, dim))) for _ in range(5)]
        for i, j in coords:
            policy.weights[i, j] = w0[i, j] + h
            up = grpo_loss(policy, batch, lam)
            policy.weights[i, j] = w0[i, j] - h
            down = grpo_loss(policy, batch, lam)
            policy.weights[i, j] = w0[i, j]
            fd = (up - down) / (2 * h)
            rel = abs(fd - analytic_w[i, j]) / max(abs(fd), abs(analytic_w[i, j]), 1e-12)
            worst = max(worst, rel)
        for i in range(5):
            policy.bias[i] = b0[i] + h
            up = grpo_loss(policy, batch, lam)
            policy.bias[i] = b0[i] - h
            down = grpo_loss(policy, batch, lam)
            policy.bias[i] = b0[i]
            fd = (up - down) / (2 * h)
            rel = abs(fd - analytic_b[i]) / max(abs(fd), abs(analytic_b[i]), 1e-12)
            worst = max(worst, rel)
    if not worst < 1e-4:
        failures.append(f"max finite-difference relative error {worst:.2e} >= 1e-4")

    # held-out argmax accuracy on the synthetic dominated dataset
    data = synthetic_dominant_dataset(400, seed=11)
    split = int(len(data) * 0.8)
    policy = SelectorPolicy(seed=3)
    train_selector(policy, data[:split], lam=0.5, steps=500, seed=7)
    accuracy = selection_accuracy(policy, data[split:], lam=0.5)
    if not accuracy >= 0.90:
        failures.append(f"held-out argmax accuracy {accuracy:.3f} < 0.90 after 500 steps")

    # advantages are zero-sum
    adv_rng = np.random.default_rng(61)
    worst_sum = max(
        abs(group_advantage(adv_rng.uniform(-5, 5, int(adv_rng.integers(2, 9)))).sum())
        for _ in range(1_000)
    )
    if not worst_sum <= 1e-12:
        failures.append(f"advantage sum magnitude {worst_sum:.2e} > 1e-12")

    # cost of the argmax-utility candidate is weakly decreasing in lambda
    grid = np.linspace(0.0, 4.0, 20)
    mono_rng = np.random.default_rng(62)
    for case in range(50):
        perf = mono_rng.uniform(0, 1, 6)
        cost = mono_rng.uniform(0.1, 3.0, 6)
        picked = [cost[int(np.argmax(utility(perf, cost, lam)))] for lam in grid]
        if any(b > a + 1e-12 for a, b in zip(picked, picked[1:])):
            failures.append(f"lambda-monotonicity broke on case {case}: {picked}")
            break
    report(
        6,
        f"gradient check (max rel err {worst:.1e}), held-out accuracy {accuracy:.2f}, "
        "zero-sum advantages, lambda-monotone oracle",
        failures,
        started,
        30.0,
    )


# ---------------------------------------------------------------------------
# 7. similarity metrics


def test_criterion_7_similarity():
    started = time.perf_counter()
    failures: list[str] = []

    if abs(rouge_l("the cat sat", "the cat") - 0.8) > 1e-9:
        failures.append(f"ROUGE-L hand case gave {rouge_l('the cat sat', 'the cat')!r}")
    if jaccard("alpha beta", "beta gamma") != 1 / 3:
        failures.append(f"Jaccard hand case gave {jaccard('alpha beta', 'beta gamma')!r}")

    text_a = "the quick brown fox jumps over the lazy dog near the river bank"
    text_b = "entirely different words compose this second sentence"
    metrics = {"rouge_l": rouge_l, "jaccard": jaccard, "cosine": cosine, "bleu": bleu}
    for name, fn in metrics.items():
        if fn(text_a, text_a) != 1.0:
            failures.append(f"{name} identity != 1.0")
        if fn(text_a, text_b) != 0.0:
            failures.append(f"{name} disjoint != 0.0")
    for name in ("rouge_l", "jaccard", "cosine"):  # bleu is candidate-vs-reference
        fn = metrics[name]
        if fn("one two three four", "three four five") != fn(
            "three four five", "one two three four"
        ):
            failures.append(f"{name} is not symmetric")

    words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "tokens", "stream"]
    rng = random.Random(7)
    big_a = " ".join(rng.choice(words) for _ in range(340))
    big_b = " ".join(rng.choice(words) for _ in range(340))
    assert len(big_a.encode()) >= 2000 and len(big_b.encode()) >= 2000
    for name, fn in metrics.items():
        tick = time.perf_counter()
        fn(big_a, big_b)
        elapsed_ms = (time.perf_counter() - tick) * 1000
        if not elapsed_ms < 50:
            failures.append(f"{name} took {elapsed_ms:.1f}ms on 2kB inputs")
    report(
        7,
        "ROUGE-L 0.8 and Jaccard 1/3 hand cases; identity/disjoint/symmetry; <50ms on 2kB",
        failures,
        started,
        5.0,
    )


# ---------------------------------------------------------------------------
# 8. cost model


def test_criterion_8_cost_model():
    started = time.perf_counter()
    failures: list[str] = []
    cfg = CostConfig()

    hand = gpu_cost(cfg, "executor", 3600)
    if abs(hand - 0.00340) / 0.00340 > 1e-6:
        failures.append(f"hand-derived executor price {hand!r} != $0.00340")

    rng = random.Random(8)
    for _ in range(100):
        a, b = rng.randrange(0, 100_000), rng.randrange(0, 100_000)
        role = rng.choice(["executor", "secondary", "judge", "advanced"])
        combined = gpu_cost(cfg, role, a + b)
        split = gpu_cost(cfg, role, a) + gpu_cost(cfg, role, b)
        if abs(combined - split) > 1e-9 * max(combined, 1e-12):
            failures.append(f"linearity broke for {role} at {a}+{b}")
            break

    for run in range(50):
        ledger = CostLedger()
        for _ in range(rng.randrange(1, 60)):
            entry = tally_call(
                rng.choice(["exec", "verifier"]),
                f"n{rng.randrange(6)}",
                rng.randrange(3),
                rng.choice(["executor", "secondary", "judge", "advanced"]),
                rng.randrange(0, 5_000),
                rng.randrange(0, 5_000),
                cfg,
            )
            entry.wasted = rng.random() < 0.25
            ledger.add(entry)
        if ledger.total != sum(e.total for e in ledger.entries):
            failures.append(f"run {run}: ledger total diverged from the entry sum")
            break
        if ledger.wasted_total() != sum(e.total for e in ledger.entries if e.wasted):
            failures.append(f"run {run}: wasted total diverged")
            break
    report(
        8,
        "gpu_cost linear, $0.00340 hand case to 1e-6, ledger additivity exact on 50 runs",
        failures,
        started,
        5.0,
    )


# ---------------------------------------------------------------------------
# 9. verifier pipelines


def test_criterion_9_verifier_pipelines():
    started = time.perf_counter()
    failures: list[str] = []
    node = "n"
    task = VerifierTask(node_id=node, question="what is it?", original="original answer")

    def pool(executor_outputs, secondary_outputs=(), judge_outputs=(), advanced_outputs=()):
        def script(outputs):
            return ScriptedExecutor({node: [ScriptEntry(text) for text in outputs]})

        return ExecutorPool(
            executor=script(executor_outputs),
            secondary=script(secondary_outputs) if secondary_outputs else None,
            judge=script(judge_outputs) if judge_outputs else None,
            advanced=script(advanced_outputs) if advanced_outputs else None,
        )

    cases = [
        (
            "self_refine",
            VerifierKind(VerifierFamily.SELF_REFINE),
            pool(["feedback", "revised text"]),
            2,
            OutcomeVerdict.REVISED,
            "revised text",
        ),
        (
            "self_refine keep",
            VerifierKind(VerifierFamily.SELF_REFINE),
            pool(["feedback", task.original]),
            2,
            OutcomeVerdict.KEPT,
            task.original,
        ),
        (
            "advanced_refine",
            VerifierKind(VerifierFamily.ADVANCED_REFINE),
            pool(["rewrite"], advanced_outputs=["expert notes"]),
            2,
            OutcomeVerdict.REVISED,
            "rewrite",
        ),
        (
            "self_consistency gen n=3",
            VerifierKind(VerifierFamily.SELF_CONSISTENCY, samples=3, variant="gen"),
            pool(["s1", "s2", "s3", "voted answer"]),
            4,
            OutcomeVerdict.REVISED,
            "voted answer",
        ),
        (
            "self_consistency select n=3",
            VerifierKind(VerifierFamily.SELF_CONSISTENCY, samples=3, variant="select"),
            pool([task.original, task.original, "stray sample"]),
            3,
            OutcomeVerdict.KEPT,
            task.original,
        ),
        (
            "llm_as_judge",
            VerifierKind(VerifierFamily.LLM_AS_JUDGE),
            pool(["fresh"], secondary_outputs=["challenger"], judge_outputs=["[[B]]"]),
            3,
            OutcomeVerdict.REVISED,
            "challenger",
        ),
        (
            "debate 1 round",
            VerifierKind(VerifierFamily.DEBATE, rounds=1),
            pool(
                ["opening a", "rebuttal a"],
                secondary_outputs=["opening b", "rebuttal b"],
                judge_outputs=["[[A]]"],
            ),
            5,
            OutcomeVerdict.REVISED,
            "rebuttal a",
        ),
    ]
    for label, kind, executors, want_calls, want_verdict, want_output in cases:
        outcome = run_verifier(kind, task, executors)
        if outcome.call_count != want_calls:
            failures.append(f"{label}: {outcome.call_count} calls, expected {want_calls}")
        if outcome.verdict is not want_verdict:
            failures.append(f"{label}: verdict {outcome.verdict.value}, expected {want_verdict.value}")
        if outcome.revised_output != want_output:
            failures.append(f"{label}: output {outcome.revised_output!r}")
    report(
        9,
        "call counts 2/2/4/3/3/5 across the five pipelines with correct Kept/Revised verdicts",
        failures,
        started,
        5.0,
    )
