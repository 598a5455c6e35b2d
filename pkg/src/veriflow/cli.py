"""Command-line entry points.

Subcommands:

* ``run`` — execute a workflow or bundled scenario; writes ``trace.jsonl``,
  ``summary.json``, and ``ledger.json`` to the output directory.
* ``sweep`` — grid runs over lambda x budget x placement-k x match-rate
  (plus a verifier-latency scale), emitting one tab-separated row per point.
* ``faults`` — fault-injection campaign over a workflow; JSONL report.
* ``train-selector`` / ``eval-selector`` — train and evaluate the learned
  verifier selector on a JSONL dataset (or the bundled synthetic one).
* ``calibrate-sim`` — sweep similarity thresholds per task category on a
  labeled pair set and report threshold/AUC/Spearman per metric.

Exit codes: 0 success, 1 run failure (recorded in the summary artifact),
2 configuration errors (missing files, bad values — argparse uses the same
code for flag errors).

Live HTTP executors read their bearer token from the ``SHERLOCK_API_KEY``
environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

from .costs import CostConfig
from .executors import (
    BUILTIN_EXECUTORS,
    Executor,
    ExecutorError,
    HttpExecutor,
    HttpExecutorConfig,
    ScriptEntry,
    ScriptedExecutor,
    make_builtin_executor,
)
from .faults import load_payload_corpus, run_campaign
from .graph import GraphError, WorkflowGraph, load_workflow_file
from .placement import place_verifiers
from .runtime import (
    ExecutionMode,
    PolicySelection,
    RunResult,
    SelectionStrategy,
    StaticSelection,
    TabularSelection,
    run_workflow,
)
from .scenarios import BUNDLED_SCENARIOS, Scenario, UnknownScenario, load_scenario, run_scenario
from .selector import (
    DEFAULT_CANDIDATES,
    SelectorPolicy,
    TrainingSample,
    load_checkpoint,
    load_dataset,
    oracle_label,
    save_checkpoint,
    selection_accuracy,
    synthetic_dominant_dataset,
    train_selector,
    utility,
)
from .similarity import METRICS, LabeledPair, calibrate_threshold
from .verifiers import ExecutorPool, VerifierFamily, VerifierKind
from . import graph as graph_mod

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG = 2

# Sentinel distinguishing "flag not given" from an explicit --budget none.
_UNSET = object()

_MODE_SPELLINGS = {
    "noverify": ExecutionMode.NO_VERIFY,
    "no-verify": ExecutionMode.NO_VERIFY,
    "no_verify": ExecutionMode.NO_VERIFY,
    "sequential": ExecutionMode.SEQUENTIAL,
    "speculative": ExecutionMode.SPECULATIVE,
}


def _substream(seed: int, name: str) -> int:
    """Derive a named child seed so each consumer gets its own stream."""
    digest = hashlib.blake2b(f"{seed}:{name}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _parse_mode(text: str) -> ExecutionMode:
    try:
        return _MODE_SPELLINGS[text.strip().lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown mode {text!r}; choose from noverify, sequential, speculative"
        ) from None


def _parse_budget(text: str) -> float | None:
    if text.strip().lower() in {"none", "inf", "unlimited"}:
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"budget must be a number or 'none', got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("budget must be >= 0")
    return value


def _parse_k(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"placement budget must be an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("placement budget must be >= 0")
    return value


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _canonical(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


# --------------------------------------------------------------------------
# executor construction


def build_executor(spec: Any) -> Executor:
    """Build an executor from a config value.

    Accepts a builtin name (``echo``/``digest``), ``script:<path>`` with a
    JSON array of script entries, or a mapping with a ``kind`` field
    (``builtin`` | ``script`` | ``http``).
    """
    if isinstance(spec, str):
        if spec in BUILTIN_EXECUTORS:
            return make_builtin_executor(spec)
        if spec.startswith("script:"):
            return _script_executor(spec[len("script:") :])
        raise ValueError(
            f"unknown executor spec {spec!r}; use one of {sorted(BUILTIN_EXECUTORS)} or script:<path>"
        )
    if isinstance(spec, Mapping):
        kind = spec.get("kind", "builtin")
        if kind == "builtin":
            return make_builtin_executor(spec.get("name", "echo"))
        if kind == "script":
            return _script_executor(spec["path"])
        if kind == "http":
            cfg = HttpExecutorConfig(
                base_url=spec["base_url"],
                model=spec["model"],
                timeout=float(spec.get("timeout", 120.0)),
                max_retries=int(spec.get("max_retries", 2)),
                backoff=float(spec.get("backoff", 1.0)),
                api_key=spec.get("api_key"),
            )
            return HttpExecutor(cfg)
        raise ValueError(f"unknown executor kind {kind!r}")
    raise ValueError(f"cannot build an executor from {spec!r}")


def _script_executor(path: str) -> ScriptedExecutor:
    """Load a script file: ``{node_id: [{"output": ..., "latency": ...}, ...]}``."""
    raw = json.loads(Path(path).read_text("utf-8"))
    if not isinstance(raw, Mapping):
        raise ValueError(f"{path}: script must map node ids to entry lists")
    script = {
        str(node_id): [
            ScriptEntry(
                output=item["output"],
                latency=float(item.get("latency", 0.0)),
                prompt_tokens=int(item.get("prompt_tokens", 0)),
                output_tokens=int(item.get("output_tokens", 0)),
            )
            for item in items
        ]
        for node_id, items in raw.items()
    }
    return ScriptedExecutor(script)


def build_selection(spec: str) -> SelectionStrategy:
    """Parse a selection strategy spec.

    ``static:<family>`` | ``tabular`` | ``learned:<checkpoint>`` |
    ``oracle:<dataset>`` (prompt-keyed lookup with a tabular fallback).
    """
    if spec == "tabular":
        return TabularSelection()
    if spec.startswith("static:"):
        return StaticSelection(VerifierKind(VerifierFamily(spec[len("static:") :])))
    if spec.startswith("learned:"):
        policy, _ = load_checkpoint(spec[len("learned:") :])
        return PolicySelection(policy)
    if spec.startswith("oracle:"):
        samples = load_dataset(spec[len("oracle:") :], len(DEFAULT_CANDIDATES))
        table = {s.prompt: DEFAULT_CANDIDATES[oracle_label(s)[0]] for s in samples}
        return _OracleSelection(table)
    raise ValueError(
        f"unknown selection spec {spec!r}; use tabular, static:<family>, "
        "learned:<checkpoint>, or oracle:<dataset>"
    )


class _OracleSelection:
    """Looks up the labeled best verifier per prompt; unseen prompts fall
    back to the category table."""

    def __init__(self, table: Mapping[str, VerifierKind]) -> None:
        self._table = table
        self._fallback = TabularSelection()

    def choose(self, node, prompt: str) -> VerifierKind:
        found = self._table.get(prompt)
        return found if found is not None else self._fallback.choose(node, prompt)


# --------------------------------------------------------------------------
# run


def _write_run_artifacts(out_dir: Path, result: RunResult, extra: Mapping[str, Any]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = result.metrics
    summary = {
        "status": "ok",
        "mode": result.mode.value,
        "t_exec": metrics.t_exec,
        "t_vrf": metrics.t_vrf,
        "rollbacks": metrics.rollbacks,
        "total_cost": metrics.total_cost,
        "wasted_cost": metrics.wasted_cost,
        "final_output": metrics.final_output,
        **extra,
    }
    with open(out_dir / "trace.jsonl", "w", encoding="utf-8") as handle:
        for event in result.trace:
            handle.write(_canonical(event) + "\n")
        handle.write(_canonical({"event": "summary", **summary}) + "\n")
    (out_dir / "summary.json").write_text(_canonical(summary) + "\n", "utf-8")
    ledger_records = result.ledger.to_records()
    (out_dir / "ledger.json").write_text(_canonical(ledger_records) + "\n", "utf-8")


def _write_failure(out_dir: Path, mode: str, error: Exception) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"status": "failed", "mode": mode, "error": f"{type(error).__name__}: {error}"}
    (out_dir / "summary.json").write_text(_canonical(summary) + "\n", "utf-8")


def _load_run_target(target: str) -> tuple[str, Any]:
    """Classify the run target: bundled scenario, scenario file, workflow
    file, or a run-config document referencing a workflow path."""
    if target in BUNDLED_SCENARIOS:
        return "scenario", load_scenario(target)
    path = Path(target)
    if not path.exists():
        raise FileNotFoundError(f"no such file or bundled scenario: {target!r}")
    document = json.loads(path.read_text("utf-8"))
    if not isinstance(document, dict):
        raise ValueError(f"{target}: document root must be an object")
    if "nodes" in document and "edges" in document:
        return "workflow", graph_mod.load_workflow(document)
    if isinstance(document.get("workflow"), str):
        return "config", document
    if isinstance(document.get("workflow"), Mapping):
        return "scenario", load_scenario(target)
    raise ValueError(
        f"{target}: expected a workflow document, a scenario document, or a "
        "run config with a 'workflow' path"
    )


def cmd_run(args: argparse.Namespace) -> int:
    try:
        kind, payload = _load_run_target(args.target)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, GraphError, UnknownScenario, json.JSONDecodeError) as exc:
        print(f"error: {args.target}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out)
    if kind == "scenario":
        scenario: Scenario = payload
        mode = args.mode or ExecutionMode(scenario.defaults.get("mode", "sequential"))
        try:
            result = run_scenario(
                scenario,
                mode,
                budget=scenario.defaults.get("budget") if args.budget is _UNSET else args.budget,
                k=args.placement_k,
                clock=args.clock,
                seed=args.seed,
                match_rate=args.match_rate,
                rollback_policy=args.rollback,
            )
        except Exception as exc:  # run failures land in the summary artifact
            _write_failure(out_dir, mode.value, exc)
            print(f"run failed: {exc}", file=sys.stderr)
            return EXIT_RUN_FAILURE
        _write_run_artifacts(out_dir, result, {"target": scenario.name, "seed": args.seed or 0})
        print(
            f"{scenario.name}: mode={result.mode.value} t_exec={result.metrics.t_exec:g} "
            f"t_vrf={result.metrics.t_vrf:g} rollbacks={result.metrics.rollbacks} "
            f"total_cost={result.metrics.total_cost:.6f}"
        )
        print(f"artifacts: {out_dir}/trace.jsonl, summary.json, ledger.json")
        return EXIT_OK

    if kind == "workflow":
        graph: WorkflowGraph = payload
        config: dict[str, Any] = {}
    else:
        config = payload
        workflow_path = Path(config["workflow"])
        if not workflow_path.exists():
            print(f"error: workflow file not found: {workflow_path}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            graph = load_workflow_file(str(workflow_path))
        except (GraphError, json.JSONDecodeError) as exc:
            print(f"error: {workflow_path}: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    try:
        executor = build_executor(args.executor or config.get("executor", "echo"))
        pool_spec = config.get("roles", {})
        pool = ExecutorPool(
            executor,
            secondary=build_executor(pool_spec["secondary"]) if "secondary" in pool_spec else None,
            judge=build_executor(pool_spec["judge"]) if "judge" in pool_spec else None,
            advanced=build_executor(pool_spec["advanced"]) if "advanced" in pool_spec else None,
        )
        selection = build_selection(args.selection or config.get("selection", "tabular"))
        k = args.placement_k if args.placement_k is not None else int(config.get("placement_k", 1))
        if k < 0:
            raise ValueError("placement_k must be >= 0")
        budget = config.get("budget") if args.budget is _UNSET else args.budget
        if budget is not None:
            budget = float(budget)
            if budget < 0:
                raise ValueError("budget must be >= 0")
        mode = args.mode or _parse_mode(str(config.get("mode", "sequential")))
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        match_rate = args.match_rate if args.match_rate is not None else float(config.get("match_rate", 0.8))
    except (KeyError, ValueError, OSError, ExecutorError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    placement = place_verifiers(graph, graph_mod.topo_profile(graph), k)
    try:
        result = run_workflow(
            graph,
            pool,
            placement=placement,
            selection=selection,
            mode=mode,
            budget=budget,
            match_rate=match_rate,
            cost_config=CostConfig(),
            rollback_policy=args.rollback,
            latency_estimates=config.get("latency_estimates"),
            verifier_latency_estimates=config.get("verifier_latency_estimates"),
            clock=args.clock,
            seed=seed,
        )
    except Exception as exc:
        _write_failure(out_dir, mode.value, exc)
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    _write_run_artifacts(out_dir, result, {"target": args.target, "seed": seed})
    print(
        f"{args.target}: mode={result.mode.value} t_exec={result.metrics.t_exec:g} "
        f"t_vrf={result.metrics.t_vrf:g} rollbacks={result.metrics.rollbacks} "
        f"total_cost={result.metrics.total_cost:.6f}"
    )
    print(f"artifacts: {out_dir}/trace.jsonl, summary.json, ledger.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep


_SWEEP_COLUMNS = (
    "lambda",
    "budget",
    "k",
    "match_rate",
    "vrf_scale",
    "mode",
    "t_exec",
    "t_vrf",
    "total_cost",
    "wasted_cost",
    "rollbacks",
    "n_spec_total",
    "n_spec",
)


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (UnknownScenario, OSError, json.JSONDecodeError, GraphError) as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    ks: list[int | None] = []
    for part in args.ks.split(","):
        part = part.strip()
        if not part:
            continue
        ks.append(None if part == "default" else _parse_k(part))
    budgets: list[float | None] = []
    for part in args.budgets.split(","):
        part = part.strip()
        if part:
            budgets.append(_parse_budget(part))

    rows: list[str] = []
    grid = itertools.product(
        _float_list(args.lambdas), budgets, ks, _float_list(args.match_rates), _float_list(args.vrf_scales)
    )
    for lam, budget, k, match_rate, vrf_scale in grid:
        # Budget 0 means "no speculation at all", so those rows run the
        # sequential scheduler rather than speculative-with-empty-windows.
        speculate = budget is None or budget > 0
        result = run_scenario(
            scenario,
            ExecutionMode.SPECULATIVE if speculate else ExecutionMode.SEQUENTIAL,
            budget=budget,
            k=k,
            clock="virtual",
            seed=args.seed,
            match_rate=match_rate,
            stochastic_match_rate=match_rate,
            verifier_latency_scale=vrf_scale,
        )
        sizes = [f"{plan.verifying_node}:{len(plan.eligible)}" for plan in result.plans]
        rows.append(
            "\t".join(
                [
                    f"{lam:g}",
                    "none" if budget is None else f"{budget:g}",
                    "default" if k is None else str(k),
                    f"{match_rate:g}",
                    f"{vrf_scale:g}",
                    result.mode.value,
                    f"{result.metrics.t_exec:g}",
                    f"{result.metrics.t_vrf:g}",
                    f"{result.metrics.total_cost:.8f}",
                    f"{result.metrics.wasted_cost:.8f}",
                    str(result.metrics.rollbacks),
                    str(sum(len(plan.eligible) for plan in result.plans)),
                    ";".join(sizes) if sizes else "-",
                ]
            )
        )

    table = "\t".join(_SWEEP_COLUMNS) + "\n" + "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(table, "utf-8")
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(table)
    return EXIT_OK


# --------------------------------------------------------------------------
# faults


def cmd_faults(args: argparse.Namespace) -> int:
    workflow_path = Path(args.workflow)
    if not workflow_path.exists():
        print(f"error: workflow file not found: {workflow_path}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        graph = load_workflow_file(str(workflow_path))
        executor = build_executor(args.executor)
        payloads = load_payload_corpus(args.payloads) if args.payloads else None
    except (GraphError, ValueError, OSError, ExecutorError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    targets = [t.strip() for t in args.targets.split(",") if t.strip()] if args.targets else None
    try:
        report = run_campaign(
            graph,
            executor,
            targets=targets,
            trials_per_node=args.trials,
            seed=args.seed,
            payloads=payloads,
        )
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    lines = [_canonical(record) for record in report.to_records()]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", "utf-8")
        print(f"wrote {len(lines)} records to {args.out}")
    else:
        for line in lines:
            print(line)
    return EXIT_OK


# --------------------------------------------------------------------------
# selector


def _load_samples(args: argparse.Namespace, seed: int) -> list[TrainingSample]:
    if args.data:
        return load_dataset(args.data, len(DEFAULT_CANDIDATES))
    return synthetic_dominant_dataset(args.synthetic, seed=seed)


def cmd_train_selector(args: argparse.Namespace) -> int:
    try:
        samples = _load_samples(args, _substream(args.seed, "dataset"))
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if len(samples) < 2:
        print("error: need at least 2 samples to hold out an eval split", file=sys.stderr)
        return EXIT_CONFIG
    n_holdout = max(1, int(len(samples) * args.holdout))
    train, heldout = samples[:-n_holdout], samples[-n_holdout:]
    policy = SelectorPolicy(seed=_substream(args.seed, "policy-init"))
    losses = train_selector(
        policy,
        train,
        lam=args.lam,
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=_substream(args.seed, "batches"),
        log_every=args.log_every,
    )
    accuracy = selection_accuracy(policy, heldout, args.lam)
    save_checkpoint(policy, args.out, args.lam)
    print(
        f"trained {args.steps} steps on {len(train)} samples "
        f"(final loss {losses[-1]:.6f}); held-out argmax accuracy "
        f"{accuracy:.3f} on {len(heldout)} samples"
    )
    print(f"checkpoint: {args.out}")
    return EXIT_OK


def cmd_eval_selector(args: argparse.Namespace) -> int:
    try:
        policy, ckpt_lam = load_checkpoint(args.checkpoint)
        samples = _load_samples(args, _substream(args.seed, "dataset"))
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    lam = ckpt_lam if args.lam is None else args.lam
    accuracy = selection_accuracy(policy, samples, lam)
    policy_utils = []
    oracle_utils = []
    fallbacks = 0
    for sample in samples:
        dist, _ = policy.select(sample.prompt)
        idx = int(dist.argmax())
        policy_utils.append(float(utility(sample.perf, sample.cost, lam)[idx]))
        oracle_idx, fallback = oracle_label(sample)
        oracle_utils.append(float(utility(sample.perf, sample.cost, lam)[oracle_idx]))
        fallbacks += int(fallback)
    n = len(samples)
    print(f"samples\t{n}")
    print(f"lambda\t{lam:g}")
    print(f"argmax_accuracy\t{accuracy:.4f}")
    print(f"mean_policy_utility\t{sum(policy_utils) / n:.4f}")
    print(f"mean_oracle_utility\t{sum(oracle_utils) / n:.4f}")
    print(f"oracle_fallback_rate\t{fallbacks / n:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# calibration


def _load_calibration_pairs(path: str | None) -> dict[str, list[LabeledPair]]:
    if path:
        text = Path(path).read_text("utf-8")
    else:
        from importlib import resources

        text = resources.files("veriflow").joinpath("data/calibration.jsonl").read_text("utf-8")
    by_category: dict[str, list[LabeledPair]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        pair = LabeledPair(
            original=record["text_a"],
            revised=record["text_b"],
            keep_ok=bool(record["equivalent"]),
        )
        by_category.setdefault(str(record["category"]), []).append(pair)
    return by_category


def cmd_calibrate_sim(args: argparse.Namespace) -> int:
    try:
        by_category = _load_calibration_pairs(args.data)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not by_category:
        print("error: calibration set is empty", file=sys.stderr)
        return EXIT_CONFIG
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for name in metric_names:
        if name not in METRICS:
            known = sorted(m.value for m in METRICS)
            print(f"error: unknown metric {name!r}; choose from {known}", file=sys.stderr)
            return EXIT_CONFIG
    lines = ["category\tmetric\tn\tthreshold\tyouden_j\tauc\tspearman"]
    for category in sorted(by_category):
        for name in metric_names:
            cal = calibrate_threshold(by_category[category], name)
            lines.append(
                f"{category}\t{name}\t{cal.n_pairs}\t{cal.threshold:.4f}"
                f"\t{cal.youden_j:.4f}\t{cal.auc:.4f}\t{cal.spearman:.4f}"
            )
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table, "utf-8")
        print(f"wrote calibration table to {args.out}")
    else:
        sys.stdout.write(table)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="veriflow",
        description="Run, sweep, fault-test, and calibrate verified workflow execution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a workflow, scenario, or run config")
    run.add_argument("target", help="bundled scenario name, scenario/workflow JSON, or run-config JSON")
    run.add_argument("--mode", type=_parse_mode, default=None, help="noverify | sequential | speculative")
    run.add_argument("--budget", type=_parse_budget, default=_UNSET, help="speculation budget in dollars, or 'none'")
    run.add_argument("--lambda", dest="lam", type=float, default=0.5, help="cost weight for learned selection")
    run.add_argument("--placement-k", type=_parse_k, default=None, help="verifier budget (overrides config)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--clock", choices=("virtual", "wall"), default="virtual")
    run.add_argument("--match-rate", type=float, default=None, help="expected keep probability for speculation cost")
    run.add_argument("--rollback", choices=("selective", "always"), default="selective")
    run.add_argument("--executor", default=None, help="echo | digest | script:<path> (overrides config)")
    run.add_argument("--selection", default=None, help="tabular | static:<family> | learned:<ckpt> | oracle:<data>")
    run.add_argument("--out", default="runs/latest", help="artifact directory")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="grid-run a scenario and emit a TSV report")
    sweep.add_argument("--scenario", default="chain3")
    sweep.add_argument("--lambdas", default="0.5", help="comma-separated lambda values")
    sweep.add_argument("--budgets", default="none", help="comma-separated budgets ('none' = unlimited, 0 = sequential)")
    sweep.add_argument("--ks", default="default", help="comma-separated verifier budgets ('default' = scenario placement)")
    sweep.add_argument("--match-rates", default="1.0", help="comma-separated keep probabilities")
    sweep.add_argument("--vrf-scales", default="1.0", help="comma-separated verifier-latency multipliers")
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out", default=None, help="write the TSV here instead of stdout")
    sweep.set_defaults(func=cmd_sweep)

    faults = sub.add_parser("faults", help="run a fault-injection campaign")
    faults.add_argument("--workflow", required=True, help="workflow JSON path")
    faults.add_argument("--executor", default="echo", help="echo | digest | script:<path>")
    faults.add_argument("--targets", default=None, help="comma-separated node ids (default: all)")
    faults.add_argument("--trials", type=int, default=20, help="trials per target node")
    faults.add_argument("--seed", type=int, default=0)
    faults.add_argument("--payloads", default=None, help="payload corpus JSON (default: bundled)")
    faults.add_argument("--out", default=None, help="write the JSONL report here instead of stdout")
    faults.set_defaults(func=cmd_faults)

    train = sub.add_parser("train-selector", help="train the learned verifier selector")
    train.add_argument("--data", default=None, help="training dataset JSONL (default: synthetic)")
    train.add_argument("--synthetic", type=int, default=400, help="synthetic dataset size when --data is absent")
    train.add_argument("--steps", type=int, default=500)
    train.add_argument("--lambda", dest="lam", type=float, default=0.5)
    train.add_argument("--lr", type=float, default=0.1)
    train.add_argument("--batch-size", type=int, default=32)
    train.add_argument("--holdout", type=float, default=0.2, help="held-out fraction for the accuracy report")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--log-every", type=int, default=0)
    train.add_argument("--out", default="selector.json", help="checkpoint path")
    train.set_defaults(func=cmd_train_selector)

    ev = sub.add_parser("eval-selector", help="evaluate a selector checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", default=None, help="eval dataset JSONL (default: synthetic)")
    ev.add_argument("--synthetic", type=int, default=200)
    ev.add_argument("--lambda", dest="lam", type=float, default=None, help="default: the checkpoint's lambda")
    ev.add_argument("--seed", type=int, default=1)
    ev.set_defaults(func=cmd_eval_selector)

    cal = sub.add_parser("calibrate-sim", help="calibrate similarity thresholds per category")
    cal.add_argument("--data", default=None, help="labeled pair JSONL (default: bundled set)")
    cal.add_argument("--metrics", default="rouge_l,jaccard,cosine,bleu")
    cal.add_argument("--out", default=None, help="write the TSV here instead of stdout")
    cal.set_defaults(func=cmd_calibrate_sim)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
