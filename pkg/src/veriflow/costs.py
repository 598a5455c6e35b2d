"""Dollar-cost accounting for executor and verifier calls.

GPU cost charges a role's GPU share for the seconds a call occupies the
serving stack at a given throughput:

    unit_price / server_gpus / 3600  *  gpus(role)  *  tokens / (throughput_max * utilization)

Model cost (per-token API pricing) is tracked separately and only when price
tables are configured; totals always report both components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .verifiers import VerifierOutcome


class CostError(Exception):
    pass


class UnknownRole(CostError):
    pass


DEFAULT_GPU_ALLOCATION: Mapping[str, int] = {
    "executor": 2,
    "secondary": 1,
    "judge": 1,
    "advanced": 4,
}


@dataclass(frozen=True)
class ModelPrice:
    """Per-1k-token prices for one role."""

    prompt: float = 0.0
    completion: float = 0.0


@dataclass(frozen=True)
class CostConfig:
    unit_price: float = 13.60  # $/hour for one whole server
    server_gpus: int = 8
    throughput_max: float = 1000.0  # tokens/second per deployment
    cluster_utilization_avg: float = 1.0
    gpu_allocation: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_GPU_ALLOCATION))
    model_price: Mapping[str, ModelPrice] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.unit_price <= 0 or self.server_gpus <= 0 or self.throughput_max <= 0:
            raise ValueError("unit_price, server_gpus and throughput_max must be positive")
        if not 0.0 < self.cluster_utilization_avg <= 1.0:
            raise ValueError("cluster_utilization_avg must be in (0, 1]")
        for role, gpus in self.gpu_allocation.items():
            if not 0 < gpus <= self.server_gpus:
                raise ValueError(f"allocation for role {role!r} must be in [1, server_gpus]")

    def gpus_for(self, role: str) -> int:
        try:
            return self.gpu_allocation[role]
        except KeyError:
            raise UnknownRole(f"no GPU allocation for role {role!r}") from None


def gpu_cost(cfg: CostConfig, role: str, num_tokens: int) -> float:
    """Dollar cost of pushing ``num_tokens`` through ``role``'s GPU share."""
    per_gpu_second = cfg.unit_price / cfg.server_gpus / 3600.0
    seconds = num_tokens / (cfg.throughput_max * cfg.cluster_utilization_avg)
    return per_gpu_second * cfg.gpus_for(role) * seconds


def model_cost(prompt_tokens: int, output_tokens: int, role: str, cfg: CostConfig) -> float:
    price = cfg.model_price.get(role)
    if price is None:
        return 0.0
    return prompt_tokens / 1000.0 * price.prompt + output_tokens / 1000.0 * price.completion


@dataclass
class CostEntry:
    """One charged call. ``wasted`` flips when speculation is invalidated."""

    scope: str  # "exec" or "verifier"
    node_id: str
    attempt: int
    role: str
    gpu: float
    model: float
    wasted: bool = False
    normalized: float | None = None

    @property
    def total(self) -> float:
        return self.gpu + self.model


def tally_call(
    scope: str,
    node_id: str,
    attempt: int,
    role: str,
    prompt_tokens: int,
    output_tokens: int,
    config: CostConfig,
    baseline: float | None = None,
) -> CostEntry:
    """Price one call. ``baseline`` (a reference execution cost) adds a
    normalized-cost annotation when known."""
    tokens = prompt_tokens + output_tokens
    gpu = gpu_cost(config, role, tokens)
    model = model_cost(prompt_tokens, output_tokens, role, config)
    entry = CostEntry(
        scope=scope, node_id=node_id, attempt=attempt, role=role, gpu=gpu, model=model
    )
    if baseline is not None and baseline > 0:
        entry.normalized = entry.total / baseline
    return entry


def tally_verifier_cost(
    outcome: "VerifierOutcome",
    config: CostConfig,
    *,
    node_id: str = "",
    attempt: int = 0,
    baseline: float | None = None,
) -> CostEntry:
    """Price a whole verifier outcome as one ledger entry.

    Sums GPU and model cost over the outcome's internal calls (each call
    carries its own role). ``baseline`` — typically the node's own execution
    cost — adds a normalized-cost annotation.
    """
    gpu = 0.0
    model = 0.0
    for call in outcome.calls:
        tokens = call.result.prompt_tokens + call.result.output_tokens
        gpu += gpu_cost(config, call.role, tokens)
        model += model_cost(call.result.prompt_tokens, call.result.output_tokens, call.role, config)
    entry = CostEntry(
        scope="verifier",
        node_id=node_id,
        attempt=attempt,
        role=outcome.kind.name,
        gpu=gpu,
        model=model,
    )
    if baseline is not None and baseline > 0:
        entry.normalized = entry.total / baseline
    return entry


class CostLedger:
    """Append-only list of cost entries with running totals.

    Totals are accumulated in append order, so the additivity invariant
    (run total == sum over entries) holds by construction and is cheap to
    re-check in tests.
    """

    def __init__(self) -> None:
        self.entries: list[CostEntry] = []
        self._total = 0.0

    def add(self, entry: CostEntry) -> CostEntry:
        self.entries.append(entry)
        self._total += entry.total
        return entry

    @property
    def total(self) -> float:
        return self._total

    def wasted_total(self) -> float:
        return sum(e.total for e in self.entries if e.wasted)

    def subtotal(self, scope: str | None = None, node_id: str | None = None) -> float:
        selected: Iterable[CostEntry] = self.entries
        if scope is not None:
            selected = (e for e in selected if e.scope == scope)
        if node_id is not None:
            selected = (e for e in selected if e.node_id == node_id)
        return sum(e.total for e in selected)

    def to_records(self) -> list[dict]:
        return [
            {
                "scope": e.scope,
                "node": e.node_id,
                "attempt": e.attempt,
                "role": e.role,
                "gpu": e.gpu,
                "model": e.model,
                "total": e.total,
                "wasted": e.wasted,
                "normalized": e.normalized,
            }
            for e in self.entries
        ]
