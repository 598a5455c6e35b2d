"""Learned verifier selection.

A linear policy over hashed bag-of-words features maps a task prompt to a
probability distribution over candidate verifiers. Training follows a
group-relative scheme: for each sample, every candidate's utility
``U_i = P_i - lambda * C_i`` is compared against the group mean, and the
policy is pushed toward candidates with positive advantage. Because the
advantages of one sample sum to zero, the loss gradient w.r.t. the logits is
simply the negated advantage vector, so training is plain matrix algebra.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .similarity import TaskCategory
from .verifiers import DEFAULT_CANDIDATES, VerifierFamily, VerifierKind

DEFAULT_DIM = 1024
DEFAULT_LEARNING_RATE = 0.1
DEFAULT_BATCH_SIZE = 32

_TOKEN_RE = re.compile(r"\w+")


class NonFiniteLoss(ArithmeticError):
    """Training hit a NaN/inf loss; aborts with the offending batch stats."""


def featurize(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Signed feature hashing of lowercase word tokens, L2-normalized.

    Hashing uses blake2b so vectors are identical across processes and
    platforms (the builtin ``hash`` is salted per interpreter run).
    """
    vector = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        index = int.from_bytes(digest[:4], "little") % dim
        sign = 1.0 if digest[4] & 1 else -1.0
        vector[index] += sign
    norm = np.linalg.norm(vector)
    if norm > 0:
        vector /= norm
    return vector


@dataclass(frozen=True)
class TrainingSample:
    """One task prompt with observed per-candidate performance and cost.

    ``correct`` optionally marks which candidates produced a correct final
    answer; it feeds oracle labels, not the loss.
    """

    prompt: str
    perf: np.ndarray
    cost: np.ndarray
    correct: np.ndarray | None = None


def utility(perf: np.ndarray, cost: np.ndarray, lam: float) -> np.ndarray:
    return np.asarray(perf, dtype=float) - lam * np.asarray(cost, dtype=float)


def group_advantage(util: np.ndarray) -> np.ndarray:
    """Group-relative advantages; always sums to zero."""
    util = np.asarray(util, dtype=float)
    return util - util.mean()


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


class SelectorPolicy:
    """Linear scoring head over hashed prompt features."""

    def __init__(
        self,
        candidates: Sequence[VerifierKind] = DEFAULT_CANDIDATES,
        dim: int = DEFAULT_DIM,
        seed: int = 0,
    ) -> None:
        if not candidates:
            raise ValueError("need at least one candidate verifier")
        self.candidates = tuple(candidates)
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.weights = rng.normal(0.0, 0.01, size=(len(self.candidates), dim))
        self.bias = np.zeros(len(self.candidates))

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.bias

    def distribution(self, prompt: str) -> np.ndarray:
        return softmax(self.logits(featurize(prompt, self.dim)))

    def select(self, prompt: str) -> tuple[np.ndarray, VerifierKind]:
        """Distribution over candidates plus the argmax candidate.

        Ties resolve to the earliest candidate in declaration order.
        """
        probs = self.distribution(prompt)
        return probs, self.candidates[int(np.argmax(probs))]


def grpo_loss(policy: SelectorPolicy, batch: Sequence[TrainingSample], lam: float) -> float:
    features = np.stack([featurize(s.prompt, policy.dim) for s in batch])
    log_probs = np.log(softmax(features @ policy.weights.T + policy.bias))
    total = 0.0
    for row, sample in enumerate(batch):
        adv = group_advantage(utility(sample.perf, sample.cost, lam))
        total += float(adv @ log_probs[row])
    return -total / len(batch)


def grpo_update(
    policy: SelectorPolicy,
    batch: Sequence[TrainingSample],
    lam: float,
    step_size: float = DEFAULT_LEARNING_RATE,
) -> tuple[SelectorPolicy, float]:
    """One gradient-descent step; returns the policy and the pre-step loss.

    Because per-sample advantages sum to zero, dLoss/dlogits = -advantages,
    independent of the current probabilities.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    features = np.stack([featurize(s.prompt, policy.dim) for s in batch])
    adv = np.stack([group_advantage(utility(s.perf, s.cost, lam)) for s in batch])
    loss = grpo_loss(policy, batch, lam)
    if not np.isfinite(loss) or not np.all(np.isfinite(adv)):
        raise NonFiniteLoss(
            f"non-finite loss {loss!r} on a batch of {len(batch)} "
            f"(advantage range {np.nanmin(adv)}..{np.nanmax(adv)})"
        )
    grad_logits = -adv / len(batch)  # (B, N)
    policy.weights -= step_size * grad_logits.T @ features
    policy.bias -= step_size * grad_logits.sum(axis=0)
    return policy, loss


def train_selector(
    policy: SelectorPolicy,
    samples: Sequence[TrainingSample],
    lam: float,
    steps: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    lr: float = DEFAULT_LEARNING_RATE,
    seed: int = 0,
    log_every: int = 0,
) -> list[float]:
    """Minibatch training loop; returns the per-step loss history."""
    if not samples:
        raise ValueError("no training samples")
    rng = random.Random(seed)
    losses: list[float] = []
    for step in range(steps):
        batch = [samples[rng.randrange(len(samples))] for _ in range(min(batch_size, len(samples)))]
        _, loss = grpo_update(policy, batch, lam, lr)
        losses.append(loss)
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}/{steps} loss {loss:.6f}")
    return losses


def select_verifier(policy: SelectorPolicy, prompt: str) -> tuple[np.ndarray, VerifierKind]:
    """Distribution over the policy's candidates plus the argmax candidate."""
    return policy.select(prompt)


def oracle_label(sample: TrainingSample) -> tuple[int, bool]:
    """Cheapest correct candidate index; falls back to the globally cheapest
    one (flagged) when nothing was correct."""
    cost = np.asarray(sample.cost, dtype=float)
    if sample.correct is not None and bool(np.any(sample.correct)):
        correct_idx = np.flatnonzero(np.asarray(sample.correct, dtype=bool))
        return int(correct_idx[np.argmin(cost[correct_idx])]), False
    return int(np.argmin(cost)), True


def oracle_select(
    sample: TrainingSample, candidates: Sequence[VerifierKind] = DEFAULT_CANDIDATES
) -> tuple[VerifierKind, bool]:
    """Cheapest-correct oracle; the flag marks the all-incorrect fallback."""
    index, fallback = oracle_label(sample)
    return candidates[index], fallback


def selection_accuracy(
    policy: SelectorPolicy, samples: Sequence[TrainingSample], lam: float
) -> float:
    """Fraction of samples where the policy argmax matches the argmax-utility
    candidate."""
    hits = 0
    for sample in samples:
        _, kind = policy.select(sample.prompt)
        target = int(np.argmax(group_advantage(utility(sample.perf, sample.cost, lam))))
        hits += int(policy.candidates.index(kind) == target)
    return hits / len(samples)


# --- checkpoints -----------------------------------------------------------


def _kind_to_dict(kind: VerifierKind) -> dict:
    return {
        "family": kind.family.value,
        "samples": kind.samples,
        "rounds": kind.rounds,
        "variant": kind.variant,
    }


def _kind_from_dict(raw: dict) -> VerifierKind:
    return VerifierKind(
        family=VerifierFamily(raw["family"]),
        samples=raw.get("samples", 3),
        rounds=raw.get("rounds", 1),
        variant=raw.get("variant", "select"),
    )


def save_checkpoint(policy: SelectorPolicy, path: str, lam: float) -> None:
    payload = {
        "version": 1,
        "dim": policy.dim,
        "lambda": lam,
        "candidates": [_kind_to_dict(k) for k in policy.candidates],
        "weights": policy.weights.tolist(),
        "bias": policy.bias.tolist(),
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle)


def load_checkpoint(path: str) -> tuple[SelectorPolicy, float]:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    candidates = tuple(_kind_from_dict(raw) for raw in payload["candidates"])
    policy = SelectorPolicy(candidates=candidates, dim=payload["dim"])
    policy.weights = np.array(payload["weights"], dtype=float)
    policy.bias = np.array(payload["bias"], dtype=float)
    if policy.weights.shape != (len(candidates), policy.dim):
        raise ValueError("checkpoint weight shape does not match candidates/dim")
    return policy, float(payload["lambda"])


# --- dataset I/O and synthesis ---------------------------------------------


def sample_to_record(sample: TrainingSample) -> dict:
    record = {
        "prompt": sample.prompt,
        "perf": [float(x) for x in sample.perf],
        "cost": [float(x) for x in sample.cost],
    }
    if sample.correct is not None:
        record["correct"] = [bool(x) for x in sample.correct]
    return record


def sample_from_record(record: dict, n_candidates: int) -> TrainingSample:
    perf = np.asarray(record["perf"], dtype=float)
    cost = np.asarray(record["cost"], dtype=float)
    if len(perf) != n_candidates or len(cost) != n_candidates:
        raise ValueError(
            f"sample has {len(perf)} perf / {len(cost)} cost values, "
            f"expected {n_candidates}"
        )
    correct = record.get("correct")
    return TrainingSample(
        prompt=record["prompt"],
        perf=perf,
        cost=cost,
        correct=None if correct is None else np.asarray(correct, dtype=bool),
    )


def load_dataset(path: str, n_candidates: int) -> list[TrainingSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                samples.append(sample_from_record(json.loads(line), n_candidates))
    return samples


def save_dataset(samples: Iterable[TrainingSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(sample_to_record(sample)) + "\n")


_TOPIC_WORDS = {
    VerifierFamily.SELF_REFINE: ("draft", "polish", "rewrite", "edit", "tone"),
    VerifierFamily.ADVANCED_REFINE: ("proof", "theorem", "derivation", "lemma", "rigor"),
    VerifierFamily.SELF_CONSISTENCY: ("estimate", "arithmetic", "count", "sum", "fraction"),
    VerifierFamily.LLM_AS_JUDGE: ("summary", "ranking", "preference", "compare", "review"),
    VerifierFamily.DEBATE: ("policy", "tradeoff", "argument", "stance", "ethics"),
}


def synthetic_dominant_dataset(
    n_samples: int,
    seed: int = 0,
    candidates: Sequence[VerifierKind] = DEFAULT_CANDIDATES,
    perf_gap: float = 0.5,
    noise: float = 0.02,
) -> list[TrainingSample]:
    """Dataset where each prompt's topic words reveal a dominant verifier.

    The dominant candidate gets a clear utility edge (higher performance at
    equal cost), so a selector that reads the prompt can reach near-perfect
    argmax accuracy while prompt-blind baselines cannot.
    """
    rng = random.Random(seed)
    samples: list[TrainingSample] = []
    n = len(candidates)
    for _ in range(n_samples):
        dominant = rng.randrange(n)
        words = _TOPIC_WORDS[candidates[dominant].family]
        prompt_words = [rng.choice(words) for _ in range(8)]
        prompt = "task: " + " ".join(prompt_words)
        perf = np.full(n, 0.4)
        perf += np.array([rng.uniform(-noise, noise) for _ in range(n)])
        perf[dominant] = 0.4 + perf_gap + rng.uniform(-noise, noise)
        cost = np.full(n, 1.0)
        correct = perf > 0.6
        samples.append(
            TrainingSample(prompt=prompt, perf=perf, cost=cost, correct=correct)
        )
    return samples


DEFAULT_TABULAR_TABLE: dict[TaskCategory, VerifierFamily] = {
    TaskCategory.INSTRUCTION: VerifierFamily.SELF_REFINE,
    TaskCategory.CODE: VerifierFamily.ADVANCED_REFINE,
    TaskCategory.MATH: VerifierFamily.SELF_CONSISTENCY,
    TaskCategory.TOOL: VerifierFamily.LLM_AS_JUDGE,
}


class TabularPolicy:
    """Category-keyed baseline: one fixed verifier per task category."""

    def __init__(self, table: dict[TaskCategory, VerifierKind] | None = None) -> None:
        if table is None:
            table = {
                category: VerifierKind(family)
                for category, family in DEFAULT_TABULAR_TABLE.items()
            }
        self.table = table

    def select(self, category: TaskCategory) -> VerifierKind:
        try:
            return self.table[TaskCategory(category)]
        except KeyError:
            raise KeyError(f"no verifier configured for category {category!r}") from None
