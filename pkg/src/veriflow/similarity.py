"""Text similarity metrics and the keep/rollback decision rule."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

_TOKEN_RE = re.compile(r"\w+")


class UnknownMetric(ValueError):
    """Asked for a similarity metric this module does not implement."""


class Metric(str, Enum):
    COSINE = "cosine"
    JACCARD = "jaccard"
    ROUGE_L = "rouge_l"
    BLEU = "bleu"


class TaskCategory(str, Enum):
    INSTRUCTION = "instruction"
    CODE = "code"
    MATH = "math"
    TOOL = "tool"


class RollbackDecision(str, Enum):
    KEEP = "keep"
    ROLLBACK = "rollback"


#: Categories where surface similarity is uninformative and a revision always
#: triggers a rollback.
ALWAYS_ROLLBACK = frozenset({TaskCategory.CODE, TaskCategory.MATH})

DEFAULT_KEEP_THRESHOLD = 0.7


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # One-row DP keeps memory linear in the shorter sequence.
    if len(b) > len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 between two texts. 0.0 when either side has no tokens."""
    a = tokenize(candidate)
    b = tokenize(reference)
    if not a or not b:
        return 0.0
    lcs = _lcs_length(a, b)
    if lcs == 0:
        return 0.0
    precision = lcs / len(a)
    recall = lcs / len(b)
    return 2 * precision * recall / (precision + recall)


def jaccard(candidate: str, reference: str) -> float:
    a = set(tokenize(candidate))
    b = set(tokenize(reference))
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def cosine(candidate: str, reference: str) -> float:
    a = Counter(tokenize(candidate))
    b = Counter(tokenize(reference))
    if not a or not b:
        return 0.0
    if a == b:
        # sqrt round-trip would yield 0.999... for a vector against itself
        return 1.0
    dot = sum(count * b[token] for token, count in a.items())
    if dot == 0:
        return 0.0
    norm_a = math.sqrt(sum(c * c for c in a.values()))
    norm_b = math.sqrt(sum(c * c for c in b.values()))
    return dot / (norm_a * norm_b)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_order: int = 4) -> float:
    """Geometric mean of 1..max_order n-gram precisions with add-one smoothing
    for orders >= 2 and the usual brevity penalty. Asymmetric: the first
    argument is the candidate."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_order + 1):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        total = sum(cand_counts.values())
        matched = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            # Add-one smoothing keeps short candidates from zeroing the score.
            precision = (matched + 1) / (total + 1) if total > 0 else 1.0
        log_sum += math.log(precision)
    geo_mean = math.exp(log_sum / max_order)
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return brevity * geo_mean


METRICS = {
    Metric.ROUGE_L: rouge_l,
    Metric.JACCARD: jaccard,
    Metric.COSINE: cosine,
    Metric.BLEU: bleu,
}


@dataclass(frozen=True)
class SimilarityScore:
    metric: Metric
    value: float


def similarity(metric: Metric | str, a: str, b: str) -> SimilarityScore:
    """Score two texts under the named metric.

    BLEU treats ``a`` as the candidate and ``b`` as the reference; the other
    metrics are symmetric.
    """
    try:
        resolved = Metric(metric)
    except ValueError:
        raise UnknownMetric(f"unknown similarity metric {metric!r}") from None
    return SimilarityScore(metric=resolved, value=METRICS[resolved](a, b))


def decide_rollback(
    category: TaskCategory,
    original: str,
    revised: str,
    thresholds: Mapping[TaskCategory, float] | None = None,
) -> RollbackDecision:
    """Selective-rollback rule applied when a verifier revises an output.

    Code and math revisions always roll back. Instruction and tool revisions
    are kept when the revised text is similar enough (ROUGE-L F1 at or above
    the category threshold) for downstream work to remain valid.
    """
    category = TaskCategory(category)
    if category in ALWAYS_ROLLBACK:
        return RollbackDecision.ROLLBACK
    threshold = DEFAULT_KEEP_THRESHOLD
    if thresholds is not None and category in thresholds:
        threshold = thresholds[category]
    score = rouge_l(revised, original)
    if score >= threshold:
        return RollbackDecision.KEEP
    return RollbackDecision.ROLLBACK


@dataclass(frozen=True)
class CalibrationResult:
    """Threshold sweep summary for one similarity metric."""

    metric: str
    threshold: float
    youden_j: float
    auc: float
    spearman: float
    n_pairs: int


@dataclass(frozen=True)
class LabeledPair:
    """A (original, revised) pair labeled with whether keeping was safe."""

    original: str
    revised: str
    keep_ok: bool


def _roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    pos = sorted_labels.sum()
    neg = len(labels) - pos
    tpr = np.concatenate([[0.0], np.cumsum(sorted_labels) / max(pos, 1)])
    fpr = np.concatenate([[0.0], np.cumsum(1 - sorted_labels) / max(neg, 1)])
    thresholds = np.concatenate([[np.inf], scores[order]])
    return fpr, tpr, thresholds


def calibrate_threshold(pairs: Iterable[LabeledPair], metric: str = "rouge_l") -> CalibrationResult:
    """Pick the score threshold maximizing Youden's J = TPR - FPR.

    Also reports ROC AUC and the Spearman correlation between the metric
    scores and the keep labels, so a metric that carries no signal for a
    category is visible at a glance.
    """
    fn = METRICS[metric]
    pair_list = list(pairs)
    if not pair_list:
        raise ValueError("calibration needs at least one labeled pair")
    scores = np.array([fn(p.revised, p.original) for p in pair_list], dtype=float)
    labels = np.array([1.0 if p.keep_ok else 0.0 for p in pair_list])
    fpr, tpr, thresholds = _roc_points(scores, labels)
    j = tpr - fpr
    best = int(np.argmax(j))
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))
    if np.all(labels == labels[0]) or np.all(scores == scores[0]):
        spearman = 0.0
    else:
        spearman = float(stats.spearmanr(scores, labels).statistic)
    threshold = float(thresholds[best]) if np.isfinite(thresholds[best]) else 1.0
    return CalibrationResult(
        metric=metric,
        threshold=threshold,
        youden_j=float(j[best]),
        auc=auc,
        spearman=spearman,
        n_pairs=len(pair_list),
    )
