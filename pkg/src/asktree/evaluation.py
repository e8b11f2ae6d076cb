"""Metrics, sensitivity selection, cross-validation, and prompt baselines.

Precision, recall and F-beta follow the all-zeros conventions: an undefined
ratio is reported as 0 rather than raising.  Sensitivity selection maximizes
F-beta on a validation set over the grid of reached leaf ratios plus the
endpoints 0 and 1, breaking ties toward the largest threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .data import Dataset, Sample, enumerate_partitions, split_by_folds, stratified_folds
from .errors import AskTreeError, EvaluationError
from .gateway import Gateway, TemplateId, Verdict, parse_answer, sample_json
from .split import AnswersFn
from .tree import Tree, predict

logger = logging.getLogger(__name__)

DEFAULT_BETA = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def from_pairs(cls, labeled: Sequence[tuple[int, int]]) -> "ConfusionCounts":
        tp = fp = tn = fn = 0
        for label, predicted in labeled:
            if predicted == 1:
                if label == 1:
                    tp += 1
                else:
                    fp += 1
            else:
                if label == 1:
                    fn += 1
                else:
                    tn += 1
        return cls(tp, fp, tn, fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def precision_value(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp
    return counts.tp / denom if denom else 0.0


def recall_value(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fn
    return counts.tp / denom if denom else 0.0


def fbeta_value(precision: float, recall: float, beta: float = DEFAULT_BETA) -> float:
    denom = beta * beta * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta * beta) * precision * recall / denom


def accuracy_value(counts: ConfusionCounts) -> float:
    return (counts.tp + counts.tn) / counts.total if counts.total else 0.0


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    fbeta: float
    beta: float
    counts: ConfusionCounts

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "fbeta": self.fbeta,
            "beta": self.beta,
            "counts": {
                "tp": self.counts.tp,
                "fp": self.counts.fp,
                "tn": self.counts.tn,
                "fn": self.counts.fn,
            },
        }


def metrics(counts: ConfusionCounts, beta: float = DEFAULT_BETA) -> Metrics:
    p = precision_value(counts)
    r = recall_value(counts)
    return Metrics(accuracy_value(counts), p, r, fbeta_value(p, r, beta), beta, counts)


def rescale_precision(precision: float, dataset_rate: float, industry_rate: float) -> float:
    """Linear extrapolation of precision to a different positive base rate.

    This is a report-time estimate, not a measurement: it assumes precision
    scales with the base-rate ratio and says nothing about the classifier's
    behavior on the other population.
    """
    if not 0 <= precision <= 1:
        raise EvaluationError("precision must be within [0, 1]")
    if not 0 < dataset_rate <= 1 or not 0 < industry_rate <= 1:
        raise EvaluationError("base rates must be within (0, 1]")
    return precision * industry_rate / dataset_rate


# ---------------------------------------------------------------------------
# tree evaluation and sensitivity selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityChoice:
    threshold: float
    fbeta: float
    metrics: Optional[Metrics] = None  # confusion metrics at the chosen threshold


def _ratios_and_labels(
    tree: Tree, samples: Sequence[Sample], answers_fn: Optional[AnswersFn]
) -> list[tuple[int, float]]:
    cache: dict = {}
    return [
        (s.label, predict(tree, s, answers_fn, _dsl_cache=cache).ratio) for s in samples
    ]


def _confusion_at(pairs: Sequence[tuple[int, float]], threshold: float) -> ConfusionCounts:
    return ConfusionCounts.from_pairs(
        [(label, 1 if ratio >= threshold else 0) for label, ratio in pairs]
    )


def select_sensitivity(
    tree: Tree,
    samples: Sequence[Sample],
    answers_fn: Optional[AnswersFn] = None,
    beta: float = DEFAULT_BETA,
) -> SensitivityChoice:
    """Pick the leaf-ratio threshold maximizing F-beta on these samples.

    The candidate grid is the set of leaf ratios actually reached by the
    samples, plus 0 and 1.  Ties go to the largest threshold, the most
    conservative of the equally good choices.
    """
    if not samples:
        raise EvaluationError("cannot select a sensitivity from zero samples")
    pairs = _ratios_and_labels(tree, samples, answers_fn)
    grid = sorted({ratio for _, ratio in pairs} | {0.0, 1.0})
    best: Optional[SensitivityChoice] = None
    for threshold in grid:
        scored = metrics(_confusion_at(pairs, threshold), beta)
        if (
            best is None
            or scored.fbeta > best.fbeta
            or (scored.fbeta == best.fbeta and threshold > best.threshold)
        ):
            best = SensitivityChoice(threshold=threshold, fbeta=scored.fbeta, metrics=scored)
    return best


def evaluate_tree(
    tree: Tree,
    samples: Sequence[Sample],
    sensitivity: float,
    answers_fn: Optional[AnswersFn] = None,
    beta: float = DEFAULT_BETA,
) -> Metrics:
    """Confusion metrics of thresholded tree predictions on labeled samples."""
    pairs = _ratios_and_labels(tree, samples, answers_fn)
    return metrics(_confusion_at(pairs, sensitivity), beta)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

BuildFn = Callable[[Sequence[Sample]], Tree]


@dataclass(frozen=True)
class CvRow:
    train_folds: tuple[int, ...]
    val_fold: int
    test_fold: int
    sensitivity: float
    accuracy: float
    precision: float
    recall: float
    fbeta: float

    def to_dict(self) -> dict:
        return {
            "train_folds": list(self.train_folds),
            "val_fold": self.val_fold,
            "test_fold": self.test_fold,
            "sensitivity": self.sensitivity,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "fbeta": self.fbeta,
        }


_CV_FIELDS = ("sensitivity", "accuracy", "precision", "recall", "fbeta")


@dataclass(frozen=True)
class CvResult:
    rows: tuple[CvRow, ...]
    beta: float
    tree_count: int
    averages: dict = field(default_factory=dict)
    failures: tuple[str, ...] = ()

    def text_table(self) -> str:
        header = (
            f"{'train':>7} {'val':>3} {'test':>4} {'sens':>6} "
            f"{'acc':>6} {'prec':>6} {'rec':>6} {'f':>6}"
        )
        lines = [header, "-" * len(header)]
        for row in self.rows:
            folds = "".join(str(f) for f in row.train_folds)
            lines.append(
                f"{folds:>7} {row.val_fold:>3} {row.test_fold:>4} "
                f"{row.sensitivity:6.3f} {100 * row.accuracy:6.1f} "
                f"{100 * row.precision:6.1f} {100 * row.recall:6.1f} "
                f"{100 * row.fbeta:6.1f}"
            )
        lines.append("-" * len(header))
        a = self.averages
        lines.append(
            f"{'mean':>7} {'':>3} {'':>4} {a['sensitivity']:6.3f} "
            f"{100 * a['accuracy']:6.1f} {100 * a['precision']:6.1f} "
            f"{100 * a['recall']:6.1f} {100 * a['fbeta']:6.1f}"
        )
        for failure in self.failures:
            lines.append(f"failed: {failure}")
        return "\n".join(lines)


def run_cv(
    dataset: Dataset,
    build_fn: BuildFn,
    answers_fn: Optional[AnswersFn] = None,
    *,
    k: int = 5,
    seed: int = 0,
    beta: float = DEFAULT_BETA,
) -> CvResult:
    """Rotating-fold evaluation: 3 folds train, 1 validates, 1 tests.

    Every 3-fold training combination is built once and reused by both
    orientations of its two held-out folds, so 5 folds yield 20 scored
    partitions from 10 trees.  A failed build marks its partitions failed
    and the averages cover the completed rows only.
    """
    plan = stratified_folds(dataset, k, seed)
    partitions = enumerate_partitions(plan)
    trees: dict[frozenset, Tree] = {}
    failed_builds: dict[frozenset, str] = {}
    rows: list[CvRow] = []
    failures: list[str] = []
    for part in partitions:
        key = part.train_folds
        if key not in trees and key not in failed_builds:
            train = split_by_folds(dataset, plan, sorted(key))
            try:
                trees[key] = build_fn(train)
            except AskTreeError as exc:
                failed_builds[key] = str(exc)
                logger.warning("build on folds %s failed: %s", sorted(key), exc)
        if key in failed_builds:
            failures.append(
                f"val={part.val_fold} test={part.test_fold}: {failed_builds[key]}"
            )
            continue
        tree = trees[key]
        val = split_by_folds(dataset, plan, [part.val_fold])
        test = split_by_folds(dataset, plan, [part.test_fold])
        choice = select_sensitivity(tree, val, answers_fn, beta)
        result = evaluate_tree(tree, test, choice.threshold, answers_fn, beta)
        rows.append(
            CvRow(
                train_folds=tuple(sorted(key)),
                val_fold=part.val_fold,
                test_fold=part.test_fold,
                sensitivity=choice.threshold,
                accuracy=result.accuracy,
                precision=result.precision,
                recall=result.recall,
                fbeta=result.fbeta,
            )
        )
    if not rows:
        raise EvaluationError("every cross-validation build failed")
    averages = {
        name: sum(getattr(r, name) for r in rows) / len(rows) for name in _CV_FIELDS
    }
    return CvResult(
        rows=tuple(rows),
        beta=beta,
        tree_count=len(trees),
        averages=averages,
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# prompt baselines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineResult:
    metrics: Metrics
    failures: int  # transport-failed samples, excluded from the counts
    calls: int


def _classify(
    samples: Sequence[Sample],
    task: str,
    gateway: Gateway,
    template: TemplateId,
    extra: Optional[dict] = None,
) -> list[Optional[int]]:
    """Per-sample yes/no verdicts; None marks a failed call.

    An unparseable but successful reply counts as a negative prediction;
    failed transport is excluded so it cannot masquerade as a correct "no".
    """
    requests = [
        gateway.request(
            template, {"task": task, "sample_json": sample_json(s), **(extra or {})}
        )
        for s in samples
    ]
    responses = gateway.complete_batch(requests)
    out: list[Optional[int]] = []
    for resp in responses:
        if not resp.ok:
            out.append(None)
            continue
        out.append(1 if parse_answer(resp.text).verdict is Verdict.YES else 0)
    return out


def _baseline_result(
    samples: Sequence[Sample], predicted: Sequence[Optional[int]], beta: float
) -> BaselineResult:
    pairs = [
        (s.label, p) for s, p in zip(samples, predicted) if p is not None
    ]
    failures = len(samples) - len(pairs)
    if failures:
        logger.warning("%d baseline calls failed and were excluded", failures)
    return BaselineResult(
        metrics=metrics(ConfusionCounts.from_pairs(pairs), beta),
        failures=failures,
        calls=len(samples),
    )


def baseline_vanilla(
    samples: Sequence[Sample],
    task: str,
    gateway: Gateway,
    beta: float = DEFAULT_BETA,
) -> BaselineResult:
    """Ask for a bare yes/no per sample, no examples given."""
    predicted = _classify(samples, task, gateway, TemplateId.VANILLA_BASELINE)
    return _baseline_result(samples, predicted, beta)


def baseline_fewshot(
    samples: Sequence[Sample],
    task: str,
    gateway: Gateway,
    exemplars: Sequence[Sample],
    beta: float = DEFAULT_BETA,
) -> BaselineResult:
    """Yes/no per sample with labeled exemplars prepended.

    Exemplars must be disjoint from the evaluated samples; leaking an
    evaluated sample into the prompt invalidates the measurement.
    """
    if not exemplars:
        raise EvaluationError("few-shot baseline needs at least one exemplar")
    overlap = {s.id for s in samples} & {e.id for e in exemplars}
    if overlap:
        raise EvaluationError(
            f"exemplars overlap evaluation set: {sorted(overlap)[:3]}"
        )
    import json

    exemplars_json = json.dumps(
        [
            {"features": dict(sorted(e.features.items())), "label": e.label}
            for e in exemplars
        ],
        sort_keys=True,
    )
    predicted = _classify(
        samples,
        task,
        gateway,
        TemplateId.FEWSHOT_BASELINE,
        extra={"exemplars_json": exemplars_json},
    )
    return _baseline_result(samples, predicted, beta)
