"""Split scoring and greedy selection.

Impurity is computed in exact rational arithmetic so candidate comparisons
and tie-breaking are reproducible across platforms; floats are derived only
for reporting.  A split keeps the first candidate (in proposal order) that
attains the minimum weighted Gini impurity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

from . import dsl
from .data import Sample
from .errors import InvalidCountsError
from .gateway import Gateway, TemplateId, Verdict
from .questions import Question, QuestionKind

logger = logging.getLogger(__name__)

# answers_fn(question, sample) -> Verdict, used for INFERENCE questions only
AnswersFn = Callable[[Question, Sample], Verdict]

YES_BRANCH = "yes"
NO_BRANCH = "no"


@dataclass(frozen=True)
class ClassCounts:
    neg: int
    pos: int

    def __post_init__(self):
        if self.neg < 0 or self.pos < 0:
            raise InvalidCountsError(f"negative class count: ({self.neg}, {self.pos})")

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "ClassCounts":
        pos = sum(1 for s in samples if s.label == 1)
        return cls(neg=len(samples) - pos, pos=pos)

    @property
    def total(self) -> int:
        return self.neg + self.pos

    def ratio_exact(self) -> Fraction:
        if self.total == 0:
            return Fraction(0)
        return Fraction(self.pos, self.total)

    @property
    def ratio(self) -> float:
        return float(self.ratio_exact())

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(self.neg + other.neg, self.pos + other.pos)


def gini_exact(counts: ClassCounts) -> Fraction:
    """Binary Gini impurity, 1 - p_neg^2 - p_pos^2; empty counts are pure."""
    n = counts.total
    if n == 0:
        return Fraction(0)
    return 1 - Fraction(counts.neg, n) ** 2 - Fraction(counts.pos, n) ** 2


def gini(counts: ClassCounts) -> float:
    return float(gini_exact(counts))


def weighted_gini_exact(branch_counts: Mapping[str, ClassCounts]) -> Fraction:
    """Size-weighted mean of branch impurities."""
    total = sum(c.total for c in branch_counts.values())
    if total == 0:
        return Fraction(0)
    return sum(
        (Fraction(c.total, total) * gini_exact(c) for c in branch_counts.values()),
        Fraction(0),
    )


def weighted_gini(branch_counts: Mapping[str, ClassCounts]) -> float:
    return float(weighted_gini_exact(branch_counts))


# ---------------------------------------------------------------------------
# routing samples through a question
# ---------------------------------------------------------------------------


@dataclass
class Partition:
    question: Question
    branches: dict[str, list[Sample]]
    dropped: list[Sample]

    def counts(self) -> dict[str, ClassCounts]:
        return {label: ClassCounts.from_samples(group) for label, group in self.branches.items()}

    @property
    def included(self) -> int:
        return sum(len(g) for g in self.branches.values())


def route_inference(
    question: Question,
    sample: Sample,
    answers_fn: AnswersFn,
    unknown_policy: str,
) -> Optional[str]:
    verdict = answers_fn(question, sample)
    if verdict is Verdict.YES:
        return YES_BRANCH
    if verdict is Verdict.NO:
        return NO_BRANCH
    if unknown_policy == "drop":
        return None
    return NO_BRANCH


def apply_question(
    question: Question,
    samples: Sequence[Sample],
    answers_fn: Optional[AnswersFn] = None,
    unknown_policy: str = "no",
) -> Partition:
    """Route samples into branches.

    INFERENCE asks the answer function and sends unknowns to the no-branch
    (or drops them, per policy).  CODE evaluates the predicate, where missing
    values make any comparison false.  CLUSTERING routes by the category
    grouping; samples with a missing or unmapped category join the largest
    branch afterwards, so they never create a branch of their own.
    """
    if unknown_policy not in ("no", "drop"):
        raise ValueError(f"unknown_policy must be 'no' or 'drop', got {unknown_policy!r}")
    branches: dict[str, list[Sample]] = {}
    dropped: list[Sample] = []

    if question.kind is QuestionKind.INFERENCE:
        if answers_fn is None:
            raise ValueError("INFERENCE questions need an answers function")
        for s in samples:
            label = route_inference(question, s, answers_fn, unknown_policy)
            if label is None:
                dropped.append(s)
            else:
                branches.setdefault(label, []).append(s)
    elif question.kind is QuestionKind.CODE:
        expr = dsl.parse(question.expression or "")
        for s in samples:
            label = YES_BRANCH if dsl.evaluate(expr, s) else NO_BRANCH
            branches.setdefault(label, []).append(s)
    else:
        grouping = question.grouping_dict()
        if not grouping:
            raise ValueError(f"clustering question {question.text!r} has no grouping")
        leftovers: list[Sample] = []
        for s in samples:
            value = s.features.get(question.feature)
            label = grouping.get(str(value)) if value is not None else None
            if label is None:
                leftovers.append(s)
            else:
                branches.setdefault(label, []).append(s)
        if leftovers:
            if branches:
                largest = min(branches, key=lambda k: (-len(branches[k]), k))
            else:
                largest = sorted(set(grouping.values()))[0]
                branches[largest] = []
            branches[largest].extend(leftovers)
    return Partition(question=question, branches=branches, dropped=dropped)


# ---------------------------------------------------------------------------
# greedy choice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitChoice:
    question: Question
    partition: Partition
    weighted_exact: Fraction
    parent_exact: Fraction

    @property
    def weighted(self) -> float:
        return float(self.weighted_exact)

    @property
    def gain_exact(self) -> Fraction:
        return self.parent_exact - self.weighted_exact

    @property
    def gain(self) -> float:
        return float(self.gain_exact)


def best_split(
    samples: Sequence[Sample],
    candidates: Sequence[Question],
    answers_fn: Optional[AnswersFn] = None,
    *,
    min_leaf: int = 1,
    unknown_policy: str = "no",
) -> Optional[SplitChoice]:
    """Pick the candidate minimizing weighted Gini impurity.

    Candidates producing fewer than two branches, or any branch smaller than
    min_leaf, are skipped.  Exact rational comparison breaks ties in favor of
    the earliest candidate.  Returns None when nothing is splittable.
    """
    parent = gini_exact(ClassCounts.from_samples(samples))
    best: Optional[SplitChoice] = None
    for question in candidates:
        partition = apply_question(question, samples, answers_fn, unknown_policy)
        counts = partition.counts()
        if len(counts) < 2:
            continue
        if any(c.total < min_leaf for c in counts.values()):
            continue
        weighted = weighted_gini_exact(counts)
        if best is None or weighted < best.weighted_exact:
            best = SplitChoice(
                question=question,
                partition=partition,
                weighted_exact=weighted,
                parent_exact=parent,
            )
    return best


# ---------------------------------------------------------------------------
# category grouping for CLUSTERING questions
# ---------------------------------------------------------------------------


def _parse_group_lines(text: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        category, arrow, label = line.partition("->")
        if not arrow or not category.strip() or not label.strip():
            raise ValueError(f"bad grouping line {line!r}")
        mapping[category.strip()] = label.strip()
    return mapping


def _valid_grouping(mapping: dict[str, str], categories: Sequence[str], max_branching: int) -> bool:
    if set(mapping) != set(categories):
        return False
    return 2 <= len(set(mapping.values())) <= max_branching


def chunk_categories(categories: Sequence[str], max_branching: int) -> dict[str, str]:
    """Deterministic fallback: contiguous near-equal chunks in given order."""
    groups = min(max_branching, len(categories))
    chunks: list[list[str]] = [[] for _ in range(groups)]
    for i, cat in enumerate(categories):
        chunks[i * groups // len(categories)].append(cat)
    return {cat: "+".join(chunk) for chunk in chunks for cat in chunk}


def group_categories(
    gateway: Gateway,
    task: str,
    feature_name: str,
    categories: Sequence[str],
    max_branching: int,
) -> dict[str, str]:
    """Group categories into at most max_branching branches.

    Few categories map to themselves.  Otherwise the model proposes a
    grouping; an invalid reply gets one retry, and a second invalid reply
    falls back to deterministic chunking in the given (frequency) order.
    """
    if max_branching < 2:
        raise ValueError("max_branching must be >= 2")
    if len(categories) <= max_branching:
        return {c: c for c in categories}
    import json

    bindings = {
        "task": task,
        "feature_name": feature_name,
        "max_groups": max_branching,
        "categories_json": json.dumps(list(categories)),
    }
    for attempt in range(2):
        resp = gateway.complete(gateway.request(TemplateId.CATEGORY_GROUP, bindings))
        if not resp.ok:
            continue
        try:
            mapping = _parse_group_lines(resp.text)
        except ValueError:
            logger.debug("unparseable grouping reply (attempt %d)", attempt + 1)
            continue
        if _valid_grouping(mapping, categories, max_branching):
            return mapping
    logger.warning(
        "falling back to frequency-order chunking for feature %s", feature_name
    )
    return chunk_categories(categories, max_branching)
