"""Wires the model gateway into tree construction.

This is the composition root used by the CLI and the HTTP service: it turns
a gateway plus build parameters into the candidate and answer functions the
tree builder needs, runs insight generation up front, and reports call and
token usage for the build.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .data import FeatureSpec, Sample
from .errors import EmptyInsightError
from .gateway import Gateway, TemplateId
from .insights import generate_insights
from .questions import QuestionKind, generate_candidates, with_grouping
from .split import AnswersFn, group_categories
from .tree import BuildParams, CandidatesFn, Tree, build

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BuildReport:
    node_count: int
    leaf_count: int
    depth: int
    llm_calls: int
    llm_tokens: int

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "leaf_count": self.leaf_count,
            "depth": self.depth,
            "llm_calls": self.llm_calls,
            "llm_tokens": self.llm_tokens,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "BuildReport":
        return cls(**{k: raw[k] for k in cls(0, 0, 0, 0, 0).to_dict()})


@dataclass(frozen=True)
class TrainResult:
    tree: Tree
    report: BuildReport
    insights: str


def make_answers_fn(gateway: Gateway, task: str) -> AnswersFn:
    def answers(question, sample):
        return gateway.answer_yes_no(question.text, sample, task).verdict

    return answers


def make_ask_fn(gateway: Gateway, task: str):
    """Free-text variant of make_answers_fn returning the full Answer."""

    def ask(question: str, sample: Sample):
        return gateway.answer_yes_no(question, sample, task)

    return ask


def _frequency_ordered_categories(
    samples: Sequence[Sample], spec: FeatureSpec
) -> list[str]:
    counts = Counter(
        str(v) for s in samples if (v := s.features.get(spec.name)) is not None
    )
    declared = list(spec.categories or ())
    return sorted(declared, key=lambda c: (-counts.get(c, 0), c))


def make_candidates_fn(
    gateway: Gateway,
    task: str,
    schema: Sequence[FeatureSpec],
    insights_text: str,
    params: BuildParams,
) -> CandidatesFn:
    """Candidate generation with unresolved category groupings filled in."""
    by_name = {spec.name: spec for spec in schema}

    def candidates(samples, advice):
        proposed = generate_candidates(
            samples,
            schema,
            task,
            insights_text,
            gateway,
            per_feature_max=params.per_feature_max,
            max_branching=params.max_branching,
            inference_only=params.inference_only,
            advice=advice,
        )
        resolved = []
        for q in proposed:
            if q.kind is QuestionKind.CLUSTERING and q.grouping is None:
                spec = by_name[q.feature]
                mapping = group_categories(
                    gateway,
                    task,
                    q.feature,
                    _frequency_ordered_categories(samples, spec),
                    params.max_branching,
                )
                q = with_grouping(q, mapping)
            resolved.append(q)
        return resolved

    return candidates


def expand_advice(gateway: Gateway, task: str, advice: str) -> str:
    """Restate free-form expert advice as concrete checks; empty stays empty."""
    if not advice.strip():
        return ""
    resp = gateway.complete(
        gateway.request(TemplateId.REBUILD_ADVICE, {"task": task, "advice": advice})
    )
    if not resp.ok or not resp.text.strip():
        logger.warning("advice expansion failed, using the raw advice text")
        return advice
    return resp.text.strip()


def train_tree(
    samples: Sequence[Sample],
    schema: Sequence[FeatureSpec],
    task: str,
    gateway: Gateway,
    params: BuildParams = BuildParams(),
    compute_insights: bool = True,
) -> TrainResult:
    """Insights, candidate generation, greedy build, and a usage report."""
    calls_before = gateway.total_calls
    tokens_before = gateway.total_tokens
    insights_text = ""
    if compute_insights:
        try:
            insights_text = generate_insights(
                samples, task, gateway, batch_size=params.batch_size
            ).text
        except EmptyInsightError as exc:
            logger.warning("continuing without insights: %s", exc)
    tree = build(
        samples,
        schema,
        task,
        make_candidates_fn(gateway, task, schema, insights_text, params),
        make_answers_fn(gateway, task),
        params,
        insights=insights_text,
    )
    report = BuildReport(
        node_count=tree.node_count(),
        leaf_count=len(tree.leaves()),
        depth=tree.depth(),
        llm_calls=gateway.total_calls - calls_before,
        llm_tokens=gateway.total_tokens - tokens_before,
    )
    return TrainResult(tree=tree, report=report, insights=insights_text)
