"""Candidate split questions proposed by the model, one request per feature.

Each feature gets its own generation request so a malformed or failed
response only costs that feature's candidates.  Replies use a line protocol,
``KIND | question text | payload``, which is parsed and validated here:
CODE payloads must be well-typed predicate expressions, CLUSTERING payloads
must map the feature's categories onto a bounded set of group labels.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from . import dsl
from .data import FeatureSpec, Sample
from .errors import DslError
from .gateway import Gateway, TemplateId, canonical_question

logger = logging.getLogger(__name__)


class QuestionKind(str, enum.Enum):
    INFERENCE = "INFERENCE"
    CODE = "CODE"
    CLUSTERING = "CLUSTERING"


@dataclass(frozen=True)
class Question:
    """One candidate split.

    ``expression`` carries the predicate text for CODE questions;
    ``grouping`` carries (category, group label) pairs for CLUSTERING ones.
    A CLUSTERING question may leave ``grouping`` as None, meaning the caller
    should group the categories itself before use.
    """

    kind: QuestionKind
    text: str
    feature: str
    expression: Optional[str] = None
    grouping: Optional[tuple[tuple[str, str], ...]] = None

    @property
    def canonical(self) -> str:
        return canonical_question(self.text)

    def grouping_dict(self) -> dict[str, str]:
        return dict(self.grouping or ())

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind.value, "text": self.text, "feature": self.feature}
        if self.expression is not None:
            out["expression"] = self.expression
        if self.grouping is not None:
            out["grouping"] = {c: g for c, g in self.grouping}
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Question":
        grouping = raw.get("grouping")
        return cls(
            kind=QuestionKind(raw["kind"]),
            text=raw["text"],
            feature=raw["feature"],
            expression=raw.get("expression"),
            grouping=tuple(sorted(grouping.items())) if grouping is not None else None,
        )


def with_grouping(question: Question, grouping: Mapping[str, str]) -> Question:
    return replace(question, grouping=tuple(sorted(grouping.items())))


# ---------------------------------------------------------------------------
# grouping payload text: "US=g1; UK=g1; DE=g2"
# ---------------------------------------------------------------------------


def parse_grouping(payload: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for part in payload.split(";"):
        part = part.strip()
        if not part:
            continue
        category, eq, label = part.partition("=")
        if not eq or not category.strip() or not label.strip():
            raise ValueError(f"bad grouping segment {part!r}")
        mapping[category.strip()] = label.strip()
    return mapping


def format_grouping(mapping: Mapping[str, str]) -> str:
    return "; ".join(f"{c}={g}" for c, g in sorted(mapping.items()))


# ---------------------------------------------------------------------------
# per-feature value summaries shown to the generator
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"[A-Za-z0-9]{3,}")

MAX_THRESHOLDS = 8
MAX_TOKENS = 8


def feature_stats(samples: Sequence[Sample], spec: FeatureSpec) -> dict:
    """Summarize one feature's observed values for the generation prompt."""
    values = [s.features.get(spec.name) for s in samples]
    present = [v for v in values if v is not None]
    out: dict = {
        "feature": spec.name,
        "kind": spec.kind,
        "count": len(present),
        "missing": len(values) - len(present),
    }
    if spec.kind == "categorical":
        counts = Counter(str(v) for v in present)
        out["categories"] = sorted(
            counts.items(), key=lambda kv: (-kv[1], kv[0])
        )
    elif spec.kind == "numeric":
        uniq = sorted({float(v) for v in present})
        mids = [(a + b) / 2.0 for a, b in zip(uniq, uniq[1:])]
        if len(mids) > MAX_THRESHOLDS:
            step = len(mids) / MAX_THRESHOLDS
            mids = [mids[int(i * step)] for i in range(MAX_THRESHOLDS)]
        out["thresholds"] = mids
    else:
        counts = Counter(
            tok.casefold() for v in present for tok in _TOKEN.findall(str(v))
        )
        out["top_tokens"] = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[
            :MAX_TOKENS
        ]
    return out


# ---------------------------------------------------------------------------
# candidate line protocol
# ---------------------------------------------------------------------------


def parse_candidate_line(line: str) -> Optional[tuple[QuestionKind, str, Optional[str]]]:
    """Parse ``KIND | text | payload``; malformed lines return None."""
    parts = [p.strip() for p in line.split("|", 2)]
    if len(parts) < 2:
        return None
    kind_token = parts[0].upper()
    try:
        kind = QuestionKind(kind_token)
    except ValueError:
        return None
    text = parts[1]
    if not text:
        return None
    payload = parts[2] if len(parts) == 3 and parts[2] else None
    return kind, text, payload


def validate_candidate(
    kind: QuestionKind,
    text: str,
    payload: Optional[str],
    feature: FeatureSpec,
    schema: Sequence[FeatureSpec],
    max_branching: int,
) -> Optional[Question]:
    """Turn one parsed line into a Question, or None if it fails validation."""
    if kind is QuestionKind.INFERENCE:
        return Question(kind, text, feature.name)
    if kind is QuestionKind.CODE:
        if not payload:
            return None
        try:
            expr = dsl.parse(payload, schema)
        except DslError:
            return None
        if feature.name not in dsl.feature_names(expr):
            return None
        return Question(kind, text, feature.name, expression=dsl.format_expr(expr))
    # CLUSTERING
    if feature.kind != "categorical" or not feature.categories:
        return None
    if payload is None:
        return Question(kind, text, feature.name)
    try:
        mapping = parse_grouping(payload)
    except ValueError:
        return None
    if set(mapping) != set(feature.categories):
        return None
    labels = set(mapping.values())
    if not 2 <= len(labels) <= max_branching:
        return None
    return with_grouping(Question(kind, text, feature.name), mapping)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def generate_candidates(
    samples: Sequence[Sample],
    schema: Sequence[FeatureSpec],
    task: str,
    insights_text: str,
    gateway: Gateway,
    *,
    per_feature_max: int = 3,
    max_branching: int = 4,
    inference_only: bool = True,
    advice: str = "",
) -> list[Question]:
    """Ask for split candidates, one request per feature, and validate them.

    The result is deduplicated on canonical question text (first occurrence
    wins) and capped at per_feature_max questions per feature, so its length
    is at most per_feature_max times the number of features.
    """
    allowed = (
        [QuestionKind.INFERENCE]
        if inference_only
        else [QuestionKind.INFERENCE, QuestionKind.CODE, QuestionKind.CLUSTERING]
    )
    allowed_text = ", ".join(k.value for k in allowed)
    requests = [
        gateway.request(
            TemplateId.QUESTION_GEN,
            {
                "task": task,
                "max_questions": per_feature_max,
                "feature_name": spec.name,
                "feature_kind": spec.kind,
                "feature_stats_json": json.dumps(feature_stats(samples, spec)),
                "insights": insights_text,
                "advice": advice,
                "allowed_kinds": allowed_text,
            },
        )
        for spec in schema
    ]
    responses = gateway.complete_batch(requests)

    questions: list[Question] = []
    seen: set[str] = set()
    for spec, resp in zip(schema, responses):
        if not resp.ok:
            logger.warning("candidate generation failed for %s: %s", spec.name, resp.error)
            continue
        kept = 0
        for line in resp.text.splitlines():
            if kept >= per_feature_max:
                break
            if not line.strip():
                continue
            parsed = parse_candidate_line(line)
            if parsed is None:
                logger.debug("skipping malformed candidate line %r", line)
                continue
            kind, text, payload = parsed
            if kind not in allowed:
                continue
            question = validate_candidate(
                kind, text, payload, spec, schema, max_branching
            )
            if question is None:
                continue
            if question.canonical in seen:
                continue
            seen.add(question.canonical)
            questions.append(question)
            kept += 1
    return questions
