"""Distilling positive-class records into reusable insights.

Positive samples are summarized in batches, then the batch summaries are
merged by a single synthesis call.  The resulting text conditions question
generation; provenance keeps the contributing batch summaries around for
auditability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .data import Sample
from .errors import EmptyInsightError
from .gateway import Gateway, TemplateId

DEFAULT_BATCH_SIZE = 250


@dataclass(frozen=True)
class InsightList:
    text: str
    provenance: tuple[str, ...]

    @property
    def batch_count(self) -> int:
        return len(self.provenance)


def _batch_json(samples: Sequence[Sample]) -> str:
    return json.dumps(
        [{"id": s.id, "features": dict(sorted(s.features.items()))} for s in samples],
        sort_keys=True,
    )


def summarize_batch(samples: Sequence[Sample], task: str, gateway: Gateway) -> str:
    """Summarize one batch of positive records; an empty batch costs no call."""
    if not samples:
        return ""
    req = gateway.request(
        TemplateId.INSIGHT_BATCH,
        {"task": task, "samples_json": _batch_json(samples)},
    )
    resp = gateway.complete(req)
    if not resp.ok:
        return ""
    return resp.text.strip()


def synthesize(summaries: Sequence[str], task: str, gateway: Gateway) -> InsightList:
    """Merge batch summaries into one insight list with a single call."""
    kept = tuple(s.strip() for s in summaries if s.strip())
    if not kept:
        raise EmptyInsightError("no non-empty batch summaries to synthesize")
    req = gateway.request(
        TemplateId.INSIGHT_SYNTHESIS,
        {"task": task, "summaries": "\n".join(kept)},
    )
    resp = gateway.complete(req)
    if not resp.ok:
        raise EmptyInsightError(f"synthesis failed: {resp.error}")
    text = resp.text.strip()
    if not text:
        raise EmptyInsightError("synthesis produced an empty insight list")
    return InsightList(text=text, provenance=kept)


def generate_insights(
    samples: Sequence[Sample],
    task: str,
    gateway: Gateway,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> InsightList:
    """Summarize the positive class in batches, then synthesize once."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    positives = [s for s in samples if s.label == 1]
    summaries = [
        summarize_batch(positives[i : i + batch_size], task, gateway)
        for i in range(0, len(positives), batch_size)
    ]
    return synthesize(summaries, task, gateway)
