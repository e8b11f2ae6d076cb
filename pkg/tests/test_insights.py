import json

import pytest

from asktree.data import Sample
from asktree.errors import EmptyInsightError
from asktree.gateway import Gateway, MockBackend, TemplateId, default_mock_backend
from asktree.insights import generate_insights, summarize_batch, synthesize


def make_gateway(backend):
    return Gateway(backend, sleeper=lambda _: None)


def positives(n, start=0):
    return [Sample(f"p{start + i}", {"bio": "phd founder"}, 1) for i in range(n)]


def test_empty_batch_returns_empty_string_without_a_call():
    backend = MockBackend(default_text="something")
    assert summarize_batch([], "t", make_gateway(backend)) == ""
    assert backend.call_count() == 0


def test_summarize_batch_serializes_all_samples():
    seen = {}

    def handler(req):
        seen["records"] = json.loads(str(req.bindings["samples_json"]))
        return "they all have PhDs"

    backend = MockBackend(handlers={TemplateId.INSIGHT_BATCH: handler})
    out = summarize_batch(positives(7), "t", make_gateway(backend))
    assert out == "they all have PhDs"
    assert len(seen["records"]) == 7
    assert seen["records"][0]["features"] == {"bio": "phd founder"}


def test_synthesize_merges_with_one_call_and_keeps_provenance():
    backend = default_mock_backend()
    gw = make_gateway(backend)
    insights = synthesize(["a\nb", "", "  ", "b\nc"], "t", gw)
    assert backend.call_count(TemplateId.INSIGHT_SYNTHESIS) == 1
    assert insights.provenance == ("a\nb", "b\nc")
    assert insights.batch_count == 2
    # the scripted synthesis deduplicates lines while preserving order
    assert insights.text == "a\nb\nc"


def test_synthesize_all_empty_raises():
    backend = MockBackend()
    with pytest.raises(EmptyInsightError):
        synthesize(["", "   ", "\n"], "t", make_gateway(backend))
    assert backend.call_count() == 0


def test_generate_insights_batches_979_into_four_summaries():
    # 978 positives at batch size 250 -> batches of 250/250/250/228,
    # so 4 summary calls plus a single synthesis call.
    backend = MockBackend(
        handlers={
            TemplateId.INSIGHT_BATCH: lambda r: f"batch of {len(json.loads(str(r.bindings['samples_json'])))}",
            TemplateId.INSIGHT_SYNTHESIS: lambda r: str(r.bindings["summaries"]),
        }
    )
    gw = make_gateway(backend)
    mixed = positives(978) + [Sample(f"n{i}", {"bio": "none"}, 0) for i in range(200)]
    insights = generate_insights(mixed, "t", gw, batch_size=250)
    assert backend.call_count(TemplateId.INSIGHT_BATCH) == 4
    assert backend.call_count(TemplateId.INSIGHT_SYNTHESIS) == 1
    assert insights.provenance == (
        "batch of 250",
        "batch of 250",
        "batch of 250",
        "batch of 228",
    )


def test_generate_insights_ignores_negative_samples():
    backend = default_mock_backend()
    gw = make_gateway(backend)
    with pytest.raises(EmptyInsightError):
        generate_insights([Sample("n1", {"bio": "x"}, 0)], "t", gw)
    assert backend.call_count() == 0


def test_generate_insights_rejects_bad_batch_size():
    with pytest.raises(ValueError):
        generate_insights(positives(3), "t", make_gateway(MockBackend()), batch_size=0)


def test_failed_batch_contributes_nothing():
    backend = MockBackend(
        handlers={
            TemplateId.INSIGHT_BATCH: lambda r: "good",
            TemplateId.INSIGHT_SYNTHESIS: lambda r: str(r.bindings["summaries"]),
        }
    )
    backend.fail_next(3)  # first batch exhausts its retries
    gw = Gateway(backend, sleeper=lambda _: None)
    insights = generate_insights(positives(4), "t", gw, batch_size=2)
    assert insights.provenance == ("good",)
