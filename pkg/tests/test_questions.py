import pytest

from asktree.data import FeatureSpec, Sample
from asktree.gateway import Gateway, MockBackend, TemplateId, default_mock_backend
from asktree.questions import (
    Question,
    QuestionKind,
    feature_stats,
    format_grouping,
    generate_candidates,
    parse_candidate_line,
    parse_grouping,
    validate_candidate,
    with_grouping,
)

SCHEMA = (
    FeatureSpec("region", "categorical", ("US", "UK", "DE")),
    FeatureSpec("funding", "numeric"),
    FeatureSpec("bio", "text"),
)


def make_samples():
    rows = [
        ("US", 1.0, "phd in physics", 1),
        ("US", 2.0, "phd in biology", 1),
        ("UK", 3.0, "mba graduate", 0),
        ("DE", None, "mba and phd", 0),
        (None, 5.0, "", 0),
    ]
    return [
        Sample(f"s{i}", {"region": r, "funding": f, "bio": b}, y)
        for i, (r, f, b, y) in enumerate(rows)
    ]


def make_gateway(backend):
    return Gateway(backend, sleeper=lambda _: None)


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def test_feature_stats_categorical_orders_by_count_then_name():
    stats = feature_stats(make_samples(), SCHEMA[0])
    assert stats["kind"] == "categorical"
    assert stats["count"] == 4
    assert stats["missing"] == 1
    assert stats["categories"] == [("US", 2), ("DE", 1), ("UK", 1)]


def test_feature_stats_numeric_midpoints():
    stats = feature_stats(make_samples(), SCHEMA[1])
    assert stats["thresholds"] == [1.5, 2.5, 4.0]


def test_feature_stats_text_top_tokens():
    stats = feature_stats(make_samples(), SCHEMA[2])
    tokens = dict(stats["top_tokens"])
    assert tokens["phd"] == 3
    assert tokens["mba"] == 2


# ---------------------------------------------------------------------------
# line protocol
# ---------------------------------------------------------------------------


def test_parse_candidate_line_variants():
    assert parse_candidate_line("INFERENCE | Is it big?") == (
        QuestionKind.INFERENCE,
        "Is it big?",
        None,
    )
    assert parse_candidate_line(" code | Q | funding >= 2 ") == (
        QuestionKind.CODE,
        "Q",
        "funding >= 2",
    )
    assert parse_candidate_line("CLUSTERING | Group? | US=a; UK=b") == (
        QuestionKind.CLUSTERING,
        "Group?",
        "US=a; UK=b",
    )


@pytest.mark.parametrize(
    "line",
    ["", "no pipes here", "GUESS | what", "INFERENCE |   ", "| text"],
)
def test_parse_candidate_line_rejects_malformed(line):
    assert parse_candidate_line(line) is None


def test_grouping_round_trip():
    mapping = {"US": "g1", "UK": "g1", "DE": "g2"}
    assert parse_grouping(format_grouping(mapping)) == mapping
    with pytest.raises(ValueError):
        parse_grouping("US=; UK=g1")
    with pytest.raises(ValueError):
        parse_grouping("nonsense")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def test_validate_code_checks_expression_against_schema():
    ok = validate_candidate(
        QuestionKind.CODE, "Q", "funding >= 2 and region == 'US'", SCHEMA[1], SCHEMA, 4
    )
    assert ok is not None
    assert ok.expression == "funding >= 2 and region == 'US'"

    bad_type = validate_candidate(QuestionKind.CODE, "Q", "funding contains 'x'", SCHEMA[1], SCHEMA, 4)
    assert bad_type is None
    bad_syntax = validate_candidate(QuestionKind.CODE, "Q", "funding >=", SCHEMA[1], SCHEMA, 4)
    assert bad_syntax is None
    missing_payload = validate_candidate(QuestionKind.CODE, "Q", None, SCHEMA[1], SCHEMA, 4)
    assert missing_payload is None
    wrong_feature = validate_candidate(QuestionKind.CODE, "Q", "region == 'US'", SCHEMA[1], SCHEMA, 4)
    assert wrong_feature is None


def test_validate_clustering_requires_cover_and_branching():
    full = validate_candidate(
        QuestionKind.CLUSTERING, "Q", "US=a; UK=a; DE=b", SCHEMA[0], SCHEMA, 4
    )
    assert full is not None
    assert full.grouping_dict() == {"US": "a", "UK": "a", "DE": "b"}

    partial = validate_candidate(QuestionKind.CLUSTERING, "Q", "US=a; UK=b", SCHEMA[0], SCHEMA, 4)
    assert partial is None
    too_many = validate_candidate(
        QuestionKind.CLUSTERING, "Q", "US=a; UK=b; DE=c", SCHEMA[0], SCHEMA, 2
    )
    assert too_many is None
    single_group = validate_candidate(
        QuestionKind.CLUSTERING, "Q", "US=a; UK=a; DE=a", SCHEMA[0], SCHEMA, 4
    )
    assert single_group is None
    non_categorical = validate_candidate(QuestionKind.CLUSTERING, "Q", None, SCHEMA[1], SCHEMA, 4)
    assert non_categorical is None
    deferred = validate_candidate(QuestionKind.CLUSTERING, "Q", None, SCHEMA[0], SCHEMA, 4)
    assert deferred is not None
    assert deferred.grouping is None


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def test_generate_sends_one_request_per_feature():
    backend = default_mock_backend()
    gw = make_gateway(backend)
    generate_candidates(make_samples(), SCHEMA, "t", "", gw, inference_only=True)
    assert backend.call_count(TemplateId.QUESTION_GEN) == len(SCHEMA)


def test_generate_inference_only_filters_kinds():
    gw = make_gateway(default_mock_backend())
    qs = generate_candidates(make_samples(), SCHEMA, "t", "", gw, inference_only=True)
    assert qs
    assert all(q.kind is QuestionKind.INFERENCE for q in qs)


def test_generate_full_mode_keeps_code_and_clustering():
    gw = make_gateway(default_mock_backend())
    qs = generate_candidates(
        make_samples(), SCHEMA, "t", "", gw, inference_only=False, per_feature_max=4
    )
    kinds = {q.kind for q in qs}
    assert QuestionKind.CODE in kinds
    assert QuestionKind.CLUSTERING in kinds


def test_generate_respects_per_feature_cap():
    lines = "\n".join(f"INFERENCE | Is region equal to 'c{i}'?" for i in range(10))
    backend = MockBackend(handlers={TemplateId.QUESTION_GEN: lambda r: lines})
    gw = make_gateway(backend)
    qs = generate_candidates(make_samples(), SCHEMA, "t", "", gw, per_feature_max=3)
    assert len(qs) <= 3 * len(SCHEMA)
    per_feature = {}
    for q in qs:
        per_feature[q.feature] = per_feature.get(q.feature, 0) + 1
    assert all(v <= 3 for v in per_feature.values())


def test_generate_dedupes_on_canonical_text():
    backend = MockBackend(
        handlers={
            TemplateId.QUESTION_GEN: lambda r: (
                "INFERENCE | Is it  BIG?\nINFERENCE | is it big?\nINFERENCE | Other?"
            )
        }
    )
    gw = make_gateway(backend)
    qs = generate_candidates(make_samples(), SCHEMA[:1], "t", "", gw)
    assert [q.text for q in qs] == ["Is it  BIG?", "Other?"]


def test_generate_skips_malformed_lines_and_keeps_valid_ones():
    backend = MockBackend(
        handlers={
            TemplateId.QUESTION_GEN: lambda r: (
                "garbage without pipes\n"
                "WRONG | kind\n"
                "CODE | bad predicate | region ==\n"
                "INFERENCE | Is region equal to 'US'?"
            )
        }
    )
    gw = make_gateway(backend)
    qs = generate_candidates(make_samples(), SCHEMA[:1], "t", "", gw, inference_only=False)
    assert [q.text for q in qs] == ["Is region equal to 'US'?"]


def test_generate_failed_feature_is_isolated():
    backend = MockBackend(
        handlers={TemplateId.QUESTION_GEN: lambda r: "INFERENCE | Is it fine?"}
    )
    backend.fail_next(3)  # first feature's request exhausts retries
    gw = Gateway(backend, max_in_flight=1, sleeper=lambda _: None)
    qs = generate_candidates(make_samples(), SCHEMA, "t", "", gw)
    # one of the three features contributed nothing, dedupe collapses the rest
    assert [q.feature for q in qs] == ["funding"]


def test_question_serialization_round_trip():
    q1 = Question(QuestionKind.CODE, "Q", "funding", expression="funding >= 2")
    q2 = with_grouping(
        Question(QuestionKind.CLUSTERING, "G", "region"), {"US": "a", "UK": "b", "DE": "a"}
    )
    for q in (q1, q2):
        assert Question.from_dict(q.to_dict()) == q
