import random

from asktree.data import FeatureSpec, Sample
from asktree.gateway import Gateway, MockBackend, TemplateId, default_mock_backend
from asktree.pipeline import (
    expand_advice,
    make_candidates_fn,
    make_answers_fn,
    train_tree,
)
from asktree.questions import QuestionKind
from asktree.tree import BuildParams, dumps_tree, predict

SCHEMA = (
    FeatureSpec("region", "categorical", ("US", "UK", "DE")),
    FeatureSpec("stage", "categorical", ("seed", "late")),
)


def planted(n=120, seed=5):
    rng = random.Random(seed)
    out = []
    for i in range(n):
        region = rng.choice(["US", "UK", "DE"])
        stage = rng.choice(["seed", "late"])
        label = 1 if (region == "US" and stage == "late") else 0
        out.append(Sample(f"s{i}", {"region": region, "stage": stage}, label))
    return out


def make_gateway():
    return Gateway(default_mock_backend(), sleeper=lambda _: None)


def small_params(**kw):
    defaults = dict(max_depth=4, min_leaf=2)
    defaults.update(kw)
    return BuildParams(**defaults)


def test_train_tree_recovers_planted_rule_offline():
    gw = make_gateway()
    result = train_tree(planted(), SCHEMA, "find winners", gw, small_params())
    tree = result.tree
    assert all(leaf.gini == 0.0 for leaf in tree.leaves())
    # predictions reproduce the rule on fresh samples
    answers = make_answers_fn(gw, "find winners")
    hits = predict(tree, Sample("x", {"region": "US", "stage": "late"}, 1), answers)
    misses = predict(tree, Sample("y", {"region": "DE", "stage": "late"}, 0), answers)
    assert hits.ratio == 1.0
    assert misses.ratio == 0.0


def test_train_tree_reports_usage_and_insights():
    gw = make_gateway()
    result = train_tree(planted(), SCHEMA, "find winners", gw, small_params())
    assert result.report.node_count == result.tree.node_count()
    assert result.report.leaf_count == len(result.tree.leaves())
    assert result.report.depth == result.tree.depth()
    assert result.report.llm_calls > 0
    assert result.report.llm_tokens > 0
    assert result.insights
    assert result.tree.insights == result.insights


def test_train_tree_without_insights_makes_no_insight_calls():
    gw = make_gateway()
    train_tree(planted(), SCHEMA, "t", gw, small_params(), compute_insights=False)
    assert gw.backend.call_count(TemplateId.INSIGHT_BATCH) == 0
    assert gw.backend.call_count(TemplateId.INSIGHT_SYNTHESIS) == 0


def test_train_tree_survives_insight_failure():
    # no positive samples means no insights, but training still works
    negatives = [Sample(f"n{i}", {"region": "UK", "stage": "seed"}, 0) for i in range(8)]
    mixed = negatives + [Sample("p", {"region": "US", "stage": "late"}, 1)]
    gw = make_gateway()
    result = train_tree(negatives, SCHEMA, "t", gw, small_params())
    assert result.insights == ""
    assert result.tree.root.is_leaf  # pure node, nothing to split
    result2 = train_tree(mixed, SCHEMA, "t", make_gateway(), small_params(min_leaf=1))
    assert result2.tree is not None


def test_default_params_are_inference_only():
    gw = make_gateway()
    result = train_tree(planted(), SCHEMA, "t", gw, small_params())
    for node in result.tree.nodes():
        if node.question is not None:
            assert node.question.kind is QuestionKind.INFERENCE


def test_candidates_fn_resolves_deferred_groupings():
    gw = make_gateway()
    fn = make_candidates_fn(gw, "t", SCHEMA, "", small_params(inference_only=False))
    qs = fn(planted(30), "")
    clusterings = [q for q in qs if q.kind is QuestionKind.CLUSTERING]
    assert clusterings  # region has 3 categories, the mock proposes a grouping
    for q in clusterings:
        assert q.grouping is not None
        assert set(q.grouping_dict()) == set(SCHEMA[0].categories)


def test_train_is_deterministic_across_fresh_backends():
    t1 = train_tree(planted(), SCHEMA, "t", make_gateway(), small_params()).tree
    t2 = train_tree(planted(), SCHEMA, "t", make_gateway(), small_params()).tree
    assert dumps_tree(t1) == dumps_tree(t2)


def test_second_build_reuses_cached_answers():
    gw = make_gateway()
    samples = planted(60)
    train_tree(samples, SCHEMA, "t", gw, small_params(), compute_insights=False)
    first = gw.backend.call_count(TemplateId.INFERENCE_ANSWER)
    train_tree(samples, SCHEMA, "t", gw, small_params(), compute_insights=False)
    second = gw.backend.call_count(TemplateId.INFERENCE_ANSWER)
    assert first > 0
    assert second == first  # every answer came from the cache


def test_expand_advice():
    gw = make_gateway()
    assert expand_advice(gw, "t", "   ") == ""
    assert gw.backend.call_count() == 0
    out = expand_advice(gw, "t", "prefer the stage feature")
    assert "stage" in out

    failing = MockBackend()
    failing.fail_next(5)
    gw2 = Gateway(failing, sleeper=lambda _: None)
    assert expand_advice(gw2, "t", "keep it") == "keep it"
