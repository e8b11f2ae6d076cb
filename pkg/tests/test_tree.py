import random
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asktree.data import FeatureSpec, Sample
from asktree.errors import BuildError, NodeNotFoundError, TreeLoadError
from asktree.gateway import Verdict
from asktree.questions import Question, QuestionKind, with_grouping
from asktree.tree import (
    BuildParams,
    FORMAT_VERSION,
    PredictionPath,
    Tree,
    build,
    dumps_tree,
    load_tree,
    predict,
    predict_label,
    save_tree,
    schema_fingerprint,
    tree_from_dict,
    tree_to_dict,
)

SCHEMA = (
    FeatureSpec("region", "categorical", ("US", "UK", "DE")),
    FeatureSpec("stage", "categorical", ("seed", "late")),
)

EQ_TEXT = re.compile(r"^is (\w+) equal to '([^']*)'\?$", re.IGNORECASE)


def truth_answers(question, sample):
    feat, val = EQ_TEXT.match(question.text).groups()
    v = sample.features.get(feat)
    if v is None:
        return Verdict.UNKNOWN
    return Verdict.YES if str(v) == val else Verdict.NO


def eq_question(feat, val):
    return Question(QuestionKind.INFERENCE, f"Is {feat} equal to '{val}'?", feat)


def fixed_candidates(questions):
    return lambda samples, advice: list(questions)


def planted_samples(n=40, seed=7):
    # positive iff region is US and stage is late
    rng = random.Random(seed)
    out = []
    for i in range(n):
        region = rng.choice(["US", "UK", "DE"])
        stage = rng.choice(["seed", "late"])
        label = 1 if (region == "US" and stage == "late") else 0
        out.append(Sample(f"s{i}", {"region": region, "stage": stage}, label))
    return out


def small_params(**kw):
    defaults = dict(max_depth=4, min_leaf=1)
    defaults.update(kw)
    return BuildParams(**defaults)


def planted_tree(**kw):
    candidates = [eq_question("region", "US"), eq_question("stage", "late")]
    return build(
        planted_samples(),
        SCHEMA,
        "find the winners",
        fixed_candidates(candidates),
        truth_answers,
        small_params(**kw),
        insights="winners are late-stage US companies",
    )


# ---------------------------------------------------------------------------
# defaults and construction
# ---------------------------------------------------------------------------


def test_build_params_defaults():
    p = BuildParams()
    assert p.max_depth == 18
    assert p.min_leaf == 31
    assert p.per_feature_max == 3
    assert p.max_branching == 4
    assert p.batch_size == 250
    assert p.inference_only is True
    assert p.unknown_policy == "no"


def test_build_recovers_planted_conjunction():
    tree = planted_tree()
    # every leaf must be pure, and exactly one leaf is fully positive
    leaves = tree.leaves()
    assert all(leaf.gini == 0.0 for leaf in leaves)
    positive = [leaf for leaf in leaves if leaf.ratio == 1.0]
    assert len(positive) == 1
    assert tree.depth() == 2


def test_node_ids_are_path_derived_and_unique():
    tree = planted_tree()
    ids = [n.id for n in tree.nodes()]
    assert len(ids) == len(set(ids))
    assert tree.root.id == "r"
    for _, child in tree.root.children:
        assert child.id in ("r.yes", "r.no")
    assert tree.node("r.yes").depth == 1
    with pytest.raises(NodeNotFoundError):
        tree.node("r.bogus")


def test_counts_and_gain_are_recorded():
    tree = planted_tree()
    root = tree.root
    total = root.counts.total
    assert total == 40
    assert sum(child.counts.total for _, child in root.children) == total
    assert root.gain is not None and root.gain > 0
    assert root.weighted_gini is not None
    assert root.weighted_gini <= root.gini


def test_parent_of_walks_structure():
    tree = planted_tree()
    assert tree.parent_of("r") is None
    child_id = tree.root.children[0][1].id
    assert tree.parent_of(child_id).id == "r"


def test_max_depth_zero_yields_single_leaf():
    tree = planted_tree(max_depth=0)
    assert tree.root.is_leaf
    assert tree.node_count() == 1


def test_min_leaf_blocks_small_splits():
    tree = planted_tree(min_leaf=40)  # 2 * 40 > n, nothing splittable
    assert tree.root.is_leaf


def test_pure_node_stops_early():
    samples = [Sample(f"s{i}", {"region": "US", "stage": "late"}, 1) for i in range(10)]
    tree = build(
        samples,
        SCHEMA,
        "t",
        fixed_candidates([eq_question("region", "US")]),
        truth_answers,
        small_params(),
    )
    assert tree.root.is_leaf
    assert tree.root.gini == 0.0


def test_no_candidates_means_leaf():
    tree = build(
        planted_samples(),
        SCHEMA,
        "t",
        fixed_candidates([]),
        truth_answers,
        small_params(),
    )
    assert tree.root.is_leaf


def test_empty_input_is_an_error():
    with pytest.raises(BuildError):
        build([], SCHEMA, "t", fixed_candidates([]), truth_answers)


def test_retain_samples_keeps_ids_only_when_asked():
    with_ids = planted_tree(retain_samples=True)
    without = planted_tree()
    assert with_ids.root.sample_ids is not None
    assert len(with_ids.root.sample_ids) == 40
    for _, child in with_ids.root.children:
        assert child.sample_ids is not None
    assert without.root.sample_ids is None


def test_clustering_children_are_label_sorted():
    q = with_grouping(
        Question(QuestionKind.CLUSTERING, "Region group?", "region"),
        {"US": "west", "UK": "west", "DE": "central"},
    )
    samples = [
        Sample("a", {"region": "US"}, 1),
        Sample("b", {"region": "DE"}, 0),
        Sample("c", {"region": "UK"}, 1),
        Sample("d", {"region": "DE"}, 1),
    ]
    tree = build(samples, SCHEMA, "t", fixed_candidates([q]), None, small_params())
    assert tree.root.branch_labels() == ["central", "west"]
    assert tree.node("r.central").counts.total == 2
    assert tree.node("r.west").counts.total == 2


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def test_predict_routes_to_the_right_leaf():
    tree = planted_tree()
    hit = predict(tree, Sample("x", {"region": "US", "stage": "late"}, 1), truth_answers)
    miss = predict(tree, Sample("y", {"region": "UK", "stage": "late"}, 0), truth_answers)
    assert hit.ratio == 1.0
    assert miss.ratio == 0.0
    assert hit.decide(0.5) == 1
    assert miss.decide(0.5) == 0
    assert [step[0] for step in hit.steps] == ["r", hit.steps[1][0]]


def test_predict_unknown_takes_no_branch_with_note():
    tree = planted_tree()
    path = predict(tree, Sample("x", {"region": None, "stage": None}, 0), truth_answers)
    assert path.notes
    assert "unknown" in path.notes[0]
    assert path.steps[0][1] == "no"


def test_predict_requires_answers_for_inference_trees():
    tree = planted_tree()
    with pytest.raises(ValueError, match="answers_fn"):
        predict(tree, Sample("x", {"region": "US", "stage": "late"}, 1))


def test_predict_unseen_category_goes_to_largest_branch():
    q = with_grouping(
        Question(QuestionKind.CLUSTERING, "Region group?", "region"),
        {"US": "west", "UK": "west", "DE": "central"},
    )
    samples = [
        Sample("a", {"region": "US"}, 1),
        Sample("b", {"region": "UK"}, 1),
        Sample("c", {"region": "US"}, 0),
        Sample("d", {"region": "DE"}, 0),
        Sample("e", {"region": "DE"}, 0),
    ]
    tree = build(samples, SCHEMA, "t", fixed_candidates([q]), None, small_params())
    path = predict(tree, Sample("x", {"region": "BR"}, 0))
    assert path.steps[0][1] == "west"  # 3 training samples vs 2
    assert path.notes and "largest" in path.notes[0]


def test_predict_label_threshold_semantics():
    tree = planted_tree()
    s = Sample("x", {"region": "US", "stage": "late"}, 1)
    assert predict_label(tree, s, 1.0, truth_answers) == 1  # ratio 1.0 >= 1.0
    s2 = Sample("y", {"region": "DE", "stage": "seed"}, 0)
    assert predict_label(tree, s2, 0.0, truth_answers) == 1  # everything >= 0


@settings(max_examples=60, deadline=None)
@given(
    s1=st.floats(min_value=0, max_value=1),
    s2=st.floats(min_value=0, max_value=1),
)
def test_threshold_monotonicity(s1, s2):
    # raising the sensitivity can only shrink the set of positive leaves
    lo, hi = min(s1, s2), max(s1, s2)
    tree = planted_tree()
    leaves = tree.leaves()
    pos_lo = {leaf.id for leaf in leaves if leaf.ratio >= lo}
    pos_hi = {leaf.id for leaf in leaves if leaf.ratio >= hi}
    assert pos_hi <= pos_lo


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_round_trip_preserves_tree():
    tree = planted_tree(retain_samples=True)
    again = tree_from_dict(tree_to_dict(tree))
    assert again == tree


def test_serialized_form_is_byte_deterministic(tmp_path):
    tree = planted_tree()
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_tree(tree, p1)
    save_tree(tree, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert load_tree(p1) == tree


def test_dumps_is_sorted_and_ends_with_newline():
    text = dumps_tree(planted_tree())
    assert text.endswith("\n")
    keys = [line.strip().split(":")[0] for line in text.splitlines() if ":" in line]
    assert '"format_version"' in keys[0] or '"format_version"' in keys


def test_load_rejects_wrong_format_version(tmp_path):
    doc = tree_to_dict(planted_tree())
    doc["format_version"] = FORMAT_VERSION + 1
    path = tmp_path / "t.json"
    path.write_text(__import__("json").dumps(doc))
    with pytest.raises(TreeLoadError, match="format"):
        load_tree(path)
    with pytest.raises(TreeLoadError):
        load_tree(tmp_path / "missing.json")


def test_schema_fingerprint_tracks_schema_changes():
    f1 = schema_fingerprint(SCHEMA)
    f2 = schema_fingerprint(SCHEMA[:1])
    assert f1 != f2
    assert f1 == schema_fingerprint(tuple(SCHEMA))
    assert re.fullmatch(r"[0-9a-f]{12}", f1)


def test_tree_metadata_round_trips():
    tree = planted_tree()
    doc = tree_to_dict(tree)
    assert doc["task"] == "find the winners"
    assert doc["insights"].startswith("winners are")
    assert doc["params"]["max_depth"] == 4
    restored = tree_from_dict(doc)
    assert restored.params == tree.params
    assert restored.insights == tree.insights
