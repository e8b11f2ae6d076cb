"""Decision tree structure, greedy construction, prediction, serialization.

Nodes are immutable and identified by their path from the root ("r.yes.no"),
so structural edits in the refinement layer produce new trees that share
unchanged subtrees.  Serialized documents are canonical JSON (sorted keys,
fixed indentation), which makes equal trees byte-identical on disk.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Sequence, Union

from .data import FeatureSpec, Sample
from .errors import BuildError, NodeNotFoundError, TreeLoadError
from .questions import Question, QuestionKind
from .split import AnswersFn, ClassCounts, YES_BRANCH, best_split, gini_exact

FORMAT_VERSION = 1

# candidates_fn(samples, advice) -> proposed questions for one node
CandidatesFn = Callable[[Sequence[Sample], str], list[Question]]


@dataclass(frozen=True)
class BuildParams:
    max_depth: int = 18
    min_leaf: int = 31
    per_feature_max: int = 3
    max_branching: int = 4
    batch_size: int = 250
    inference_only: bool = True
    unknown_policy: str = "no"
    seed: int = 0
    retain_samples: bool = False

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "per_feature_max": self.per_feature_max,
            "max_branching": self.max_branching,
            "batch_size": self.batch_size,
            "inference_only": self.inference_only,
            "unknown_policy": self.unknown_policy,
            "seed": self.seed,
            "retain_samples": self.retain_samples,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "BuildParams":
        return cls(**{k: raw[k] for k in cls().to_dict() if k in raw})


@dataclass(frozen=True)
class TreeNode:
    id: str
    depth: int
    counts: ClassCounts
    gini: float
    question: Optional[Question] = None
    children: tuple[tuple[str, "TreeNode"], ...] = ()
    weighted_gini: Optional[float] = None
    gain: Optional[float] = None
    sample_ids: Optional[tuple[str, ...]] = None

    @property
    def is_leaf(self) -> bool:
        return self.question is None

    @property
    def ratio(self) -> float:
        return self.counts.ratio

    def branch_labels(self) -> list[str]:
        return [label for label, _ in self.children]

    def child(self, label: str) -> "TreeNode":
        for branch, node in self.children:
            if branch == label:
                return node
        raise NodeNotFoundError(f"node {self.id} has no branch {label!r}")


@dataclass(frozen=True)
class Tree:
    root: TreeNode
    schema_fingerprint: str
    task: str = ""
    version: int = 1
    params: BuildParams = BuildParams()
    insights: str = ""

    def nodes(self) -> Iterator[TreeNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(child for _, child in reversed(node.children))

    def node(self, node_id: str) -> TreeNode:
        for node in self.nodes():
            if node.id == node_id:
                return node
        raise NodeNotFoundError(f"no node with id {node_id!r}")

    def parent_of(self, node_id: str) -> Optional[TreeNode]:
        if node_id == self.root.id:
            return None
        for node in self.nodes():
            for _, child in node.children:
                if child.id == node_id:
                    return node
        raise NodeNotFoundError(f"no node with id {node_id!r}")

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes() if n.is_leaf]

    def node_count(self) -> int:
        return sum(1 for _ in self.nodes())

    def depth(self) -> int:
        return max(n.depth for n in self.nodes())

    def leaf_ratios(self) -> list[float]:
        return sorted({leaf.ratio for leaf in self.leaves()})


def schema_fingerprint(schema: Sequence[FeatureSpec]) -> str:
    canon = json.dumps(
        [
            {"name": f.name, "kind": f.kind, "categories": list(f.categories or [])}
            for f in schema
        ],
        sort_keys=True,
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

_LABEL_RE = re.compile(r"[^0-9a-z]+")


def _sanitize(label: str, taken: set[str]) -> str:
    base = _LABEL_RE.sub("-", label.lower()).strip("-") or "x"
    out, n = base, 1
    while out in taken:
        n += 1
        out = f"{base}-{n}"
    taken.add(out)
    return out


def _branch_order(question: Question, labels: Sequence[str]) -> list[str]:
    if question.kind in (QuestionKind.INFERENCE, QuestionKind.CODE):
        return [b for b in (YES_BRANCH, "no") if b in labels]
    return sorted(labels)


def grow_subtree(
    samples: Sequence[Sample],
    params: BuildParams,
    candidates_fn: CandidatesFn,
    answers_fn: Optional[AnswersFn],
    node_id: str = "r",
    depth: int = 0,
    advice: str = "",
) -> TreeNode:
    """Grow one subtree rooted at (node_id, depth); also used for rebuilds.

    A node becomes a leaf when it is pure, too small to split into two
    min_leaf branches, at max depth, or when no candidate survives
    validation.  Zero-gain splits are allowed (the refinement layer can
    collapse them later); recursion still terminates because every branch is
    strictly smaller than its parent.
    """
    counts = ClassCounts.from_samples(samples)
    impurity = float(gini_exact(counts))
    retained = tuple(s.id for s in samples) if params.retain_samples else None
    leaf = TreeNode(
        id=node_id,
        depth=depth,
        counts=counts,
        gini=impurity,
        sample_ids=retained,
    )
    if (
        depth >= params.max_depth
        or impurity == 0.0
        or counts.total < 2 * params.min_leaf
    ):
        return leaf
    candidates = candidates_fn(samples, advice)
    if not candidates:
        return leaf
    choice = best_split(
        samples,
        candidates,
        answers_fn,
        min_leaf=params.min_leaf,
        unknown_policy=params.unknown_policy,
    )
    if choice is None:
        return leaf
    taken: set[str] = set()
    children = []
    for branch in _branch_order(choice.question, list(choice.partition.branches)):
        child_id = f"{node_id}.{_sanitize(branch, taken)}"
        children.append(
            (
                branch,
                grow_subtree(
                    choice.partition.branches[branch],
                    params,
                    candidates_fn,
                    answers_fn,
                    child_id,
                    depth + 1,
                    advice,
                ),
            )
        )
    return replace(
        leaf,
        question=choice.question,
        children=tuple(children),
        weighted_gini=choice.weighted,
        gain=choice.gain,
    )


def build(
    samples: Sequence[Sample],
    schema: Sequence[FeatureSpec],
    task: str,
    candidates_fn: CandidatesFn,
    answers_fn: Optional[AnswersFn],
    params: BuildParams = BuildParams(),
    insights: str = "",
    advice: str = "",
) -> Tree:
    """Greedy top-down induction over the full sample set."""
    if not samples:
        raise BuildError("cannot build a tree from zero samples")
    if params.max_depth < 0 or params.min_leaf < 1:
        raise BuildError("max_depth must be >= 0 and min_leaf >= 1")
    root = grow_subtree(samples, params, candidates_fn, answers_fn, "r", 0, advice)
    return Tree(
        root=root,
        schema_fingerprint=schema_fingerprint(schema),
        task=task,
        version=1,
        params=params,
        insights=insights,
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionPath:
    leaf: TreeNode
    steps: tuple[tuple[str, str], ...]  # (node id, branch taken)
    notes: tuple[str, ...] = ()

    @property
    def ratio(self) -> float:
        return self.leaf.ratio

    def decide(self, sensitivity: float) -> int:
        return 1 if self.leaf.ratio >= sensitivity else 0


def predict(
    tree: Tree,
    sample: Sample,
    answers_fn: Optional[AnswersFn] = None,
    *,
    _dsl_cache: Optional[dict] = None,
) -> PredictionPath:
    """Route one sample to a leaf, recording each branch taken.

    Unknown inference answers follow the no-branch; a category that was
    never seen in training (or is missing) follows the branch with the most
    training samples.  Both detours are recorded in ``notes``.
    """
    from . import dsl
    from .gateway import Verdict

    node = tree.root
    steps: list[tuple[str, str]] = []
    notes: list[str] = []
    cache = _dsl_cache if _dsl_cache is not None else {}
    while not node.is_leaf:
        question = node.question
        if question.kind is QuestionKind.INFERENCE:
            if answers_fn is None:
                raise ValueError("tree contains INFERENCE nodes; answers_fn required")
            verdict = answers_fn(question, sample)
            if verdict is Verdict.YES:
                branch = YES_BRANCH
            else:
                if verdict is Verdict.UNKNOWN:
                    notes.append(f"{node.id}: unknown answer, taking the no branch")
                branch = "no"
        elif question.kind is QuestionKind.CODE:
            expr = cache.get(question.expression)
            if expr is None:
                expr = dsl.parse(question.expression or "")
                cache[question.expression] = expr
            branch = YES_BRANCH if dsl.evaluate(expr, sample) else "no"
        else:
            value = sample.features.get(question.feature)
            branch = (
                question.grouping_dict().get(str(value)) if value is not None else None
            )
            labels = node.branch_labels()
            if branch not in labels:
                fallback = max(
                    node.children, key=lambda item: (item[1].counts.total, item[0])
                )[0]
                notes.append(
                    f"{node.id}: no branch for value {value!r}, "
                    f"taking largest branch {fallback!r}"
                )
                branch = fallback
        if branch not in node.branch_labels():
            # e.g. training sent every unknown to "no" and no yes-branch exists
            fallback = max(
                node.children, key=lambda item: (item[1].counts.total, item[0])
            )[0]
            notes.append(f"{node.id}: branch {branch!r} absent, taking {fallback!r}")
            branch = fallback
        steps.append((node.id, branch))
        node = node.child(branch)
    return PredictionPath(leaf=node, steps=tuple(steps), notes=tuple(notes))


def predict_label(
    tree: Tree,
    sample: Sample,
    sensitivity: float,
    answers_fn: Optional[AnswersFn] = None,
) -> int:
    return predict(tree, sample, answers_fn).decide(sensitivity)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _node_to_dict(node: TreeNode) -> dict:
    out: dict = {
        "id": node.id,
        "depth": node.depth,
        "counts": {"neg": node.counts.neg, "pos": node.counts.pos},
        "gini": node.gini,
        "ratio": node.ratio,
    }
    if node.sample_ids is not None:
        out["sample_ids"] = list(node.sample_ids)
    if node.question is not None:
        out["question"] = node.question.to_dict()
        out["weighted_gini"] = node.weighted_gini
        out["gain"] = node.gain
        out["children"] = [
            {"branch": branch, "node": _node_to_dict(child)}
            for branch, child in node.children
        ]
    return out


def _node_from_dict(raw: Mapping) -> TreeNode:
    question = raw.get("question")
    children = tuple(
        (entry["branch"], _node_from_dict(entry["node"]))
        for entry in raw.get("children", [])
    )
    sample_ids = raw.get("sample_ids")
    return TreeNode(
        id=raw["id"],
        depth=raw["depth"],
        counts=ClassCounts(raw["counts"]["neg"], raw["counts"]["pos"]),
        gini=raw["gini"],
        question=Question.from_dict(question) if question else None,
        children=children,
        weighted_gini=raw.get("weighted_gini"),
        gain=raw.get("gain"),
        sample_ids=tuple(sample_ids) if sample_ids is not None else None,
    )


def tree_to_dict(tree: Tree) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "version": tree.version,
        "task": tree.task,
        "schema_fingerprint": tree.schema_fingerprint,
        "params": tree.params.to_dict(),
        "insights": tree.insights,
        "root": _node_to_dict(tree.root),
    }


def tree_from_dict(raw: Mapping) -> Tree:
    if raw.get("format_version") != FORMAT_VERSION:
        raise TreeLoadError(
            f"unsupported tree format {raw.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    return Tree(
        root=_node_from_dict(raw["root"]),
        schema_fingerprint=raw["schema_fingerprint"],
        task=raw.get("task", ""),
        version=raw.get("version", 1),
        params=BuildParams.from_dict(raw.get("params", {})),
        insights=raw.get("insights", ""),
    )


def dumps_tree(tree: Tree) -> str:
    return json.dumps(tree_to_dict(tree), sort_keys=True, indent=2) + "\n"


def save_tree(tree: Tree, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_tree(tree), encoding="utf-8")


def load_tree(path: Union[str, Path]) -> Tree:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise TreeLoadError(f"cannot read tree from {path}: {exc}") from exc
    return tree_from_dict(raw)
