"""Expert edits on a built tree: collapse, rebuild, prune, inspect.

Every operation is a pure function from one tree to the next, bumping the
version by exactly one, so a sequence of audit records replays to the same
final tree byte for byte.  Rebuild and sample inspection need the node's
retained training-sample ids (build with retain_samples=True).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

from .data import Sample
from .errors import (
    InvalidActionError,
    NodeNotFoundError,
    RefinementUnsupportedError,
)
from .gateway import Answer, Verdict
from .split import AnswersFn, gini_exact
from .tree import CandidatesFn, Tree, TreeNode, grow_subtree

ACTION_COLLAPSE = "collapse"
ACTION_REBUILD = "rebuild"
ACTION_REMOVE_TRIVIAL = "remove_trivial"
ACTION_QA = "qa"

MUTATING_ACTIONS = (ACTION_COLLAPSE, ACTION_REBUILD, ACTION_REMOVE_TRIVIAL)


def _replace_node(node: TreeNode, target_id: str, new_node: TreeNode) -> Optional[TreeNode]:
    """Return a copy of the subtree with target replaced, sharing the rest."""
    if node.id == target_id:
        return new_node
    for i, (branch, child) in enumerate(node.children):
        swapped = _replace_node(child, target_id, new_node)
        if swapped is not None:
            children = list(node.children)
            children[i] = (branch, swapped)
            return replace(node, children=tuple(children))
    return None


def _swap(tree: Tree, target_id: str, new_node: TreeNode) -> Tree:
    new_root = _replace_node(tree.root, target_id, new_node)
    if new_root is None:
        raise NodeNotFoundError(f"no node with id {target_id!r}")
    return replace(tree, root=new_root, version=tree.version + 1)


def _as_leaf(node: TreeNode) -> TreeNode:
    return replace(
        node, question=None, children=(), weighted_gini=None, gain=None
    )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def collapse(tree: Tree, node_id: str) -> Tree:
    """Turn an internal node into a leaf that keeps its training counts."""
    node = tree.node(node_id)
    if node.is_leaf:
        raise InvalidActionError(f"node {node_id!r} is already a leaf")
    return _swap(tree, node_id, _as_leaf(node))


def rebuild_subtree(
    tree: Tree,
    node_id: str,
    samples_by_id: Mapping[str, Sample],
    candidates_fn: CandidatesFn,
    answers_fn: Optional[AnswersFn],
    advice: str = "",
) -> Tree:
    """Regrow the subtree under a node, conditioning candidates on advice."""
    node = tree.node(node_id)
    if node.sample_ids is None:
        raise RefinementUnsupportedError(
            "rebuild needs retained sample ids; build with retain_samples=True"
        )
    missing = [sid for sid in node.sample_ids if sid not in samples_by_id]
    if missing:
        raise RefinementUnsupportedError(
            f"{len(missing)} retained sample(s) not found, e.g. {missing[0]!r}"
        )
    samples = [samples_by_id[sid] for sid in node.sample_ids]
    new_node = grow_subtree(
        samples,
        tree.params,
        candidates_fn,
        answers_fn,
        node_id=node.id,
        depth=node.depth,
        advice=advice,
    )
    return _swap(tree, node_id, new_node)


def _subtree_gain_exact(node: TreeNode) -> Fraction:
    """Split gain recomputed exactly from the stored integer counts."""
    included = sum(child.counts.total for _, child in node.children)
    if included == 0:
        return Fraction(0)
    weighted = sum(
        (
            Fraction(child.counts.total, included) * gini_exact(child.counts)
            for _, child in node.children
        ),
        Fraction(0),
    )
    return gini_exact(node.counts) - weighted


def _children_ratios_equal(node: TreeNode) -> bool:
    ratios = {child.counts.ratio_exact() for _, child in node.children}
    return len(ratios) <= 1


DEFAULT_TRIVIAL_EPSILON = 0.005


def remove_trivial(
    tree: Tree, epsilon: float = DEFAULT_TRIVIAL_EPSILON
) -> tuple[Tree, tuple[str, ...]]:
    """Collapse internal nodes whose split is uninformative, bottom-up.

    A split is trivial when its exact gain is below epsilon or when every
    child has the same positive ratio; the latter clause is what makes
    epsilon=0 collapse exactly the zero-gain nodes.  Returns the collapsed
    node ids together with the new tree, version bumped once; when nothing
    is trivial the original tree comes back unchanged.
    """
    if epsilon < 0:
        raise InvalidActionError("epsilon must be >= 0")
    collapsed: list[str] = []

    def walk(node: TreeNode) -> TreeNode:
        if node.is_leaf:
            return node
        children = tuple((b, walk(c)) for b, c in node.children)
        node = replace(node, children=children)
        if _subtree_gain_exact(node) < Fraction(epsilon) or _children_ratios_equal(node):
            collapsed.append(node.id)
            return _as_leaf(node)
        return node

    new_root = walk(tree.root)
    if not collapsed:
        return tree, ()
    new_tree = replace(tree, root=new_root, version=tree.version + 1)
    return new_tree, tuple(sorted(collapsed))


# ask_fn(question text, sample) -> Answer; see Gateway.answer_yes_no
AskFn = Callable[[str, Sample], Answer]


@dataclass(frozen=True)
class QaReport:
    """Answer tally for one free-form question over a node's samples."""

    node_id: str
    question: str
    yes: int
    no: int
    unknown: int
    failures: int  # transport failures; they tally under unknown
    examples: tuple[tuple[str, str], ...]  # (sample id, verdict) excerpts

    @property
    def total(self) -> int:
        return self.yes + self.no + self.unknown


def qa_samples(
    tree: Tree,
    node_id: str,
    question: str,
    samples_by_id: Mapping[str, Sample],
    ask_fn: AskFn,
    max_examples: int = 8,
) -> QaReport:
    """Read-only: ask one question of every training sample at a node."""
    if not question.strip():
        raise InvalidActionError("qa needs a non-empty question")
    node = tree.node(node_id)
    if node.sample_ids is None:
        raise RefinementUnsupportedError(
            "sample inspection needs retained ids; build with retain_samples=True"
        )
    missing = [sid for sid in node.sample_ids if sid not in samples_by_id]
    if missing:
        raise RefinementUnsupportedError(
            f"{len(missing)} retained sample(s) not found, e.g. {missing[0]!r}"
        )
    tally = {Verdict.YES: 0, Verdict.NO: 0, Verdict.UNKNOWN: 0}
    failures = 0
    examples: list[tuple[str, str]] = []
    for sid in node.sample_ids:
        answer = ask_fn(question, samples_by_id[sid])
        tally[answer.verdict] += 1
        if answer.failed:
            failures += 1
        if len(examples) < max_examples:
            examples.append((sid, answer.verdict.value))
    return QaReport(
        node_id=node.id,
        question=question,
        yes=tally[Verdict.YES],
        no=tally[Verdict.NO],
        unknown=tally[Verdict.UNKNOWN],
        failures=failures,
        examples=tuple(examples),
    )


# ---------------------------------------------------------------------------
# audit log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    action: str
    base_version: int
    new_version: int
    node_id: Optional[str] = None
    args: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)
    at: str = ""  # informational timestamp; replay ignores it

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "action": self.action,
                "base_version": self.base_version,
                "new_version": self.new_version,
                "node_id": self.node_id,
                "args": self.args,
                "detail": self.detail,
                "at": self.at,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "AuditRecord":
        raw = json.loads(line)
        return cls(
            seq=raw["seq"],
            action=raw["action"],
            base_version=raw["base_version"],
            new_version=raw["new_version"],
            node_id=raw.get("node_id"),
            args=raw.get("args", {}),
            detail=raw.get("detail", {}),
            at=raw.get("at", ""),
        )


def append_audit(path: Union[str, Path], record: AuditRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")


def read_audit(path: Union[str, Path]) -> list[AuditRecord]:
    p = Path(path)
    if not p.exists():
        return []
    return [
        AuditRecord.from_json(line)
        for line in p.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def replay(
    tree: Tree,
    records: Sequence[AuditRecord],
    samples_by_id: Optional[Mapping[str, Sample]] = None,
    candidates_fn: Optional[CandidatesFn] = None,
    answers_fn: Optional[AnswersFn] = None,
) -> Tree:
    """Re-apply audited actions to the initial tree.

    With deterministic candidate and answer functions this reconstructs the
    exact final tree, which is the integrity check for the audit trail.
    """
    current = tree
    for record in records:
        if record.action == ACTION_QA:
            continue
        if record.base_version != current.version:
            raise InvalidActionError(
                f"audit record {record.seq} expects version {record.base_version}, "
                f"tree is at {current.version}"
            )
        if record.action == ACTION_COLLAPSE:
            current = collapse(current, record.node_id)
        elif record.action == ACTION_REMOVE_TRIVIAL:
            current, _ = remove_trivial(
                current, float(record.args.get("epsilon", DEFAULT_TRIVIAL_EPSILON))
            )
        elif record.action == ACTION_REBUILD:
            if samples_by_id is None or candidates_fn is None:
                raise InvalidActionError(
                    "replaying a rebuild needs samples_by_id and candidates_fn"
                )
            current = rebuild_subtree(
                current,
                record.node_id,
                samples_by_id,
                candidates_fn,
                answers_fn,
                advice=str(record.args.get("advice", "")),
            )
        else:
            raise InvalidActionError(f"unknown audit action {record.action!r}")
        if current.version != record.new_version:
            raise InvalidActionError(
                f"replay of record {record.seq} produced version {current.version}, "
                f"audit says {record.new_version}"
            )
    return current
