"""Datasets: loading, validation, batching, fold plans, synthetic generation.

A dataset is an ordered, immutable collection of binary-labeled samples whose
feature values are typed by a declared schema (text, numeric, or categorical
with a finite category set).  Missing values are first-class: they are kept
as ``None`` rather than imputed, and downstream answer policies deal with
them explicitly.
"""

from __future__ import annotations

import itertools
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence, Union

from . import dsl
from .errors import (
    EmptyDatasetError,
    IntegrityError,
    SchemaError,
    StratificationError,
    SynthSpecError,
    UnsupportedSchemeError,
)

logger = logging.getLogger(__name__)

# A feature value is text, a number, a category name, or missing; the schema
# says which interpretation applies.  Missing is None and is distinct from "".
FeatureValue = Union[str, float, None]

KINDS = ("text", "numeric", "categorical")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # text | numeric | categorical
    categories: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.kind == "categorical" and not self.categories:
            raise SchemaError(f"categorical feature {self.name!r} declares no categories")


@dataclass(frozen=True)
class Sample:
    id: str
    features: Mapping[str, FeatureValue]
    label: int  # 1 = positive ("successful"), 0 = negative


@dataclass(frozen=True)
class Dataset:
    schema: tuple[FeatureSpec, ...]
    samples: tuple[Sample, ...]
    warnings: int = 0  # unparseable / out-of-set cells coerced to missing

    def __post_init__(self):
        names = [f.name for f in self.schema]
        if len(names) != len(set(names)):
            raise SchemaError("duplicate feature names in schema")

    @property
    def positive_rate(self) -> float:
        if not self.samples:
            return 0.0
        return sum(s.label for s in self.samples) / len(self.samples)

    def feature(self, name: str) -> FeatureSpec:
        for f in self.schema:
            if f.name == name:
                return f
        raise SchemaError(f"unknown feature {name!r}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: Mapping[str, int]  # sample id -> fold index in [0, k)

    def fold_of(self, sample_id: str) -> int:
        return self.assignment[sample_id]

    def fold_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]


@dataclass(frozen=True)
class CvPartition:
    train_folds: frozenset[int]
    val_fold: int
    test_fold: int

    def __post_init__(self):
        members = set(self.train_folds) | {self.val_fold, self.test_fold}
        if len(members) != len(self.train_folds) + 2:
            raise ValueError("train, validation and test folds must be disjoint")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_schema(path: Union[str, Path]) -> tuple[tuple[FeatureSpec, ...], str]:
    """Read a schema file; returns (features, label column name).

    Accepts either ``{"features": [...], "label_column": "..."}`` or a bare
    list of feature entries.  Each entry is ``{"name", "kind", "categories"?}``.
    """
    raw = json.loads(Path(path).read_text())
    label_column = "label"
    if isinstance(raw, dict):
        label_column = raw.get("label_column", "label")
        raw = raw["features"]
    features = tuple(
        FeatureSpec(
            name=entry["name"],
            kind=entry["kind"],
            categories=tuple(entry["categories"]) if entry.get("categories") else None,
        )
        for entry in raw
    )
    return features, label_column


def _coerce(raw, spec: FeatureSpec, counters: dict) -> FeatureValue:
    if raw is None:
        return None
    if spec.kind == "numeric":
        if isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, (int, float)):
            return float(raw)
        try:
            return float(str(raw).strip())
        except ValueError:
            counters["warnings"] += 1
            return None
    value = str(raw)
    if spec.kind == "categorical" and value not in (spec.categories or ()):
        counters["warnings"] += 1
        return None
    return value


def _build_dataset(
    rows: list[tuple[str, int, dict]], schema: Sequence[FeatureSpec], counters: dict
) -> Dataset:
    by_name = {f.name: f for f in schema}
    seen: set[str] = set()
    samples = []
    for sid, label, feats in rows:
        if sid in seen:
            raise IntegrityError(f"duplicate sample id {sid!r}")
        seen.add(sid)
        unknown = set(feats) - set(by_name)
        if unknown:
            raise SchemaError(f"columns not in schema: {sorted(unknown)}")
        typed = {
            name: _coerce(feats.get(name), spec, counters)
            for name, spec in by_name.items()
        }
        samples.append(Sample(id=sid, features=typed, label=int(label)))
    if counters["warnings"]:
        logger.warning("coerced %d unusable cells to missing", counters["warnings"])
    return Dataset(
        schema=tuple(schema), samples=tuple(samples), warnings=counters["warnings"]
    )


def load_dataset(
    path: Union[str, Path],
    schema: Sequence[FeatureSpec],
    label_column: str = "label",
) -> Dataset:
    """Load a record-per-line JSON file or a header-row delimited file.

    JSON lines look like ``{"id": ..., "label": 0|1, "features": {...}}``;
    delimited files need ``id`` and the declared label column in the header.
    Unparseable numeric cells and out-of-set category values become missing,
    counted in ``Dataset.warnings``.
    """
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise EmptyDatasetError(f"{path} is empty")
    counters = {"warnings": 0}
    rows: list[tuple[str, int, dict]] = []
    if path.suffix in (".jsonl", ".json", ".ndjson"):
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: bad JSON record: {exc}") from exc
            try:
                rows.append((str(record["id"]), int(record["label"]), record["features"]))
            except KeyError as exc:
                raise SchemaError(f"{path}:{lineno}: record missing {exc}") from exc
    else:
        import csv
        import io

        reader = csv.DictReader(io.StringIO(text))
        header = reader.fieldnames or []
        if "id" not in header:
            raise SchemaError("delimited file needs an 'id' column")
        if label_column not in header:
            raise SchemaError(f"label column {label_column!r} not in header")
        feature_names = {f.name for f in schema}
        unknown = set(header) - feature_names - {"id", label_column}
        if unknown:
            raise SchemaError(f"columns not in schema: {sorted(unknown)}")
        for record in reader:
            feats = {
                k: (v if v != "" else None)
                for k, v in record.items()
                if k not in ("id", label_column)
            }
            rows.append((record["id"], int(record[label_column]), feats))
    if not rows:
        raise EmptyDatasetError(f"{path} holds no records")
    return _build_dataset(rows, schema, counters)


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write samples as record-per-line JSON (the load_dataset input format)."""
    with open(path, "w") as fh:
        for s in dataset.samples:
            fh.write(
                json.dumps(
                    {"id": s.id, "label": s.label, "features": dict(s.features)},
                    sort_keys=True,
                )
                + "\n"
            )


def save_schema(schema: Sequence[FeatureSpec], path: Union[str, Path]) -> None:
    entries = []
    for f in schema:
        entry: dict = {"name": f.name, "kind": f.kind}
        if f.categories:
            entry["categories"] = list(f.categories)
        entries.append(entry)
    Path(path).write_text(json.dumps({"features": entries}, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Folds and partitions
# ---------------------------------------------------------------------------


def stratified_folds(dataset: Dataset, k: int, seed: int) -> FoldPlan:
    """Assign samples to k stratified folds, deterministically for a seed.

    Each class is shuffled with the seeded RNG and dealt round-robin; the
    deal position carries over between classes so overall fold sizes differ
    by at most one, as do per-fold counts of each class.
    """
    if k < 2:
        raise StratificationError("need at least 2 folds")
    pos = [s.id for s in dataset.samples if s.label == 1]
    neg = [s.id for s in dataset.samples if s.label == 0]
    for name, ids in (("positive", pos), ("negative", neg)):
        if len(ids) < k:
            raise StratificationError(
                f"{name} class has {len(ids)} members, fewer than k={k}"
            )
    rng = random.Random(seed)
    assignment: dict[str, int] = {}
    offset = 0
    for ids in (pos, neg):
        shuffled = list(ids)
        rng.shuffle(shuffled)
        for i, sid in enumerate(shuffled):
            assignment[sid] = (offset + i) % k
        offset = (offset + len(shuffled)) % k
    return FoldPlan(k=k, assignment=assignment)


def enumerate_partitions(plan: FoldPlan) -> list[CvPartition]:
    """All 20 (train, validation, test) assignments of a 5-fold plan.

    Every 3-of-5 fold combination trains one tree; the two left-out folds are
    used both ways around as (validation, test).  Order is deterministic:
    training combinations lexicographic, smaller validation fold first.
    """
    if plan.k != 5:
        raise UnsupportedSchemeError("the 20-partition scheme requires exactly 5 folds")
    partitions = []
    for combo in itertools.combinations(range(5), 3):
        a, b = sorted(set(range(5)) - set(combo))
        partitions.append(CvPartition(frozenset(combo), val_fold=a, test_fold=b))
        partitions.append(CvPartition(frozenset(combo), val_fold=b, test_fold=a))
    return partitions


def batches(dataset: Union[Dataset, Sequence[Sample]], size: int) -> Iterator[list[Sample]]:
    """Split samples into consecutive chunks of ``size`` (last may be short)."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    samples = dataset.samples if isinstance(dataset, Dataset) else dataset
    for start in range(0, len(samples), size):
        yield list(samples[start : start + size])


def split_by_folds(
    dataset: Dataset, plan: FoldPlan, folds: Sequence[int]
) -> list[Sample]:
    wanted = set(folds)
    return [s for s in dataset.samples if plan.assignment[s.id] in wanted]


# ---------------------------------------------------------------------------
# Synthetic planted-rule datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthFeature:
    name: str
    kind: str
    categories: Optional[tuple[str, ...]] = None
    weights: Optional[tuple[float, ...]] = None  # categorical sampling weights
    low: float = 0.0
    high: float = 1.0
    text_pool: tuple[str, ...] = ()
    missing_rate: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    """A planted rule over declared features, plus a label-noise probability.

    ``rule`` is predicate-DSL text; the generated label is the rule outcome
    XOR a noise flip.  When ``rule_true_rate`` is set, feature draws are
    rejection-sampled so the rule holds with exactly that probability.
    """

    features: tuple[SynthFeature, ...]
    rule: str
    noise: float = 0.0
    rule_true_rate: Optional[float] = None

    def schema(self) -> tuple[FeatureSpec, ...]:
        return tuple(
            FeatureSpec(f.name, f.kind, f.categories if f.kind == "categorical" else None)
            for f in self.features
        )


def _draw_value(f: SynthFeature, rng: random.Random) -> FeatureValue:
    if f.missing_rate and rng.random() < f.missing_rate:
        return None
    if f.kind == "categorical":
        cats = f.categories or ()
        if f.weights:
            return rng.choices(cats, weights=f.weights, k=1)[0]
        return rng.choice(cats)
    if f.kind == "numeric":
        return rng.uniform(f.low, f.high)
    pool = f.text_pool or ("",)
    return rng.choice(pool)


def synth_generate(spec: SynthSpec, n: int, seed: int) -> Dataset:
    """Deterministically generate ``n`` labeled samples from a planted rule."""
    schema = spec.schema()
    try:
        rule = dsl.parse(spec.rule, schema=schema)
    except Exception as exc:
        raise SynthSpecError(f"bad planted rule: {exc}") from exc
    rng = random.Random(seed)
    width = max(4, len(str(max(n - 1, 0))))
    samples = []
    for i in range(n):
        if spec.rule_true_rate is not None:
            target = rng.random() < spec.rule_true_rate
            for _ in range(100_000):
                feats = {f.name: _draw_value(f, rng) for f in spec.features}
                if dsl.evaluate(rule, feats) == target:
                    break
            else:
                raise SynthSpecError(
                    "could not hit the requested rule-true rate; "
                    "the rule may be (nearly) constant under the feature draws"
                )
        else:
            feats = {f.name: _draw_value(f, rng) for f in spec.features}
        truth = dsl.evaluate(rule, feats)
        flip = spec.noise > 0 and rng.random() < spec.noise
        label = int(truth) ^ int(flip)
        samples.append(Sample(id=f"s{i:0{width}d}", features=feats, label=label))
    return Dataset(schema=schema, samples=tuple(samples))


def load_synth_spec(path: Union[str, Path]) -> SynthSpec:
    raw = json.loads(Path(path).read_text())
    features = tuple(
        SynthFeature(
            name=f["name"],
            kind=f["kind"],
            categories=tuple(f["categories"]) if f.get("categories") else None,
            weights=tuple(f["weights"]) if f.get("weights") else None,
            low=f.get("low", 0.0),
            high=f.get("high", 1.0),
            text_pool=tuple(f.get("text_pool", ())),
            missing_rate=f.get("missing_rate", 0.0),
        )
        for f in raw["features"]
    )
    return SynthSpec(
        features=features,
        rule=raw["rule"],
        noise=raw.get("noise", 0.0),
        rule_true_rate=raw.get("rule_true_rate"),
    )
