"""Versioned run store and the HTTP API over it.

A run directory holds every tree version, the training dataset, the answer
cache, and an append-only audit log.  The API exposes read endpoints plus a
single action endpoint guarded by optimistic concurrency: callers send the
version they based their edit on, and a mismatch returns 409 with the
current version so the client can rebase.
"""

import json
import re
import threading
from pathlib import Path
from typing import Callable, Optional, Union

from .data import Dataset, load_dataset, load_schema, save_dataset, save_schema
from .evaluation import evaluate_tree
from .errors import (
    BackendError,
    InvalidActionError,
    NodeNotFoundError,
    RefinementUnsupportedError,
    TreeLoadError,
    VersionConflictError,
)
from .gateway import AnswerCache, BackendConfig, Gateway, make_backend
from .pipeline import (
    BuildReport,
    expand_advice,
    make_answers_fn,
    make_ask_fn,
    make_candidates_fn,
)
from .refine import (
    ACTION_COLLAPSE,
    ACTION_QA,
    ACTION_REBUILD,
    ACTION_REMOVE_TRIVIAL,
    DEFAULT_TRIVIAL_EPSILON,
    AuditRecord,
    append_audit,
    collapse,
    qa_samples,
    read_audit,
    rebuild_subtree,
    remove_trivial,
)
from .tree import Tree, load_tree, save_tree, tree_to_dict

_RUN_ID = re.compile(r"^[a-z0-9][a-z0-9_-]*$")
_TREE_FILE = re.compile(r"^tree_v(\d+)\.json$")


class TreeStore:
    """Filesystem layout: <root>/<run_id>/{tree_v*.json, audit.jsonl, ...}."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def lock(self, run_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(run_id, threading.Lock())

    def _run_dir(self, run_id: str, must_exist: bool = True) -> Path:
        path = self.root / run_id
        if must_exist and not path.is_dir():
            raise FileNotFoundError(f"run {run_id!r} not found")
        return path

    # -- creation -------------------------------------------------------------

    def create_run(
        self,
        run_id: str,
        tree: Tree,
        dataset: Dataset,
        task: str,
        backend: str = "mock",
        answers: Optional[AnswerCache] = None,
        report: Optional[BuildReport] = None,
        sensitivity: float = 0.5,
    ) -> None:
        if not _RUN_ID.match(run_id):
            raise ValueError(f"invalid run id {run_id!r}")
        path = self.root / run_id
        if path.exists():
            raise FileExistsError(f"run {run_id!r} already exists")
        path.mkdir(parents=True)
        save_tree(tree, path / f"tree_v{tree.version}.json")
        save_dataset(dataset, path / "dataset.jsonl")
        save_schema(dataset.schema, path / "schema.json")
        config = {
            "task": task,
            "backend": backend,
            "params": tree.params.to_dict(),
            "sensitivity": sensitivity,
        }
        (path / "config.json").write_text(json.dumps(config, sort_keys=True, indent=2))
        self.save_answers(run_id, answers or AnswerCache())
        if report is not None:
            (path / "report.json").write_text(
                json.dumps(report.to_dict(), sort_keys=True, indent=2)
            )
        (path / "audit.jsonl").touch()

    # -- reads ----------------------------------------------------------------

    def list_runs(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def versions(self, run_id: str) -> list[int]:
        path = self._run_dir(run_id)
        found = []
        for child in path.iterdir():
            m = _TREE_FILE.match(child.name)
            if m:
                found.append(int(m.group(1)))
        if not found:
            raise TreeLoadError(f"run {run_id!r} has no tree versions")
        return sorted(found)

    def latest_version(self, run_id: str) -> int:
        return self.versions(run_id)[-1]

    def load_tree(self, run_id: str, version: Optional[int] = None) -> Tree:
        if version is None:
            version = self.latest_version(run_id)
        path = self._run_dir(run_id) / f"tree_v{version}.json"
        if not path.exists():
            raise TreeLoadError(f"run {run_id!r} has no version {version}")
        return load_tree(path)

    def save_tree_version(self, run_id: str, tree: Tree) -> None:
        path = self._run_dir(run_id) / f"tree_v{tree.version}.json"
        if path.exists():
            raise VersionConflictError(
                f"version {tree.version} already exists for run {run_id!r}"
            )
        save_tree(tree, path)

    def load_dataset(self, run_id: str) -> Dataset:
        path = self._run_dir(run_id)
        schema, label_column = load_schema(path / "schema.json")
        return load_dataset(path / "dataset.jsonl", schema, label_column)

    def load_config(self, run_id: str) -> dict:
        return json.loads((self._run_dir(run_id) / "config.json").read_text())

    def load_report(self, run_id: str) -> Optional[dict]:
        path = self._run_dir(run_id) / "report.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def load_answers(self, run_id: str) -> AnswerCache:
        path = self._run_dir(run_id) / "answers.json"
        if not path.exists():
            return AnswerCache()
        return AnswerCache.from_dict(json.loads(path.read_text()))

    def save_answers(self, run_id: str, cache: AnswerCache) -> None:
        path = self._run_dir(run_id, must_exist=False) / "answers.json"
        path.write_text(json.dumps(cache.to_dict(), sort_keys=True, indent=2))

    def audit_path(self, run_id: str) -> Path:
        return self._run_dir(run_id) / "audit.jsonl"

    def read_audit(self, run_id: str) -> list[AuditRecord]:
        return read_audit(self.audit_path(run_id))

    def append_audit(self, run_id: str, record: AuditRecord) -> None:
        append_audit(self.audit_path(run_id), record)


GatewayFactory = Callable[[dict, AnswerCache], Gateway]


def default_gateway_factory(config: dict, answers: AnswerCache) -> Gateway:
    backend = make_backend(
        BackendConfig(
            kind=config.get("backend", "mock"),
            endpoint=config.get("endpoint", ""),
            model=config.get("model", ""),
        )
    )
    return Gateway(backend, cache=answers)


def create_app(store: TreeStore, gateway_factory: GatewayFactory = default_gateway_factory):
    """Build the FastAPI application over one run store."""
    from fastapi import FastAPI, HTTPException, Query
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    app = FastAPI(title="asktree", version="0.1.0")

    class ActionBody(BaseModel):
        action: str
        base_version: int
        node_id: Optional[str] = None
        advice: str = ""
        epsilon: float = DEFAULT_TRIVIAL_EPSILON

    class QaBody(BaseModel):
        node_id: str
        question: str

    def run_or_404(run_id: str) -> None:
        if run_id not in store.list_runs():
            raise HTTPException(status_code=404, detail=f"run {run_id!r} not found")

    def current_metrics(run_id: str, tree: Tree) -> dict:
        """Dataset metrics at the run's stored sensitivity."""
        config = store.load_config(run_id)
        answers = store.load_answers(run_id)
        gateway = gateway_factory(config, answers)
        answers_fn = make_answers_fn(gateway, config.get("task", ""))
        sensitivity = float(config.get("sensitivity", 0.5))
        dataset = store.load_dataset(run_id)
        scored = evaluate_tree(tree, dataset.samples, sensitivity, answers_fn)
        return {"sensitivity": sensitivity, **scored.to_dict()}

    @app.get("/runs")
    def list_runs():
        runs = []
        for run_id in store.list_runs():
            tree = store.load_tree(run_id)
            config = store.load_config(run_id)
            runs.append(
                {
                    "run_id": run_id,
                    "version": tree.version,
                    "task": config.get("task", ""),
                    "node_count": tree.node_count(),
                    "leaf_count": len(tree.leaves()),
                    "depth": tree.depth(),
                }
            )
        return {"runs": runs}

    @app.get("/runs/{run_id}/tree")
    def get_tree(run_id: str, version: Optional[int] = Query(default=None)):
        run_or_404(run_id)
        latest = store.latest_version(run_id)
        try:
            tree = store.load_tree(run_id, version)
        except TreeLoadError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "run_id": run_id,
            "version": tree.version,
            "latest_version": latest,
            "tree": tree_to_dict(tree),
        }

    @app.get("/runs/{run_id}/nodes/{node_id}/samples")
    def node_samples(run_id: str, node_id: str):
        run_or_404(run_id)
        tree = store.load_tree(run_id)
        try:
            node = tree.node(node_id)
        except NodeNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if node.sample_ids is None:
            raise HTTPException(
                status_code=400,
                detail="run was trained without retained sample ids",
            )
        dataset = store.load_dataset(run_id)
        by_id = {s.id: s for s in dataset.samples}
        rows = [
            {
                "id": sid,
                "label": by_id[sid].label,
                "features": dict(sorted(by_id[sid].features.items())),
            }
            for sid in node.sample_ids
            if sid in by_id
        ]
        return {
            "run_id": run_id,
            "version": tree.version,
            "node_id": node.id,
            "total": node.counts.total,
            "pos": node.counts.pos,
            "neg": node.counts.neg,
            "ratio": node.ratio,
            "samples": rows,
        }

    @app.get("/runs/{run_id}/metrics")
    def get_metrics(
        run_id: str,
        sensitivity: Optional[float] = Query(default=None, ge=0.0, le=1.0),
        beta: float = Query(default=0.5, gt=0.0),
    ):
        run_or_404(run_id)
        tree = store.load_tree(run_id)
        dataset = store.load_dataset(run_id)
        config = store.load_config(run_id)
        if sensitivity is None:
            sensitivity = float(config.get("sensitivity", 0.5))
        answers = store.load_answers(run_id)
        gateway = gateway_factory(config, answers)
        answers_fn = make_answers_fn(gateway, config.get("task", ""))
        result = evaluate_tree(tree, dataset.samples, sensitivity, answers_fn, beta)
        return {
            "run_id": run_id,
            "version": tree.version,
            "sensitivity": sensitivity,
            "leaf_ratios": tree.leaf_ratios(),
            **result.to_dict(),
        }

    @app.get("/runs/{run_id}/audit")
    def get_audit(run_id: str):
        run_or_404(run_id)
        records = store.read_audit(run_id)
        return {
            "run_id": run_id,
            "version": store.latest_version(run_id),
            "records": [json.loads(r.to_json()) for r in records],
        }

    @app.post("/runs/{run_id}/qa")
    def post_qa(run_id: str, body: QaBody):
        run_or_404(run_id)
        with store.lock(run_id):
            tree = store.load_tree(run_id)
            config = store.load_config(run_id)
            answers = store.load_answers(run_id)
            gateway = gateway_factory(config, answers)
            dataset = store.load_dataset(run_id)
            try:
                report = qa_samples(
                    tree,
                    body.node_id,
                    body.question,
                    {s.id: s for s in dataset.samples},
                    make_ask_fn(gateway, config.get("task", "")),
                )
            except NodeNotFoundError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            except (InvalidActionError, RefinementUnsupportedError) as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            except BackendError as exc:
                raise HTTPException(status_code=502, detail=str(exc))
            store.save_answers(run_id, gateway.cache)
            record = AuditRecord(
                seq=len(store.read_audit(run_id)) + 1,
                action=ACTION_QA,
                base_version=tree.version,
                new_version=tree.version,
                node_id=body.node_id,
                args={"question": body.question},
                detail={
                    "yes": report.yes,
                    "no": report.no,
                    "unknown": report.unknown,
                    "failures": report.failures,
                },
                at=_now(),
            )
            store.append_audit(run_id, record)
        return {
            "run_id": run_id,
            "version": tree.version,
            "node_id": report.node_id,
            "question": report.question,
            "yes": report.yes,
            "no": report.no,
            "unknown": report.unknown,
            "failures": report.failures,
            "total": report.total,
            "examples": [list(pair) for pair in report.examples],
        }

    @app.post("/runs/{run_id}/actions")
    def post_action(run_id: str, body: ActionBody):
        run_or_404(run_id)
        if body.action not in (ACTION_COLLAPSE, ACTION_REBUILD, ACTION_REMOVE_TRIVIAL):
            raise HTTPException(status_code=400, detail=f"unknown action {body.action!r}")
        with store.lock(run_id):
            tree = store.load_tree(run_id)
            if body.base_version != tree.version:
                return JSONResponse(
                    status_code=409,
                    content={
                        "error": "version conflict",
                        "run_id": run_id,
                        "base_version": body.base_version,
                        "current_version": tree.version,
                    },
                )
            args: dict = {}
            detail: dict = {}
            try:
                if body.action == ACTION_COLLAPSE:
                    if not body.node_id:
                        raise InvalidActionError("collapse needs a node_id")
                    before = tree.node(body.node_id)
                    new_tree = collapse(tree, body.node_id)
                    detail = {"removed_nodes": _subtree_size(before) - 1}
                elif body.action == ACTION_REMOVE_TRIVIAL:
                    new_tree, collapsed = remove_trivial(tree, body.epsilon)
                    args = {"epsilon": body.epsilon}
                    detail = {"collapsed": list(collapsed)}
                else:
                    if not body.node_id:
                        raise InvalidActionError("rebuild needs a node_id")
                    before = tree.node(body.node_id)
                    config = store.load_config(run_id)
                    answers = store.load_answers(run_id)
                    gateway = gateway_factory(config, answers)
                    task = config.get("task", "")
                    dataset = store.load_dataset(run_id)
                    expanded = expand_advice(gateway, task, body.advice)
                    candidates_fn = make_candidates_fn(
                        gateway, task, dataset.schema, tree.insights, tree.params
                    )
                    new_tree = rebuild_subtree(
                        tree,
                        body.node_id,
                        {s.id: s for s in dataset.samples},
                        candidates_fn,
                        make_answers_fn(gateway, task),
                        advice=expanded,
                    )
                    store.save_answers(run_id, gateway.cache)
                    args = {"advice": expanded}
                    detail = {
                        "advice_raw": body.advice,
                        "nodes_before": _subtree_size(before),
                        "nodes_after": _subtree_size(new_tree.node(body.node_id)),
                    }
            except NodeNotFoundError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            except (InvalidActionError, RefinementUnsupportedError) as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            except BackendError as exc:
                raise HTTPException(status_code=502, detail=str(exc))
            changed = new_tree.version != tree.version
            if changed:
                store.save_tree_version(run_id, new_tree)
                record = AuditRecord(
                    seq=len(store.read_audit(run_id)) + 1,
                    action=body.action,
                    base_version=tree.version,
                    new_version=new_tree.version,
                    node_id=body.node_id,
                    args=args,
                    detail=detail,
                    at=_now(),
                )
                store.append_audit(run_id, record)
        return {
            "run_id": run_id,
            "action": body.action,
            "version": new_tree.version,
            "changed": changed,
            "detail": detail,
            "metrics": current_metrics(run_id, new_tree),
            "tree": tree_to_dict(new_tree),
        }

    return app


def _subtree_size(node) -> int:
    return 1 + sum(_subtree_size(child) for _, child in node.children)


def _now() -> str:
    import datetime

    return (
        datetime.datetime.now(datetime.timezone.utc)
        .replace(microsecond=0)
        .isoformat()
        .replace("+00:00", "Z")
    )


def serve(store_root: Union[str, Path], host: str = "127.0.0.1", port: int = 8765,
          static_dir: Optional[Union[str, Path]] = None):
    """Run the API with uvicorn, optionally mounting a static UI directory."""
    import uvicorn

    app = create_app(TreeStore(store_root))
    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")
    uvicorn.run(app, host=host, port=port)
