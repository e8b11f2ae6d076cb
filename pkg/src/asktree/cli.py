"""Command line entry points: synth, train, cv, predict, baseline, serve."""

import json
import sys
from pathlib import Path

import click

from .data import (
    Dataset,
    Sample,
    load_dataset,
    load_schema,
    load_synth_spec,
    save_dataset,
    save_schema,
    synth_generate,
)
from .errors import AskTreeError
from .evaluation import baseline_fewshot, baseline_vanilla, run_cv, select_sensitivity
from .gateway import BackendConfig, Gateway, make_backend
from .pipeline import make_answers_fn, train_tree
from .service import TreeStore
from .tree import BuildParams, predict


def _backend_options(fn):
    fn = click.option("--backend", type=click.Choice(["mock", "live"]), default="mock",
                      show_default=True, help="Answer source for model prompts.")(fn)
    fn = click.option("--endpoint", default="", help="Chat-completions URL (live only).")(fn)
    fn = click.option("--model", default="", help="Model name (live only).")(fn)
    return fn


def _build_options(fn):
    for opt in reversed([
        click.option("--max-depth", default=18, show_default=True),
        click.option("--min-leaf", default=31, show_default=True,
                     help="Smallest branch size a split may produce."),
        click.option("--per-feature-max", default=3, show_default=True),
        click.option("--max-branching", default=4, show_default=True),
        click.option("--batch-size", default=250, show_default=True,
                     help="Positive samples per insight batch."),
        click.option("--inference-only/--allow-code", default=True, show_default=True,
                     help="Restrict candidates to natural-language questions."),
        click.option("--unknown-policy", type=click.Choice(["no", "drop"]), default="no",
                     show_default=True),
        click.option("--seed", default=0, show_default=True),
        click.option("--no-insights", is_flag=True, default=False,
                     help="Skip the dataset summarization pass."),
    ]):
        fn = opt(fn)
    return fn


def _make_gateway(backend: str, endpoint: str, model: str, cache=None) -> Gateway:
    raw = make_backend(BackendConfig(kind=backend, endpoint=endpoint, model=model))
    return Gateway(raw, cache=cache)


def _params(kw) -> BuildParams:
    return BuildParams(
        max_depth=kw["max_depth"],
        min_leaf=kw["min_leaf"],
        per_feature_max=kw["per_feature_max"],
        max_branching=kw["max_branching"],
        batch_size=kw["batch_size"],
        inference_only=kw["inference_only"],
        unknown_policy=kw["unknown_policy"],
        seed=kw["seed"],
        retain_samples=kw.get("retain_samples", False),
    )


def _load(dataset_path: str, schema_path: str) -> Dataset:
    schema, label_column = load_schema(schema_path)
    return load_dataset(dataset_path, schema, label_column)


@click.group()
def main():
    """Grow, inspect and serve question-driven decision trees."""


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="Generator spec: features, planted rule, noise.")
@click.option("--n", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Dataset JSONL path.")
@click.option("--schema-out", required=True, type=click.Path())
def synth(spec_path, n, seed, out, schema_out):
    """Generate a labeled dataset from a planted rule."""
    spec = load_synth_spec(spec_path)
    dataset = synth_generate(spec, n, seed)
    save_dataset(dataset, out)
    save_schema(dataset.schema, schema_out)
    pos = sum(s.label for s in dataset.samples)
    click.echo(f"wrote {len(dataset.samples)} samples to {out} "
               f"({pos} positive, rate {pos / len(dataset.samples):.3f})")


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--task", required=True, help="One-line description of the positive class.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Run store directory; the run is created inside it.")
@click.option("--run-id", default="run", show_default=True)
@click.option("--retain-samples/--no-retain-samples", default=True, show_default=True,
              help="Keep per-node sample ids so the service can inspect and rebuild.")
@_build_options
@_backend_options
def train(dataset_path, schema_path, task, out_dir, run_id, retain_samples, **kw):
    """Grow a tree and write a versioned run directory."""
    dataset = _load(dataset_path, schema_path)
    kw["retain_samples"] = retain_samples
    gateway = _make_gateway(kw["backend"], kw["endpoint"], kw["model"])
    result = train_tree(
        dataset.samples,
        dataset.schema,
        task,
        gateway,
        _params(kw),
        compute_insights=not kw["no_insights"],
    )
    chosen = select_sensitivity(
        result.tree, dataset.samples, make_answers_fn(gateway, task)
    )
    store = TreeStore(out_dir)
    store.create_run(
        run_id,
        result.tree,
        dataset,
        task,
        backend=kw["backend"],
        answers=gateway.cache,
        report=result.report,
        sensitivity=chosen.threshold,
    )
    report = result.report
    click.echo(f"run {run_id!r} written to {Path(out_dir) / run_id}")
    click.echo(
        f"nodes={report.node_count} leaves={report.leaf_count} depth={report.depth} "
        f"llm_calls={report.llm_calls} llm_tokens={report.llm_tokens}"
    )
    click.echo(
        f"sensitivity={chosen.threshold:.3f} (training fit f{chosen.metrics.beta:g}="
        f"{chosen.fbeta:.3f})"
    )


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--task", required=True)
@click.option("--k", default=5, show_default=True)
@click.option("--beta", default=0.5, show_default=True)
@_build_options
@_backend_options
def cv(dataset_path, schema_path, task, k, beta, **kw):
    """Rotating-fold evaluation; prints one row per (val, test) pairing."""
    dataset = _load(dataset_path, schema_path)
    gateway = _make_gateway(kw["backend"], kw["endpoint"], kw["model"])
    params = _params(kw)

    def build_fn(samples):
        return train_tree(
            samples, dataset.schema, task, gateway, params,
            compute_insights=not kw["no_insights"],
        ).tree

    result = run_cv(
        dataset, build_fn, make_answers_fn(gateway, task),
        k=k, seed=kw["seed"], beta=beta,
    )
    click.echo(result.text_table())


@main.command(name="predict")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True),
              help="A run directory produced by train.")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="JSONL records: {\"id\": ..., \"features\": {...}}.")
@click.option("--sensitivity", default=None, type=float,
              help="Leaf-ratio threshold; picked on the training data when omitted.")
@click.option("--version", default=None, type=int)
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Output JSONL; stdout when omitted.")
@_backend_options
def predict_cmd(run_dir, input_path, sensitivity, version, out_path, backend, endpoint, model):
    """Score new samples with a stored tree."""
    run_dir = Path(run_dir)
    store = TreeStore(run_dir.parent)
    run_id = run_dir.name
    tree = store.load_tree(run_id, version)
    config = store.load_config(run_id)
    gateway = _make_gateway(backend, endpoint, model, cache=store.load_answers(run_id))
    answers_fn = make_answers_fn(gateway, config.get("task", ""))
    if sensitivity is None:
        sensitivity = config.get("sensitivity")
    if sensitivity is None:
        train_data = store.load_dataset(run_id)
        sensitivity = select_sensitivity(tree, train_data.samples, answers_fn).threshold
    lines = []
    for line in Path(input_path).read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        sample = Sample(str(record["id"]), record.get("features", {}),
                        int(record.get("label", 0)))
        path = predict(tree, sample, answers_fn)
        lines.append(json.dumps({
            "id": sample.id,
            "ratio": path.ratio,
            "label": path.decide(sensitivity),
            "leaf": path.leaf.id,
        }, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {len(lines)} predictions to {out_path} "
                   f"(sensitivity {sensitivity:.3f})")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--task", required=True)
@click.option("--kind", type=click.Choice(["vanilla", "fewshot"]), default="vanilla",
              show_default=True)
@click.option("--exemplars", "exemplars_path", default=None, type=click.Path(exists=True),
              help="Labeled JSONL shown in the prompt (fewshot only).")
@click.option("--beta", default=0.5, show_default=True)
@_backend_options
def baseline(dataset_path, schema_path, task, kind, exemplars_path, beta,
             backend, endpoint, model):
    """Per-sample prompting baselines to compare a tree against."""
    dataset = _load(dataset_path, schema_path)
    gateway = _make_gateway(backend, endpoint, model)
    if kind == "vanilla":
        result = baseline_vanilla(dataset.samples, task, gateway, beta)
    else:
        if not exemplars_path:
            raise click.UsageError("--exemplars is required for the fewshot baseline")
        exemplars = load_dataset(exemplars_path, dataset.schema).samples
        result = baseline_fewshot(dataset.samples, task, gateway, exemplars, beta)
    m = result.metrics
    click.echo(
        f"{kind}: accuracy={m.accuracy:.3f} precision={m.precision:.3f} "
        f"recall={m.recall:.3f} f{beta:g}={m.fbeta:.3f} "
        f"(tp={m.counts.tp} fp={m.counts.fp} tn={m.counts.tn} fn={m.counts.fn}, "
        f"{result.failures} failed of {result.calls} calls)"
    )


@main.command()
@click.option("--store", "store_root", required=True, type=click.Path(exists=True),
              help="Directory holding run subdirectories.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
@click.option("--static", "static_dir", default=None, type=click.Path(),
              help="Optional built web UI to mount under /ui.")
def serve(store_root, host, port, static_dir):
    """Serve the inspection and refinement API."""
    from .service import serve as run_server

    run_server(store_root, host=host, port=port, static_dir=static_dir)


def _excepthook(exc_type, exc, tb):
    if isinstance(exc, AskTreeError):
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    sys.__excepthook__(exc_type, exc, tb)


def run():  # console_scripts shim with friendly domain errors
    sys.excepthook = _excepthook
    main()


if __name__ == "__main__":
    run()
