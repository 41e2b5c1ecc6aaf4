"""Command-line front end. A thin client of the dpmask service.

By default requests are served in-process; ``--server URL`` sends them to a
running ``dpmask serve`` instead. Outputs go to ``--out`` or stdout.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from dpmask.client import ServiceError, make_client
from dpmask.dataset import DatasetError, dataset_to_csv_text, load_csv, toy_mixture_spec
from dpmask.harness import METHODS, records_to_csv
from dpmask.model import ConvergenceError
from dpmask.service.schemas import (
    BoundCheckRequest,
    DatasetPayload,
    EvalRequest,
    MaskOptionsModel,
    MaskRequest,
    MixtureSpecModel,
    ModelPayload,
    PerturbRequest,
    SweepConfigModel,
    SynthRequest,
    TrainRequest,
)

NORMALIZE = click.Choice(["max", "clip", "none"])


def _emit(text: str, out: str | None) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _dataset(path: str, label_column: str = "label") -> DatasetPayload:
    column = int(label_column) if label_column.isdigit() else label_column
    return DatasetPayload.from_dataset(load_csv(path, column))


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise click.ClickException(f"{path}: invalid JSON ({err})") from err


def _classes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError as err:
        raise click.BadParameter(f"expected comma-separated class indices, got {text!r}") from err


def _call(ctx, endpoint, request):
    try:
        return ctx.obj["client"].call(endpoint, request)
    except (ValueError, OSError, DatasetError, ConvergenceError, ServiceError) as err:
        raise click.ClickException(str(err)) from err


class _Group(click.Group):
    # Turn validation and I/O errors raised while building requests into
    # clean messages with exit code 1.
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (ValueError, OSError, ServiceError) as err:
            raise click.ClickException(str(err)) from err


@click.group(cls=_Group)
@click.option("--server", default=None, help="Base URL of a running dpmask service.")
@click.pass_context
def main(ctx, server):
    """Privacy-masked dataset release for logistic regression."""
    ctx.ensure_object(dict)
    ctx.obj["client"] = make_client(server)


@main.command()
@click.option("--n", "n", type=int, default=None, help="Total samples (split evenly over classes).")
@click.option("--classes", default="0,1,2", show_default=True, help="Toy mixture components to use.")
@click.option("--mixture", type=click.Path(exists=True, dir_okay=False), help="Mixture spec JSON.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def synth(ctx, n, classes, mixture, seed, out):
    """Sample a Gaussian-mixture dataset as CSV."""
    if mixture is not None:
        spec = MixtureSpecModel.model_validate(_read_json(mixture))
    else:
        spec = MixtureSpecModel.from_spec(toy_mixture_spec(100, _classes(classes)))
    resp = _call(ctx, "synth", SynthRequest(mixture=spec, n=n, seed=seed))
    _emit(dataset_to_csv_text(resp.dataset.to_dataset()), out)


@main.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--lambda", "lam", type=float, default=0.5, show_default=True)
@click.option("--tol", type=float, default=1e-8, show_default=True)
@click.option("--normalize", type=NORMALIZE, default="none", show_default=True)
@click.option("--scale", type=float, default=None, help="Fixed normalization scale (default: max sample norm).")
@click.option("--label-column", default="label", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Model JSON.")
@click.pass_context
def train(ctx, data, lam, tol, normalize, scale, label_column, out):
    """Fit the regularized logistic-regression classifier."""
    req = TrainRequest(dataset=_dataset(data, label_column), lam=lam, tol=tol, normalize=normalize, scale=scale)
    resp = _call(ctx, "train", req)
    _emit(_json_text(resp.model.model_dump(exclude_none=True)), out)
    click.echo(f"residual norm {resp.residual_norm:.3e}, objective {resp.objective:.6f}", err=True)


@main.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", type=float, required=True)
@click.option("--lambda", "lam", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=1e-8, show_default=True, help="Trainer tolerance.")
@click.option("--seed-set", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV of seed samples kept in the release (not private).")
@click.option("--normalize", type=NORMALIZE, default="max", show_default=True)
@click.option("--scale", type=float, default=None, help="Fixed normalization scale (default: max sample norm).")
@click.option("--restarts", type=int, default=5, show_default=True)
@click.option("--radius", type=float, default=None, help="Project masked samples into this ball.")
@click.option("--label-column", default="label", show_default=True)
@click.option("--model-out", type=click.Path(dir_okay=False), default=None, help="Write w' as JSON.")
@click.option("--verbose", is_flag=True, help="Print per-sample diagnostics to stderr.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Masked dataset CSV.")
@click.pass_context
def mask(ctx, data, epsilon, lam, seed, tol, seed_set, normalize, scale, restarts, radius, label_column,
         model_out, verbose, out):
    """Release a masked dataset (normalized coordinates)."""
    req = MaskRequest(
        dataset=_dataset(data, label_column),
        epsilon=epsilon,
        lam=lam,
        seed=seed,
        tol=tol,
        seed_set=_dataset(seed_set, label_column) if seed_set else None,
        normalize=normalize,
        scale=scale,
        options=MaskOptionsModel(restarts=restarts, radius=radius),
        verbose=verbose,
    )
    resp = _call(ctx, "mask", req)
    _emit(dataset_to_csv_text(resp.dataset.to_dataset()), out)
    if model_out is not None:
        Path(model_out).write_text(_json_text(resp.w_prime.model_dump(exclude_none=True)), encoding="utf-8")
    for note in resp.warnings:
        click.echo(f"warning: {note}", err=True)
    if verbose and resp.diagnostics:
        for row in resp.diagnostics:
            click.echo(json.dumps(row, sort_keys=True), err=True)
    click.echo(f"final mean residual {resp.final_mean_residual:.3e}", err=True)


@main.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", type=float, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--normalize", type=NORMALIZE, default="max", show_default=True)
@click.option("--scale", type=float, default=None, help="Fixed normalization scale (default: max sample norm).")
@click.option("--label-column", default="label", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def perturb(ctx, data, epsilon, seed, normalize, scale, label_column, out):
    """Input-perturbation baseline: add noise to every sample."""
    req = PerturbRequest(
        dataset=_dataset(data, label_column), epsilon=epsilon, seed=seed, normalize=normalize, scale=scale
    )
    resp = _call(ctx, "perturb", req)
    _emit(dataset_to_csv_text(resp.dataset.to_dataset()), out)


@main.command("eval")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--label-column", default="label", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def evaluate(ctx, data, model_path, label_column, out):
    """Accuracy of a saved model on a CSV dataset."""
    model = ModelPayload.model_validate(_read_json(model_path))
    resp = _call(ctx, "eval", EvalRequest(model=model, dataset=_dataset(data, label_column)))
    _emit(_json_text(resp.model_dump()), out)


def _sweep_config(config, data, label_column, classes, ns, epsilons, lam, reps, methods, seed, jobs,
                  validation_size) -> SweepConfigModel:
    base = _read_json(config) if config else {}
    if not isinstance(base, dict):
        raise click.ClickException("config file must hold a JSON object")
    overrides = {
        "csv_path": data,
        "label_column": label_column,
        "ns": list(ns) or None,
        "epsilons": list(epsilons) or None,
        "lam": lam,
        "repetitions": reps,
        "methods": list(methods) or None,
        "seed": seed,
        "jobs": jobs,
        "validation_size": validation_size,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if data is not None:
        base.pop("mixture", None)
    elif classes is not None:
        base.pop("csv_path", None)
        base["mixture"] = MixtureSpecModel.from_spec(toy_mixture_spec(100, _classes(classes))).model_dump()
    return SweepConfigModel.model_validate(base)


def _sweep_options(fn):
    options = [
        click.option("--config", type=click.Path(exists=True, dir_okay=False), help="SweepConfig JSON."),
        click.option("--data", type=click.Path(exists=True, dir_okay=False), help="CSV data source."),
        click.option("--label-column", default=None),
        click.option("--classes", default=None, help="Toy mixture components, e.g. 0,1."),
        click.option("--lambda", "lam", type=float, default=None, help="Regularization [default: 0.5]."),
        click.option("--reps", type=int, default=None, help="Repetitions [default: 50]."),
        click.option("--seed", type=int, default=None, help="Master seed [default: 0]."),
        click.option("--jobs", type=int, default=None, help="Worker processes [default: 1]."),
        click.option("--validation-size", type=int, default=None),
        click.option("--out", type=click.Path(dir_okay=False), default=None),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


@main.command()
@_sweep_options
@click.option("--n", "ns", type=int, multiple=True, help="Training-set sizes (repeatable).")
@click.option("--epsilon", "epsilons", type=float, multiple=True, help="Privacy levels (repeatable).")
@click.option("--method", "methods", type=click.Choice(METHODS), multiple=True)
@click.pass_context
def sweep(ctx, config, data, label_column, classes, lam, reps, seed, jobs, validation_size, out, ns,
          epsilons, methods):
    """Accuracy-vs-epsilon sweep; writes the records as CSV."""
    cfg = _sweep_config(config, data, label_column, classes, ns, epsilons, lam, reps, methods, seed,
                        jobs, validation_size)
    resp = _call(ctx, "sweep", cfg)
    _emit(records_to_csv([r.to_record() for r in resp.records]), out)


@main.command("bound-check")
@_sweep_options
@click.option("--method", type=click.Choice(["output_perturb", "input_perturb"]), required=True)
@click.option("--delta", type=float, default=0.05, show_default=True)
@click.option("--epsilon", type=float, default=1.0, show_default=True)
@click.option("--n", "n", type=int, default=100, show_default=True)
@click.pass_context
def bound_check(ctx, config, data, label_column, classes, lam, reps, seed, jobs, validation_size, out,
                method, delta, epsilon, n):
    """Empirical objective gap of a perturbed classifier against its utility bound.

    Defaults to the two-class toy mixture (components 0 and 1).
    """
    if config is None and data is None and classes is None:
        classes = "0,1"
    cfg = _sweep_config(config, data, label_column, classes, (n,), (epsilon,), lam, reps, (), seed,
                        jobs, validation_size)
    req = BoundCheckRequest(method=method, delta=delta, epsilon=epsilon, n=n, config=cfg)
    resp = _call(ctx, "bound-check", req)
    _emit(_json_text(resp.model_dump()), out)
    click.echo(f"bound {resp.bound:.6g}, violation rate {resp.violation_rate:.3f}", err=True)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("dpmask.service.app:app", host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
