"""Request handlers shared by the HTTP app and the in-process CLI client.

Random streams: ``synth`` and ``perturb`` use ``make_rng(seed)``; ``mask``
draws classifier noise from ``make_rng(seed, 0)`` and descent restarts from
``make_rng(seed, 1)``.
"""

from __future__ import annotations

import warnings

import numpy as np

from dpmask.dataset import bound_norms, gen_gaussian_mixture, toy_mixture_spec
from dpmask.harness import bound_check, sweep
from dpmask.maskgen import final_mean_residual, mask_dataset
from dpmask.model import TrainOptions, accuracy, gradient_residual, objective, train
from dpmask.noise import PrivacyBudget, make_rng
from dpmask.perturb import input_perturbation
from dpmask.service.schemas import (
    BoundCheckRequest,
    BoundReportModel,
    DatasetPayload,
    DatasetResponse,
    EvalRequest,
    EvalResponse,
    MaskRequest,
    MaskResponse,
    ModelPayload,
    PerturbRequest,
    SweepConfigModel,
    SweepRecordModel,
    SweepResponse,
    SynthRequest,
    TrainRequest,
    TrainResponse,
)


def synth(req: SynthRequest) -> DatasetResponse:
    spec = req.mixture.to_spec() if req.mixture is not None else toy_mixture_spec()
    if req.n is not None:
        spec = spec.resized(req.n)
    ds = gen_gaussian_mixture(spec, make_rng(req.seed))
    return DatasetResponse(dataset=DatasetPayload.from_dataset(ds))


def train_model(req: TrainRequest) -> TrainResponse:
    ds = req.dataset.to_dataset()
    scale = None
    if req.normalize != "none" or req.scale is not None:
        ds, scale = bound_norms(ds, req.normalize if req.normalize != "none" else "max", req.scale)
    w = train(ds, TrainOptions(lam=req.lam, tol=req.tol))
    return TrainResponse(
        model=ModelPayload.from_params(w, scale),
        residual_norm=float(np.linalg.norm(gradient_residual(w, ds, req.lam))),
        objective=objective(w, ds, req.lam),
    )


def mask(req: MaskRequest) -> MaskResponse:
    ds, scale = bound_norms(req.dataset.to_dataset(), req.normalize, req.scale)
    seed_set = None
    if req.seed_set is not None:
        raw = req.seed_set.to_dataset()
        seed_set = raw.replace(features=raw.features / scale, norm_bounded=False)
    diagnostics = [] if req.verbose else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        masked, w_prime = mask_dataset(
            ds,
            PrivacyBudget(req.epsilon, req.lam, ds.n),
            seed_set,
            req.options.to_options(),
            make_rng(req.seed, 1),
            train_opts=TrainOptions(lam=req.lam, tol=req.tol),
            noise_rng=make_rng(req.seed, 0),
            diagnostics=diagnostics,
        )
    notes = [str(w.message) for w in caught]
    if w_prime.mode == "multiclass":
        notes.append("multiclass epsilon is heuristic: privacy is only proven for binary models")
    return MaskResponse(
        dataset=DatasetPayload.from_dataset(masked),
        w_prime=ModelPayload.from_params(w_prime, scale),
        scale=scale,
        final_mean_residual=final_mean_residual(masked, w_prime, req.lam),
        warnings=notes,
        diagnostics=diagnostics,
    )


def perturb(req: PerturbRequest) -> DatasetResponse:
    ds, scale = bound_norms(req.dataset.to_dataset(), req.normalize, req.scale)
    out = input_perturbation(ds, req.epsilon, make_rng(req.seed))
    return DatasetResponse(dataset=DatasetPayload.from_dataset(out), scale=scale)


def evaluate(req: EvalRequest) -> EvalResponse:
    ds = req.dataset.to_dataset()
    if req.model.scale is not None:
        ds = ds.replace(features=ds.features / req.model.scale, norm_bounded=False)
    return EvalResponse(accuracy=accuracy(req.model.to_params(), ds), n=ds.n)


def run_sweep(req: SweepConfigModel) -> SweepResponse:
    records = sweep(req.to_config())
    return SweepResponse(records=[SweepRecordModel.from_record(r) for r in records])


def run_bound_check(req: BoundCheckRequest) -> BoundReportModel:
    report = bound_check(req.method, req.config.to_config(), req.delta, req.epsilon, req.n)
    return BoundReportModel.from_report(report)


HANDLERS = {
    "synth": (synth, SynthRequest, DatasetResponse),
    "train": (train_model, TrainRequest, TrainResponse),
    "mask": (mask, MaskRequest, MaskResponse),
    "perturb": (perturb, PerturbRequest, DatasetResponse),
    "eval": (evaluate, EvalRequest, EvalResponse),
    "sweep": (run_sweep, SweepConfigModel, SweepResponse),
    "bound-check": (run_bound_check, BoundCheckRequest, BoundReportModel),
}
