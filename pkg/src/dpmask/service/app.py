from __future__ import annotations

from fastapi import FastAPI, HTTPException

from dpmask import __version__
from dpmask.model import ConvergenceError
from dpmask.service import handlers
from dpmask.service.schemas import (
    BoundCheckRequest,
    BoundReportModel,
    DatasetResponse,
    EvalRequest,
    EvalResponse,
    MaskRequest,
    MaskResponse,
    PerturbRequest,
    SweepConfigModel,
    SweepResponse,
    SynthRequest,
    TrainRequest,
    TrainResponse,
)


def _guard(fn, req):
    try:
        return fn(req)
    except ConvergenceError as err:
        raise HTTPException(status_code=422, detail=str(err)) from err
    except (ValueError, OSError) as err:
        raise HTTPException(status_code=400, detail=str(err)) from err


def create_app() -> FastAPI:
    app = FastAPI(title="dpmask", version=__version__)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/synth", response_model=DatasetResponse)
    def synth(req: SynthRequest):
        return _guard(handlers.synth, req)

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest):
        return _guard(handlers.train_model, req)

    @app.post("/mask", response_model=MaskResponse)
    def mask(req: MaskRequest):
        return _guard(handlers.mask, req)

    @app.post("/perturb", response_model=DatasetResponse)
    def perturb(req: PerturbRequest):
        return _guard(handlers.perturb, req)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest):
        return _guard(handlers.evaluate, req)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepConfigModel):
        return _guard(handlers.run_sweep, req)

    @app.post("/bound-check", response_model=BoundReportModel)
    def bound_check(req: BoundCheckRequest):
        return _guard(handlers.run_bound_check, req)

    return app


app = create_app()
