"""FastAPI application exposing the pipeline as path-based batch endpoints.

The service shares a filesystem with its clients: requests carry input and
output paths, results land on disk, and responses summarize them. Input
contract violations map to HTTP 400, internal invariant failures to 500.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import InputError, PrlkitError
from . import handlers, schemas


def _guard(fn, req):
    try:
        return fn(req)
    except InputError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except PrlkitError as exc:
        raise HTTPException(status_code=500, detail=str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(
        title="prlkit",
        description="Paramagnetic rim lesion detection pipeline",
        version=__version__,
    )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/prep", response_model=schemas.PrepResponse)
    def prep(req: schemas.PrepRequest) -> schemas.PrepResponse:
        return _guard(handlers.handle_prep, req)

    @app.post("/detect", response_model=schemas.DetectResponse)
    def detect(req: schemas.DetectRequest) -> schemas.DetectResponse:
        return _guard(handlers.handle_detect, req)

    @app.post("/tune", response_model=schemas.TuneResponse)
    def tune(req: schemas.TuneRequest) -> schemas.TuneResponse:
        return _guard(handlers.handle_tune, req)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest) -> schemas.EvalResponse:
        return _guard(handlers.handle_eval, req)

    @app.post("/phantom", response_model=schemas.PhantomResponse)
    def phantom(req: schemas.PhantomRequest) -> schemas.PhantomResponse:
        return _guard(handlers.handle_phantom, req)

    return app


app = create_app()
