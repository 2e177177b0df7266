"""HTTP scoring service.

Wire protocol: POST /score {"prev": str, "cand": str} -> {"score": float in
[0, 1]} (clamped server-side); GET /healthz -> 503 until the model is loaded,
then 200 with the model fingerprint. Schema violations return 400.
"""

from __future__ import annotations

import logging
from contextlib import asynccontextmanager
from pathlib import Path

import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .model import ScoreModel

log = logging.getLogger(__name__)


class ScoreRequest(BaseModel):
    prev: str
    cand: str


def create_app(model_dir: str | Path) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.model = ScoreModel.load(model_dir)
        log.info("model loaded (fingerprint %s)", app.state.model.fingerprint())
        yield

    app = FastAPI(lifespan=lifespan)
    app.state.model = None

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/healthz")
    async def healthz():
        model = app.state.model
        if model is None:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {"status": "ok", "fingerprint": model.fingerprint()}

    @app.post("/score")
    async def score(body: ScoreRequest):
        model = app.state.model
        if model is None:
            return JSONResponse(status_code=503, content={"error": "model not loaded"})
        raw = model.score_pair(body.prev, body.cand)
        return {"score": min(1.0, max(0.0, raw))}

    return app


def serve(model_dir: str | Path, port: int, host: str = "127.0.0.1") -> None:
    uvicorn.run(create_app(model_dir), host=host, port=port, log_level="warning")
