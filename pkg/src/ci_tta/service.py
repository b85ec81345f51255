"""HTTP inference service: one loaded backend, deformation ensembling per request.

The service owns a classifier backend and a default pipeline configuration.
Clients POST an image (base64 float32 pixels plus its shape) to /predict and
may override individual knobs per request. The heavy state (model weights,
config) is loaded once at startup, which is the point of running this as a
long-lived process instead of a one-shot command.
"""

from __future__ import annotations

import time
from dataclasses import asdict, replace

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .errors import InvalidArgumentError
from .inference import Backend, decode_image_payload
from .pipeline import PipelineConfig, infer_one


class PredictRequest(BaseModel):
    shape: list[int] = Field(min_length=3, max_length=3, description="[H, W, C]")
    data: str = Field(description="base64 of row-major float32 LE pixels")
    image_id: int = 0
    n_variants: int | None = None
    sigma: float | None = None
    tau: float | None = None
    kappa: int | None = None
    grid_rows: int | None = None
    grid_cols: int | None = None
    elastic_fraction: float | None = None
    filtering: bool | None = None
    seed: int | None = None


class PredictResponse(BaseModel):
    image_id: int
    predicted_class: int
    confidence: float
    final_probs: list[float]
    retained_count: int
    fallback_used: bool
    per_view_confidences: list[float]
    elapsed_ms: float


class HealthResponse(BaseModel):
    status: str
    model: str


class ConfigResponse(BaseModel):
    model: str
    config: dict


def _override_config(cfg: PipelineConfig, req: PredictRequest) -> PipelineConfig:
    deform_fields = {}
    for name in ("sigma", "kappa", "grid_rows", "grid_cols", "elastic_fraction"):
        value = getattr(req, name)
        if value is not None:
            deform_fields[name] = value
    if deform_fields:
        cfg = replace(cfg, deform=replace(cfg.deform, **deform_fields))
    top_fields = {}
    if req.n_variants is not None:
        top_fields["n_variants"] = req.n_variants
    if req.tau is not None:
        top_fields["tau"] = req.tau
    if req.filtering is not None:
        top_fields["filtering_enabled"] = req.filtering
    if req.seed is not None:
        top_fields["seed"] = req.seed
    if top_fields:
        cfg = replace(cfg, **top_fields)
    return cfg


def create_app(backend: Backend, cfg: PipelineConfig | None = None, model_label: str = "") -> FastAPI:
    base_cfg = cfg if cfg is not None else PipelineConfig()
    app = FastAPI(title="ci-tta", description="Class-invariant test-time augmentation service")

    @app.get("/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        return HealthResponse(status="ok", model=model_label)

    @app.get("/config", response_model=ConfigResponse)
    def config() -> ConfigResponse:
        return ConfigResponse(model=model_label, config=asdict(base_cfg))

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest) -> PredictResponse:
        start = time.perf_counter()
        h, w, c = req.shape
        if min(h, w, c) < 1:
            raise HTTPException(status_code=400, detail=f"bad shape {req.shape}")
        try:
            img = decode_image_payload(req.data, (h, w, c))
            run_cfg = _override_config(base_cfg, req)
        except InvalidArgumentError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        try:
            result = infer_one(img, backend, run_cfg, req.image_id)
        except InvalidArgumentError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        if not result.ok:
            raise HTTPException(status_code=502, detail=result.error)
        decision = result.decision
        return PredictResponse(
            image_id=req.image_id,
            predicted_class=decision.predicted_class,
            confidence=float(np.max(decision.final_probs)),
            final_probs=[float(p) for p in decision.final_probs],
            retained_count=decision.retained_count,
            fallback_used=decision.fallback_used,
            per_view_confidences=[float(v) for v in result.per_view_confidences],
            elapsed_ms=(time.perf_counter() - start) * 1000.0,
        )

    return app
