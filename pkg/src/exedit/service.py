"""HTTP edit service: one checkpoint loaded at startup, edits served over JSON.

Images travel as base64-encoded 8-bit PNGs. Inference runs on a bounded worker
pool with a bounded queue; overflow is rejected with 429. Errors are reported
as ``{"error": str, "field": str?}``.
"""

from __future__ import annotations

import threading
import time
from typing import Callable, Optional

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .errors import ParameterError
from .imgio import decode_base64_png, encode_base64_png, from_uint8, gray_to_mask, to_uint8
from .masks import mask_is_connected
from .sampling import GuidanceConfig, edit_image
from .training import EditModel, load_edit_model

DEFAULT_MAX_SIDE = 128
DEFAULT_SCALE = 5.0
DEFAULT_STEPS = 50


class EditRequest(BaseModel):
    source: str
    mask: str
    reference: str
    scale: float = Field(default=DEFAULT_SCALE, ge=0)
    steps: int = Field(default=DEFAULT_STEPS, ge=1)
    seed: int = 0


class EditResponse(BaseModel):
    result: str
    timing_ms: float
    model_id: str


def _error(status: int, message: str, field: Optional[str] = None) -> JSONResponse:
    body: dict = {"error": message}
    if field:
        body["field"] = field
    return JSONResponse(status_code=status, content=body)


def create_app(
    model_path=None,
    model: Optional[EditModel] = None,
    loader: Optional[Callable[[], EditModel]] = None,
    max_side: int = DEFAULT_MAX_SIDE,
    workers: int = 1,
    queue_size: int = 4,
    static_dir=None,
) -> FastAPI:
    """Build the service app.

    Exactly one of `model`, `model_path`, or `loader` supplies the checkpoint;
    path/loader variants load in a background thread while the API reports 503.
    """
    app = FastAPI(title="exedit service")
    app.state.model = model
    app.state.max_side = max_side
    # slots bounds admission (active + queued); workers serializes inference.
    app.state.slots = threading.BoundedSemaphore(workers + queue_size)
    app.state.workers = threading.BoundedSemaphore(workers)

    if model is None:
        load_fn = loader if loader is not None else (
            (lambda: load_edit_model(model_path)) if model_path else None
        )
        if load_fn is None:
            raise ParameterError("create_app needs a model, model_path, or loader")

        def _load():
            app.state.model = load_fn()

        threading.Thread(target=_load, daemon=True).start()

    @app.exception_handler(RequestValidationError)
    async def _on_validation_error(request, exc):
        first = exc.errors()[0]
        loc = [str(part) for part in first.get("loc", []) if part != "body"]
        return _error(422, first.get("msg", "invalid request"), loc[-1] if loc else None)

    @app.get("/api/health")
    def health():
        if app.state.model is None:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {"status": "ok", "model": app.state.model.model_id}

    @app.get("/api/config")
    def config():
        m = app.state.model
        if m is None:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {
            "max_side": app.state.max_side,
            "default_scale": DEFAULT_SCALE,
            "default_steps": DEFAULT_STEPS,
            "min_steps": 1,
            "max_steps": m.schedule.T,
        }

    @app.post("/api/edit", response_model=EditResponse)
    def edit(req: EditRequest):
        m = app.state.model
        if m is None:
            return _error(503, "model is loading")
        if not app.state.slots.acquire(blocking=False):
            return _error(429, "too many pending requests")
        try:
            with app.state.workers:
                return _run_edit(app, m, req)
        finally:
            app.state.slots.release()

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def _run_edit(app: FastAPI, model: EditModel, req: EditRequest):
    started = time.perf_counter()
    try:
        source_u8 = decode_base64_png(req.source, field="source")
    except ParameterError as exc:
        return _error(400, str(exc), "source")
    try:
        mask_gray = decode_base64_png(req.mask, field="mask")
    except ParameterError as exc:
        return _error(400, str(exc), "mask")
    try:
        reference_u8 = decode_base64_png(req.reference, field="reference")
    except ParameterError as exc:
        return _error(400, str(exc), "reference")

    if source_u8.ndim != 3:
        return _error(400, "source must be an RGB image", "source")
    if reference_u8.ndim != 3:
        return _error(400, "reference must be an RGB image", "reference")
    mask = gray_to_mask(mask_gray)
    if mask.shape != source_u8.shape[:2]:
        return _error(
            400,
            f"mask dimensions {mask.shape} do not match source {source_u8.shape[:2]}",
            "mask",
        )
    if max(source_u8.shape[:2]) > app.state.max_side:
        return _error(
            422,
            f"source side {max(source_u8.shape[:2])} exceeds max_side {app.state.max_side}",
            "source",
        )
    if min(source_u8.shape[:2]) < 8 or min(reference_u8.shape[:2]) < 8:
        return _error(422, "images must be at least 8x8", None)
    if req.steps > model.schedule.T:
        return _error(422, f"steps must be <= {model.schedule.T}", "steps")

    if mask.sum() == 0:
        # Nothing to edit: echo the decoded source pixels.
        result = encode_base64_png(source_u8)
        return EditResponse(
            result=result,
            timing_ms=(time.perf_counter() - started) * 1000.0,
            model_id=model.model_id,
        )
    if not mask_is_connected(mask):
        return _error(422, "mask 1-region must be 4-connected", "mask")

    source = from_uint8(source_u8)
    reference = from_uint8(reference_u8)
    g = GuidanceConfig(scale=req.scale, num_steps=req.steps, seed=req.seed)
    try:
        out = edit_image(model, source, mask, reference, g)
    except ParameterError as exc:
        return _error(422, str(exc), None)

    # Composite in 8-bit space: unmasked bytes equal the uploaded source exactly.
    out_u8 = to_uint8(out)
    out_u8[mask == 0] = source_u8[mask == 0]
    return EditResponse(
        result=encode_base64_png(out_u8),
        timing_ms=(time.perf_counter() - started) * 1000.0,
        model_id=model.model_id,
    )
