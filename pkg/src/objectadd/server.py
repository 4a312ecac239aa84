"""Local HTTP service exposing the pipeline to scripts and the frontend."""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, Response
from PIL import Image
from pydantic import BaseModel, Field

from .backend import make_backend
from .jobs import JobStore


class BoxModel(BaseModel):
    top: int = Field(ge=0)
    left: int = Field(ge=0)
    height: int = Field(gt=0)
    width: int = Field(gt=0)


class GenerateRequest(BaseModel):
    prompt: str
    seed: int = 0
    config: Optional[Dict] = None


class EditRequest(BaseModel):
    prompt: Optional[str] = None
    seed: Optional[int] = None
    base_job_id: Optional[str] = None
    box: BoxModel
    object_prompt: str
    config: Optional[Dict] = None


def create_app(
    store: Optional[JobStore] = None,
    backend_kind: str = "toy",
    backend_seed: int = 0,
    workers: int = 2,
) -> FastAPI:
    store = store or JobStore()
    executor = ThreadPoolExecutor(max_workers=workers)
    app = FastAPI(title="objectadd")
    app.state.store = store

    def job_view(job_id: str) -> Dict:
        try:
            state = store.get_state(job_id)
            manifest = store.get_manifest(job_id)
        except KeyError:
            raise HTTPException(404, f"unknown job {job_id}")
        artifacts = {
            name: f"/api/images/{job_id}.{name}"
            for name in (manifest.get("artifacts") or {})
            if name != "traces"
        }
        return {
            "job_id": job_id,
            "state": state["state"],
            "error": state.get("error"),
            "artifacts": artifacts,
            "manifest": manifest,
        }

    def validate_box(box: BoxModel, backend_kind: str, backend_seed: int):
        desc = make_backend(backend_kind, backend_seed).descriptor()
        h, w = desc.image_size
        if box.top + box.height > h or box.left + box.width > w:
            raise HTTPException(
                422,
                detail=[{
                    "loc": ["body", "box"],
                    "msg": f"box exceeds image bounds {h}x{w}",
                    "type": "value_error.box_bounds",
                }],
            )

    @app.post("/api/generate")
    def generate(req: GenerateRequest):
        request = {
            "prompt": req.prompt,
            "seed": req.seed,
            "backend": backend_kind,
            "backend_seed": backend_seed,
            "config": req.config,
        }
        job_id = store.create("generate", request)
        executor.submit(store.run_generate_job, job_id)
        return job_view(job_id)

    @app.post("/api/edits")
    def edit(req: EditRequest):
        prompt, seed = req.prompt, req.seed
        if req.base_job_id:
            try:
                base = store.get_manifest(req.base_job_id)
            except KeyError:
                raise HTTPException(404, f"unknown job {req.base_job_id}")
            prompt = base["request"]["prompt"]
            seed = base["request"]["seed"]
        if prompt is None or seed is None:
            raise HTTPException(
                422,
                detail=[{
                    "loc": ["body", "prompt"],
                    "msg": "either base_job_id or prompt+seed is required",
                    "type": "value_error.missing",
                }],
            )
        validate_box(req.box, backend_kind, backend_seed)
        request = {
            "prompt": prompt,
            "seed": seed,
            "object_prompt": req.object_prompt,
            "box": req.box.model_dump(),
            "backend": backend_kind,
            "backend_seed": backend_seed,
            "config": req.config,
        }
        job_id = store.create("edit", request)
        executor.submit(store.run_edit_job, job_id)
        return job_view(job_id)

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        return job_view(job_id)

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        if "." not in image_id:
            raise HTTPException(404, f"unknown image {image_id}")
        job_id, name = image_id.split(".", 1)
        try:
            manifest = store.get_manifest(job_id)
        except KeyError:
            raise HTTPException(404, f"unknown job {job_id}")
        rel = (manifest.get("artifacts") or {}).get(name)
        if rel is None:
            raise HTTPException(404, f"unknown artifact {name}")
        path = store.job_dir(job_id) / rel
        if not path.exists():
            raise HTTPException(404, f"artifact {name} not materialized")
        media = "application/json" if rel.endswith(".json") else "image/png"
        return FileResponse(path, media_type=media)

    @app.get("/api/jobs/{job_id}/attention/{t}/{layer}")
    def get_attention(job_id: str, t: int, layer: int):
        try:
            row = store.attention_row(job_id, t, layer)
        except KeyError:
            raise HTTPException(404, f"no attention map for t={t} layer={layer}")
        lo, hi = float(row.min()), float(row.max())
        norm = (row - lo) / (hi - lo) if hi > lo else np.zeros_like(row)
        buf = io.BytesIO()
        Image.fromarray((norm * 255).astype(np.uint8), mode="L").save(buf, "PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.get("/api/jobs/{job_id}/masks")
    def get_masks(job_id: str):
        view = job_view(job_id)
        if view["state"] != "done":
            raise HTTPException(404, f"job {job_id} has no masks yet")
        out = {"job_id": job_id, "manifest": view["manifest"]}
        for name in ("refocused_mask", "expanded_mask"):
            path = store.job_dir(job_id) / f"{name}.png"
            if path.exists():
                arr = np.asarray(Image.open(path)) > 127
                out[name] = arr.astype(int).tolist()
                out[f"{name}_image"] = f"/api/images/{job_id}.{name}"
        return out

    frontend_dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if frontend_dist.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dist, html=True), name="ui")

    return app
