"""Directory-per-job artifact store shared by the CLI and the HTTP service.

Every job owns one directory with a manifest, a state file swapped
atomically, and lossless PNG artifacts; anything the service returns is
reproducible from the manifest alone.
"""

from __future__ import annotations

import json
import os
import time
import uuid
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from PIL import Image

from .backend import make_backend
from .errors import ObjectAddError
from .pipeline import EditResult, generate_base, run_edit
from .types import Box, EditSpec, GuidanceConfig

ARTIFACT_ROOT_ENV = "OBJECTADD_ARTIFACTS"

STATES = ("queued", "running", "done", "failed")


def save_image(path: Path, image: np.ndarray) -> None:
    arr = (np.clip(image, 0.0, 1.0) * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def save_mask(path: Path, mask_data: np.ndarray) -> None:
    Image.fromarray((mask_data * 255).astype(np.uint8)).save(path, format="PNG")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def config_to_dict(cfg: GuidanceConfig) -> Dict:
    out = {}
    for name in GuidanceConfig.__dataclass_fields__:
        val = getattr(cfg, name)
        out[name] = list(val) if isinstance(val, tuple) else val
    return out


def config_from_dict(data: Dict) -> GuidanceConfig:
    fields = GuidanceConfig.__dataclass_fields__
    kwargs = {}
    for key, val in (data or {}).items():
        if key not in fields:
            raise ObjectAddError(f"unknown config key {key!r}")
        if key == "guidance_layers" and val is not None:
            val = tuple(val)
        kwargs[key] = val
    return GuidanceConfig(**kwargs).validate()


class JobStore:
    """Append-only store: one directory per job under the artifact root."""

    def __init__(self, root: Optional[Path] = None):
        root = root or os.environ.get(ARTIFACT_ROOT_ENV) or (Path.cwd() / "artifacts")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def job_dir(self, job_id: str) -> Path:
        return self.root / job_id

    def create(self, kind: str, request: Dict) -> str:
        job_id = uuid.uuid4().hex[:12]
        jd = self.job_dir(job_id)
        jd.mkdir(parents=True)
        _atomic_write(
            jd / "manifest.json",
            json.dumps(
                {"job_id": job_id, "kind": kind, "request": request,
                 "created_at": time.time()},
                indent=2,
            ),
        )
        self.set_state(job_id, "queued")
        return job_id

    def set_state(self, job_id: str, state: str, error: Optional[str] = None) -> None:
        assert state in STATES
        _atomic_write(
            self.job_dir(job_id) / "state.json",
            json.dumps({"state": state, "error": error, "updated_at": time.time()}),
        )

    def get_state(self, job_id: str) -> Dict:
        path = self.job_dir(job_id) / "state.json"
        if not path.exists():
            raise KeyError(job_id)
        return json.loads(path.read_text())

    def get_manifest(self, job_id: str) -> Dict:
        path = self.job_dir(job_id) / "manifest.json"
        if not path.exists():
            raise KeyError(job_id)
        return json.loads(path.read_text())

    def update_manifest(self, job_id: str, extra: Dict) -> None:
        manifest = self.get_manifest(job_id)
        manifest.update(extra)
        _atomic_write(self.job_dir(job_id) / "manifest.json", json.dumps(manifest, indent=2))

    # -- execution --------------------------------------------------------

    def run_generate_job(self, job_id: str) -> None:
        manifest = self.get_manifest(job_id)
        req = manifest["request"]
        self.set_state(job_id, "running")
        try:
            backend = make_backend(req.get("backend", "toy"), req.get("backend_seed", 0))
            cfg = config_from_dict(req.get("config"))
            image, _ = generate_base(req["prompt"], req["seed"], backend, cfg.total_steps)
            jd = self.job_dir(job_id)
            save_image(jd / "base.png", image)
            self.update_manifest(job_id, {
                "backend": backend.to_record(),
                "config": config_to_dict(cfg),
                "artifacts": {"base": "base.png"},
            })
            self.set_state(job_id, "done")
        except Exception as exc:
            self.set_state(job_id, "failed", error=str(exc))

    def run_edit_job(self, job_id: str) -> None:
        manifest = self.get_manifest(job_id)
        req = manifest["request"]
        self.set_state(job_id, "running")
        try:
            backend = make_backend(req.get("backend", "toy"), req.get("backend_seed", 0))
            cfg = config_from_dict(req.get("config"))
            real_image = None
            if req.get("real_object_image"):
                arr = np.asarray(
                    Image.open(self.root / req["real_object_image"]).convert("RGB")
                )
                real_image = arr.astype(np.float64) / 255.0
            spec = EditSpec(
                base_prompt=req["prompt"],
                object_prompt=req["object_prompt"],
                box=Box(**req["box"]),
                seed=req["seed"],
                config=cfg,
                real_object_image=real_image,
            )
            result = run_edit(spec, backend)
            self.write_edit_artifacts(job_id, result, backend, cfg)
            self.set_state(job_id, "done")
        except Exception as exc:
            self.set_state(job_id, "failed", error=str(exc))

    def write_edit_artifacts(
        self, job_id: str, result: EditResult, backend, cfg: GuidanceConfig
    ) -> None:
        jd = self.job_dir(job_id)
        save_image(jd / "base.png", result.base_image)
        save_image(jd / "edited.png", result.edited_image)
        save_mask(jd / "refocused_mask.png", result.refocused_mask.data)
        save_mask(jd / "expanded_mask.png", result.expanded_mask.data)
        _atomic_write(jd / "traces.json", json.dumps(result.traces, indent=2))
        attn = {
            f"{t}_{layer}": row for (t, layer), row in result.attention_rows.items()
        }
        np.savez_compressed(jd / "attention.npz", **attn)
        if result.snapshots:
            np.savez_compressed(jd / "snapshots.npz", **result.snapshots)
        self.update_manifest(job_id, {
            "backend": backend.to_record(),
            "config": config_to_dict(cfg),
            "artifacts": {
                "base": "base.png",
                "edited": "edited.png",
                "refocused_mask": "refocused_mask.png",
                "expanded_mask": "expanded_mask.png",
                "traces": "traces.json",
            },
            "output_hashes": result.output_hashes(),
        })

    def attention_row(self, job_id: str, t: int, layer: int) -> np.ndarray:
        path = self.job_dir(job_id) / "attention.npz"
        if not path.exists():
            raise KeyError(job_id)
        with np.load(path) as data:
            key = f"{t}_{layer}"
            if key not in data:
                raise KeyError(key)
            return data[key]
