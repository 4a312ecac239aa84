"""Command-line interface.

Exit codes: 2 config/usage error, 3 backend error, 4 segmentation error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from .backend import make_backend
from .errors import (
    CapabilityError,
    CaseParseError,
    ConfigError,
    ObjectAddError,
    SegmentationError,
    StageError,
    TerminalStateError,
)
from .evaluation import parse_case_file, run_benchmark
from .jobs import JobStore, config_from_dict, config_to_dict, save_image, save_mask
from .pipeline import EditResult, generate_base, run_edit
from .types import Box, EditSpec

EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_SEGMENTATION = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_config_file(path: Path) -> dict:
    """key = value lines mirroring the config field names; '#' comments."""
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if val.lower() in ("true", "false"):
            out[key] = val.lower() == "true"
        elif val.lower() in ("none", "null"):
            out[key] = None
        else:
            try:
                out[key] = int(val)
            except ValueError:
                try:
                    out[key] = float(val)
                except ValueError:
                    out[key] = val
    return out


def _load_config(config_path):
    data = _parse_config_file(Path(config_path)) if config_path else {}
    return config_from_dict(data)


def _write_edit_outputs(out_dir: Path, result: EditResult, backend, cfg, request: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    save_image(out_dir / "base.png", result.base_image)
    save_image(out_dir / "edited.png", result.edited_image)
    save_mask(out_dir / "refocused_mask.png", result.refocused_mask.data)
    save_mask(out_dir / "expanded_mask.png", result.expanded_mask.data)
    (out_dir / "traces.json").write_text(json.dumps(result.traces, indent=2))
    manifest = {
        "request": request,
        "backend": backend.to_record(),
        "config": config_to_dict(cfg),
        "output_hashes": result.output_hashes(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _run_edit_command(prompt, seed, box, object_prompt, cfg, backend, out, real_image=None):
    try:
        spec = EditSpec(
            base_prompt=prompt,
            object_prompt=object_prompt,
            box=box,
            seed=seed,
            config=cfg,
            real_object_image=real_image,
        )
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        result = run_edit(spec, backend)
    except StageError as exc:
        if exc.stage in ("spec",):
            _fail(EXIT_CONFIG, str(exc))
        if exc.stage == "segmentation":
            _fail(EXIT_SEGMENTATION, str(exc))
        _fail(EXIT_BACKEND, str(exc))
    except SegmentationError as exc:
        _fail(EXIT_SEGMENTATION, str(exc))
    except (CapabilityError, TerminalStateError) as exc:
        _fail(EXIT_BACKEND, str(exc))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    request = {
        "prompt": prompt,
        "seed": seed,
        "object_prompt": object_prompt,
        "box": {"top": box.top, "left": box.left, "height": box.height, "width": box.width},
        "backend": backend.to_record(),
    }
    _write_edit_outputs(Path(out), result, backend, cfg, request)
    click.echo(f"edited image written to {Path(out) / 'edited.png'}")


def _parse_box(box_str: str) -> Box:
    try:
        x, y, w, h = (int(part) for part in box_str.split(","))
        return Box(top=y, left=x, height=h, width=w)
    except ValueError as exc:
        raise ConfigError(f"bad --box {box_str!r}: {exc}") from None


@click.group()
def main():
    """Box-guided object insertion for diffusion images."""


@main.command()
@click.option("--prompt", required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--backend", "backend_kind", default="toy", show_default=True)
@click.option("--backend-seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def generate(prompt, seed, backend_kind, backend_seed, config_path, out):
    """Generate a base image and its trajectory manifest."""
    try:
        cfg = _load_config(config_path)
        backend = make_backend(backend_kind, backend_seed)
    except (ConfigError, ObjectAddError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        image, _ = generate_base(prompt, seed, backend, cfg.total_steps)
    except ObjectAddError as exc:
        _fail(EXIT_BACKEND, str(exc))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_image(out_dir / "base.png", image)
    manifest = {
        "request": {"prompt": prompt, "seed": seed},
        "backend": backend.to_record(),
        "config": config_to_dict(cfg),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(f"base image written to {out_dir / 'base.png'}")


def _resolve_base(prompt, seed, base_manifest):
    if base_manifest:
        data = json.loads(Path(base_manifest).read_text())
        return data["request"]["prompt"], data["request"]["seed"]
    if prompt is None or seed is None:
        raise ConfigError("provide --prompt/--seed or --base-manifest")
    return prompt, seed


@main.command()
@click.option("--prompt")
@click.option("--seed", type=int)
@click.option("--base-manifest", type=click.Path(exists=True))
@click.option("--box", "box_str", help="x,y,w,h in image pixels")
@click.option("--case-file", type=click.Path(exists=True))
@click.option("--object", "object_prompt", help='e.g. "A hat"')
@click.option("--backend", "backend_kind", default="toy", show_default=True)
@click.option("--backend-seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def edit(prompt, seed, base_manifest, box_str, case_file, object_prompt,
         backend_kind, backend_seed, config_path, out):
    """Add an object into a box of a generated image."""
    try:
        cfg = _load_config(config_path)
        backend = make_backend(backend_kind, backend_seed)
        prompt, seed = _resolve_base(prompt, seed, base_manifest)
        if case_file:
            parsed = parse_case_file(Path(case_file).read_text())
            box, object_prompt = parsed["box"], parsed["object_prompt"]
        else:
            if not box_str or not object_prompt:
                raise ConfigError("provide --box and --object, or --case-file")
            box = _parse_box(box_str)
    except CaseParseError as exc:
        _fail(EXIT_CONFIG, f"case file line {exc.line}: {exc}")
    except (ConfigError, ObjectAddError, KeyError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    _run_edit_command(prompt, seed, box, object_prompt, cfg, backend, out)


@main.command("edit-real")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--prompt")
@click.option("--seed", type=int)
@click.option("--base-manifest", type=click.Path(exists=True))
@click.option("--box", "box_str", help="x,y,w,h in image pixels")
@click.option("--case-file", type=click.Path(exists=True))
@click.option("--object", "object_prompt")
@click.option("--backend", "backend_kind", default="toy", show_default=True)
@click.option("--backend-seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def edit_real(image_path, prompt, seed, base_manifest, box_str, case_file,
              object_prompt, backend_kind, backend_seed, config_path, out):
    """Insert a user-supplied (white-background) object image into the box."""
    try:
        cfg = _load_config(config_path)
        backend = make_backend(backend_kind, backend_seed)
        prompt, seed = _resolve_base(prompt, seed, base_manifest)
        if case_file:
            parsed = parse_case_file(Path(case_file).read_text())
            box, object_prompt = parsed["box"], parsed["object_prompt"]
        else:
            if not box_str or not object_prompt:
                raise ConfigError("provide --box and --object, or --case-file")
            box = _parse_box(box_str)
    except CaseParseError as exc:
        _fail(EXIT_CONFIG, f"case file line {exc.line}: {exc}")
    except (ConfigError, ObjectAddError, KeyError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    real = np.asarray(Image.open(image_path).convert("RGB")).astype(np.float64) / 255.0
    _run_edit_command(prompt, seed, box, object_prompt, cfg, backend, out, real_image=real)


@main.command("eval")
@click.option("--cases", "cases_dir", required=True, type=click.Path())
@click.option("--backend", "backend_kind", default="toy", show_default=True)
@click.option("--backend-seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--external-fid", "fid_path", type=click.Path(exists=True),
              help="JSON file {case_name: fid} merged into the report")
@click.option("--report", "report_path", required=True, type=click.Path())
def evaluate(cases_dir, backend_kind, backend_seed, config_path, fid_path, report_path):
    """Run the benchmark over a case directory and write the metric report."""
    try:
        cfg = _load_config(config_path)
        backend = make_backend(backend_kind, backend_seed)
        external_fid = json.loads(Path(fid_path).read_text()) if fid_path else None
        report = run_benchmark(Path(cases_dir), backend, cfg, external_fid=external_fid)
    except CaseParseError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except ObjectAddError as exc:
        _fail(EXIT_BACKEND, str(exc))
    Path(report_path).write_text(json.dumps(report.to_record(), indent=2))
    click.echo(report.summary_text())


@main.command()
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--backend", "backend_kind", default="toy", show_default=True)
@click.option("--backend-seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=2, show_default=True)
@click.option("--artifact-root", type=click.Path())
def serve(port, host, backend_kind, backend_seed, workers, artifact_root):
    """Run the local HTTP service."""
    import uvicorn

    from .server import create_app

    store = JobStore(Path(artifact_root) if artifact_root else None)
    app = create_app(store, backend_kind, backend_seed, workers)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
