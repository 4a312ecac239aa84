"""Quantitative metrics and the benchmark harness.

Metrics operate on the 0-255 pixel scale. FID is not computed in-process;
externally computed values can be merged into the report.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol

import numpy as np

from .errors import CapabilityError, CaseParseError
from .pipeline import edit_generated
from .types import BinaryMask, Box, EditSpec, GuidanceConfig


def by_pixels(original: np.ndarray, edited: np.ndarray, mask: BinaryMask) -> float:
    """Mean absolute out-of-box pixel difference on the 0-255 scale."""
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(edited, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask.shape != a.shape[:2]:
        raise ValueError(f"mask {mask.shape} vs image {a.shape[:2]}")
    keep = (1.0 - mask.data)[..., None]
    return float(np.abs(keep * a - keep * b).mean())


class TextImageEmbedder(Protocol):
    """Adapter that scores masked-image / text similarity."""

    scale: str

    def score(self, image: np.ndarray, text: str) -> float: ...


_COLOR_WORDS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "gray": (0.5, 0.5, 0.5),
}


class ToyColorEmbedder:
    """Bag-of-color embedder: image -> mean RGB, text -> color-word average.

    Words without a color meaning get a deterministic pseudo-random hue so
    arbitrary prompts still score without an external model.
    """

    scale = "cosine_x100"

    def _text_vector(self, text: str) -> np.ndarray:
        vecs = []
        for word in text.lower().split():
            if word in _COLOR_WORDS:
                vecs.append(np.array(_COLOR_WORDS[word]))
            else:
                rng = np.random.default_rng(zlib.crc32(word.encode("utf-8")))
                vecs.append(rng.uniform(size=3))
        if not vecs:
            return np.full(3, 0.5)
        return np.mean(vecs, axis=0)

    def score(self, image: np.ndarray, text: str) -> float:
        img_vec = np.asarray(image, dtype=np.float64).reshape(-1, 3).mean(axis=0)
        txt_vec = self._text_vector(text)
        denom = np.linalg.norm(img_vec) * np.linalg.norm(txt_vec)
        if denom == 0:
            return 0.0
        return float(100.0 * img_vec @ txt_vec / denom)


def clip_score(
    edited: np.ndarray,
    mask: BinaryMask,
    object_word: str,
    embedder: Optional[TextImageEmbedder],
) -> float:
    """Similarity between the masked edited image and the object prompt."""
    if embedder is None:
        raise CapabilityError("no text-image embedder available")
    img = np.asarray(edited, dtype=np.float64)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask {mask.shape} vs image {img.shape[:2]}")
    masked = mask.data[..., None] * img
    return embedder.score(masked, object_word)


@dataclass(frozen=True)
class BenchmarkCase:
    base_prompt: str
    box: Box
    object_prompt: str
    seed: int
    name: str = ""


@dataclass
class MetricReport:
    rows: List[Dict] = field(default_factory=list)
    embedder_scale: Optional[str] = None
    failures: List[Dict] = field(default_factory=list)

    @property
    def case_count(self) -> int:
        return len(self.rows)

    def aggregates(self) -> Dict[str, float]:
        out = {}
        for key in ("by_pixels", "clip_score", "external_fid"):
            vals = [r[key] for r in self.rows if r.get(key) is not None]
            if vals:
                out[f"mean_{key}"] = float(np.mean(vals))
        return out

    def to_record(self) -> Dict:
        return {
            "case_count": self.case_count,
            "embedder_scale": self.embedder_scale,
            "rows": self.rows,
            "aggregates": self.aggregates(),
            "failures": self.failures,
        }

    def summary_text(self) -> str:
        lines = [f"benchmark: {self.case_count} cases"]
        for row in self.rows:
            lines.append(
                f"  {row['name']}: by_pixels={row['by_pixels']:.4f}"
                + (
                    f" clip_score={row['clip_score']:.4f}"
                    if row.get("clip_score") is not None
                    else ""
                )
            )
        for key, val in self.aggregates().items():
            lines.append(f"{key}: {val:.6f}")
        if self.failures:
            lines.append(f"failures: {len(self.failures)}")
        return "\n".join(lines)


def parse_case_file(contents: str) -> Dict:
    """Five-line case format: left, top, width, height, object prompt."""
    lines = [line.strip() for line in contents.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    if len(lines) != 5:
        raise CaseParseError(
            f"expected 5 non-empty lines, got {len(lines)}",
            line=min(len(lines) + 1, 5),
        )
    geometry = []
    for idx, name in enumerate(("left", "top", "width", "height")):
        try:
            geometry.append(int(lines[idx]))
        except ValueError:
            raise CaseParseError(
                f"line {idx + 1} ({name}) is not an integer: {lines[idx]!r}",
                line=idx + 1,
            ) from None
    left, top, width, height = geometry
    if not lines[4]:
        raise CaseParseError("line 5 (object prompt) is empty", line=5)
    try:
        box = Box(top=top, left=left, height=height, width=width)
    except ValueError as exc:
        raise CaseParseError(str(exc), line=1) from None
    return {"box": box, "object_prompt": lines[4]}


def load_case(txt_path: Path) -> BenchmarkCase:
    """One case = NNN.txt (five lines) + NNN.json ({base_prompt, seed})."""
    parsed = parse_case_file(txt_path.read_text())
    manifest_path = txt_path.with_suffix(".json")
    if not manifest_path.exists():
        raise CaseParseError(f"missing companion manifest {manifest_path.name}")
    manifest = json.loads(manifest_path.read_text())
    return BenchmarkCase(
        base_prompt=manifest["base_prompt"],
        box=parsed["box"],
        object_prompt=parsed["object_prompt"],
        seed=int(manifest["seed"]),
        name=txt_path.stem,
    )


def run_benchmark(
    case_dir: Path,
    backend,
    config: GuidanceConfig = None,
    embedder: Optional[TextImageEmbedder] = ToyColorEmbedder(),
    external_fid: Optional[Dict[str, float]] = None,
) -> MetricReport:
    """Regenerate each case's base image, run the edit, score both metrics."""
    case_dir = Path(case_dir)
    txt_files = sorted(case_dir.glob("*.txt"))
    if not txt_files:
        raise CaseParseError(f"no case files in {case_dir}")
    config = config or GuidanceConfig()
    report = MetricReport(embedder_scale=embedder.scale if embedder else None)
    for txt_path in txt_files:
        case = load_case(txt_path)
        try:
            spec = EditSpec(
                base_prompt=case.base_prompt,
                object_prompt=case.object_prompt,
                box=case.box,
                seed=case.seed,
                config=config,
            )
            result = edit_generated(spec, backend)
            image_hw = backend.descriptor().image_size
            mask = case.box.to_mask(image_hw)
            row = {
                "name": case.name,
                "by_pixels": by_pixels(
                    result.base_image * 255.0, result.edited_image * 255.0, mask
                ),
                "clip_score": (
                    clip_score(result.edited_image, mask, case.object_prompt, embedder)
                    if embedder
                    else None
                ),
                "external_fid": (external_fid or {}).get(case.name),
            }
            report.rows.append(row)
        except Exception as exc:  # per-case failures recorded, run continues
            report.failures.append({"name": case.name, "error": str(exc)})
    return report
