"""Sparse attention points -> continuous spatial attention surfaces.

An LLM response is either the literal string "None" (single-landmark scene,
no modulation) or a JSON array of {center, weight, reasoning} points with
normalized coordinates. Points are turned into an H x W surface by Gaussian
RBF evaluation around a neutral baseline of 1.0, then clamped to [0, 2].
"""
from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CoordinateOutOfRange,
    EmptyPointList,
    NonFinite,
    ShapeMismatch,
    UnparseableResponse,
)
from .tensor_io import AMAP_MAGIC, _atomic_write, _pack_block, _read_block

MAX_POINTS = 16
WEIGHT_LO, WEIGHT_HI = 0.0, 2.0


@dataclass(frozen=True)
class AttentionPoint:
    x: float  # normalized [0,1] from left
    y: float  # normalized [0,1] from top
    weight: float  # importance in [0,2]; 1.0 is neutral
    reasoning: str = ""


@dataclass(frozen=True)
class AttentionSpec:
    """Parsed LLM output: single-landmark marker or a list of points."""

    points: tuple[AttentionPoint, ...] = ()
    single_landmark: bool = False

    def __post_init__(self):
        if not self.single_landmark and not 1 <= len(self.points) <= MAX_POINTS:
            raise EmptyPointList(
                f"point list must have 1..{MAX_POINTS} entries, got {len(self.points)}"
            )


@dataclass
class AttentionMap:
    values: np.ndarray  # float32, shape (H, W), each value in [0,2]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeMismatch(f"attention map must be H x W, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFinite("attention map contains NaN/Inf")
        if self.values.min() < WEIGHT_LO or self.values.max() > WEIGHT_HI:
            raise ShapeMismatch("attention map values must lie in [0, 2]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RbfConfig:
    sigma: float = 0.2  # bandwidth in normalized image units
    mode: str = "superposition"  # or "exact"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.mode not in ("superposition", "exact"):
            raise ValueError(f"unknown RBF mode {self.mode!r}")


_NONE_RE = re.compile(r"^\s*[\"']?\s*None\s*[\"']?\s*$")


def parse_attention_points(text: str) -> AttentionSpec:
    """Parse a raw LLM response into an AttentionSpec.

    Weights outside [0, 2] are clamped with a warning; coordinates outside
    [0, 1] are rejected.
    """
    if _NONE_RE.match(text):
        return AttentionSpec(single_landmark=True)
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UnparseableResponse(f"response is neither 'None' nor JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise UnparseableResponse(f"expected a JSON array, got {type(payload).__name__}")
    if not payload:
        raise EmptyPointList("response contains an empty point list")
    points = []
    for i, entry in enumerate(payload):
        if not isinstance(entry, dict) or "center" not in entry or "weight" not in entry:
            raise UnparseableResponse(f"point {i} lacks center/weight keys")
        center = entry["center"]
        if not (isinstance(center, (list, tuple)) and len(center) == 2):
            raise UnparseableResponse(f"point {i} center must be [x, y]")
        try:
            x, y = float(center[0]), float(center[1])
            weight = float(entry["weight"])
        except (TypeError, ValueError) as exc:
            raise UnparseableResponse(f"point {i} has non-numeric fields") from exc
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise CoordinateOutOfRange(f"point {i} center ({x}, {y}) outside [0, 1]^2")
        if weight < WEIGHT_LO or weight > WEIGHT_HI:
            clamped = min(max(weight, WEIGHT_LO), WEIGHT_HI)
            warnings.warn(
                f"point {i} weight {weight} clamped to {clamped}", stacklevel=2
            )
            weight = clamped
        points.append(
            AttentionPoint(x=x, y=y, weight=weight, reasoning=str(entry.get("reasoning", "")))
        )
    return AttentionSpec(points=tuple(points))


def _cell_centers(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    xs = (np.arange(w, dtype=np.float64) + 0.5) / w
    ys = (np.arange(h, dtype=np.float64) + 0.5) / h
    return np.meshgrid(xs, ys)  # each (H, W)


def _kernel(dist_sq: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-dist_sq / (2.0 * sigma * sigma))


def rasterize_attention(spec: AttentionSpec, h: int, w: int, cfg: RbfConfig = RbfConfig()) -> AttentionMap:
    """Evaluate the attention surface at the H x W feature-grid cell centers."""
    if h < 1 or w < 1:
        raise ValueError("grid dimensions must be >= 1")
    if spec.single_landmark:
        return AttentionMap(np.ones((h, w), dtype=np.float32))

    cx = np.array([p.x for p in spec.points])
    cy = np.array([p.y for p in spec.points])
    wts = np.array([p.weight for p in spec.points])

    coeffs = wts - 1.0
    if cfg.mode == "exact":
        dx = cx[:, None] - cx[None, :]
        dy = cy[:, None] - cy[None, :]
        phi = _kernel(dx * dx + dy * dy, cfg.sigma)
        try:
            coeffs = np.linalg.solve(phi, wts - 1.0)
        except np.linalg.LinAlgError:
            warnings.warn(
                "singular RBF kernel (duplicate centers?); falling back to superposition",
                stacklevel=2,
            )
            coeffs = wts - 1.0

    gx, gy = _cell_centers(h, w)
    dist_sq = (gx[..., None] - cx) ** 2 + (gy[..., None] - cy) ** 2  # (H, W, n)
    surface = 1.0 + _kernel(dist_sq, cfg.sigma) @ coeffs
    return AttentionMap(np.clip(surface, WEIGHT_LO, WEIGHT_HI).astype(np.float32))


def resample_attention(amap: AttentionMap, h2: int, w2: int) -> AttentionMap:
    """Bilinear resample at target cell centers, re-clamped to [0, 2]."""
    if h2 < 1 or w2 < 1:
        raise ValueError("target dimensions must be >= 1")
    src = amap.values.astype(np.float64)
    h, w = src.shape
    # target cell centers mapped into source cell-center coordinates
    ty = (np.arange(h2) + 0.5) / h2 * h - 0.5
    tx = (np.arange(w2) + 0.5) / w2 * w - 0.5
    y0 = np.clip(np.floor(ty).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(tx).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ty - y0, 0.0, 1.0)[:, None]
    fx = np.clip(tx - x0, 0.0, 1.0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    out = top * (1 - fy) + bot * fy
    return AttentionMap(np.clip(out, WEIGHT_LO, WEIGHT_HI).astype(np.float32))


# --- optional binary cache for rasterized maps ---

def write_attention_map(amap: AttentionMap, path) -> None:
    _atomic_write(path, _pack_block(AMAP_MAGIC, amap.values.shape, amap.values))


def read_attention_map(path) -> AttentionMap:
    _, grid = _read_block(path, AMAP_MAGIC, 2)
    return AttentionMap(grid)


def load_attention_file(path) -> AttentionSpec:
    """Read a `<id>.attn.json` file (JSON array or the literal "None")."""
    return parse_attention_points(Path(path).read_text(encoding="utf-8"))
