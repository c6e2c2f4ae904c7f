"""Batch feature export into the engine's binary formats.

For GeM models each image yields ``<id>.fmap``; for cluster models
``<id>.lfeat`` + ``<id>.amat`` (+ ``<id>.ctok`` when a class token exists).
Every image additionally yields ``<id>.refdesc`` holding the reference
model's own global descriptor, so engine-side parity is auditable offline.
A ``model.toml`` profile records the aggregator, exponent, dimensions, and
the tap point the adapter chose.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from attnvpr.tensor_io import (
    AssignmentMatrix,
    FeatureMap,
    LocalFeatures,
    load_manifest,
    write_assignment_matrix,
    write_class_token,
    write_feature_map,
    write_local_features,
)

from .errors import ImageDecodeFailure
from .models import MODEL_SPECS, ClusterTaps, GemTaps, load_model, preprocess

REFDESC_SUFFIX = ".refdesc"


@dataclass(frozen=True)
class ExportJob:
    model_name: str
    manifest_path: str
    out_dir: str
    device: str = "cpu"
    batch_size: int = 4
    image_root: str | None = None

    def __post_init__(self):
        if self.model_name not in MODEL_SPECS:
            raise ValueError(
                f"unknown model {self.model_name!r}; "
                f"supported: {', '.join(sorted(MODEL_SPECS))}"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _load_image(entry, image_root) -> Image.Image:
    path = Path(entry.path)
    if image_root is not None and not path.is_absolute():
        path = Path(image_root) / path
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageDecodeFailure(f"image for id {entry.id!r} unreadable: {exc}") from exc


def _write_taps(taps, image_id: str, out_dir: Path) -> None:
    if isinstance(taps, GemTaps):
        write_feature_map(
            FeatureMap(image_id=image_id, data=taps.feature_map),
            out_dir / f"{image_id}.fmap",
        )
    else:
        write_local_features(
            LocalFeatures(image_id=image_id, columns=taps.local_features),
            out_dir / f"{image_id}.lfeat",
        )
        write_assignment_matrix(
            AssignmentMatrix(image_id=image_id, probs=taps.assignments),
            out_dir / f"{image_id}.amat",
        )
        if taps.class_token is not None:
            write_class_token(taps.class_token, out_dir / f"{image_id}.ctok")
    write_class_token(taps.reference, out_dir / f"{image_id}{REFDESC_SUFFIX}")


def _write_profile(spec, adapter, out_dir: Path) -> None:
    lines = [
        f'model = "{spec.name}"',
        f'aggregator = "{spec.kind}"',
        f"p = {adapter.p if spec.kind == 'gem' else 3.0}",
        'base_weights = "uniform_ones"',
        f"descriptor_dim = {spec.descriptor_dim}",
        'cluster_mode = "blended"',
        f"class_token_dim = {spec.class_token_dim}",
        f'tap_point = "{adapter.tap_point}"',
        f"image_size = {spec.image_size}",
    ]
    (out_dir / "model.toml").write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_features(job: ExportJob, adapter=None) -> list[str]:
    """Run every manifest image through the model and write its tensors.

    Returns the exported image ids in manifest order. An adapter may be
    passed directly (tests, cached models); otherwise the registered model
    is fetched via torch.hub.
    """
    spec = MODEL_SPECS[job.model_name]
    if adapter is None:
        adapter = load_model(job.model_name, device=job.device)
    manifest = load_manifest(job.manifest_path)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    image_root = job.image_root
    if image_root is None:
        image_root = Path(job.manifest_path).parent

    entries = list(manifest)
    exported = []
    for start in range(0, len(entries), job.batch_size):
        chunk = entries[start : start + job.batch_size]
        batch = torch.stack(
            [preprocess(_load_image(e, image_root), spec.image_size) for e in chunk]
        ).to(job.device)
        for entry, taps in zip(chunk, adapter.taps(batch)):
            _write_taps(taps, entry.id, out_dir)
            exported.append(entry.id)

    _write_profile(spec, adapter, out_dir)
    return exported


def read_reference_descriptor(out_dir, image_id: str) -> np.ndarray:
    from attnvpr.tensor_io import read_class_token

    return read_class_token(Path(out_dir) / f"{image_id}{REFDESC_SUFFIX}")
