"""Binary tensor formats and manifest CSV shared with the feature exporter.

All payloads are little-endian float32. Each format starts with a 5-byte
magic, followed by unsigned 32-bit shape fields, followed by the raw grid.
Writers are atomic (temp file + rename) so a failed write never leaves a
partial artifact behind.
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CoordinateOutOfRange,
    DimMismatch,
    DuplicateId,
    IoFailure,
    MalformedRow,
    NonFinite,
    NormViolation,
    ShapeMismatch,
)

FMAP_MAGIC = b"FMAP1"
AMAT_MAGIC = b"AMAT1"
LFEAT_MAGIC = b"LFT1\0"
VDB_MAGIC = b"VDB1\0"
AMAP_MAGIC = b"AMP1\0"

_U32 = struct.Struct("<I")


@dataclass
class FeatureMap:
    """Dense C x H x W activation grid for one image."""

    image_id: str
    data: np.ndarray  # float32, shape (C, H, W)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ShapeMismatch(f"feature map must be C x H x W, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFinite(f"feature map {self.image_id!r} contains NaN/Inf")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class AssignmentMatrix:
    """Soft cluster assignment probabilities, K clusters x n spatial units."""

    image_id: str
    probs: np.ndarray  # float32, shape (K, n)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float32)
        if self.probs.ndim != 2:
            raise ShapeMismatch(f"assignment matrix must be K x n, got {self.probs.shape}")
        if not np.all(np.isfinite(self.probs)):
            raise NonFinite(f"assignment matrix {self.image_id!r} contains NaN/Inf")
        if self.probs.min() < -1e-6 or self.probs.max() > 1 + 1e-6:
            raise ShapeMismatch("assignment probabilities must lie in [0, 1]")
        col_sums = self.probs.sum(axis=0)
        if np.any(np.abs(col_sums - 1.0) > 1e-4):
            raise ShapeMismatch("assignment columns must sum to 1 within 1e-4")

    @property
    def clusters(self) -> int:
        return self.probs.shape[0]

    @property
    def units(self) -> int:
        return self.probs.shape[1]


@dataclass
class LocalFeatures:
    """Per-unit local feature columns, D x n."""

    image_id: str
    columns: np.ndarray  # float32, shape (D, n)

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=np.float32)
        if self.columns.ndim != 2:
            raise ShapeMismatch(f"local features must be D x n, got {self.columns.shape}")
        if not np.all(np.isfinite(self.columns)):
            raise NonFinite(f"local features {self.image_id!r} contain NaN/Inf")

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def units(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class GeoTag:
    lat: float
    lon: float


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    lat: float
    lon: float

    @property
    def geotag(self) -> GeoTag:
        return GeoTag(self.lat, self.lon)


@dataclass
class Manifest:
    """Ordered image-id -> path + WGS84 ground truth, with O(1) id lookup."""

    entries: list[ManifestEntry]
    _by_id: dict[str, ManifestEntry] = field(init=False, repr=False)

    def __post_init__(self):
        by_id: dict[str, ManifestEntry] = {}
        for e in self.entries:
            if e.id in by_id:
                raise DuplicateId(f"duplicate manifest id {e.id!r}")
            if not -90.0 <= e.lat <= 90.0:
                raise CoordinateOutOfRange(f"latitude {e.lat} out of [-90, 90] for id {e.id!r}")
            if not -180.0 <= e.lon <= 180.0:
                raise CoordinateOutOfRange(f"longitude {e.lon} out of [-180, 180] for id {e.id!r}")
            by_id[e.id] = e
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    def get(self, image_id: str) -> ManifestEntry:
        return self._by_id[image_id]

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]


@dataclass
class DescriptorDb:
    """L2-normalized descriptor rows with parallel ids and geotags."""

    rows: np.ndarray  # float32, shape (N, dim)
    ids: list[str]
    geotags: list[GeoTag]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2:
            raise ShapeMismatch(f"descriptor rows must be N x dim, got {self.rows.shape}")
        n = self.rows.shape[0]
        if len(self.ids) != n or len(self.geotags) != n:
            raise ShapeMismatch("ids/geotags length must match descriptor row count")
        if len(set(self.ids)) != n:
            raise DuplicateId("descriptor db ids must be unique")
        if n > 0:
            norms = np.linalg.norm(self.rows.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > 1e-5
            if np.any(bad):
                idx = int(np.argmax(bad))
                raise NormViolation(
                    f"row {self.ids[idx]!r} has norm {norms[idx]:.6f}, expected 1.0 +/- 1e-5"
                )

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


# --- low-level helpers ---

def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _pack_block(magic: bytes, shape: tuple[int, ...], grid: np.ndarray) -> bytes:
    header = magic + b"".join(_U32.pack(s) for s in shape)
    return header + np.ascontiguousarray(grid, dtype="<f4").tobytes()


def _read_block(path, magic: bytes, n_dims: int) -> tuple[tuple[int, ...], np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if blob[: len(magic)] != magic:
        raise BadMagic(f"{path} does not start with magic {magic!r}")
    offset = len(magic)
    shape = []
    for _ in range(n_dims):
        if offset + 4 > len(blob):
            raise ShapeMismatch(f"{path}: truncated header")
        shape.append(_U32.unpack_from(blob, offset)[0])
        offset += 4
    shape = tuple(shape)
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    payload = blob[offset:]
    if len(payload) != expected:
        raise ShapeMismatch(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    grid = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return shape, grid


# --- feature maps ---

def write_feature_map(fm: FeatureMap, path) -> None:
    if not np.all(np.isfinite(fm.data)):
        raise NonFinite(f"feature map {fm.image_id!r} contains NaN/Inf; nothing written")
    _atomic_write(path, _pack_block(FMAP_MAGIC, fm.data.shape, fm.data))


def read_feature_map(path) -> FeatureMap:
    path = Path(path)
    shape, grid = _read_block(path, FMAP_MAGIC, 3)
    if not np.all(np.isfinite(grid)):
        raise NonFinite(f"{path} contains NaN/Inf values")
    image_id = path.name.removesuffix(".fmap")
    return FeatureMap(image_id=image_id, data=grid)


# --- assignment matrices / local features ---

def write_assignment_matrix(am: AssignmentMatrix, path) -> None:
    _atomic_write(path, _pack_block(AMAT_MAGIC, am.probs.shape, am.probs))


def read_assignment_matrix(path) -> AssignmentMatrix:
    path = Path(path)
    _, grid = _read_block(path, AMAT_MAGIC, 2)
    return AssignmentMatrix(image_id=path.name.removesuffix(".amat"), probs=grid)


def write_local_features(lf: LocalFeatures, path) -> None:
    _atomic_write(path, _pack_block(LFEAT_MAGIC, lf.columns.shape, lf.columns))


def read_local_features(path) -> LocalFeatures:
    path = Path(path)
    _, grid = _read_block(path, LFEAT_MAGIC, 2)
    return LocalFeatures(image_id=path.name.removesuffix(".lfeat"), columns=grid)


# --- manifest CSV ---

def load_manifest(path) -> Manifest:
    path = Path(path)
    entries = []
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["id", "path", "lat", "lon"]:
                raise MalformedRow(f"{path}: expected header id,path,lat,lon, got {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 4:
                    raise MalformedRow(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
                try:
                    lat, lon = float(row[2]), float(row[3])
                except ValueError as exc:
                    raise MalformedRow(f"{path}:{lineno}: bad coordinate {exc}") from exc
                entries.append(ManifestEntry(id=row[0], path=row[1], lat=lat, lon=lon))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return Manifest(entries=entries)


def save_manifest(manifest: Manifest, path) -> None:
    lines = ["id,path,lat,lon"]
    for e in manifest:
        lines.append(f"{e.id},{e.path},{e.lat!r},{e.lon!r}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


# --- descriptor databases ---

def write_db(db: DescriptorDb, path) -> None:
    path = Path(path)
    _atomic_write(path, _pack_block(VDB_MAGIC, db.rows.shape, db.rows))
    meta = Manifest(
        entries=[
            ManifestEntry(id=i, path="", lat=g.lat, lon=g.lon)
            for i, g in zip(db.ids, db.geotags)
        ]
    )
    save_manifest(meta, str(path) + ".meta.csv")


CTOK_MAGIC = b"CTK1\0"


def write_class_token(vec: np.ndarray, path) -> None:
    vec = np.asarray(vec, dtype=np.float32).reshape(-1)
    _atomic_write(path, _pack_block(CTOK_MAGIC, vec.shape, vec))


def read_class_token(path) -> np.ndarray:
    _, vec = _read_block(path, CTOK_MAGIC, 1)
    return vec


def read_db(path) -> DescriptorDb:
    path = Path(path)
    (n, dim), rows = _read_block(path, VDB_MAGIC, 2)
    meta = load_manifest(str(path) + ".meta.csv")
    if len(meta) != n:
        raise DimMismatch(f"{path}: {n} rows but {len(meta)} sidecar manifest entries")
    return DescriptorDb(
        rows=rows,
        ids=[e.id for e in meta],
        geotags=[e.geotag for e in meta],
    )
