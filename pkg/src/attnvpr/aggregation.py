"""Global descriptor aggregation with optional attention modulation.

Two aggregator families are supported:

* GeM pooling: per-channel weighted power mean over the spatial grid, with
  the spatial weight map blended toward the attention surface by alpha.
* Cluster aggregation: soft-assignment weighted sums of local features per
  cluster, with the attention value acting as a per-unit magnitude scale.

In both cases alpha = 0 reproduces the unmodulated descriptor and the
reference database side is never modulated (query-side asymmetry).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import AttentionMap, RbfConfig, load_attention_file, rasterize_attention, resample_attention
from .errors import (
    AllZeroWeights,
    DegenerateScale,
    MalformedRow,
    NegativeActivation,
    ShapeMismatch,
    ZeroVector,
)
from .tensor_io import (
    AssignmentMatrix,
    DescriptorDb,
    FeatureMap,
    LocalFeatures,
    Manifest,
    read_assignment_matrix,
    read_feature_map,
    read_local_features,
)

UNIFORM_ONES = "uniform_ones"
ACTIVATION_NORM = "activation_norm"

BLENDED = "blended"
LITERAL_EQ3 = "literal"


@dataclass(frozen=True)
class GemParams:
    p: float = 3.0
    base_weights: str = UNIFORM_ONES

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("pooling exponent p must be >= 1")
        if self.base_weights not in (UNIFORM_ONES, ACTIVATION_NORM):
            raise ValueError(f"unknown base_weights mode {self.base_weights!r}")


@dataclass(frozen=True)
class BlendConfig:
    alpha: float = 0.0
    cluster_mode: str = BLENDED

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.cluster_mode not in (BLENDED, LITERAL_EQ3):
            raise ValueError(f"unknown cluster mode {self.cluster_mode!r}")


def _check_weights(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2:
        raise ShapeMismatch(f"weight map must be H x W, got {weights.shape}")
    if not np.all(np.isfinite(weights)) or weights.min() < 0:
        raise ShapeMismatch("weight map must be finite and nonnegative")
    if weights.sum() <= 0:
        raise AllZeroWeights("weight map sums to zero")
    return weights


def base_weight_map(fm: FeatureMap, mode: str = UNIFORM_ONES) -> np.ndarray:
    """Native spatial weights W_GeM: uniform ones, or per-cell activation norm
    scaled to mean 1 so the neutral attention value 1.0 stays comparable."""
    if mode == UNIFORM_ONES:
        return np.ones((fm.height, fm.width), dtype=np.float64)
    if mode == ACTIVATION_NORM:
        norms = np.linalg.norm(fm.data.astype(np.float64), axis=0)
        mean = norms.mean()
        if mean <= 0:
            return np.ones_like(norms)
        return norms / mean
    raise ValueError(f"unknown base_weights mode {mode!r}")


def blend_weights(base: np.ndarray, attn: AttentionMap, alpha: float) -> np.ndarray:
    """W_final = W_base + alpha * (A - W_base)."""
    base = _check_weights(base)
    if base.shape != attn.values.shape:
        raise ShapeMismatch(f"base {base.shape} vs attention {attn.values.shape}")
    if alpha == 0.0:
        blended = base.copy()
    else:
        blended = base + alpha * (attn.values.astype(np.float64) - base)
    if blended.sum() <= 0:
        raise AllZeroWeights("blended weight map sums to zero")
    return blended


def gem_pool(fm: FeatureMap, params: GemParams, weights: np.ndarray) -> np.ndarray:
    """Weighted generalized-mean pooling, one value per channel (raw, not
    yet L2-normalized)."""
    weights = _check_weights(weights)
    if weights.shape != (fm.height, fm.width):
        raise ShapeMismatch(f"weights {weights.shape} vs feature grid {(fm.height, fm.width)}")
    x = fm.data.astype(np.float64)
    if x.min() < 0:
        raise NegativeActivation("gem_pool requires nonnegative (post-ReLU) activations")
    wsum = weights.sum()
    pooled = np.tensordot(x**params.p, weights, axes=([1, 2], [0, 1])) / wsum
    return pooled ** (1.0 / params.p)


def cluster_aggregate(
    feats: LocalFeatures,
    assign: AssignmentMatrix,
    attn_flat: np.ndarray | None,
    cfg: BlendConfig,
    class_token: np.ndarray | None = None,
) -> np.ndarray:
    """Attention-scaled soft-assignment aggregation, clusters concatenated
    k = 1..K, with an optional class token appended unmodulated."""
    if feats.units != assign.units:
        raise ShapeMismatch(f"{feats.units} feature units vs {assign.units} assignment units")
    n = feats.units
    if attn_flat is None:
        attn_flat = np.ones(n, dtype=np.float64)
    attn_flat = np.asarray(attn_flat, dtype=np.float64).reshape(-1)
    if attn_flat.shape[0] != n:
        raise ShapeMismatch(f"attention has {attn_flat.shape[0]} units, expected {n}")

    if cfg.cluster_mode == LITERAL_EQ3:
        if cfg.alpha == 0.0:
            raise DegenerateScale(
                "literal Eq.-style scaling with alpha=0 yields the zero descriptor; "
                "use the blended mode instead"
            )
        scale = cfg.alpha * attn_flat
    else:
        scale = 1.0 + cfg.alpha * (attn_flat - 1.0)

    scaled = feats.columns.astype(np.float64) * scale  # (D, n)
    per_cluster = scaled @ assign.probs.astype(np.float64).T  # (D, K)
    out = per_cluster.T.reshape(-1)
    if class_token is not None:
        out = np.concatenate([out, np.asarray(class_token, dtype=np.float64).reshape(-1)])
    return out


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ZeroVector("cannot normalize the zero vector")
    return (v / norm).astype(np.float32)


def contribution_map(fm: FeatureMap, weights: np.ndarray, params: GemParams) -> np.ndarray:
    """Per-cell contribution W_ij * sum_c x^p, max-scaled to [0, 1] for
    visualization export."""
    weights = _check_weights(weights)
    if weights.shape != (fm.height, fm.width):
        raise ShapeMismatch(f"weights {weights.shape} vs feature grid {(fm.height, fm.width)}")
    x = fm.data.astype(np.float64)
    if x.min() < 0:
        raise NegativeActivation("contribution_map requires nonnegative activations")
    raw = weights * (x**params.p).sum(axis=0)
    peak = raw.max()
    return raw / peak if peak > 0 else raw


# --- model profiles ---

@dataclass(frozen=True)
class ModelProfile:
    aggregator: str = "gem"  # "gem" or "cluster"
    p: float = 3.0
    base_weights: str = UNIFORM_ONES
    descriptor_dim: int = 0  # 0 = unchecked
    cluster_mode: str = BLENDED
    class_token_dim: int = 0

    def __post_init__(self):
        if self.aggregator not in ("gem", "cluster"):
            raise MalformedRow(f"unknown aggregator {self.aggregator!r}")
        if self.cluster_mode not in (BLENDED, LITERAL_EQ3):
            raise MalformedRow(f"unknown cluster mode {self.cluster_mode!r}")
        GemParams(p=self.p, base_weights=self.base_weights)

    @property
    def gem_params(self) -> GemParams:
        return GemParams(p=self.p, base_weights=self.base_weights)


def load_profile(path) -> ModelProfile:
    """Parse a flat key = value profile file (model.toml style)."""
    fields: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedRow(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value.strip("\"'")
    kwargs = {}
    if "aggregator" in fields:
        kwargs["aggregator"] = fields["aggregator"]
    if "p" in fields:
        kwargs["p"] = float(fields["p"])
    if "base_weights" in fields:
        kwargs["base_weights"] = fields["base_weights"]
    if "descriptor_dim" in fields:
        kwargs["descriptor_dim"] = int(fields["descriptor_dim"])
    if "cluster_mode" in fields:
        kwargs["cluster_mode"] = fields["cluster_mode"]
    if "class_token_dim" in fields:
        kwargs["class_token_dim"] = int(fields["class_token_dim"])
    try:
        return ModelProfile(**kwargs)
    except ValueError as exc:
        raise MalformedRow(f"{path}: {exc}") from exc


def save_profile(profile: ModelProfile, path) -> None:
    lines = [
        f'aggregator = "{profile.aggregator}"',
        f"p = {profile.p}",
        f'base_weights = "{profile.base_weights}"',
        f"descriptor_dim = {profile.descriptor_dim}",
        f'cluster_mode = "{profile.cluster_mode}"',
        f"class_token_dim = {profile.class_token_dim}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- per-image and per-set descriptor computation ---

def describe_image(
    features_dir,
    image_id: str,
    profile: ModelProfile,
    attn_map: AttentionMap | None = None,
    alpha: float = 0.0,
) -> np.ndarray:
    """Compute the L2-normalized global descriptor for one image from its
    on-disk tensors, optionally modulated by a rasterized attention map."""
    features_dir = Path(features_dir)
    fm = read_feature_map(features_dir / f"{image_id}.fmap")
    if profile.aggregator == "gem":
        base = base_weight_map(fm, profile.base_weights)
        if attn_map is not None and alpha > 0.0:
            if attn_map.values.shape != (fm.height, fm.width):
                attn_map = resample_attention(attn_map, fm.height, fm.width)
            weights = blend_weights(base, attn_map, alpha)
        else:
            weights = base
        raw = gem_pool(fm, profile.gem_params, weights)
    else:
        feats = read_local_features(features_dir / f"{image_id}.lfeat")
        assign = read_assignment_matrix(features_dir / f"{image_id}.amat")
        attn_flat = None
        if attn_map is not None:
            if attn_map.values.shape != (fm.height, fm.width):
                attn_map = resample_attention(attn_map, fm.height, fm.width)
            attn_flat = attn_map.values.reshape(-1)
        class_token = None
        ctok_path = features_dir / f"{image_id}.ctok"
        if profile.class_token_dim > 0 and ctok_path.exists():
            from .tensor_io import read_class_token

            class_token = read_class_token(ctok_path)
        cfg = BlendConfig(alpha=alpha, cluster_mode=profile.cluster_mode if alpha > 0 else BLENDED)
        raw = cluster_aggregate(feats, assign, attn_flat, cfg, class_token=class_token)
    return l2_normalize(raw)


def aggregate_set(
    manifest: Manifest,
    features_dir,
    profile: ModelProfile,
    attention_dir=None,
    alpha: float = 0.0,
    rbf: RbfConfig = RbfConfig(),
    threads: int = 1,
) -> DescriptorDb:
    """Aggregate every manifest entry into a DescriptorDb.

    When attention_dir is given, `<id>.attn.json` files are parsed and
    rasterized at each image's feature grid. Thread count never changes the
    result, only wall time.
    """
    features_dir = Path(features_dir)
    attention_dir = Path(attention_dir) if attention_dir is not None else None

    def one(entry):
        attn_map = None
        if attention_dir is not None and alpha > 0.0:
            spec = load_attention_file(attention_dir / f"{entry.id}.attn.json")
            fm = read_feature_map(features_dir / f"{entry.id}.fmap")
            attn_map = rasterize_attention(spec, fm.height, fm.width, rbf)
        return describe_image(features_dir, entry.id, profile, attn_map=attn_map, alpha=alpha)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, manifest.entries))
    else:
        rows = [one(e) for e in manifest.entries]

    rows_arr = np.vstack(rows) if rows else np.zeros((0, max(profile.descriptor_dim, 1)), np.float32)
    return DescriptorDb(
        rows=rows_arr,
        ids=[e.id for e in manifest],
        geotags=[e.geotag for e in manifest],
    )
