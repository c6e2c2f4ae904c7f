"""attnvpr: LLM-attention-modulated descriptor aggregation and retrieval
evaluation for visual place recognition pipelines."""

from .aggregation import (
    BlendConfig,
    GemParams,
    ModelProfile,
    blend_weights,
    cluster_aggregate,
    contribution_map,
    gem_pool,
    l2_normalize,
)
from .attention import (
    AttentionMap,
    AttentionPoint,
    AttentionSpec,
    RbfConfig,
    parse_attention_points,
    rasterize_attention,
    resample_attention,
)
from .geo_eval import EvalConfig, RecallReport, SweepReport, alpha_sweep, haversine, recall_at_n
from .retrieval import QeConfig, RankedList, build_index, query_expand, search
from .tensor_io import (
    AssignmentMatrix,
    DescriptorDb,
    FeatureMap,
    GeoTag,
    LocalFeatures,
    Manifest,
    ManifestEntry,
    load_manifest,
    read_db,
    read_feature_map,
    write_db,
    write_feature_map,
)

__version__ = "0.1.0"

__all__ = [
    "AssignmentMatrix",
    "AttentionMap",
    "AttentionPoint",
    "AttentionSpec",
    "BlendConfig",
    "DescriptorDb",
    "EvalConfig",
    "FeatureMap",
    "GemParams",
    "GeoTag",
    "LocalFeatures",
    "Manifest",
    "ManifestEntry",
    "ModelProfile",
    "QeConfig",
    "RankedList",
    "RbfConfig",
    "RecallReport",
    "SweepReport",
    "alpha_sweep",
    "blend_weights",
    "build_index",
    "cluster_aggregate",
    "contribution_map",
    "gem_pool",
    "haversine",
    "l2_normalize",
    "load_manifest",
    "parse_attention_points",
    "query_expand",
    "rasterize_attention",
    "read_db",
    "read_feature_map",
    "recall_at_n",
    "resample_attention",
    "search",
    "write_db",
    "write_feature_map",
]
