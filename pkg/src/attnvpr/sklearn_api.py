"""Scikit-learn style estimator wrappers around the core operations.

These adapters let the attention rasterizer, both aggregators, and the
cosine retriever participate in sklearn pipelines and grid searches
(get_params/set_params/clone all work). The underlying math lives in
attention.py, aggregation.py, and retrieval.py.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .aggregation import (
    BLENDED,
    UNIFORM_ONES,
    BlendConfig,
    GemParams,
    base_weight_map,
    blend_weights,
    cluster_aggregate,
    gem_pool,
    l2_normalize,
)
from .attention import AttentionMap, AttentionSpec, RbfConfig, rasterize_attention
from .errors import DimMismatch
from .tensor_io import AssignmentMatrix, FeatureMap, LocalFeatures


class AttentionRasterizer(BaseEstimator, TransformerMixin):
    """Transform AttentionSpecs into (n, height, width) attention surfaces."""

    def __init__(self, height=7, width=7, sigma=0.2, mode="superposition"):
        self.height = height
        self.width = width
        self.sigma = sigma
        self.mode = mode

    def fit(self, X, y=None):
        # stateless; validate params only
        self._cfg_ = RbfConfig(sigma=self.sigma, mode=self.mode)
        return self

    def transform(self, X):
        check_is_fitted(self, "_cfg_")
        maps = []
        for spec in X:
            if not isinstance(spec, AttentionSpec):
                raise TypeError(f"expected AttentionSpec, got {type(spec).__name__}")
            maps.append(rasterize_attention(spec, self.height, self.width, self._cfg_).values)
        return np.stack(maps) if maps else np.zeros((0, self.height, self.width), np.float32)


class GemDescriptorTransformer(BaseEstimator, TransformerMixin):
    """Attention-blended GeM pooling over (n, C, H, W) feature stacks,
    returning L2-normalized (n, C) descriptors.

    Attention surfaces, when used, are passed to transform as a parallel
    (n, H, W) array; alpha=0 or attention=None reproduces plain GeM.
    """

    def __init__(self, p=3.0, base_weights=UNIFORM_ONES, alpha=0.0):
        self.p = p
        self.base_weights = base_weights
        self.alpha = alpha

    def fit(self, X, y=None):
        self._params_ = GemParams(p=self.p, base_weights=self.base_weights)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return self

    def transform(self, X, attention=None):
        check_is_fitted(self, "_params_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4:
            raise DimMismatch(f"expected (n, C, H, W), got shape {X.shape}")
        if attention is not None:
            attention = check_array(np.asarray(attention), allow_nd=True)
            if attention.shape != (X.shape[0],) + X.shape[2:]:
                raise DimMismatch(
                    f"attention shape {attention.shape} does not match features {X.shape}"
                )
        rows = []
        for i in range(X.shape[0]):
            fm = FeatureMap(image_id=str(i), data=X[i])
            weights = base_weight_map(fm, self.base_weights)
            if attention is not None and self.alpha > 0:
                weights = blend_weights(weights, AttentionMap(attention[i]), self.alpha)
            rows.append(l2_normalize(gem_pool(fm, self._params_, weights)))
        return np.vstack(rows) if rows else np.zeros((0, X.shape[1]), np.float32)


class ClusterDescriptorTransformer(BaseEstimator, TransformerMixin):
    """Attention-scaled cluster aggregation over parallel feature/assignment
    stacks, returning L2-normalized (n, K*D) descriptors.

    transform expects X = (features, assignments) with features (n, D, units)
    and assignments (n, K, units); attention is an optional (n, units) array.
    """

    def __init__(self, alpha=0.0, cluster_mode=BLENDED):
        self.alpha = alpha
        self.cluster_mode = cluster_mode

    def fit(self, X, y=None):
        self._cfg_ = BlendConfig(alpha=self.alpha, cluster_mode=self.cluster_mode)
        return self

    def transform(self, X, attention=None):
        check_is_fitted(self, "_cfg_")
        feats, assigns = X
        feats = np.asarray(feats, dtype=np.float64)
        assigns = np.asarray(assigns, dtype=np.float64)
        if feats.ndim != 3 or assigns.ndim != 3 or feats.shape[0] != assigns.shape[0]:
            raise DimMismatch("expected parallel (n, D, units) and (n, K, units) stacks")
        rows = []
        for i in range(feats.shape[0]):
            lf = LocalFeatures(image_id=str(i), columns=feats[i])
            am = AssignmentMatrix(image_id=str(i), probs=assigns[i])
            attn = None if attention is None else np.asarray(attention[i], dtype=np.float64)
            rows.append(l2_normalize(cluster_aggregate(lf, am, attn, self._cfg_)))
        k, d = assigns.shape[1], feats.shape[1]
        return np.vstack(rows) if rows else np.zeros((0, k * d), np.float32)


class CosineRetriever(BaseEstimator):
    """Exact cosine nearest-neighbor retrieval over unit-norm rows.

    fit(X, y) stores the reference matrix and optional string labels;
    kneighbors mirrors the sklearn NearestNeighbors contract (deterministic
    ties broken by ascending label).
    """

    def __init__(self, n_neighbors=10):
        self.n_neighbors = n_neighbors

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32)
        norms = np.linalg.norm(X, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            X = X / norms[:, None]
        self.X_ = X
        self.labels_ = (
            np.asarray([str(v) for v in y]) if y is not None
            else np.asarray([str(i) for i in range(X.shape[0])])
        )
        if len(self.labels_) != X.shape[0]:
            raise DimMismatch("y must have one label per reference row")
        order = np.argsort(self.labels_, kind="stable")
        self._label_rank_ = np.empty(X.shape[0], dtype=np.int64)
        self._label_rank_[order] = np.arange(X.shape[0])
        return self

    def kneighbors(self, X, n_neighbors=None):
        check_is_fitted(self, "X_")
        n = n_neighbors or self.n_neighbors
        n = min(n, self.X_.shape[0])
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.X_.shape[1]:
            raise DimMismatch(f"query dim {X.shape[1]} vs reference dim {self.X_.shape[1]}")
        sims = X @ self.X_.T  # (nq, N)
        out_sims = np.empty((X.shape[0], n), dtype=np.float32)
        out_idx = np.empty((X.shape[0], n), dtype=np.int64)
        for i in range(X.shape[0]):
            order = np.lexsort((self._label_rank_, -sims[i]))[:n]
            out_idx[i] = order
            out_sims[i] = sims[i, order]
        return out_sims, out_idx

    def predict(self, X):
        """Label of the single nearest reference row per query."""
        _, idx = self.kneighbors(X, n_neighbors=1)
        return self.labels_[idx[:, 0]]
