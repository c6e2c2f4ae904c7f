import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from attnvpr.aggregation import GemParams, base_weight_map, gem_pool, l2_normalize
from attnvpr.attention import AttentionPoint, AttentionSpec, RbfConfig, rasterize_attention
from attnvpr.sklearn_api import (
    AttentionRasterizer,
    ClusterDescriptorTransformer,
    CosineRetriever,
    GemDescriptorTransformer,
)
from attnvpr.tensor_io import FeatureMap


def spec(*triples):
    return AttentionSpec(points=tuple(AttentionPoint(x, y, w) for x, y, w in triples))


class TestEstimatorContract:
    @pytest.mark.parametrize("est", [
        AttentionRasterizer(height=5, width=4, sigma=0.3),
        GemDescriptorTransformer(p=2.0, alpha=0.5),
        ClusterDescriptorTransformer(alpha=0.2),
        CosineRetriever(n_neighbors=3),
    ])
    def test_get_params_round_trips_through_clone(self, est):
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_set_params(self):
        est = GemDescriptorTransformer().set_params(p=4.5, alpha=1.0)
        assert est.p == 4.5 and est.alpha == 1.0

    def test_transform_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            AttentionRasterizer().transform([spec((0.5, 0.5, 2.0))])


class TestAttentionRasterizer:
    def test_matches_core_function(self):
        specs = [spec((0.5, 0.5, 2.0)), AttentionSpec(single_landmark=True)]
        out = AttentionRasterizer(height=6, width=6, sigma=0.25).fit(specs).transform(specs)
        assert out.shape == (2, 6, 6)
        expected = rasterize_attention(specs[0], 6, 6, RbfConfig(sigma=0.25)).values
        np.testing.assert_array_equal(out[0], expected)
        np.testing.assert_array_equal(out[1], np.ones((6, 6), np.float32))

    def test_rejects_non_spec(self):
        est = AttentionRasterizer().fit([])
        with pytest.raises(TypeError):
            est.transform([np.ones((3, 3))])


class TestGemTransformer:
    def test_matches_core_gem(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 2, size=(3, 4, 5, 5))
        out = GemDescriptorTransformer(p=3.0).fit(X).transform(X)
        assert out.shape == (3, 4)
        for i in range(3):
            fm = FeatureMap(image_id=str(i), data=X[i])
            expected = l2_normalize(gem_pool(fm, GemParams(p=3.0), base_weight_map(fm)))
            np.testing.assert_allclose(out[i], expected, atol=1e-6)

    def test_attention_changes_descriptor(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 2, size=(2, 3, 4, 4))
        attn = rng.uniform(0, 2, size=(2, 4, 4))
        est = GemDescriptorTransformer(alpha=1.0).fit(X)
        plain = est.transform(X)
        modulated = est.transform(X, attention=attn)
        assert np.abs(plain - modulated).max() > 1e-4

    def test_rows_unit_norm(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(0, 2, size=(4, 3, 3, 3))
        out = GemDescriptorTransformer().fit(X).transform(X)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)


class TestClusterTransformer:
    def test_shape_and_norm(self):
        rng = np.random.default_rng(3)
        feats = rng.standard_normal((2, 4, 6))
        assigns = rng.uniform(0.1, 1, size=(2, 3, 6))
        assigns /= assigns.sum(axis=1, keepdims=True)
        out = ClusterDescriptorTransformer(alpha=0.5).fit(None).transform(
            (feats, assigns), attention=rng.uniform(0, 2, size=(2, 6))
        )
        assert out.shape == (2, 12)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)


class TestCosineRetriever:
    def test_predict_nearest_label(self):
        X = np.eye(3, dtype=np.float32)
        est = CosineRetriever().fit(X, y=["rome", "oslo", "lima"])
        assert list(est.predict(np.eye(3, dtype=np.float32))) == ["rome", "oslo", "lima"]

    def test_ties_broken_by_label(self):
        X = np.array([[1.0, 0.0], [1.0, 0.0]], np.float32)
        est = CosineRetriever(n_neighbors=2).fit(X, y=["zeta", "alpha"])
        _, idx = est.kneighbors(np.array([[1.0, 0.0]], np.float32))
        assert list(est.labels_[idx[0]]) == ["alpha", "zeta"]

    def test_rows_renormalized_on_fit(self):
        X = np.array([[2.0, 0.0], [0.0, 3.0]], np.float32)
        est = CosineRetriever().fit(X)
        sims, _ = est.kneighbors(np.array([[1.0, 0.0]], np.float32), n_neighbors=1)
        assert sims[0, 0] == pytest.approx(1.0, abs=1e-6)
