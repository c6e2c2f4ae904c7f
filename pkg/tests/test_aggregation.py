import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnvpr import errors
from attnvpr.aggregation import (
    ACTIVATION_NORM,
    BLENDED,
    LITERAL_EQ3,
    BlendConfig,
    GemParams,
    ModelProfile,
    base_weight_map,
    blend_weights,
    cluster_aggregate,
    contribution_map,
    gem_pool,
    l2_normalize,
    load_profile,
    save_profile,
)
from attnvpr.attention import AttentionMap
from attnvpr.tensor_io import AssignmentMatrix, FeatureMap, LocalFeatures
from oracles import cluster_oracle, gem_oracle


def fmap(data, image_id="img"):
    return FeatureMap(image_id=image_id, data=np.asarray(data, np.float32))


QUAD = fmap([[[1.0, 2.0], [3.0, 4.0]]])  # single channel 2x2
ONES_22 = np.ones((2, 2))


class TestBlendWeights:
    def test_midpoint(self):
        attn = AttentionMap(np.array([[2.0, 1.0], [1.0, 1.0]], np.float32))
        out = blend_weights(ONES_22, attn, 0.5)
        assert out[0, 0] == pytest.approx(1.5)
        assert out[0, 1] == pytest.approx(1.0)

    def test_alpha_zero_is_base(self):
        base = np.array([[0.5, 1.5], [2.0, 1.0]])
        attn = AttentionMap(np.random.default_rng(0).uniform(0, 2, (2, 2)).astype(np.float32))
        np.testing.assert_array_equal(blend_weights(base, attn, 0.0), base)

    def test_alpha_one_is_attention(self):
        attn = AttentionMap(np.array([[0.3, 1.7], [0.9, 1.1]], np.float32))
        np.testing.assert_allclose(blend_weights(ONES_22, attn, 1.0), attn.values, rtol=1e-7)

    def test_shape_mismatch(self):
        attn = AttentionMap(np.ones((3, 3), np.float32))
        with pytest.raises(errors.ShapeMismatch):
            blend_weights(ONES_22, attn, 0.5)

    def test_all_zero_result(self):
        attn = AttentionMap(np.zeros((2, 2), np.float32))
        with pytest.raises(errors.AllZeroWeights):
            blend_weights(ONES_22, attn, 1.0)


class TestGemPool:
    def test_p1_is_weighted_mean(self):
        out = gem_pool(QUAD, GemParams(p=1.0), ONES_22)
        assert out[0] == pytest.approx(2.5)

    def test_p3_matches_oracle(self):
        out = gem_pool(QUAD, GemParams(p=3.0), ONES_22)
        assert out[0] == pytest.approx((100 / 4) ** (1 / 3), abs=1e-9)
        assert out[0] == pytest.approx(2.9240, abs=1e-4)

    def test_single_cell_support(self):
        weights = np.array([[0.0, 0.0], [0.0, 1.0]])
        for p in (1.0, 2.0, 4.5):
            assert gem_pool(QUAD, GemParams(p=p), weights)[0] == pytest.approx(4.0)

    def test_negative_activation_rejected(self):
        bad = fmap([[[-1.0, 2.0], [3.0, 4.0]]])
        with pytest.raises(errors.NegativeActivation):
            gem_pool(bad, GemParams(), ONES_22)

    def test_zero_weights_rejected(self):
        with pytest.raises(errors.AllZeroWeights):
            gem_pool(QUAD, GemParams(), np.zeros((2, 2)))

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            c = int(rng.integers(1, 9))
            h = int(rng.integers(1, 8))
            w = int(rng.integers(1, 8))
            p = float(rng.choice([1.0, 2.0, 3.0, 4.5]))
            x = rng.uniform(0, 3, size=(c, h, w))
            weights = rng.uniform(0.01, 2, size=(h, w))
            got = gem_pool(fmap(x), GemParams(p=p), weights)
            expected = gem_oracle(x.tolist(), weights.tolist(), p)
            np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_monotone_in_p(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0, 2, size=(3, 4, 4))
        weights = rng.uniform(0.1, 1, size=(4, 4))
        prev = gem_pool(fmap(x), GemParams(p=1.0), weights)
        for p in (2.0, 3.0, 6.0, 12.0):
            cur = gem_pool(fmap(x), GemParams(p=p), weights)
            assert np.all(cur >= prev - 1e-9)
            prev = cur

    def test_approaches_max_for_large_p(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(0.1, 2, size=(2, 3, 3))
        out = gem_pool(fmap(x), GemParams(p=200.0), np.ones((3, 3)))
        np.testing.assert_allclose(out, x.max(axis=(1, 2)), rtol=0.05)


class TestClusterAggregate:
    def test_single_unit_scale_cancels(self):
        lf = LocalFeatures("a", np.array([[1.0], [0.0]], np.float32))
        am = AssignmentMatrix("a", np.array([[1.0]], np.float32))
        raw = cluster_aggregate(lf, am, np.array([2.0]), BlendConfig(alpha=1.0))
        np.testing.assert_allclose(raw, [2.0, 0.0])
        np.testing.assert_allclose(l2_normalize(raw), [1.0, 0.0], atol=1e-7)

    def test_alpha_zero_is_unmodulated(self):
        rng = np.random.default_rng(3)
        lf = LocalFeatures("a", rng.standard_normal((4, 6)).astype(np.float32))
        probs = rng.uniform(0.1, 1, size=(3, 6))
        probs /= probs.sum(axis=0)
        am = AssignmentMatrix("a", probs.astype(np.float32))
        attn = rng.uniform(0, 2, size=6)
        modulated = cluster_aggregate(lf, am, attn, BlendConfig(alpha=0.0))
        plain = cluster_aggregate(lf, am, None, BlendConfig(alpha=0.0))
        np.testing.assert_allclose(modulated, plain, atol=1e-12)

    def test_two_unit_hand_example(self):
        lf = LocalFeatures("a", np.array([[1.0, 0.0], [0.0, 1.0]], np.float32))
        am = AssignmentMatrix("a", np.array([[1.0, 1.0]], np.float32))
        raw = cluster_aggregate(lf, am, np.array([2.0, 0.0]), BlendConfig(alpha=1.0))
        np.testing.assert_allclose(raw, [2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(l2_normalize(raw), [1.0, 0.0], atol=1e-7)

    def test_literal_alpha_zero_rejected(self):
        lf = LocalFeatures("a", np.ones((2, 2), np.float32))
        am = AssignmentMatrix("a", np.full((1, 2), 1.0, np.float32))
        with pytest.raises(errors.DegenerateScale):
            cluster_aggregate(lf, am, None, BlendConfig(alpha=0.0, cluster_mode=LITERAL_EQ3))

    def test_literal_mode_is_alpha_invariant_after_normalization(self):
        rng = np.random.default_rng(5)
        lf = LocalFeatures("a", rng.uniform(0.1, 1, (3, 5)).astype(np.float32))
        probs = rng.uniform(0.1, 1, size=(2, 5))
        probs /= probs.sum(axis=0)
        am = AssignmentMatrix("a", probs.astype(np.float32))
        attn = rng.uniform(0.2, 2, size=5)
        descs = [
            l2_normalize(cluster_aggregate(lf, am, attn, BlendConfig(alpha=a, cluster_mode=LITERAL_EQ3)))
            for a in (0.25, 0.5, 1.0)
        ]
        np.testing.assert_allclose(descs[0], descs[1], atol=1e-7)
        np.testing.assert_allclose(descs[1], descs[2], atol=1e-7)

    def test_blended_mode_depends_on_alpha(self):
        lf = LocalFeatures("a", np.array([[1.0, 0.0], [0.0, 1.0]], np.float32))
        am = AssignmentMatrix("a", np.array([[1.0, 1.0]], np.float32))
        attn = np.array([2.0, 0.2])
        d1 = l2_normalize(cluster_aggregate(lf, am, attn, BlendConfig(alpha=0.25)))
        d2 = l2_normalize(cluster_aggregate(lf, am, attn, BlendConfig(alpha=1.0)))
        assert np.abs(d1 - d2).max() > 1e-4

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            n = int(rng.integers(1, 17))
            k = int(rng.integers(1, 5))
            d = int(rng.integers(1, 9))
            alpha = float(rng.uniform(0.05, 1.0))
            mode = BLENDED if rng.uniform() < 0.5 else LITERAL_EQ3
            feats = rng.standard_normal((d, n))
            probs = rng.uniform(0.05, 1, size=(k, n))
            probs /= probs.sum(axis=0)
            attn = rng.uniform(0, 2, size=n)
            lf = LocalFeatures("a", feats.astype(np.float32))
            am = AssignmentMatrix("a", probs.astype(np.float32))
            got = cluster_aggregate(lf, am, attn, BlendConfig(alpha=alpha, cluster_mode=mode))
            scales = alpha * attn if mode == LITERAL_EQ3 else 1 + alpha * (attn - 1)
            expected = cluster_oracle(
                lf.columns.astype(float).tolist(),
                am.probs.astype(float).tolist(),
                scales.tolist(),
            )
            np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_class_token_passthrough(self):
        lf = LocalFeatures("a", np.array([[3.0]], np.float32))
        am = AssignmentMatrix("a", np.array([[1.0]], np.float32))
        token = np.array([4.0])
        raw = cluster_aggregate(lf, am, None, BlendConfig(alpha=0.0), class_token=token)
        np.testing.assert_allclose(raw, [3.0, 4.0])
        np.testing.assert_allclose(l2_normalize(raw), [0.6, 0.8], atol=1e-7)

    def test_shape_mismatch(self):
        lf = LocalFeatures("a", np.ones((2, 3), np.float32))
        am = AssignmentMatrix("a", np.full((1, 2), 1.0, np.float32))
        with pytest.raises(errors.ShapeMismatch):
            cluster_aggregate(lf, am, None, BlendConfig())


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-7)

    def test_idempotent(self):
        v = l2_normalize(np.array([1.0, 2.0, 2.0]))
        np.testing.assert_allclose(l2_normalize(v), v, atol=1e-7)

    def test_zero_vector(self):
        with pytest.raises(errors.ZeroVector):
            l2_normalize(np.zeros(4))


class TestContributionMap:
    def test_uniform_inputs_uniform_map(self):
        fm = fmap(np.full((2, 3, 3), 0.7))
        out = contribution_map(fm, np.ones((3, 3)), GemParams(p=3.0))
        np.testing.assert_allclose(out, 1.0, atol=1e-9)

    def test_linear_in_weights(self):
        weights = np.ones((2, 2))
        boosted = weights.copy()
        boosted[0, 0] = 2.0
        a = contribution_map(QUAD, weights, GemParams(p=1.0))
        b = contribution_map(QUAD, boosted, GemParams(p=1.0))
        # pre-normalization contribution at (0,0) doubles; max-scaling keeps ratios
        assert b[0, 0] / b[1, 1] == pytest.approx(2 * a[0, 0] / a[1, 1])

    def test_quad_p1_values(self):
        out = contribution_map(QUAD, np.ones((2, 2)), GemParams(p=1.0))
        np.testing.assert_allclose(out, [[0.25, 0.5], [0.75, 1.0]], atol=1e-9)


class TestProfiles:
    def test_round_trip(self, tmp_path):
        profile = ModelProfile(aggregator="cluster", p=2.5, base_weights=ACTIVATION_NORM,
                               descriptor_dim=128, cluster_mode=LITERAL_EQ3, class_token_dim=32)
        path = tmp_path / "model.toml"
        save_profile(profile, path)
        assert load_profile(path) == profile

    def test_defaults(self, tmp_path):
        path = tmp_path / "model.toml"
        path.write_text('aggregator = "gem"\n')
        profile = load_profile(path)
        assert profile.p == 3.0 and profile.base_weights == "uniform_ones"

    def test_bad_aggregator(self, tmp_path):
        path = tmp_path / "model.toml"
        path.write_text('aggregator = "votes"\n')
        with pytest.raises(errors.MalformedRow):
            load_profile(path)


class TestBaseWeights:
    def test_uniform(self):
        fm = fmap(np.ones((2, 3, 4)))
        np.testing.assert_array_equal(base_weight_map(fm), np.ones((3, 4)))

    def test_activation_norm_mean_one(self):
        rng = np.random.default_rng(2)
        fm = fmap(rng.uniform(0.1, 1, size=(4, 5, 5)))
        w = base_weight_map(fm, ACTIVATION_NORM)
        assert w.mean() == pytest.approx(1.0)
        assert w.min() > 0


@settings(max_examples=40, deadline=None)
@given(
    alpha=st.floats(0, 1, allow_nan=False),
    seed=st.integers(0, 10_000),
)
def test_neutral_attention_leaves_gem_descriptor_unchanged(alpha, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 2, size=(3, 4, 4))
    fm = fmap(x)
    base = base_weight_map(fm)
    neutral = AttentionMap(np.ones((4, 4), np.float32))
    blended = blend_weights(base, neutral, alpha)
    a = l2_normalize(gem_pool(fm, GemParams(), base))
    b = l2_normalize(gem_pool(fm, GemParams(), blended))
    np.testing.assert_allclose(a, b, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(scale=st.floats(0.1, 50, allow_nan=False), seed=st.integers(0, 10_000))
def test_global_feature_scaling_cancels_in_normalized_descriptor(scale, seed):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((4, 6))
    probs = rng.uniform(0.1, 1, size=(2, 6))
    probs /= probs.sum(axis=0)
    am = AssignmentMatrix("a", probs.astype(np.float32))
    attn = rng.uniform(0.1, 2, size=6)
    cfg = BlendConfig(alpha=0.7)
    a = l2_normalize(cluster_aggregate(LocalFeatures("a", feats.astype(np.float32)), am, attn, cfg))
    b = l2_normalize(
        cluster_aggregate(LocalFeatures("a", (scale * feats).astype(np.float32)), am, attn, cfg)
    )
    np.testing.assert_allclose(a, b, atol=1e-5)
