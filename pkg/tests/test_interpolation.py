"""Mask absorption, restricted attention, and interpolation-weight tests."""

import numpy as np
import pytest

from akl.attention import AttentionWeights, TokenMatrix, image_tokens, scaled_dot_product
from akl.errors import InvalidConfigurationError, InvalidInputError
from akl.grid import ImageGrid
from akl.interpolation import (
    build_masked_input,
    interpolation_weights,
    mask_absorption_decomposition,
    reconstruction_error_bound,
    restricted_attention,
    restricted_attention_error,
    restriction_error_scan,
    seeded_reprojection,
)
from akl.synthetic import gen_lowfreq


def random_tokens(p: int, d: int, seed: int) -> TokenMatrix:
    rng = np.random.default_rng(seed)
    return TokenMatrix(
        y=rng.standard_normal((p, d)),
        positions=rng.standard_normal((p, d)),
        patch_ids=np.arange(p),
    )


def attention_oracle(mt, w):
    """Brute-force attention over all rows: explicit softmax and summation."""
    y = mt.tokens.y
    q, k, v = y @ w.wq, y @ w.wk, y @ w.wv
    p = y.shape[0]
    out = np.zeros_like(v)
    for i in range(p):
        logits = np.array([q[i] @ k[j] for j in range(p)]) / np.sqrt(y.shape[1])
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        for j in range(p):
            out[i] += weights[j] * v[j]
    return out


class TestBuildMaskedInput:
    def test_zero_ratio_identity(self):
        tokens = random_tokens(8, 4, 0)
        mt = build_masked_input(tokens, 0.0, np.zeros(4), seed=1)
        assert mt.masked.size == 0
        assert np.array_equal(mt.tokens.y, tokens.y)

    def test_paper_scale_counts(self):
        tokens = random_tokens(196, 8, 2)
        mt = build_masked_input(tokens, 0.75, np.zeros(8), seed=3)
        assert mt.masked.size == 147
        assert mt.unmasked.size == 49

    def test_determinism(self):
        tokens = random_tokens(16, 4, 4)
        a = build_masked_input(tokens, 0.5, np.ones(4), seed=5)
        b = build_masked_input(tokens, 0.5, np.ones(4), seed=5)
        assert np.array_equal(a.masked, b.masked)

    def test_too_few_visible_rejected(self):
        tokens = random_tokens(4, 4, 6)
        with pytest.raises(InvalidConfigurationError):
            build_masked_input(tokens, 0.8, np.zeros(4), seed=7)


class TestAbsorption:
    def test_zero_mask_embedding_restricted_sum(self):
        tokens = random_tokens(8, 4, 8)
        mt = build_masked_input(tokens, 0.5, np.zeros(4), seed=9)
        result = mask_absorption_decomposition(mt, AttentionWeights.seeded(4, seed=10))
        assert result.discrepancy <= 1e-12

    def test_seeded_case_matches_bruteforce(self):
        tokens = random_tokens(16, 6, 11)
        rng = np.random.default_rng(12)
        mt = build_masked_input(tokens, 0.75, rng.standard_normal(6), seed=13)
        assert mt.unmasked.size == 4
        w = AttentionWeights.seeded(6, seed=14)
        result = mask_absorption_decomposition(mt, w)
        assert result.discrepancy <= 1e-10
        oracle = attention_oracle(mt, w)
        assert np.max(np.abs(result.z_full - oracle)) <= 1e-10
        assert np.max(np.abs(result.z_decomposed - oracle)) <= 1e-10

    def test_two_identical_visible_rows_one_dimensional_hull(self):
        d = 4
        rng = np.random.default_rng(15)
        shared = rng.standard_normal(d)
        m = rng.standard_normal(d)
        y = np.vstack([m, m, shared, shared, m])
        tokens = TokenMatrix(y=y, positions=rng.standard_normal((5, d)), patch_ids=np.arange(5))
        from akl.interpolation import MaskedTokenSet

        mt = MaskedTokenSet(
            tokens=tokens, masked=np.array([0, 1, 4]), unmasked=np.array([2, 3]), m=m
        )
        w = AttentionWeights.seeded(d, seed=16)
        result = mask_absorption_decomposition(mt, w)
        v_m = m @ w.wv
        direction = (shared @ w.wv) - v_m
        residual = result.z_full - v_m[None, :]
        # every output minus the shift lies along the single hull direction
        unit = direction / np.linalg.norm(direction)
        off_axis = residual - np.outer(residual @ unit, unit)
        assert np.max(np.abs(off_axis)) <= 1e-12


class TestRestrictedAttention:
    def test_no_mask_zero_error(self):
        tokens = random_tokens(6, 4, 17)
        mt = build_masked_input(tokens, 0.0, np.zeros(4), seed=18)
        report = restricted_attention_error(mt, AttentionWeights.seeded(4, seed=19))
        assert report.max_error == 0.0

    def test_scan_slope_decays(self):
        _, summary = restriction_error_scan(
            n_values=(4, 8, 16), mask_ratio=0.75, image_side=32, seeds=5
        )
        assert summary["slope"] <= -0.5

    def test_error_source_decomposition_with_orthogonal_mask(self):
        # mask embedding orthogonal to all visible embeddings, tiny logits:
        # the gap comes from renormalizing the attention mass
        d = 6
        rng = np.random.default_rng(20)
        visible = rng.standard_normal((3, d))
        m = np.linalg.svd(visible, full_matrices=True)[2][-1]  # orthogonal direction
        y = np.vstack([visible, np.tile(m, (5, 1))])
        tokens = TokenMatrix(y=y, positions=rng.standard_normal((8, d)), patch_ids=np.arange(8))
        from akl.interpolation import MaskedTokenSet

        mt = MaskedTokenSet(
            tokens=tokens, masked=np.arange(3, 8), unmasked=np.arange(3), m=m
        )
        w = AttentionWeights.seeded(d, seed=21, gamma=1.0)
        z_full, _ = scaled_dot_product(mt.tokens, w)
        z_hat, _, mass = restricted_attention(mt, w)
        report = restricted_attention_error(mt, w)
        # the identity: error_i = (1 - s_i)/s_i * ||sum_{j in N} A_ij (v_j - v_m)||
        values = mt.tokens.y @ w.wv
        v_m = m @ w.wv
        _, attn = scaled_dot_product(mt.tokens, w)
        inner = attn[:, mt.unmasked] @ (values[mt.unmasked] - v_m[None, :])
        predicted = (1.0 - mass) / mass * np.linalg.norm(inner, axis=1)
        assert np.max(np.abs(report.errors - predicted)) <= 1e-10


class TestInterpolationWeights:
    def test_uniform_logits(self):
        tokens = random_tokens(8, 4, 22)
        mt = build_masked_input(tokens, 0.5, np.zeros(4), seed=23)
        w = AttentionWeights(wq=np.zeros((4, 4)), wk=np.zeros((4, 4)), wv=np.eye(4))
        weights, _ = interpolation_weights(mt, w, int(mt.masked[0]))
        assert np.allclose(weights, 1.0 / mt.unmasked.size, atol=1e-14)

    def test_dominant_logit_saturates(self):
        # first components of the visible rows set the masked row's logits
        # directly under identity projections; give row 1 a +20 margin
        d = 4
        m = np.array([1.0, 0.0, 0.0, 0.0])
        margin = 20.0 * np.sqrt(d)
        y = np.vstack(
            [
                m,
                [margin, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, 1.0, 0.0],
            ]
        )
        rng = np.random.default_rng(24)
        tokens = TokenMatrix(y=y, positions=rng.standard_normal((4, d)), patch_ids=np.arange(4))
        from akl.interpolation import MaskedTokenSet

        mt = MaskedTokenSet(tokens=tokens, masked=np.array([0]), unmasked=np.arange(1, 4), m=m)
        w = AttentionWeights(wq=np.eye(d), wk=np.eye(d), wv=np.eye(d))
        weights, _ = interpolation_weights(mt, w, 0)
        assert weights[0] >= 1 - 1e-6

    def test_weights_sum_to_one_many_seeds(self):
        for seed in range(100):
            tokens = random_tokens(12, 4, seed)
            rng = np.random.default_rng(seed + 500)
            mt = build_masked_input(tokens, 0.5, rng.standard_normal(4), seed=seed)
            w = AttentionWeights.seeded(4, seed=seed + 900)
            weights, _ = interpolation_weights(mt, w, int(mt.masked[0]))
            assert abs(float(weights.sum()) - 1.0) <= 1e-12
            assert np.all(weights >= 0)

    def test_unmasked_index_rejected(self):
        tokens = random_tokens(8, 4, 25)
        mt = build_masked_input(tokens, 0.5, np.zeros(4), seed=26)
        with pytest.raises(InvalidInputError):
            interpolation_weights(mt, AttentionWeights.seeded(4, seed=27), int(mt.unmasked[0]))


class TestReconstructionBound:
    def test_zero_image_all_zero(self):
        img = ImageGrid(np.zeros((8, 8)))
        tokens = image_tokens(img, 4)
        mt = build_masked_input(tokens, 0.5, np.zeros(tokens.d), seed=28)
        w = AttentionWeights(wq=np.zeros((4, 4)), wk=np.zeros((4, 4)), wv=np.eye(4))
        report = reconstruction_error_bound(mt, w, img, 4)
        assert np.all(report.masked_errors == 0.0)
        assert report.unmasked_sup == 0.0

    def test_exact_inputs_degenerate_hull(self):
        # visible embeddings equal the ground-truth patches and the image is
        # patch-constant, so every visible patch is identical
        img = ImageGrid(np.kron(np.ones((2, 2)), np.full((2, 2), 0.4)))
        tokens = image_tokens(img, 2)
        mt = build_masked_input(tokens, 0.25, np.zeros(tokens.d), seed=29)
        w = AttentionWeights.seeded(tokens.d, seed=30, wv_identity=True)
        report = reconstruction_error_bound(mt, w, img, 2)
        assert np.all(report.masked_errors <= report.unmasked_sup + report.correction + 1e-12)

    def test_scan_constant_stable(self):
        img = gen_lowfreq(32, seed=31)
        c_hats = []
        for n in (4, 8, 16):
            tokens = image_tokens(img, n)
            rng = np.random.default_rng(n)
            mt = build_masked_input(tokens, 0.5, rng.standard_normal(tokens.d), seed=32)
            w = AttentionWeights.seeded(tokens.d, seed=33, wv_identity=True)
            c_hats.append(reconstruction_error_bound(mt, w, img, n).c_hat)
        assert max(c_hats) <= 10.0 * max(min(c_hats), 1e-12)

    def test_seeded_reprojection_shapes(self):
        reproject = seeded_reprojection(512, 16, 3, seed=34)
        patch = reproject(np.random.default_rng(35).standard_normal(512))
        assert patch.shape == (16, 16, 3)

    def test_dimension_mismatch_rejected(self):
        img = ImageGrid(np.zeros((8, 8)))
        tokens = random_tokens(4, 5, 36)
        mt = build_masked_input(tokens, 0.25, np.zeros(5), seed=37)
        w = AttentionWeights.seeded(5, seed=38)
        with pytest.raises(InvalidInputError):
            reconstruction_error_bound(mt, w, img, 2)


class TestStructuralIntegration:
    def test_cone_hull_recomposition(self):
        # z_i - v_m = (1 - masked mass) * (convex combination of v_j - v_m)
        tokens = random_tokens(10, 6, 40)
        rng = np.random.default_rng(41)
        mt = build_masked_input(tokens, 0.6, rng.standard_normal(6), seed=42)
        w = AttentionWeights.seeded(6, seed=43)
        z_full, attn = scaled_dot_product(mt.tokens, w)
        _, a_hat, mass = restricted_attention(mt, w)
        values = mt.tokens.y @ w.wv
        v_m = mt.m @ w.wv
        masked_mass = attn[:, mt.masked].sum(axis=1)
        recomposed = v_m[None, :] + (1.0 - masked_mass)[:, None] * (
            a_hat @ (values[mt.unmasked] - v_m[None, :])
        )
        assert np.max(np.abs(recomposed - z_full)) <= 1e-10

    def test_full_scale_geometry_pipeline(self):
        # 224x224x3 image, 14x14 patches, d = 768, 75% mask -> 49 visible
        rng = np.random.default_rng(44)
        img = ImageGrid(rng.uniform(size=(224, 224, 3)))
        tokens = image_tokens(img, 14, positions="sinusoidal")
        assert tokens.y.shape == (196, 768)
        mt = build_masked_input(tokens, 0.75, rng.standard_normal(768), seed=45)
        assert mt.unmasked.size == 49
        w = AttentionWeights.seeded(768, seed=46, ffn=False)
        result = mask_absorption_decomposition(mt, w)
        assert result.discrepancy <= 1e-10
        weights, _ = interpolation_weights(mt, w, int(mt.masked[0]))
        assert abs(float(weights.sum()) - 1.0) <= 1e-12
        # decoder-width path: 512-wide embeddings reproject to 16x16x3 patches
        reproject = seeded_reprojection(512, 16, 3, seed=47)
        assert reproject(rng.standard_normal(512)).shape == (16, 16, 3)
