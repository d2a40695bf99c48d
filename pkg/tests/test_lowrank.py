"""Rank truncation, patch embedding, and block-sampled recovery tests."""

import numpy as np
import pytest

from akl.errors import InvalidInputError
from akl.grid import ImageGrid, bv_seminorm, patchify, select_patches
from akl.lowrank import (
    best_rank_r,
    embed_selected,
    numerical_rank,
    reconstruct,
    verify_prop31,
)
from akl.synthetic import gen_lowrank


class TestBestRankR:
    def test_rank_one_outer_product_exact(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(8), rng.standard_normal(8)
        model = best_rank_r(ImageGrid(np.outer(a, b)), 1)
        assert model.epsilon == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(model.to_image().pixels[:, :, 0], np.outer(a, b), atol=1e-12)

    def test_identity_truncation_residual(self):
        # all singular values equal 1, so the residual of any truncation is 1
        model = best_rank_r(ImageGrid(np.eye(8)), 4)
        assert model.epsilon == pytest.approx(1.0, abs=1e-12)

    def test_full_rank_retained(self):
        rng = np.random.default_rng(1)
        img = ImageGrid(rng.uniform(size=(16, 16)))
        assert best_rank_r(img, 16).epsilon <= 1e-10

    def test_residual_monotone_in_rank(self):
        rng = np.random.default_rng(2)
        img = ImageGrid(rng.uniform(size=(12, 12)))
        eps = [best_rank_r(img, r).epsilon for r in range(1, 13)]
        assert all(a >= b - 1e-14 for a, b in zip(eps, eps[1:]))

    def test_rank_out_of_range(self):
        img = ImageGrid(np.zeros((4, 4)))
        for r in (0, 5):
            with pytest.raises(InvalidInputError):
                best_rank_r(img, r)


class TestEmbedSelected:
    def test_zero_image_embeds_to_zeros(self):
        sel = select_patches(patchify(ImageGrid(np.zeros((4, 4))), 2), 0)
        emb = embed_selected(ImageGrid(np.zeros((4, 4))), sel)
        assert emb.y.shape == (2, 4)
        assert np.all(emb.y == 0.0)

    def test_one_hot_pixel_locality(self):
        pixels = np.zeros((4, 4))
        sel = select_patches(patchify(ImageGrid(pixels), 2), 0)
        r0, _, c0, _ = sel.bounds(sel.selection[0])
        pixels[r0, c0] = 1.0
        emb = embed_selected(ImageGrid(pixels), sel)
        assert np.sum(emb.y != 0.0) == 1

    def test_row_reshape_roundtrip(self):
        rng = np.random.default_rng(3)
        img = ImageGrid(rng.uniform(size=(8, 8, 3)))
        sel = select_patches(patchify(img, 2), 1)
        emb = embed_selected(img, sel)
        for row, idx in enumerate(sel.selection):
            assert np.array_equal(emb.patch(row), sel.restrict(img, idx))

    def test_missing_selection_rejected(self):
        img = ImageGrid(np.zeros((4, 4)))
        with pytest.raises(InvalidInputError):
            embed_selected(img, patchify(img, 2))


class TestReconstruct:
    def test_complete_sampling_full_rank_exact(self):
        rng = np.random.default_rng(4)
        img = ImageGrid(rng.uniform(size=(8, 8)))
        patches = patchify(img, 2)
        complete = patches.__class__(n=2, patch_size=4, selection=tuple(range(4)))
        emb = embed_selected(img, complete)
        result = reconstruct(emb, complete, r=8, iters=5, seed=0)
        assert result.converged
        assert np.max(np.abs(result.image.pixels - img.pixels)) <= 1e-8

    def test_output_rank_bounded(self):
        img = gen_lowrank(32, rank=2, seed=7)
        sel = select_patches(patchify(img, 4), 7)
        result = reconstruct(embed_selected(img, sel), sel, r=2, iters=30, seed=7)
        assert numerical_rank(result.image.pixels[:, :, 0]) <= 2

    def test_observed_blocks_fit_exactly_on_lowrank_input(self):
        img = gen_lowrank(32, rank=1, seed=11)
        sel = select_patches(patchify(img, 4), 11)
        result = reconstruct(embed_selected(img, sel), sel, r=1, iters=30, seed=11)
        assert result.converged
        for idx in sel.selection:
            r0, r1, c0, c1 = sel.bounds(idx)
            block_err = np.max(
                np.abs(result.image.pixels[r0:r1, c0:c1] - img.pixels[r0:r1, c0:c1])
            )
            assert block_err <= 1e-8

    def test_gauge_freedom_dominates_offblock_error(self):
        # one patch per row with permuted columns observes disjoint bipartite
        # blocks; the rank-1 fit per block is only determined up to a scale,
        # so off-block pixels generally do not match even at exact fit
        errors = []
        for seed in range(10):
            img = gen_lowrank(32, rank=1, seed=seed)
            sel = select_patches(patchify(img, 4), seed)
            result = reconstruct(embed_selected(img, sel), sel, r=1, iters=30, seed=seed)
            assert result.converged
            rel = bv_seminorm(
                ImageGrid(img.pixels - result.image.pixels)
            ) / bv_seminorm(img)
            errors.append(rel)
        assert np.median(errors) > 1e-6

    def test_determinism(self):
        img = gen_lowrank(16, rank=1, seed=5)
        sel = select_patches(patchify(img, 2), 5)
        emb = embed_selected(img, sel)
        a = reconstruct(emb, sel, r=1, iters=10, seed=3)
        b = reconstruct(emb, sel, r=1, iters=10, seed=3)
        assert np.array_equal(a.image.pixels, b.image.pixels)

    def test_rank_hypothesis_enforced_for_partial_sampling(self):
        img = gen_lowrank(16, rank=1, seed=5)
        sel = select_patches(patchify(img, 4), 5)  # patch size 4
        emb = embed_selected(img, sel)
        with pytest.raises(InvalidInputError):
            reconstruct(emb, sel, r=4, iters=5, seed=0)


class TestVerifyProp31:
    def test_rejects_rank_at_patch_size(self):
        with pytest.raises(InvalidInputError):
            verify_prop31(16, n_values=(4,), r_values=(4,), noise_levels=(0.0,), trials=2, seed=0)

    def test_rows_and_summary_shape(self):
        rows, summaries = verify_prop31(
            16, n_values=(2,), r_values=(1,), noise_levels=(0.0, 0.5), trials=4, seed=0, iters=20
        )
        assert len(rows) == 8
        assert len(summaries) == 2
        for row in rows:
            assert set(row) >= {"r", "N_c", "n", "epsilon", "bv_error", "ratio", "als_status", "seed"}

    def test_median_stability_field_present(self):
        _, summaries = verify_prop31(
            16, n_values=(2,), r_values=(1,), noise_levels=(1.0,), trials=8, seed=1, iters=20
        )
        (cell,) = summaries
        assert np.isfinite(cell["median_ratio"])
        assert "ratio_grows_with_trials" in cell
