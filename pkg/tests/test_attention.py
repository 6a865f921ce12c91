"""Attention pipeline: probability maps, agreement masks, MCM, projection."""

import itertools

import numpy as np
import pytest
import torch

from _oracles import attention_scalar
from udba_seg.attention import (
    agreement_masks,
    apply_attention,
    compute_attention,
    confidence_bundle,
    max_probability,
    multi_confidence_map,
    project_to_bottleneck,
    save_confidence_maps,
)


class TestMaxProbability:
    def test_uniform_logits(self):
        # all-zero logits over 4 classes -> flat softmax, max = 0.25
        p = max_probability(torch.zeros(1, 4, 5, 5))
        np.testing.assert_allclose(p.numpy(), 0.25, rtol=1e-6)

    def test_confident_pixel(self):
        logits = torch.zeros(1, 2, 1, 1)
        logits[0, 0, 0, 0] = 10.0
        expected = 1.0 / (1.0 + np.exp(-10.0))
        np.testing.assert_allclose(max_probability(logits).item(), expected, rtol=1e-6)

    def test_shift_invariance(self):
        logits = torch.randn(2, 3, 6, 6, generator=torch.Generator().manual_seed(0))
        shifted = logits + 7.5
        np.testing.assert_allclose(
            max_probability(logits).numpy(),
            max_probability(shifted).numpy(),
            rtol=1e-5,
        )

    def test_range(self):
        g = torch.Generator().manual_seed(1)
        for n in (2, 3, 5):
            p = max_probability(torch.randn(1, n, 8, 8, generator=g) * 3)
            assert (p > 1.0 / n).all() and (p <= 1.0).all()


class TestAgreementMasks:
    def test_identical_maps(self):
        labels = torch.tensor([[[0, 1], [2, 0]]])
        union, inter = agreement_masks(labels, labels.clone())
        fg = labels != 0
        assert torch.equal(union, fg) and torch.equal(inter, fg)

    def test_disjoint_halves(self):
        # main: left half foreground, aux: right half, same class
        main = torch.tensor([[[1, 0], [1, 0]]])
        aux = torch.tensor([[[0, 1], [0, 1]]])
        union, inter = agreement_masks(main, aux)
        assert union.all()
        assert not inter.any()

    def test_all_background(self):
        z = torch.zeros(1, 3, 3, dtype=torch.long)
        union, inter = agreement_masks(z, z)
        assert not union.any() and not inter.any()

    def test_intersection_subset_of_union(self):
        g = torch.Generator().manual_seed(2)
        for _ in range(200):
            main = torch.randint(0, 4, (1, 6, 6), generator=g)
            aux = torch.randint(0, 4, (1, 6, 6), generator=g)
            union, inter = agreement_masks(main, aux)
            assert not (inter & ~union).any()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            agreement_masks(torch.zeros(1, 2, 2), torch.zeros(1, 3, 3))


class TestMultiConfidenceMap:
    def test_or_collapses_to_union_exhaustive(self):
        # every binary 2x4 union grid with every subset as intersection
        for union_bits in itertools.product([0, 1], repeat=8):
            union = torch.tensor(union_bits, dtype=torch.bool).reshape(1, 2, 4)
            inter = union & torch.tensor(
                [(i % 2) == 0 for i in range(8)], dtype=torch.bool
            ).reshape(1, 2, 4)
            mcm = multi_confidence_map(union, inter)
            assert torch.equal(mcm, union.float())

    def test_binary_values(self):
        g = torch.Generator().manual_seed(3)
        union = torch.rand(1, 8, 8, generator=g) > 0.5
        inter = union & (torch.rand(1, 8, 8, generator=g) > 0.5)
        mcm = multi_confidence_map(union, inter)
        assert set(mcm.unique().tolist()) <= {0.0, 1.0}


class TestComputeAttention:
    def test_hand_grid(self):
        p_main = torch.tensor([[[0.5, 0.9], [0.7, 0.6]]])
        p_aux = torch.tensor([[[0.8, 0.4], [0.7, 0.9]]])
        mcm = torch.tensor([[[1.0, 1.0], [0.0, 1.0]]])
        expected = [[0.8, 0.9], [0.0, 0.9]]
        np.testing.assert_allclose(
            compute_attention(p_main, p_aux, mcm)[0].numpy(), expected, rtol=1e-6
        )

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            p_main = rng.uniform(0.2, 1.0, (8, 8))
            p_aux = rng.uniform(0.2, 1.0, (8, 8))
            mcm = rng.integers(0, 2, (8, 8)).astype(float)
            got = compute_attention(
                torch.from_numpy(p_main[None]),
                torch.from_numpy(p_aux[None]),
                torch.from_numpy(mcm[None]),
            )[0].numpy()
            np.testing.assert_array_equal(got, attention_scalar(p_main, p_aux, mcm))

    def test_transpose_equivariance(self):
        g = torch.Generator().manual_seed(5)
        main_logits = torch.randn(1, 3, 6, 4, generator=g)
        aux_logits = torch.randn(1, 3, 6, 4, generator=g)
        att = confidence_bundle(main_logits, aux_logits).attention
        att_t = confidence_bundle(
            main_logits.transpose(2, 3), aux_logits.transpose(2, 3)
        ).attention
        np.testing.assert_allclose(att_t.numpy(), att.transpose(1, 2).numpy(), rtol=1e-6)


class TestProjection:
    def test_constant_map(self):
        att = torch.full((1, 8, 8), 0.4)
        proj = project_to_bottleneck(att, (5, 2, 2))
        assert proj.shape == (1, 5, 2, 2)
        np.testing.assert_allclose(proj.numpy(), 0.4, rtol=1e-6)

    def test_quadrant_block_means(self):
        att = torch.zeros(1, 4, 4)
        att[0, :2, :2] = 1.0
        proj = project_to_bottleneck(att, (3, 2, 2))
        np.testing.assert_allclose(proj[0, 0].numpy(), [[1.0, 0.0], [0.0, 0.0]])

    def test_channel_replication(self):
        g = torch.Generator().manual_seed(6)
        att = torch.rand(2, 8, 8, generator=g)
        proj = project_to_bottleneck(att, (7, 4, 4))
        for c in range(1, 7):
            assert torch.equal(proj[:, c], proj[:, 0])

    def test_bounds_preserved(self):
        g = torch.Generator().manual_seed(7)
        att = torch.rand(1, 16, 16, generator=g)
        proj = project_to_bottleneck(att, (2, 4, 4))
        assert proj.min() >= att.min() - 1e-7
        assert proj.max() <= att.max() + 1e-7

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError, match="not divisible"):
            project_to_bottleneck(torch.zeros(1, 6, 6), (2, 4, 4))


class TestApplyAttention:
    def test_identity_and_annihilation(self):
        g = torch.Generator().manual_seed(8)
        z = torch.randn(1, 3, 4, 4, generator=g)
        assert torch.equal(apply_attention(z, torch.ones_like(z)), z)
        assert not apply_attention(z, torch.zeros_like(z)).any()

    def test_hand_product(self):
        z = torch.tensor([[[[2.0, -4.0]]]])
        att = torch.tensor([[[[0.5, 0.25]]]])
        np.testing.assert_allclose(
            apply_attention(z, att).numpy(), [[[[1.0, -1.0]]]]
        )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            apply_attention(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 2, 2))


class TestConfidenceBundle:
    def test_attention_detached_and_in_range(self):
        g = torch.Generator().manual_seed(9)
        main_logits = torch.randn(1, 3, 8, 8, generator=g, requires_grad=True)
        aux_logits = torch.randn(1, 3, 8, 8, generator=g, requires_grad=True)
        bundle = confidence_bundle(main_logits, aux_logits)
        assert not bundle.attention.requires_grad
        on = bundle.mcm.bool()
        assert (bundle.attention[~on] == 0).all()
        assert (bundle.attention[on] > 1.0 / 3).all()
        assert (bundle.attention <= 1.0).all()

    def test_debug_dump_files(self, tmp_path):
        g = torch.Generator().manual_seed(10)
        bundle = confidence_bundle(
            torch.randn(1, 2, 8, 8, generator=g), torch.randn(1, 2, 8, 8, generator=g)
        )
        paths = save_confidence_maps(bundle, "case7", tmp_path)
        names = sorted(p.name for p in paths)
        assert names == sorted(
            f"case7_{m}.png"
            for m in ("p_main", "p_aux", "union", "intersection", "mcm", "attention")
        )
        for p in paths:
            assert p.exists()
