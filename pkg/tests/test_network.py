"""Network architecture contracts: shapes, determinism, gradient routing."""

import numpy as np
import pytest
import torch

from udba_seg.attention import confidence_bundle
from udba_seg.exceptions import ConfigurationError
from udba_seg.losses import ce_loss
from udba_seg.network import (
    NetworkConfig,
    build_network,
    feature_noise,
    perturb_features,
)


def small_net(seed=0, num_classes=2):
    return build_network(NetworkConfig(1, num_classes, 2, 4), seed=seed)


class TestConfig:
    def test_invalid_configs(self):
        with pytest.raises(ConfigurationError):
            NetworkConfig(num_classes=1)
        with pytest.raises(ConfigurationError):
            NetworkConfig(depth=1)
        with pytest.raises(ConfigurationError):
            NetworkConfig(base_channels=0)

    def test_bottleneck_channels(self):
        assert NetworkConfig(1, 5, 4, 32).bottleneck_channels == 512
        assert NetworkConfig(1, 2, 2, 4).bottleneck_channels == 16


class TestShapes:
    def test_full_scale_shapes(self):
        net = build_network(NetworkConfig(1, 5, 4, 32), seed=0)
        x = torch.zeros(1, 1, 256, 256)
        z, skips = net.encode(x)
        assert z.shape == (1, 512, 16, 16)
        out = net(x)
        assert out.main_pass1.shape == (1, 5, 256, 256)
        assert out.aux.shape == (1, 5, 256, 256)

    def test_toy_scale_shapes(self):
        net = small_net()
        z, _ = net.encode(torch.zeros(1, 1, 64, 64))
        assert z.shape == (1, 16, 16, 16)
        out = net(torch.zeros(1, 1, 64, 64), udba=True,
                  generator=torch.Generator().manual_seed(0))
        for t in (out.main_pass1, out.aux, out.main_final):
            assert t.shape == (1, 2, 64, 64)
        assert out.attention.shape == (1, 64, 64)

    def test_non_divisible_input_rejected(self):
        net = build_network(NetworkConfig(1, 2, 4, 4), seed=0)
        with pytest.raises(ConfigurationError, match="not divisible"):
            net(torch.zeros(1, 1, 100, 100))

    def test_bottleneck_finite(self):
        net = small_net()
        g = torch.Generator().manual_seed(1)
        z, _ = net.encode(torch.rand(2, 1, 64, 64, generator=g))
        assert torch.isfinite(z).all()


class TestDeterminism:
    def test_same_seed_identical_parameters(self):
        a = small_net(seed=7)
        b = small_net(seed=7)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a = small_net(seed=7)
        b = small_net(seed=8)
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_forward_bitwise_reproducible(self):
        net = small_net()
        x = torch.rand(1, 1, 64, 64, generator=torch.Generator().manual_seed(2))
        out1 = net(x, udba=True, generator=torch.Generator().manual_seed(3))
        out2 = net(x, udba=True, generator=torch.Generator().manual_seed(3))
        assert torch.equal(out1.main_final, out2.main_final)
        assert torch.equal(out1.aux, out2.aux)


class TestPerturbation:
    def test_zero_noise_identity(self):
        g = torch.Generator().manual_seed(4)
        z = torch.randn(1, 4, 4, 4, generator=g)
        assert torch.equal(perturb_features(z, noise=torch.zeros_like(z)), z)

    def test_constant_noise(self):
        z = torch.ones(1, 2, 2, 2)
        out = perturb_features(z, noise=torch.full_like(z, 0.3))
        np.testing.assert_allclose(out.numpy(), 1.3, rtol=1e-6)

    def test_zero_mean_over_draws(self):
        # E[z + z*n] = z for n ~ U(-0.3, 0.3); mean of 10^4 draws within 1%
        g = torch.Generator().manual_seed(5)
        z = torch.rand(1, 1, 4, 4, generator=g) + 0.5
        acc = torch.zeros_like(z)
        draws = 10_000
        for _ in range(draws):
            acc += perturb_features(z, generator=g)
        np.testing.assert_allclose((acc / draws).numpy(), z.numpy(), rtol=0.01)

    def test_noise_range_and_shape(self):
        g = torch.Generator().manual_seed(6)
        z = torch.randn(2, 3, 5, 5, generator=g)
        n = feature_noise(z, g)
        assert n.shape == z.shape
        assert (n >= -0.3).all() and (n < 0.3).all()

    def test_gradient_flows_through_product(self):
        z = torch.tensor([[2.0]], requires_grad=True)
        noise = torch.tensor([[0.25]])
        perturb_features(z, noise=noise).sum().backward()
        assert z.grad.item() == pytest.approx(1.25)


class TestForward:
    def test_disabled_udba_identity(self):
        net = small_net()
        g = torch.Generator().manual_seed(7)
        for _ in range(5):
            out = net(torch.rand(1, 1, 64, 64, generator=g), udba=False, generator=g)
            assert torch.equal(out.main_final, out.main_pass1)
            assert out.confidence is None and out.attention is None

    def test_identical_decoders_agree_everywhere(self):
        net = small_net(num_classes=3)
        net.dec_aux.load_state_dict(net.dec_main.state_dict())
        x = torch.rand(1, 1, 64, 64, generator=torch.Generator().manual_seed(8))
        z, skips = net.encode(x)
        out = net(x, udba=True, noise=torch.zeros_like(z))
        assert torch.equal(out.main_pass1, out.aux)
        b = out.confidence
        assert torch.equal(b.union_mask, b.intersection_mask)
        assert torch.equal(b.p_main, b.p_aux)

    def test_confident_identical_outputs_give_unit_attention(self):
        # fully confident agreeing decoders: attention == MCM == agreement
        labels = torch.randint(0, 3, (1, 16, 16),
                               generator=torch.Generator().manual_seed(9))
        logits = 80.0 * torch.nn.functional.one_hot(labels, 3).permute(0, 3, 1, 2).float()
        bundle = confidence_bundle(logits, logits.clone())
        fg = (labels != 0).float()
        np.testing.assert_array_equal(bundle.mcm.numpy(), fg.numpy())
        np.testing.assert_allclose(bundle.attention.numpy(), fg.numpy(), atol=1e-7)

    def test_gradient_partition_between_decoders(self):
        # the main-path loss must not touch aux-decoder weights, and the
        # aux-path loss must not touch main-decoder weights; both reach
        # the shared encoder
        net = small_net()
        g = torch.Generator().manual_seed(10)
        x = torch.rand(1, 1, 64, 64, generator=g)
        labels = torch.randint(0, 2, (1, 64, 64), generator=g)

        out = net(x, udba=True, generator=g)
        ce_loss(out.main_final, labels).backward()
        assert all(p.grad is None or not p.grad.any()
                   for p in net.dec_aux.parameters())
        assert any(p.grad is not None and p.grad.any()
                   for p in net.dec_main.parameters())
        assert any(p.grad is not None and p.grad.any()
                   for p in net.enc.parameters())

        net.zero_grad(set_to_none=True)
        out = net(x, udba=True, generator=g)
        ce_loss(out.aux, labels).backward()
        assert all(p.grad is None or not p.grad.any()
                   for p in net.dec_main.parameters())
        assert any(p.grad is not None and p.grad.any()
                   for p in net.dec_aux.parameters())
        assert any(p.grad is not None and p.grad.any()
                   for p in net.enc.parameters())

    def test_attention_carries_no_gradient(self):
        net = small_net()
        g = torch.Generator().manual_seed(11)
        out = net(torch.rand(1, 1, 64, 64, generator=g), udba=True, generator=g)
        assert not out.attention.requires_grad
