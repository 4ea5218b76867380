"""Tests for shared neural building blocks."""

import math

import pytest
import torch

from momentground.layers import (
    Attention,
    Mlp,
    clip_position_encoding,
    inverse_sigmoid,
    sinusoidal_encoding,
    span_sinusoidal_embedding,
)


class TestSinusoidalEncoding:
    def test_position_zero_gives_zero_sines_unit_cosines(self):
        enc = sinusoidal_encoding(torch.zeros(3), num_dims=8)
        assert torch.allclose(enc[:, :4], torch.zeros(3, 4))
        assert torch.allclose(enc[:, 4:], torch.ones(3, 4))

    def test_shape_appends_feature_axis(self):
        enc = sinusoidal_encoding(torch.rand(2, 5), num_dims=16)
        assert enc.shape == (2, 5, 16)

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError):
            sinusoidal_encoding(torch.zeros(1), num_dims=7)

    def test_values_bounded(self):
        enc = sinusoidal_encoding(torch.rand(100), num_dims=32)
        assert enc.abs().max() <= 1.0 + 1e-6

    def test_base_frequency_covers_unit_interval(self):
        # Lowest-frequency channel completes exactly one period over [0, 1],
        # so positions 0 and 1 coincide there.
        enc0 = sinusoidal_encoding(torch.tensor([0.0]), num_dims=8)
        enc1 = sinusoidal_encoding(torch.tensor([1.0]), num_dims=8)
        assert torch.allclose(enc0[0, 0], enc1[0, 0], atol=1e-5)
        assert torch.allclose(enc0[0, 4], enc1[0, 4], atol=1e-5)

    def test_distinct_positions_distinct_codes(self):
        enc = sinusoidal_encoding(torch.tensor([0.1, 0.2, 0.3]), num_dims=16)
        assert not torch.allclose(enc[0], enc[1])
        assert not torch.allclose(enc[1], enc[2])


class TestSpanEmbedding:
    def test_center_and_width_blocks(self):
        spans = torch.tensor([[0.3, 0.2]])
        emb = span_sinusoidal_embedding(spans, num_dims=16)
        assert emb.shape == (1, 16)
        assert torch.allclose(emb[:, :8], sinusoidal_encoding(spans[:, 0], 8))
        assert torch.allclose(emb[:, 8:], sinusoidal_encoding(spans[:, 1], 8))

    def test_batched_span_shapes(self):
        emb = span_sinusoidal_embedding(torch.rand(4, 10, 2), num_dims=64)
        assert emb.shape == (4, 10, 64)


class TestClipPositionEncoding:
    def test_uses_per_sample_length(self):
        # Sample 0 has 4 valid clips, sample 1 has 2; midpoints are
        # (t + 0.5) / L_i with each sample's own L_i.
        mask = torch.tensor([[True, True, True, True], [True, True, False, False]])
        enc = clip_position_encoding(mask, num_dims=8, dtype=torch.float32)
        expected0 = sinusoidal_encoding(torch.tensor([0.125, 0.375, 0.625, 0.875]), 8)
        expected1 = sinusoidal_encoding(torch.tensor([0.25, 0.75]), 8)
        assert torch.allclose(enc[0], expected0)
        assert torch.allclose(enc[1, :2], expected1)

    def test_shape(self):
        mask = torch.ones(3, 7, dtype=torch.bool)
        assert clip_position_encoding(mask, 32, torch.float32).shape == (3, 7, 32)


class TestMlp:
    def test_layer_count(self):
        mlp = Mlp(8, 16, 2, num_layers=3)
        assert len(mlp.layers) == 3
        assert mlp.layers[0].in_features == 8
        assert mlp.layers[-1].out_features == 2

    def test_single_layer_is_linear(self):
        torch.manual_seed(0)
        mlp = Mlp(4, 99, 3, num_layers=1)
        x = torch.randn(5, 4)
        # One layer means no ReLU, so doubling the input (minus bias effect)
        # behaves linearly.
        y1 = mlp(x)
        y2 = mlp(2 * x)
        bias = mlp.layers[0].bias
        assert torch.allclose(y2 - bias, 2 * (y1 - bias), atol=1e-5)


class TestAttention:
    def test_masked_keys_do_not_contribute(self):
        torch.manual_seed(0)
        attn = Attention(16, 16, 16, heads=4).eval()
        q = torch.randn(2, 3, 16)
        k = torch.randn(2, 5, 16)
        mask = torch.tensor([[True, True, True, False, False]] * 2)
        out = attn(q, k, k, key_mask=mask)
        # Scrambling the masked key rows must not change the output.
        k2 = k.clone()
        k2[:, 3:] = torch.randn(2, 2, 16) * 100
        out2 = attn(q, k2, k2, key_mask=mask)
        assert torch.allclose(out, out2, atol=1e-5)

    def test_wide_query_narrow_value(self):
        # Q/K may live in a wider space than V (used for anchor-conditioned
        # cross-attention); output width follows out_dim.
        attn = Attention(qk_dim=32, v_dim=16, out_dim=16, heads=4)
        q = torch.randn(2, 6, 32)
        k = torch.randn(2, 9, 32)
        v = torch.randn(2, 9, 16)
        assert attn(q, k, v).shape == (2, 6, 16)

    def test_head_divisibility_enforced(self):
        with pytest.raises(ValueError):
            Attention(30, 16, 16, heads=4)

    def test_fully_visible_mask_matches_no_mask(self):
        torch.manual_seed(1)
        attn = Attention(8, 8, 8, heads=2).eval()
        q = torch.randn(1, 4, 8)
        k = torch.randn(1, 4, 8)
        assert torch.allclose(attn(q, k, k), attn(q, k, k, key_mask=torch.ones(1, 4, dtype=torch.bool)))


class TestInverseSigmoid:
    def test_round_trips_sigmoid(self):
        x = torch.linspace(-4, 4, 21)
        assert torch.allclose(inverse_sigmoid(torch.sigmoid(x)), x, atol=1e-4)

    def test_clamps_at_boundaries(self):
        out = inverse_sigmoid(torch.tensor([0.0, 1.0]))
        assert torch.isfinite(out).all()
        assert out[0] < -10 and out[1] > 10
