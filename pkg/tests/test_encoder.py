"""Tests for the cross-modal alignment encoder and its losses."""

import math

import pytest
import torch

from momentground.encoder import (
    AlignmentEncoder,
    EncoderConfig,
    alignment_loss,
    global_pool,
    saliency_contrastive_term,
    saliency_loss,
    saliency_margin_term,
)
from oracles import alignment_loss_ref


class TestGlobalPool:
    def test_two_valid_rows_unit_diagonal(self):
        # Mean of [1,0] and [0,1] is [0.5,0.5]; normalized -> [0.7071, 0.7071].
        feats = torch.tensor([[[1.0, 0.0], [0.0, 1.0], [9.0, 9.0]]])
        mask = torch.tensor([[True, True, False]])
        pooled = global_pool(feats, mask)
        expected = torch.tensor([[math.sqrt(0.5), math.sqrt(0.5)]])
        assert torch.allclose(pooled, expected, atol=1e-6)

    def test_unit_norm(self):
        feats = torch.randn(4, 7, 16)
        mask = torch.rand(4, 7) > 0.3
        mask[:, 0] = True
        pooled = global_pool(feats, mask)
        assert torch.allclose(pooled.norm(dim=-1), torch.ones(4), atol=1e-6)

    def test_padding_ignored(self):
        feats = torch.randn(2, 5, 8)
        mask = torch.tensor([[True, True, True, False, False]] * 2)
        base = global_pool(feats, mask)
        feats2 = feats.clone()
        feats2[:, 3:] = 1e6
        assert torch.allclose(base, global_pool(feats2, mask), atol=1e-6)

    def test_empty_row_rejected(self):
        feats = torch.randn(1, 3, 4)
        mask = torch.zeros(1, 3, dtype=torch.bool)
        with pytest.raises(ValueError):
            global_pool(feats, mask)


class TestAlignmentLoss:
    def test_single_sample_is_zero(self):
        g = torch.randn(1, 8)
        g = g / g.norm()
        assert alignment_loss(g, g).abs() < 1e-6

    def test_identical_features_batch_four(self):
        # All pairwise scores equal -> loss = 2 ln B = 2 ln 4.
        g = torch.randn(1, 16)
        g = g / g.norm()
        gv = g.repeat(4, 1)
        loss = alignment_loss(gv, gv)
        assert abs(loss.item() - 2 * math.log(4)) < 1e-6

    def test_matches_naive_reference(self):
        torch.manual_seed(0)
        for b in (2, 3, 5, 8):
            gv = torch.randn(b, 12, dtype=torch.float64)
            gt = torch.randn(b, 12, dtype=torch.float64)
            gv = gv / gv.norm(dim=-1, keepdim=True)
            gt = gt / gt.norm(dim=-1, keepdim=True)
            ref = alignment_loss_ref(gv.numpy(), gt.numpy())
            assert abs(alignment_loss(gv, gt).item() - ref) <= 1e-9

    def test_positive_for_batch_of_two_or_more(self):
        torch.manual_seed(1)
        for _ in range(20):
            gv = torch.randn(3, 8)
            gt = torch.randn(3, 8)
            gv = gv / gv.norm(dim=-1, keepdim=True)
            gt = gt / gt.norm(dim=-1, keepdim=True)
            # Denominator includes every diagonal term, so each log ratio is
            # strictly negative.
            assert alignment_loss(gv, gt).item() > 0

    def test_raising_diagonal_lowers_loss(self):
        torch.manual_seed(2)
        gv = torch.randn(4, 8)
        gt = torch.randn(4, 8)
        gv = gv / gv.norm(dim=-1, keepdim=True)
        gt = gt / gt.norm(dim=-1, keepdim=True)
        base = alignment_loss(gv, gt).item()
        better = alignment_loss(gv, 0.2 * gt + 0.8 * gv)
        assert better.item() < base

    def test_gradients_flow(self):
        gv = torch.randn(3, 8, requires_grad=True)
        gt = torch.randn(3, 8)
        loss = alignment_loss(gv / gv.norm(dim=-1, keepdim=True), gt)
        loss.backward()
        assert gv.grad is not None and torch.isfinite(gv.grad).all()


class TestSaliencyLoss:
    def _four_clip_case(self):
        # Span [0.25, 0.75] over 4 clips: midpoints 0.125,0.375,0.625,0.875
        # -> labels [0,1,1,0].
        labels = torch.tensor([[0.0, 1.0, 1.0, 0.0]])
        mask = torch.ones(1, 4, dtype=torch.bool)
        return labels, mask

    def test_margin_term_hand_computed(self):
        labels, mask = self._four_clip_case()
        scores = torch.tensor([[0.0, 1.0, 1.0, 0.0]])
        # All four (pos, neg) pairs give max(0, 0.2 + 0 - 1) = 0.
        assert saliency_margin_term(scores, labels, mask).item() == pytest.approx(0.0)
        scores_flat = torch.zeros(1, 4)
        # All pairs violate by exactly the margin.
        assert saliency_margin_term(scores_flat, labels, mask).item() == pytest.approx(0.2)

    def test_contrastive_term_hand_computed(self):
        labels, mask = self._four_clip_case()
        scores = torch.zeros(1, 4)
        # Uniform softmax -> -sum(0.5 * log 0.25) over the two positives.
        assert saliency_contrastive_term(scores, labels, mask).item() == pytest.approx(
            math.log(4.0), abs=1e-6
        )

    def test_all_positive_sample_contributes_zero(self):
        labels = torch.ones(1, 4)
        mask = torch.ones(1, 4, dtype=torch.bool)
        scores = torch.randn(1, 4)
        assert saliency_loss(scores, labels, mask).item() == 0.0

    def test_all_negative_sample_contributes_zero(self):
        labels = torch.zeros(1, 4)
        mask = torch.ones(1, 4, dtype=torch.bool)
        scores = torch.randn(1, 4)
        assert saliency_loss(scores, labels, mask).item() == 0.0

    def test_mixed_batch_averages_over_batch(self):
        labels = torch.tensor([[0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 1.0, 1.0]])
        mask = torch.ones(2, 4, dtype=torch.bool)
        scores = torch.zeros(2, 4)
        single = saliency_loss(scores[:1], labels[:1], mask[:1])
        both = saliency_loss(scores, labels, mask)
        # Second sample lacks negatives -> contributes 0, but the divisor is B.
        assert both.item() == pytest.approx(single.item() / 2, abs=1e-6)

    def test_padding_excluded_from_classes(self):
        # The only "negative" sits in padding, so the sample has one class.
        labels = torch.tensor([[1.0, 1.0, 0.0]])
        mask = torch.tensor([[True, True, False]])
        scores = torch.randn(1, 3)
        assert saliency_loss(scores, labels, mask).item() == 0.0

    def test_pair_cap_is_deterministic(self):
        torch.manual_seed(3)
        labels = (torch.rand(2, 40) > 0.5).float()
        labels[:, 0] = 1.0
        labels[:, 1] = 0.0
        mask = torch.ones(2, 40, dtype=torch.bool)
        scores = torch.randn(2, 40)
        a = saliency_margin_term(scores, labels, mask, max_pairs=32)
        b = saliency_margin_term(scores, labels, mask, max_pairs=32)
        assert a.item() == b.item()

    def test_improving_separation_reduces_loss(self):
        labels, mask = self._four_clip_case()
        worse = saliency_loss(torch.tensor([[1.0, 0.0, 0.0, 1.0]]), labels, mask)
        better = saliency_loss(torch.tensor([[-2.0, 2.0, 2.0, -2.0]]), labels, mask)
        assert better.item() < worse.item()


class TestAlignmentEncoder:
    def _cfg(self):
        return EncoderConfig(d_v=12, d_t=10, dim=32, heads=4, num_cross_layers=2, num_self_layers=2, ffn_dim=64, dropout=0.0)

    def _inputs(self, b=2, l=6, t=5, d_v=12, d_t=10):
        torch.manual_seed(0)
        video = torch.randn(b, l, d_v)
        text = torch.randn(b, t, d_t)
        video_mask = torch.ones(b, l, dtype=torch.bool)
        text_mask = torch.ones(b, t, dtype=torch.bool)
        video_mask[1, 4:] = False
        text_mask[1, 3:] = False
        return video, video_mask, text, text_mask

    def test_output_shapes(self):
        enc = AlignmentEncoder(self._cfg()).eval()
        video, vm, text, tm = self._inputs()
        out = enc(video, vm, text, tm)
        assert out.fused.shape == (2, 6, 32)
        assert out.saliency_scores.shape == (2, 6)
        assert out.global_video.shape == (2, 32)
        assert out.global_text.shape == (2, 32)
        assert torch.allclose(out.global_video.norm(dim=-1), torch.ones(2), atol=1e-5)

    def test_single_token_text_broadcasts(self):
        enc = AlignmentEncoder(self._cfg()).eval()
        video, vm, _, _ = self._inputs()
        text = torch.randn(2, 1, 10)
        tm = torch.ones(2, 1, dtype=torch.bool)
        out = enc(video, vm, text, tm)
        assert torch.isfinite(out.fused).all()

    def test_text_padding_invariance(self):
        # Extending the text with masked junk tokens must not change the
        # fused output at valid positions.
        enc = AlignmentEncoder(self._cfg()).eval()
        video, vm, text, tm = self._inputs()
        out = enc(video, vm, text, tm)
        text_padded = torch.cat([text, torch.randn(2, 3, 10) * 50], dim=1)
        tm_padded = torch.cat([tm, torch.zeros(2, 3, dtype=torch.bool)], dim=1)
        out2 = enc(video, vm, text_padded, tm_padded)
        assert torch.allclose(out.fused, out2.fused, atol=1e-6)
        assert torch.allclose(out.global_text, out2.global_text, atol=1e-6)

    def test_video_padding_invariance_at_valid_positions(self):
        enc = AlignmentEncoder(self._cfg()).eval()
        video, vm, text, tm = self._inputs()
        out = enc(video, vm, text, tm)
        video_padded = torch.cat([video, torch.randn(2, 2, 12) * 50], dim=1)
        vm_padded = torch.cat([vm, torch.zeros(2, 2, dtype=torch.bool)], dim=1)
        out2 = enc(video_padded, vm_padded, text, tm)
        assert torch.allclose(out.fused, out2.fused[:, :6], atol=1e-5)
        assert torch.allclose(out.global_video, out2.global_video, atol=1e-6)

    def test_global_features_use_prefusion_streams(self):
        # Pooled features come from the projected streams, so they must not
        # depend on the fusion stack's parameters.
        enc = AlignmentEncoder(self._cfg()).eval()
        video, vm, text, tm = self._inputs()
        before = enc(video, vm, text, tm)
        with torch.no_grad():
            for p in enc.cross_blocks.parameters():
                p.add_(1.0)
        after = enc(video, vm, text, tm)
        assert torch.allclose(before.global_video, after.global_video)
        assert torch.allclose(before.global_text, after.global_text)
        assert not torch.allclose(before.fused, after.fused)

    def test_wrong_feature_dim_rejected(self):
        enc = AlignmentEncoder(self._cfg())
        video, vm, text, tm = self._inputs()
        with pytest.raises(ValueError):
            enc(torch.randn(2, 6, 13), vm, text, tm)

    def test_empty_text_row_rejected(self):
        enc = AlignmentEncoder(self._cfg())
        video, vm, text, tm = self._inputs()
        tm[0] = False
        with pytest.raises(ValueError):
            enc(video, vm, text, tm)

    def test_refine_hook_applied(self):
        enc = AlignmentEncoder(self._cfg()).eval()
        video, vm, text, tm = self._inputs()
        base = enc(video, vm, text, tm)
        enc.refine = lambda v, vm_, t, tm_: v * 0.0
        hooked = enc(video, vm, text, tm)
        assert not torch.allclose(base.fused, hooked.fused)
        # Globals pool the pre-refinement streams.
        assert torch.allclose(base.global_video, hooked.global_video)
