"""Metric tests: BER hand values, naive-loop oracle, loss hand values."""

import numpy as np
import pytest

from winshade import tensor as T
from winshade.errors import DimensionError
from winshade.metrics import (
    EvalAccumulator,
    ber_from_counts,
    confusion_counts,
    resolved_at_threshold,
)
from winshade.training import weighted_ce_loss

from oracles import ber_naive, weighted_ce_naive


class TestBer:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        gt = (rng.random((1, 16, 16)) > 0.5).astype(float)
        ber, shadow, nonshadow = ber_from_counts(*confusion_counts(gt, gt)[:4])
        assert ber == 0.0 and shadow == 0.0 and nonshadow == 0.0

    def test_total_inversion(self):
        rng = np.random.default_rng(1)
        gt = (rng.random((1, 16, 16)) > 0.5).astype(float)
        ber, _, _ = ber_from_counts(*confusion_counts(1.0 - gt, gt))
        assert ber == 100.0

    def test_hand_values(self):
        # TP=90, FN=10, TN=80, FP=20 -> BER = (1 - (0.9+0.8)/2) * 100 = 15.0
        ber, shadow, nonshadow = ber_from_counts(90, 80, 20, 10)
        assert ber == pytest.approx(15.0, abs=1e-12)
        assert shadow == pytest.approx(10.0, abs=1e-12)
        assert nonshadow == pytest.approx(20.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_loop(self, seed):
        rng = np.random.default_rng(seed)
        pred = (rng.random((1, 12, 12)) > 0.5).astype(float)
        gt = (rng.random((1, 12, 12)) > 0.4).astype(float)
        tp, tn, fp, fn = confusion_counts(pred, gt)
        ber, shadow, nonshadow = ber_from_counts(tp, tn, fp, fn)
        ref_ber, ref_s, ref_n, ref_counts = ber_naive(pred, gt)
        assert (tp, tn, fp, fn) == ref_counts
        assert ber == ref_ber and shadow == ref_s and nonshadow == ref_n

    def test_absent_class_reported_absent(self):
        gt = np.zeros((1, 4, 4))
        pred = np.zeros((1, 4, 4))
        ber, shadow, nonshadow = ber_from_counts(*confusion_counts(pred, gt))
        assert shadow is None
        assert nonshadow == 0.0
        assert ber is None

    def test_class_relabel_symmetry(self):
        rng = np.random.default_rng(5)
        pred = (rng.random((1, 10, 10)) > 0.5).astype(float)
        gt = (rng.random((1, 10, 10)) > 0.5).astype(float)
        ber1, s1, n1 = ber_from_counts(*confusion_counts(pred, gt))
        ber2, s2, n2 = ber_from_counts(*confusion_counts(1 - pred, 1 - gt))
        assert ber1 == pytest.approx(ber2, abs=1e-12)
        assert s1 == pytest.approx(n2, abs=1e-12)
        assert n1 == pytest.approx(s2, abs=1e-12)

    def test_pooling_equals_concatenation(self):
        rng = np.random.default_rng(6)
        masks = [
            ((rng.random((1, 8, 8)) > 0.5).astype(float), (rng.random((1, 8, 8)) > 0.5).astype(float))
            for _ in range(5)
        ]
        acc = EvalAccumulator()
        for pred, gt in masks:
            acc.update(pred, gt)
        pooled = acc.report()
        all_pred = np.concatenate([p for p, _ in masks])
        all_gt = np.concatenate([g for _, g in masks])
        ber, shadow, nonshadow = ber_from_counts(*confusion_counts(all_pred, all_gt))
        assert pooled.ber == ber
        assert pooled.ber_shadow == shadow
        assert pooled.ber_nonshadow == nonshadow

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            confusion_counts(np.zeros((2, 2)), np.zeros((3, 3)))


class TestResolved:
    def test_identical_masks(self):
        gt = np.ones((64, 64))
        assert resolved_at_threshold(gt, gt)

    def test_just_below_threshold(self):
        gt = np.zeros((64, 64))
        pred = gt.copy().reshape(-1)
        pred[:410] = 1.0  # accuracy 3686/4096 = 0.89990... -> not resolved
        assert not resolved_at_threshold(pred.reshape(64, 64), gt)

    def test_just_above_threshold(self):
        gt = np.zeros((64, 64))
        pred = gt.copy().reshape(-1)
        pred[:409] = 1.0  # accuracy 3687/4096 = 0.90015... -> resolved
        assert resolved_at_threshold(pred.reshape(64, 64), gt)


class TestWeightedCeLoss:
    def test_perfect_prediction_loss_vanishes(self):
        rng = np.random.default_rng(7)
        mask = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
        logits = T.Tensor(np.where(mask > 0.5, 500.0, -500.0))
        loss = weighted_ce_loss(logits, mask)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_balanced_half_probability_hand_value(self):
        # N_p == N_n, all p = 0.5: L = pixels * 0.5 * ln 2 per image
        mask = np.zeros((1, 1, 4, 4))
        mask[0, 0, :2, :] = 1.0
        logits = T.Tensor(np.zeros((1, 1, 4, 4)))
        loss = weighted_ce_loss(logits, mask)
        assert loss.item() == pytest.approx(16 * 0.5 * np.log(2.0), rel=1e-12)

    def test_single_pixel_contribution(self):
        # one shadow pixel at p=0.5 in a balanced image adds 0.5*ln2
        mask = np.zeros((1, 1, 4, 4))
        mask[0, 0, :2, :] = 1.0
        base = np.where(mask > 0.5, 500.0, -500.0)
        loss0 = weighted_ce_loss(T.Tensor(base), mask).item()
        pert = base.copy()
        pert[0, 0, 0, 0] = 0.0  # p = 0.5 on one shadow pixel
        loss1 = weighted_ce_loss(T.Tensor(pert), mask).item()
        assert loss1 - loss0 == pytest.approx(0.5 * np.log(2.0), rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_loop(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(scale=3.0, size=(2, 1, 6, 6))
        mask = (rng.random((2, 1, 6, 6)) > 0.4).astype(float)
        got = weighted_ce_loss(T.Tensor(logits), mask).item()
        want = weighted_ce_naive(logits, mask)
        assert got == pytest.approx(want, abs=1e-10)

    def test_weight_symmetry_under_class_swap(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(1, 1, 6, 6))
        mask = (rng.random((1, 1, 6, 6)) > 0.5).astype(float)
        l1 = weighted_ce_loss(T.Tensor(logits), mask).item()
        l2 = weighted_ce_loss(T.Tensor(-logits), 1.0 - mask).item()
        assert l1 == pytest.approx(l2, rel=1e-12)

    def test_degenerate_all_background_is_zero(self):
        # the absent class carries weight 0, so the whole image contributes 0
        logits = T.Tensor(np.full((1, 1, 4, 4), 2.0))
        loss = weighted_ce_loss(logits, np.zeros((1, 1, 4, 4)))
        assert loss.item() == 0.0

    def test_gradient_matches_finite_differences(self):
        from oracles import fd_gradient

        rng = np.random.default_rng(12)
        logits_data = rng.normal(size=(2, 1, 4, 4))
        mask = (rng.random((2, 1, 4, 4)) > 0.5).astype(float)
        x = T.Tensor(logits_data, requires_grad=True)
        with T.Tape() as tape:
            loss = weighted_ce_loss(x, mask)
        T.backward(loss, tape)
        fd = fd_gradient(
            lambda: weighted_ce_loss(T.Tensor(x.data), mask).item(), x.data, h=1e-6
        )
        err = np.abs(x.grad - fd) / np.maximum(np.maximum(np.abs(fd), np.abs(x.grad)), 1e-7)
        assert err.max() < 1e-4
