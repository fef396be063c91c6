"""Fusion tests: boundary rules, goldens, head and fusion contracts."""

import json
from pathlib import Path

import numpy as np
import pytest

from winshade import tensor as T
from winshade.errors import DimensionError
from winshade.fusion import add_fusion_params, bottom_up, predict_and_fuse, top_down
from winshade.params import ModelParams

GOLDEN = Path(__file__).parent / "golden"


def make_params(dim=32, levels=4, seed=0):
    params = ModelParams()
    add_fusion_params(params, "mla", dim, levels, np.random.default_rng(seed))
    return params


def pyramid(rng, dim=32, sizes=(16, 8, 4, 2), n=1):
    return [T.Tensor(rng.normal(size=(n, dim, s, s))) for s in sizes]


class TestTopDown:
    def test_single_level_boundary_rule(self):
        params = make_params(dim=4, levels=1, seed=1)
        rng = np.random.default_rng(2)
        z1 = [T.Tensor(rng.normal(size=(1, 4, 4, 4)))]
        z2 = top_down(z1, params, "mla")
        assert len(z2) == 1 and z2[0].shape == (1, 4, 4, 4)

    def test_shapes_preserved(self):
        params = make_params()
        z1 = pyramid(np.random.default_rng(3))
        z2 = top_down(z1, params, "mla")
        assert [t.shape for t in z2] == [t.shape for t in z1]

    def test_zero_convs_give_zero(self):
        params = make_params(seed=4)
        params.zero_by_suffix([".td0.w", ".td0.b", ".td1.w", ".td1.b",
                               ".td2.w", ".td2.b", ".td3.w", ".td3.b"])
        z1 = pyramid(np.random.default_rng(5))
        z2 = top_down(z1, params, "mla")
        for t in z2:
            np.testing.assert_array_equal(t.data, 0.0)

    def test_resolution_mismatch(self):
        params = make_params()
        rng = np.random.default_rng(6)
        bad = [T.Tensor(rng.normal(size=(1, 32, 16, 16))),
               T.Tensor(rng.normal(size=(1, 32, 5, 5)))]
        with pytest.raises(DimensionError):
            top_down(bad, params, "mla")


class TestBottomUp:
    def test_zero_in_zero_out(self):
        z2 = [T.Tensor(np.zeros((1, 8, s, s))) for s in (8, 4, 2)]
        z3 = bottom_up(z2)
        for t in z3:
            np.testing.assert_array_equal(t.data, 0.0)

    def test_constant_propagates(self):
        c = 1.7
        z2 = [T.Tensor(np.full((1, 2, 8, 8), c)),
              T.Tensor(np.zeros((1, 2, 4, 4))),
              T.Tensor(np.zeros((1, 2, 2, 2)))]
        z3 = bottom_up(z2)
        for t in z3:
            np.testing.assert_allclose(t.data, c, atol=1e-12)

    def test_boundary_rule_first_level(self):
        rng = np.random.default_rng(7)
        z2 = pyramid(rng, dim=3, sizes=(4, 2))
        z3 = bottom_up(z2)
        np.testing.assert_array_equal(z3[0].data, z2[0].data)

    def test_three_level_golden(self):
        golden = json.loads((GOLDEN / "bottom_up_3level.json").read_text())
        z2 = [T.Tensor(np.array(m, dtype=float).reshape(1, 1, len(m), len(m))) for m in golden["z2"]]
        z3 = bottom_up(z2)
        for got, want in zip(z3, golden["z3"]):
            np.testing.assert_allclose(got.data[0, 0], np.array(want, dtype=float), atol=1e-12)


class TestPredictAndFuse:
    def test_zero_heads_chance_level(self):
        params = make_params(seed=8)
        params.zero_by_suffix([".head0.w", ".head0.b", ".head1.w", ".head1.b",
                               ".head2.w", ".head2.b", ".head3.w", ".head3.b",
                               ".fuse.w", ".fuse.b"])
        z3 = pyramid(np.random.default_rng(9))
        level_maps, fused = predict_and_fuse(z3, params, "mla", (64, 64))
        for m in level_maps:
            np.testing.assert_array_equal(m.data, 0.0)
        np.testing.assert_array_equal(fused.data, 0.0)
        probs = T.sigmoid(fused).data
        np.testing.assert_allclose(probs, 0.5, atol=1e-15)

    def test_all_maps_full_resolution(self):
        params = make_params(seed=10)
        z3 = pyramid(np.random.default_rng(11), n=2)
        level_maps, fused = predict_and_fuse(z3, params, "mla", (64, 64))
        assert all(m.shape == (2, 1, 64, 64) for m in level_maps)
        assert fused.shape == (2, 1, 64, 64)

    def test_one_hot_fusion_selects_level(self):
        params = make_params(seed=12)
        params.set_data("mla.fuse.w", np.array([1.0, 0.0, 0.0, 0.0]).reshape(1, 4, 1, 1))
        params.set_data("mla.fuse.b", np.zeros(1))
        z3 = pyramid(np.random.default_rng(13))
        level_maps, fused = predict_and_fuse(z3, params, "mla", (64, 64))
        np.testing.assert_allclose(fused.data, level_maps[0].data, atol=1e-15)
