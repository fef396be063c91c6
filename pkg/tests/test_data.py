"""Synthetic scene generator tests: constructive guarantees, determinism."""

import numpy as np
import pytest
from scipy import ndimage

from winshade.data import (
    CATEGORIES,
    category_from_stem,
    hflip,
    load_dataset,
    save_dataset,
    synth_dataset,
    synth_sample,
    synth_scene,
)
from winshade.errors import ParameterError


class TestSynthSample:
    @pytest.mark.parametrize("category", CATEGORIES)
    def test_basic_contract(self, category):
        s = synth_sample(123, category, 64)
        assert s.image.shape == (3, 64, 64)
        assert s.mask.shape == (1, 64, 64)
        assert np.all((s.mask == 0) | (s.mask == 1))
        assert np.all(np.isfinite(s.image))
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.mask.sum() >= 30

    @pytest.mark.parametrize("seed", [1, 22, 333, 4444])
    def test_non_adjacent_components_disjoint(self, seed):
        s, obj, shadow = synth_scene(seed, "non-adjacent", 64)
        four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)
        grown = ndimage.binary_dilation(obj, four)
        assert not (grown & shadow).any()
        # the union's connected components keep object and shadow apart
        labels, n = ndimage.label(obj | shadow, structure=four)
        obj_ids = set(np.unique(labels[obj])) - {0}
        shadow_ids = set(np.unique(labels[shadow])) - {0}
        assert not (obj_ids & shadow_ids)

    @pytest.mark.parametrize("seed", [5, 66, 777, 8888])
    def test_ambiguous_object_not_brighter_than_shadow(self, seed):
        s, obj, shadow = synth_scene(seed, "ambiguous-adjacent", 64)
        lum = s.image.mean(axis=0)
        assert lum[obj].mean() <= lum[shadow].mean()

    @pytest.mark.parametrize("seed", [9, 101, 2020])
    def test_adjacent_touches(self, seed):
        s, obj, shadow = synth_scene(seed, "normal-adjacent", 64)
        four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)
        grown = ndimage.binary_dilation(obj, four)
        assert (grown & shadow).any()

    def test_fixed_seed_bitwise_identical(self):
        a = synth_sample(42, "ambiguous-adjacent", 64)
        b = synth_sample(42, "ambiguous-adjacent", 64)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)

    def test_unknown_category(self):
        with pytest.raises(ParameterError):
            synth_sample(0, "weird", 64)


class TestDataset:
    def test_category_cycling_and_count(self):
        ds = synth_dataset(3, 9, 32)
        assert len(ds) == 9
        assert [s.category for s in ds[:3]] == list(CATEGORIES)

    def test_deterministic(self):
        a = synth_dataset(5, 6, 32)
        b = synth_dataset(5, 6, 32)
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)

    def test_hflip_involution(self):
        s = synth_sample(7, "normal-adjacent", 32)
        back = hflip(hflip(s))
        assert np.array_equal(back.image, s.image)
        assert np.array_equal(back.mask, s.mask)

    def test_roundtrip_through_disk(self, tmp_path):
        ds = synth_dataset(11, 3, 32)
        save_dataset(ds, tmp_path)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == 3
        for orig, back in zip(ds, loaded):
            assert back.category == orig.category
            assert np.array_equal(back.mask, orig.mask)  # masks binarize exactly
            assert np.abs(back.image - orig.image).max() <= 0.5 / 255 + 1e-12

    def test_missing_layout(self, tmp_path):
        with pytest.raises(ParameterError):
            load_dataset(tmp_path)

    def test_category_from_stem(self):
        assert category_from_stem("0001_ambiguous-adjacent") == "ambiguous-adjacent"
        assert category_from_stem("photo1234") == "unknown"
