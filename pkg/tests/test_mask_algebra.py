import numpy as np
import pytest

from components.errors import MaskError, PlacementRejected
from components.masks.augmentation import apply_transform, augment, augment_chain, recipe_chains
from components.masks.mask_algebra import (
    CONTEXT,
    amodal_union,
    build_weighted_mask,
    compose_occlusion,
    compose_with_retries,
    sample_placement,
)
from models.sample_model import SampleMeta, Transform


def square_target(size=4):
    image = np.linspace(0.1, 0.9, 3 * size * size).reshape(3, size, size)
    return image, np.ones((size, size), dtype=bool)


def random_disjoint(rng, shape=(8, 8)):
    labels = rng.integers(0, 3, size=shape)
    return labels == 0, labels == 1


def random_sample(rng, size=12):
    image = rng.random((3, size, size))
    target = np.zeros((size, size), dtype=bool)
    target[2:10, 3:9] = True
    occluder = np.ones((5, 4), dtype=bool)
    return compose_with_retries(image, target, occluder, rng, bounds=(0.05, 0.7),
                                meta=SampleMeta(target_id=1, occluder_id=2, dx=0, dy=0, ratio=0.0))


class TestWeightedMask:
    def test_three_cases(self):
        weighted = build_weighted_mask(np.array([[1, 0], [0, 0]]), np.array([[0, 1], [0, 0]]))
        assert weighted.tolist() == [[0.0, 1.0], [0.5, 0.5]]

    def test_empty_masks_give_context(self):
        weighted = build_weighted_mask(np.zeros((3, 3)), np.zeros((3, 3)))
        assert np.all(weighted == CONTEXT)

    def test_histogram_matches_counts(self, rng):
        occ, vis = random_disjoint(rng)
        weighted = build_weighted_mask(occ, vis)
        assert np.sum(weighted == 0.0) == occ.sum()
        assert np.sum(weighted == 1.0) == vis.sum()
        assert np.sum(weighted == 0.5) == occ.size - occ.sum() - vis.sum()

    def test_overlap_rejected(self):
        with pytest.raises(MaskError):
            build_weighted_mask(np.ones((2, 2)), np.eye(2))


class TestAmodalUnion:
    def test_halves_cover_everything(self):
        left = np.zeros((4, 4), dtype=bool)
        left[:, :2] = True
        assert amodal_union(left, ~left).all()

    def test_empty_occluded_returns_visible(self, rng):
        _, vis = random_disjoint(rng)
        assert np.array_equal(amodal_union(np.zeros_like(vis), vis), vis)

    def test_counts_add(self, rng):
        occ, vis = random_disjoint(rng)
        assert amodal_union(occ, vis).sum() == occ.sum() + vis.sum()

    def test_extent_mismatch(self):
        with pytest.raises(MaskError):
            amodal_union(np.zeros((2, 2)), np.zeros((2, 3)))


class TestComposeOcclusion:
    def test_left_half_occluder(self):
        image, mask = square_target()
        sample = compose_occlusion(image, mask, np.ones((4, 2), dtype=bool), (0, 0), bounds=(0.05, 0.7))
        right = np.zeros((4, 4), dtype=bool)
        right[:, 2:] = True
        assert np.array_equal(sample.visible, right)
        assert np.array_equal(sample.occluded, ~right)
        assert np.all(sample.erased_image[:, :, :2] == 0.0)
        sample.check_invariants()

    def test_no_overlap_rejected(self):
        image, mask = square_target()
        with pytest.raises(PlacementRejected) as info:
            compose_occlusion(image, mask, np.ones((2, 2), dtype=bool), (10, 10))
        assert info.value.ratio == 0.0

    def test_full_cover_rejected(self):
        image, mask = square_target()
        with pytest.raises(PlacementRejected) as info:
            compose_occlusion(image, mask, np.ones((6, 6), dtype=bool), (-1, -1))
        assert info.value.ratio == 1.0

    def test_empty_mask(self):
        image, mask = square_target()
        with pytest.raises(MaskError):
            compose_occlusion(image, mask, np.zeros((2, 2), dtype=bool), (0, 0))

    def test_placement_overlaps_bounding_box(self, rng):
        target = np.zeros((10, 10), dtype=bool)
        target[3:6, 4:7] = True
        occluder = np.zeros((4, 4), dtype=bool)
        occluder[1:3, 1:3] = True
        for _ in range(100):
            dx, dy = sample_placement(target, occluder, rng)
            assert 3 - 2 <= dy <= 5 - 1
            assert 4 - 2 <= dx <= 6 - 1

    def test_random_composites_hold_set_equalities(self, rng):
        for _ in range(1000):
            sample = random_sample(rng)
            assert np.array_equal(sample.weighted == 0.0, sample.occluded)
            assert np.array_equal(sample.weighted == 1.0, sample.visible)
            assert np.array_equal(sample.weighted == 0.5, ~(sample.occluded | sample.visible))
            assert np.array_equal(sample.amodal, sample.occluded | sample.visible)
            assert 0.05 <= sample.meta.ratio <= 0.7

    def test_retries_exhausted(self, rng):
        image, mask = square_target()
        with pytest.raises(PlacementRejected):
            compose_with_retries(image, mask, np.ones((8, 8), dtype=bool), rng, bounds=(0.05, 0.7), max_tries=5)


class TestAugment:
    def test_hflip_is_an_involution(self, rng):
        sample = random_sample(rng)
        twice = augment_chain(sample, [Transform(kind="hflip")] * 2)
        for name in ("gt_image", "erased_image", "occluded", "visible", "amodal", "weighted"):
            assert np.array_equal(getattr(twice, name), getattr(sample, name))

    def test_four_quarter_turns(self, rng):
        sample = random_sample(rng)
        turned = augment_chain(sample, [Transform(kind="rot90", k=1)] * 4)
        assert np.array_equal(turned.gt_image, sample.gt_image)
        assert np.array_equal(turned.weighted, sample.weighted)
        assert turned.meta.transforms == ["rot90x1"] * 4

    @pytest.mark.parametrize("transform", [
        Transform(kind="crop", box=(1, 2, 9, 8)),
        Transform(kind="shift", dx=2, dy=-3),
        Transform(kind="resize", size=(16, 16)),
        Transform(kind="rot90", k=3),
    ])
    def test_invariants_survive(self, transform, rng):
        augment(random_sample(rng), transform).check_invariants()

    @pytest.mark.parametrize("transform", [
        Transform(kind="hflip"),
        Transform(kind="rot90", k=2),
        Transform(kind="crop", box=(0, 1, 7, 6)),
        Transform(kind="shift", dx=-3, dy=4),
        Transform(kind="resize", size=(5, 9)),
    ])
    def test_commutes_with_weighted_mask(self, transform, rng):
        occ, vis = random_disjoint(rng)
        built_after = build_weighted_mask(apply_transform(occ, transform, False), apply_transform(vis, transform, False))
        built_before = apply_transform(build_weighted_mask(occ, vis), transform, CONTEXT)
        assert np.array_equal(built_after, built_before)

    def test_evicting_visible_region(self):
        image, mask = square_target(8)
        sample = compose_occlusion(image, mask, np.ones((8, 4), dtype=bool), (0, 0))
        with pytest.raises(MaskError):
            augment(sample, Transform(kind="crop", box=(0, 0, 8, 4)))

    def test_crop_outside_frame(self, rng):
        with pytest.raises(MaskError):
            augment(random_sample(rng), Transform(kind="crop", box=(5, 5, 10, 10)))

    def test_x4_recipe_yields_four_chains(self, rng):
        sample = random_sample(rng)
        chains = recipe_chains("x4", sample.extents, rng)
        assert len(chains) == 4
        for chain in chains:
            out = augment_chain(sample, chain)
            assert out.extents == sample.extents
            out.check_invariants()
