import numpy as np
import pytest

from oracles import dilate_reference, ellipsoid_offsets, window_voxels
from prlkit.errors import InputError
from prlkit.prep import (
    DILATION_MM,
    PATCH_SHAPE,
    LesionPatch,
    apply_dilated_mask,
    attach_probability,
    crop_patch,
    dilate_mask_mm,
    ellipsoid_element,
    with_dilated_mask,
)
from prlkit.volume import Spacing, Volume, label_components

SP = Spacing(0.4, 0.4, 1.0)
ISO = Spacing(1.0, 1.0, 1.0)


def _labels_from(mask, spacing=SP):
    return label_components(Volume.binary(mask, spacing), 26)


class TestCropPatch:
    def test_single_voxel_centered(self):
        shape = (128, 128, 48)
        mask = np.zeros(shape, np.uint8)
        mask[64, 64, 24] = 1
        qsm = Volume.intensity(np.zeros(shape), SP)
        patch = crop_patch(qsm, _labels_from(mask), 1)
        assert patch.shape == PATCH_SHAPE
        assert patch.flair_mask.foreground_count() == 1
        assert patch.flair_mask.data[32, 32, 12] == 1
        assert patch.offset == (64 - 32, 64 - 32, 24 - 12)
        assert not patch.truncated

    def test_corner_lesion_zero_padded(self):
        shape = (40, 40, 20)
        mask = np.zeros(shape, np.uint8)
        mask[0:3, 0:3, 0:2] = 1
        qsm = Volume.intensity(np.ones(shape), SP)
        patch = crop_patch(qsm, _labels_from(mask), 1)
        assert patch.flair_mask.foreground_count() == 18  # whole lesion fits
        # everything outside the parent volume is zero
        assert patch.qsm.data[0, 0, 0] == 0.0
        assert not patch.truncated

    def test_random_blobs_window_intersection_oracle(self):
        rng = np.random.default_rng(21)
        shape = (90, 80, 40)
        for _ in range(12):
            mask = np.zeros(shape, bool)
            cx, cy, cz = rng.integers(0, 90), rng.integers(0, 80), rng.integers(0, 40)
            rx, ry, rz = rng.integers(1, 30), rng.integers(1, 30), rng.integers(1, 14)
            mask[
                max(cx - rx, 0) : cx + rx,
                max(cy - ry, 0) : cy + ry,
                max(cz - rz, 0) : cz + rz,
            ] = True
            labels = _labels_from(mask.astype(np.uint8))
            qsm = Volume.intensity(rng.normal(size=shape), SP)
            patch = crop_patch(qsm, labels, 1)
            coords = [tuple(c) for c in np.argwhere(mask)]
            expected = window_voxels(coords, patch.offset, PATCH_SHAPE)
            assert patch.flair_mask.foreground_count() == expected
            assert patch.truncated == (expected < len(coords))

    def test_translation_consistency(self):
        rng = np.random.default_rng(33)
        shape = (100, 100, 44)
        mask = np.zeros(shape, bool)
        mask[40:46, 50:57, 18:22] = True
        qsm_data = rng.normal(size=shape)
        patch_a = crop_patch(Volume.intensity(qsm_data, SP), _labels_from(mask.astype(np.uint8)), 1)
        shift = (5, -3, 2)
        mask_b = np.roll(mask, shift, axis=(0, 1, 2))
        qsm_b = np.roll(qsm_data, shift, axis=(0, 1, 2))
        patch_b = crop_patch(Volume.intensity(qsm_b, SP), _labels_from(mask_b.astype(np.uint8)), 1)
        assert np.array_equal(patch_a.flair_mask.data, patch_b.flair_mask.data)
        assert np.allclose(patch_a.qsm.data, patch_b.qsm.data)

    def test_unknown_lesion_id(self):
        mask = np.zeros((32, 32, 16), np.uint8)
        mask[4, 4, 4] = 1
        with pytest.raises(InputError):
            crop_patch(Volume.intensity(np.zeros(mask.shape), SP), _labels_from(mask), 2)

    def test_grid_mismatch(self):
        mask = np.zeros((32, 32, 16), np.uint8)
        mask[4, 4, 4] = 1
        qsm = Volume.intensity(np.zeros((32, 32, 16)), Spacing(1.0, 1.0, 1.0))
        with pytest.raises(InputError):
            crop_patch(qsm, _labels_from(mask), 1)


class TestDilation:
    def test_unit_ball_is_cross(self):
        mask = np.zeros((7, 7, 7), np.uint8)
        mask[3, 3, 3] = 1
        out = dilate_mask_mm(Volume.binary(mask, ISO), 1.0)
        assert out.foreground_count() == 7
        assert out.data[3, 3, 3] and out.data[2, 3, 3] and out.data[3, 3, 4]
        assert not out.data[2, 2, 3]

    def test_paper_spacing_3mm_matches_enumeration(self):
        offsets = ellipsoid_offsets(SP.as_tuple(), 3.0)
        assert max(abs(o[0]) for o in offsets) == 7
        assert max(abs(o[1]) for o in offsets) == 7
        assert max(abs(o[2]) for o in offsets) == 3
        element = ellipsoid_element(SP, 3.0)
        assert int(element.sum()) == len(offsets)
        mask = np.zeros((32, 32, 16), np.uint8)
        mask[16, 16, 8] = 1
        out = dilate_mask_mm(Volume.binary(mask, SP), 3.0)
        assert out.foreground_count() == len(offsets)

    def test_radius_below_spacing_is_identity(self):
        rng = np.random.default_rng(2)
        mask = (rng.random((20, 20, 10)) < 0.1).astype(np.uint8)
        out = dilate_mask_mm(Volume.binary(mask, SP), 0.3)
        assert np.array_equal(out.data, mask)

    def test_matches_stamping_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            mask = (rng.random((24, 22, 12)) < 0.02)
            out = dilate_mask_mm(Volume.binary(mask, SP), 3.0)
            ref = dilate_reference(mask, SP.as_tuple(), 3.0)
            assert np.array_equal(out.data.astype(bool), ref)

    def test_extensivity_and_monotonicity(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = (rng.random((20, 20, 10)) < 0.05)
            b = a | (rng.random((20, 20, 10)) < 0.05)
            da = dilate_mask_mm(Volume.binary(a, SP), 2.0).data.astype(bool)
            db = dilate_mask_mm(Volume.binary(b, SP), 2.0).data.astype(bool)
            assert (a <= da).all()  # extensive
            assert (da <= db).all()  # monotone

    def test_radius_nesting(self):
        rng = np.random.default_rng(8)
        mask = (rng.random((20, 20, 10)) < 0.05)
        small = dilate_mask_mm(Volume.binary(mask, SP), 1.5).data.astype(bool)
        large = dilate_mask_mm(Volume.binary(mask, SP), 3.0).data.astype(bool)
        assert (small <= large).all()

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(InputError):
            dilate_mask_mm(Volume.binary(np.zeros((4, 4, 4), np.uint8), SP), 0.0)

    def test_rejects_non_mask(self):
        with pytest.raises(InputError):
            dilate_mask_mm(Volume.intensity(np.zeros((4, 4, 4)), SP), 1.0)


class TestApplyDilatedMask:
    def _patch(self, dilated=None):
        rng = np.random.default_rng(9)
        qsm = rng.normal(size=PATCH_SHAPE)
        flair = np.zeros(PATCH_SHAPE, np.uint8)
        flair[30:34, 30:34, 10:14] = 1
        patch = LesionPatch(
            lesion_id=1,
            offset=(0, 0, 0),
            qsm=Volume.intensity(qsm, SP),
            flair_mask=Volume.binary(flair, SP),
        )
        if dilated == "ones":
            return LesionPatch(
                lesion_id=1, offset=(0, 0, 0), qsm=patch.qsm, flair_mask=patch.flair_mask,
                dilated_mask=Volume.binary(np.ones(PATCH_SHAPE, np.uint8), SP),
            )
        if dilated == "real":
            return with_dilated_mask(patch, DILATION_MM)
        return patch

    def test_all_ones_mask_is_identity(self):
        patch = self._patch("ones")
        out = apply_dilated_mask(patch)
        assert np.array_equal(out.qsm.data, patch.qsm.data)
        assert out.masked

    def test_missing_dilated_mask(self):
        with pytest.raises(InputError):
            apply_dilated_mask(self._patch())

    def test_outside_zero_inside_untouched(self):
        patch = self._patch("real")
        out = apply_dilated_mask(patch)
        keep = patch.dilated_mask.data.astype(bool)
        assert np.abs(out.qsm.data[~keep]).sum() == 0.0
        assert np.array_equal(out.qsm.data[keep], patch.qsm.data[keep])

    def test_all_zero_dilated_mask_rejected_when_flair_nonempty(self):
        # flair ⊄ dilated violates the patch invariant
        patch = self._patch()
        with pytest.raises(InputError):
            LesionPatch(
                lesion_id=1, offset=(0, 0, 0), qsm=patch.qsm, flair_mask=patch.flair_mask,
                dilated_mask=Volume.binary(np.zeros(PATCH_SHAPE, np.uint8), SP),
            )

    def test_all_zero_dilated_mask_zeroes_qsm(self):
        qsm = Volume.intensity(np.ones(PATCH_SHAPE), SP)
        empty = Volume.binary(np.zeros(PATCH_SHAPE, np.uint8), SP)
        patch = LesionPatch(lesion_id=1, offset=(0, 0, 0), qsm=qsm, flair_mask=empty, dilated_mask=empty)
        out = apply_dilated_mask(patch)
        assert np.abs(out.qsm.data).sum() == 0.0

    def test_prob_masked_too(self):
        patch = self._patch("real")
        rng = np.random.default_rng(10)
        patch = attach_probability(patch, Volume.probability(rng.random(PATCH_SHAPE), SP))
        out = apply_dilated_mask(patch)
        outside = ~patch.dilated_mask.data.astype(bool)
        assert out.prob.data[outside].sum() == 0.0

    def test_flair_subset_of_dilated_enforced(self):
        patch = self._patch("real")
        assert (patch.flair_mask.data <= patch.dilated_mask.data).all()
