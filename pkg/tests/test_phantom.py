import numpy as np
import pytest

from parkvol.errors import InvalidArgument
from parkvol.io import STRUCTURES
from parkvol.phantom import (
    DESK_COHORT_SIZES,
    AtrophyProfile,
    Condition,
    Subject,
    generate_cohort,
    generate_subject,
    load_cohort_manifest,
    load_subject,
    save_cohort,
)

DIMS = (64, 64, 32)


def brain_interior(dims):
    h, w, d = dims
    gx, gy, gz = np.ogrid[0:h, 0:w, 0:d]
    c = ((h - 1) / 2, (w - 1) / 2, (d - 1) / 2)
    semi = (0.42 * h, 0.45 * w, 0.40 * d)
    return ((gx - c[0]) / semi[0]) ** 2 + ((gy - c[1]) / semi[1]) ** 2 + (
        (gz - c[2]) / semi[2]
    ) ** 2 <= 1.0


class TestGenerateSubject:
    def test_determinism(self):
        a = generate_subject(9, Condition.MSA_C, DIMS)
        b = generate_subject(9, Condition.MSA_C, DIMS)
        np.testing.assert_array_equal(a.volume.data, b.volume.data)
        for s in STRUCTURES:
            np.testing.assert_array_equal(a.reference_masks[s].data, b.reference_masks[s].data)
        assert a.true_volumes == b.true_volumes

    @pytest.mark.parametrize("seed", [0, 5, 17])
    def test_psp_midbrain_scale_contract(self, seed):
        psp = generate_subject(seed, Condition.PSP, DIMS)
        normal = generate_subject(seed, Condition.NORMAL, DIMS)
        ratio = psp.true_volumes["midbrain"] / normal.true_volumes["midbrain"]
        assert 0.65 <= ratio <= 0.75

    @pytest.mark.parametrize("seed", [1, 2, 3])
    @pytest.mark.parametrize("condition", list(Condition))
    def test_masks_disjoint_and_inside_brain(self, seed, condition):
        sub = generate_subject(seed, condition, DIMS)
        # brute-force voxel scan: no voxel claimed twice, none outside brain
        total = np.zeros(DIMS, dtype=np.int16)
        brain = brain_interior(DIMS)
        for s in STRUCTURES:
            m = sub.reference_masks[s].data
            total += m
            assert (m.astype(bool) <= brain).all()
        assert total.max() <= 1

    def test_true_volumes_match_masks(self):
        sub = generate_subject(4, Condition.PD, DIMS)
        voxel = sub.volume.voxel_volume_mm3()
        for s in STRUCTURES:
            assert sub.true_volumes[s] == pytest.approx(
                sub.reference_masks[s].voxel_count() * voxel
            )

    def test_volume_monotone_in_scale(self):
        vols = []
        for scale in (1.0, 0.85, 0.7, 0.55):
            table = {Condition.NORMAL: AtrophyProfile({"midbrain": scale})}
            sub = generate_subject(6, Condition.NORMAL, DIMS, table)
            vols.append(sub.true_volumes["midbrain"])
        assert all(a > b for a, b in zip(vols, vols[1:]))

    def test_small_dims_rejected(self):
        with pytest.raises(InvalidArgument):
            generate_subject(0, Condition.NORMAL, (16, 64, 32))

    def test_missing_profile_rejected(self):
        with pytest.raises(InvalidArgument):
            generate_subject(0, Condition.PSP, DIMS, {Condition.NORMAL: AtrophyProfile()})

    def test_intensity_noise_applied_inside_brain_only(self):
        sub = generate_subject(3, Condition.NORMAL, DIMS)
        outside = ~brain_interior(DIMS)
        assert (sub.volume.data[outside] == 0).all()
        assert sub.volume.data[~outside].std() > 0


class TestProfiles:
    def test_scale_bounds(self):
        with pytest.raises(InvalidArgument):
            AtrophyProfile({"pons": 0.0})
        with pytest.raises(InvalidArgument):
            AtrophyProfile({"pons": 2.5})

    def test_unknown_structure(self):
        with pytest.raises(InvalidArgument):
            AtrophyProfile({"cerebellum": 0.9})

    def test_default_scale_is_one(self):
        assert AtrophyProfile().scale("pons") == 1.0


class TestCohort:
    def test_empty(self):
        assert generate_cohort(1, {c: 0 for c in Condition}) == []

    def test_desk_cohort_counts(self):
        cohort = generate_cohort(7, DESK_COHORT_SIZES, DIMS)
        assert len(cohort) == 57
        for cond, n in DESK_COHORT_SIZES.items():
            assert sum(1 for s in cohort if s.condition is cond) == n

    def test_cohort_determinism(self):
        a = generate_cohort(3, {Condition.NORMAL: 3, Condition.PSP: 2}, DIMS)
        b = generate_cohort(3, {Condition.NORMAL: 3, Condition.PSP: 2}, DIMS)
        assert [s.id for s in a] == [s.id for s in b]
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.volume.data, sb.volume.data)

    def test_negative_count_rejected(self):
        with pytest.raises(InvalidArgument):
            generate_cohort(1, {Condition.NORMAL: -1})

    def test_msac_pons_smaller_than_normal(self):
        cohort = generate_cohort(21, {Condition.NORMAL: 9, Condition.MSA_C: 9}, DIMS)
        normal = [s.true_volumes["pons"] for s in cohort if s.condition is Condition.NORMAL]
        msac = [s.true_volumes["pons"] for s in cohort if s.condition is Condition.MSA_C]
        assert np.mean(msac) < np.mean(normal)


class TestManifest:
    def test_save_and_load_round_trip(self, tmp_path):
        cohort = generate_cohort(5, {Condition.NORMAL: 2, Condition.MSA_P: 2}, DIMS)
        manifest_path = save_cohort(cohort, tmp_path / "cohort", seed=5)
        manifest = load_cohort_manifest(manifest_path)
        assert manifest["seed"] == 5
        assert manifest["counts"]["Normal"] == 2
        assert manifest["counts"]["MSA-P"] == 2
        assert len(manifest["subjects"]) == 4

        sub = load_subject(manifest_path, manifest["subjects"][0])
        orig = next(s for s in cohort if s.id == sub.id)
        np.testing.assert_allclose(sub.volume.data, orig.volume.data, atol=0)
        for s in STRUCTURES:
            np.testing.assert_array_equal(sub.reference_masks[s].data, orig.reference_masks[s].data)
        assert sub.condition is orig.condition
        assert sub.true_volumes == pytest.approx(orig.true_volumes)

    def test_subject_requires_all_masks(self):
        sub = generate_subject(1, Condition.NORMAL, DIMS)
        masks = dict(sub.reference_masks)
        masks.pop("pons")
        with pytest.raises(InvalidArgument):
            Subject("x", sub.volume, masks, Condition.NORMAL, sub.true_volumes)


class TestConditionLabels:
    @pytest.mark.parametrize(
        "label,expected",
        [
            ("normal", Condition.NORMAL),
            ("PD", Condition.PD),
            ("msac", Condition.MSA_C),
            ("MSA-P", Condition.MSA_P),
            ("msa_c", Condition.MSA_C),
            ("psp", Condition.PSP),
        ],
    )
    def test_from_label(self, label, expected):
        assert Condition.from_label(label) is expected

    def test_unknown_label(self):
        with pytest.raises(InvalidArgument):
            Condition.from_label("als")
