import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import consecutive_rule
from prlkit.detection import (
    DetectionThresholds,
    RimRatioProfile,
    classify_lesion,
    lesion_score,
    rim_ratio_profile,
)
from prlkit.errors import InputError
from prlkit.morphology import SliceMeasure


def _profile(slice_to_ratio: dict[int, float]) -> RimRatioProfile:
    indices = tuple(sorted(slice_to_ratio))
    return RimRatioProfile(
        lesion_id=1,
        tau_p=0.5,
        slice_indices=indices,
        ratios=tuple(slice_to_ratio[z] for z in indices),
    )


class TestProfile:
    def test_direct_formula(self):
        measures = [SliceMeasure(slice_index=3, rim_length=4, flair_perimeter=40)]
        profile = rim_ratio_profile(measures, lesion_id=9, tau_p=0.7)
        assert profile.ratios == (0.1,)
        assert profile.slice_indices == (3,)
        assert profile.lesion_id == 9 and profile.tau_p == 0.7

    def test_zero_rim_everywhere(self):
        measures = [SliceMeasure(slice_index=z, rim_length=0, flair_perimeter=12) for z in range(5)]
        profile = rim_ratio_profile(measures)
        assert profile.ratios == (0.0,) * 5

    def test_zero_perimeter_slices_excluded_and_recorded(self):
        measures = [
            SliceMeasure(slice_index=0, rim_length=2, flair_perimeter=10),
            SliceMeasure(slice_index=1, rim_length=3, flair_perimeter=0),
            SliceMeasure(slice_index=2, rim_length=4, flair_perimeter=8),
        ]
        profile = rim_ratio_profile(measures)
        assert profile.slice_indices == (0, 2)
        assert 1 in profile.excluded_slices

    def test_all_zero_perimeter_yields_empty_profile(self):
        measures = [SliceMeasure(slice_index=z, rim_length=1, flair_perimeter=0) for z in range(4)]
        profile = rim_ratio_profile(measures)
        assert profile.ratios == ()
        assert lesion_score(profile) == 0.0


class TestLesionScore:
    def test_two_good_adjacent_slices(self):
        profile = _profile({5: 0.12, 6: 0.11, 7: 0.02})
        assert lesion_score(profile) == pytest.approx(0.11)

    def test_best_pair_of_mixed_profile(self):
        profile = _profile({5: 0.12, 6: 0.05, 7: 0.15})
        assert lesion_score(profile) == pytest.approx(0.05)

    def test_single_slice_scores_zero(self):
        assert lesion_score(_profile({9: 0.9})) == 0.0

    def test_gap_breaks_adjacency(self):
        # slices 4 and 6 are not consecutive: the missing slice 5 had no perimeter
        profile = _profile({4: 0.5, 6: 0.5})
        assert lesion_score(profile) == 0.0

    def test_reversal_invariance(self):
        ratios = {3: 0.2, 4: 0.07, 5: 0.4, 6: 0.0, 7: 0.33}
        flipped = {10 - z: r for z, r in ratios.items()}
        assert lesion_score(_profile(ratios)) == pytest.approx(lesion_score(_profile(flipped)))


class TestClassify:
    def test_paper_threshold_detects(self):
        verdict = classify_lesion(_profile({5: 0.12, 6: 0.11, 7: 0.02}), DetectionThresholds(0.5, 0.1))
        assert verdict.is_prl
        assert verdict.score == pytest.approx(0.11)

    def test_no_consecutive_pair_above_threshold(self):
        verdict = classify_lesion(_profile({5: 0.12, 6: 0.05, 7: 0.15}), DetectionThresholds(0.5, 0.1))
        assert not verdict.is_prl

    def test_zero_threshold_degenerate(self):
        assert classify_lesion(_profile({2: 0.0, 3: 0.0}), DetectionThresholds(0.5, 0.0)).is_prl
        assert not classify_lesion(_profile({2: 0.0}), DetectionThresholds(0.5, 0.0)).is_prl

    def test_verdict_consistent_with_score(self):
        profile = _profile({2: 0.3, 3: 0.25})
        verdict = classify_lesion(profile, DetectionThresholds(0.5, 0.25))
        assert verdict.is_prl == (verdict.score >= 0.25)

    def test_threshold_validation(self):
        with pytest.raises(InputError):
            DetectionThresholds(tau_p=1.2)
        with pytest.raises(InputError):
            DetectionThresholds(tau_r=-0.1)


@st.composite
def profiles(draw):
    n = draw(st.integers(min_value=1, max_value=24))
    indices = draw(
        st.lists(st.integers(min_value=0, max_value=23), min_size=n, max_size=n, unique=True)
    )
    ratios = draw(
        st.lists(
            st.floats(min_value=0.0, max_value=2.0, allow_nan=False),
            min_size=n,
            max_size=n,
        )
    )
    return dict(zip(indices, ratios))


class TestRuleEquivalence:
    @given(profiles())
    @settings(max_examples=300, deadline=None)
    def test_verdict_equals_direct_rule(self, slice_to_ratio):
        profile = _profile(slice_to_ratio)
        sweep = set(slice_to_ratio.values()) | {0.0, 0.1, lesion_score(profile)}
        for tau_r in sweep:
            verdict = classify_lesion(profile, DetectionThresholds(0.5, tau_r))
            assert verdict.is_prl == consecutive_rule(slice_to_ratio, tau_r)

    def test_equivalence_on_seeded_batch(self):
        rng = np.random.default_rng(31)
        for _ in range(2000):
            n = int(rng.integers(1, 25))
            indices = rng.choice(24, size=n, replace=False)
            ratios = rng.random(n) * 0.4
            slice_to_ratio = dict(zip(indices.tolist(), ratios.tolist()))
            profile = _profile(slice_to_ratio)
            for tau_r in set(slice_to_ratio.values()):
                verdict = classify_lesion(profile, DetectionThresholds(0.5, tau_r))
                assert verdict.is_prl == consecutive_rule(slice_to_ratio, tau_r)
