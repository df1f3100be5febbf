from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xnec.aggregate import (
    AnnotationEvent,
    aggregate_clip,
    build_interval,
    likert_to_unit,
    truncated_mean,
)
from xnec.errors import ValidationError


def sort_drop_ends_mean(scores):
    """Independent oracle: sort, drop first and last, average."""
    ordered = sorted(scores)
    trimmed = ordered[1:-1]
    return sum(trimmed) / len(trimmed)


def event(vid="v1", annotator="a1", moment=4.0, score=0.5, text="i will stop"):
    return AnnotationEvent(vid, annotator, moment, score, text)


class TestTruncatedMean:
    def test_basic_five_scores(self):
        assert truncated_mean([0.2, 0.4, 0.5, 0.6, 0.9]) == pytest.approx(0.5)

    def test_constant_input(self):
        assert truncated_mean([0.7] * 5) == pytest.approx(0.7)

    def test_duplicate_extremes_drop_one_each(self):
        # remove one 0.1 and one 0.9 only; oracle agrees
        scores = [0.1, 0.1, 0.9, 0.9, 0.5]
        assert truncated_mean(scores) == pytest.approx(0.5)
        assert truncated_mean(scores) == pytest.approx(sort_drop_ends_mean(scores))

    def test_arity_error(self):
        with pytest.raises(ValidationError):
            truncated_mean([0.5, 0.5])

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=9))
    def test_matches_oracle_and_stays_in_range(self, scores):
        value = truncated_mean(scores)
        assert value == pytest.approx(sort_drop_ends_mean(scores))
        assert min(scores) - 1e-12 <= value <= max(scores) + 1e-12

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=8), st.randoms())
    def test_permutation_invariant(self, scores, rnd):
        shuffled = list(scores)
        rnd.shuffle(shuffled)
        assert truncated_mean(shuffled) == pytest.approx(truncated_mean(scores))

    @given(
        st.lists(st.floats(0, 1), min_size=3, max_size=8),
        st.integers(0, 7),
        st.floats(0.01, 0.5),
    )
    def test_monotone_in_each_score(self, scores, idx, bump):
        idx = idx % len(scores)
        raised = list(scores)
        raised[idx] = min(1.0, raised[idx] + bump)
        assert truncated_mean(raised) >= truncated_mean(scores) - 1e-12

    def test_robust_to_one_high_outlier(self):
        scores = [0.2, 0.4, 0.5, 0.6, 0.9]
        blown = [0.2, 0.4, 0.5, 0.6, 1e9]
        assert truncated_mean(blown) == pytest.approx(truncated_mean(scores))


class TestBuildInterval:
    def test_min_max(self):
        events = [event(annotator=f"a{i}", moment=m) for i, m in enumerate([4.2, 3.8, 4.5, 4.0, 4.1])]
        assert build_interval(events) == (3.8, 4.5)

    def test_single_event_degenerate(self):
        assert build_interval([event(moment=6.0)]) == (6.0, 6.0)

    def test_boundary_moments(self):
        events = [event(annotator="a1", moment=9.9), event(annotator="a2", moment=10.0)]
        assert build_interval(events) == (9.9, 10.0)

    def test_mixed_vids_error(self):
        with pytest.raises(ValidationError, match="multiple vids"):
            build_interval([event(vid="v1"), event(vid="v2")])

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=6), st.floats(0, 10))
    def test_widens_monotonically(self, moments, extra):
        events = [event(annotator=f"a{i}", moment=m) for i, m in enumerate(moments)]
        lo, hi = build_interval(events)
        lo2, hi2 = build_interval(events + [event(annotator="z", moment=extra)])
        assert lo2 <= lo and hi2 >= hi


class TestAggregateClip:
    def test_composition(self):
        moments = [4.2, 3.8, 4.5, 4.0, 4.1]
        scores = [0.2, 0.4, 0.5, 0.6, 0.9]
        events = [
            event(annotator=f"a{i}", moment=m, score=s, text=f"text {i}")
            for i, (m, s) in enumerate(zip(moments, scores))
        ]
        label = aggregate_clip(events)
        assert label.necessity_score == pytest.approx(0.5)
        assert label.interval == (3.8, 4.5)
        assert label.contributing_ids == ("a0", "a1", "a2", "a3", "a4")

    def test_three_identical_events(self):
        events = [event(annotator=f"a{i}", moment=5.0, score=0.4) for i in range(3)]
        label = aggregate_clip(events)
        assert label.necessity_score == pytest.approx(0.4)
        assert label.interval == (5.0, 5.0)

    def test_arity_gate(self):
        with pytest.raises(ValidationError):
            aggregate_clip([event(annotator="a1"), event(annotator="a2")])

    def test_message_is_nearest_score_smallest_id_on_tie(self):
        # aggregate is 0.5; a2 and a4 are equally near -> a2 wins
        events = [
            event(annotator="a1", score=0.1, text="far low"),
            event(annotator="a2", score=0.4, text="tie one"),
            event(annotator="a3", score=0.5, text="exact"),
            event(annotator="a4", score=0.6, text="tie two"),
            event(annotator="a5", score=0.9, text="far high"),
        ]
        label = aggregate_clip(events)
        assert label.necessity_score == pytest.approx(0.5)
        assert label.message == "exact"
        without_exact = [e for e in events if e.annotator_id != "a3"]
        label2 = aggregate_clip(without_exact)
        assert label2.necessity_score == pytest.approx(0.5)
        assert label2.message == "tie one"

    def test_random_sets_match_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            moments = rng.uniform(0, 10, size=5)
            scores = rng.uniform(0, 1, size=5)
            events = [
                event(annotator=f"a{i}", moment=float(m), score=float(s))
                for i, (m, s) in enumerate(zip(moments, scores))
            ]
            label = aggregate_clip(events)
            assert label.necessity_score == pytest.approx(sort_drop_ends_mean(scores))
            assert label.interval == (min(moments), max(moments))


class TestLikert:
    def test_endpoints_and_midpoint(self):
        assert likert_to_unit(1.0) == 0.0
        assert likert_to_unit(10.0) == 1.0
        assert likert_to_unit(5.5) == pytest.approx(0.5)

    def test_out_of_scale(self):
        with pytest.raises(ValidationError):
            likert_to_unit(0.0)
