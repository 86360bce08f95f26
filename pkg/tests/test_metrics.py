import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairflow.metrics import FairnessReport, TraceResult, harm, jain_index, steady_state_J, utilization_and_gap

positive_vectors = st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8)


def brute_jain(xs):
    s = 0.0
    sq = 0.0
    for x in xs:
        s += x
        sq += x * x
    return s * s / (len(xs) * sq)


class TestJain:
    def test_equal(self):
        assert jain_index([3.3] * 4) == 1.0

    def test_monopoly(self):
        assert jain_index([1, 0]) == 0.5

    def test_hand_example(self):
        assert jain_index([2.3, 1.3]) == pytest.approx(12.96 / 13.96, abs=1e-12)

    def test_all_zero_is_nan(self):
        assert math.isnan(jain_index([0.0, 0.0]))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            jain_index([])
        with pytest.raises(ValueError):
            jain_index([1.0, -1.0])

    def test_random_vectors_vs_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            x = rng.uniform(0, 10, rng.integers(1, 9))
            assert abs(jain_index(x) - brute_jain(x)) <= 1e-12

    @given(positive_vectors, st.floats(1e-3, 1e3))
    def test_scale_invariance(self, xs, k):
        assert abs(jain_index([k * x for x in xs]) - jain_index(xs)) <= 1e-12

    @given(positive_vectors)
    def test_bounds(self, xs):
        j = jain_index(xs)
        assert 1.0 / len(xs) - 1e-12 <= j <= 1.0 + 1e-12


class TestHarm:
    def test_substitution(self):
        assert harm(4.0, 3.0) == 0.25

    def test_hinge(self):
        assert harm(4.0, 5.0) == 0.0

    def test_missing_baseline(self):
        with pytest.raises(ValueError):
            harm(0.0, 1.0)

    @given(st.floats(1e-3, 1e3), st.floats(0, 1e3))
    def test_range(self, solo, mixed):
        assert 0.0 <= harm(solo, mixed) <= 1.0


class TestUtilization:
    def test_perfect(self):
        assert utilization_and_gap([20, 40], [20, 40]) == (1.0, 0.0)

    def test_constant_on_trace(self):
        cap = [20.0] * 25 + [40.0] * 25 + [20.0] * 25 + [40.0] * 25 + [20.0] * 25
        util, _ = utilization_and_gap([18.4] * len(cap), cap)
        assert util == pytest.approx(18.4 / 28.0)

    def test_idle(self):
        assert utilization_and_gap([0, 0], [20, 40]) == (0.0, 30.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            utilization_and_gap([], [])
        with pytest.raises(ValueError):
            utilization_and_gap([1, 2], [1])

    def test_trace_result(self):
        tr = TraceResult.from_series([10, 30], [20, 40])
        assert tr.summary() == {"mean_throughput_mbps": 20.0, "utilization": pytest.approx(20 / 30),
                                "mean_abs_gap_mbps": 10.0, "mean_capacity_mbps": 30.0}


class TestSteadyState:
    def test_single_flow(self):
        tput = np.zeros((40, 2))
        tput[:, 0] = 5.0
        (p,) = steady_state_J(tput, [0])
        assert p.jain == 1.0 and p.n_active == 1

    def test_two_phases(self):
        tput = np.zeros((60, 2))
        tput[:, 0] = 3.0
        tput[30:, 1] = 1.0
        tput[30:35, 1] = 50.0  # transient outside the window
        p0, p1 = steady_state_J(tput, [0, 30])
        assert p0.jain == 1.0
        assert p1.jain == pytest.approx(0.8)
        assert not p1.short

    def test_short_phase_flagged(self):
        tput = np.ones((30, 2))
        phases = steady_state_J(tput, [0, 20])
        assert phases[1].short and phases[1].jain == pytest.approx(1.0)

    def test_active_mask_excludes_stalled_flow_correctly(self):
        tput = np.ones((40, 2))
        tput[:, 1] = 0.0
        active = np.ones((40, 2), dtype=bool)
        (p,) = steady_state_J(tput, [0], active=active)
        assert p.n_active == 2 and p.jain == 0.5

    def test_unsorted_events(self):
        with pytest.raises(ValueError):
            steady_state_J(np.ones((40, 1)), [20, 0])


class TestFairnessReport:
    def make(self):
        rep = FairnessReport(flow_labels=["background", "ego"])
        rep.add_episode([2.0, 1.0], 0.1)
        rep.add_episode([1.5, 1.5], 0.3)
        return rep

    def test_aggregate_is_sum_of_means(self):
        rep = self.make()
        assert rep.aggregate_mbps == sum(rep.flow_means())
        assert rep.flow_mean("ego") == 1.25

    def test_stats(self):
        rep = self.make()
        assert rep.mean_J == pytest.approx((0.9 + 1.0) / 2)
        assert rep.min_J == pytest.approx(0.9)
        assert rep.mean_harm == pytest.approx(0.2)

    def test_round_trip(self):
        rep = self.make()
        again = FairnessReport.from_dict(rep.to_dict())
        assert again.summary() == rep.summary()

    def test_csv(self):
        text = self.make().to_csv()
        lines = text.split("\n")
        assert lines[0] == "episode,J,background_mbps,ego_mbps,harm"
        assert lines[1].startswith("0,0.9")
        assert "\r" not in text
