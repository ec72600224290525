from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trigcopy.datagen import LengthDistribution
from trigcopy.diversity import (
    GridTooLargeError,
    InvalidInstanceError,
    LpInstance,
    brute_force_lp,
    check_kkt,
    closed_form_multipliers,
    lp_report,
    max_sum_ratio,
    max_sum_ratio_exact,
    optimal_distribution,
    optimal_objective,
    uniform_window_ratio,
    uniform_window_ratio_exact,
)


class TestMaxSumRatio:
    def test_singleton(self):
        assert max_sum_ratio_exact(LengthDistribution.point(7)) == 1

    def test_two_point(self):
        assert max_sum_ratio_exact(LengthDistribution.uniform(1, 2)) == Fraction(2, 3)

    def test_window_three_to_eight(self):
        r = max_sum_ratio_exact(LengthDistribution.uniform(3, 8))
        expected = Fraction(1, 3) / sum(Fraction(1, k) for k in range(3, 9))
        assert r == expected
        assert float(r) == pytest.approx(0.27370479, abs=1e-8)

    def test_length_weighting(self):
        d = LengthDistribution.uniform(1, 2)
        assert max_sum_ratio(d, "T") == pytest.approx((1 / 5) / (1 / 5 + 1 / 7))
        with pytest.raises(ValueError):
            max_sum_ratio(d, "bogus")

    def test_float_masses(self):
        d = LengthDistribution((1, 2), (0.5, 0.5))
        assert max_sum_ratio(d) == pytest.approx(2 / 3)
        with pytest.raises(TypeError):
            max_sum_ratio_exact(d)

    @given(st.dictionaries(st.integers(1, 40), st.integers(1, 9), min_size=1, max_size=8))
    def test_bounds(self, counts):
        tot = sum(counts.values())
        d = LengthDistribution.from_mapping({k: Fraction(v, tot) for k, v in counts.items()})
        r = max_sum_ratio_exact(d)
        assert Fraction(1, len(counts)) <= r <= 1


class TestUniformWindow:
    def test_examples(self):
        assert uniform_window_ratio_exact(5, 1) == 1
        assert uniform_window_ratio_exact(1, 2) == Fraction(2, 3)

    def test_grid_strictly_decreasing(self):
        for ell0 in range(1, 21):
            for K in range(1, 20):
                assert uniform_window_ratio_exact(ell0, K + 1) < uniform_window_ratio_exact(ell0, K)
        for K in range(2, 21):
            for ell0 in range(1, 20):
                assert uniform_window_ratio_exact(ell0 + 1, K) < uniform_window_ratio_exact(ell0, K)

    def test_agrees_with_general_ratio(self):
        for ell0, K in [(1, 1), (3, 6), (10, 11), (20, 20)]:
            d = LengthDistribution.uniform(ell0, ell0 + K - 1)
            assert abs(uniform_window_ratio(ell0, K) - max_sum_ratio(d)) <= 1e-15

    def test_invalid(self):
        with pytest.raises(ValueError):
            uniform_window_ratio(0, 3)


class TestOptimum:
    def test_three_triggers(self):
        q = optimal_distribution(3, 5)
        assert q.masses == (Fraction(1, 6), Fraction(2, 6), Fraction(3, 6), 0, 0)
        assert LpInstance(5, 3).objective(q) == 6 == optimal_objective(3)

    def test_single_trigger(self):
        q = optimal_distribution(1, 4)
        assert q.masses[0] == 1 and sum(q.masses[1:]) == 0

    @pytest.mark.parametrize("n", range(1, 9))
    def test_ratio_hits_bound_exactly(self, n):
        q = optimal_distribution(n, n + 3)
        assert max_sum_ratio_exact(q) == Fraction(1, n)
        assert LpInstance(n + 3, n).is_feasible(q)
        assert LpInstance(n + 3, n).objective(q) == optimal_objective(n)

    def test_invalid_instances(self):
        with pytest.raises(InvalidInstanceError):
            optimal_distribution(4, 3)
        with pytest.raises(InvalidInstanceError):
            LpInstance(3, 0)


class TestBruteForce:
    def test_two_triggers_horizon_three(self):
        res = brute_force_lp(LpInstance(3, 2), 60)
        assert res.best_objective == 3
        assert res.best_q.masses == (Fraction(1, 3), Fraction(2, 3), 0)

    @pytest.mark.parametrize("n,U", [(1, 3), (2, 4), (3, 5)])
    def test_nothing_beats_closed_form(self, n, U):
        res = brute_force_lp(LpInstance(U, n), 60)
        assert res.best_objective >= optimal_objective(n)
        assert res.n_feasible > 0

    def test_grid_guard(self):
        with pytest.raises(GridTooLargeError):
            brute_force_lp(LpInstance(12, 2), 200)

    def test_infeasible_resolution(self):
        # resolution 2 cannot express masses proportional to (1, 2, 3)
        res = brute_force_lp(LpInstance(3, 3), 2)
        assert res.best_q is None and res.n_feasible == 0

    @given(st.lists(st.integers(0, 12), min_size=4, max_size=4).filter(lambda v: sum(v) > 0))
    def test_random_feasible_points_cost_more(self, counts):
        inst = LpInstance(4, 2)
        tot = sum(counts)
        q = LengthDistribution(tuple(range(1, 5)), tuple(Fraction(c, tot) for c in counts))
        if max_sum_ratio_exact(q) <= Fraction(1, 2):
            assert inst.objective(q) >= optimal_objective(2)


class TestKKT:
    @pytest.mark.parametrize("n,U", [(1, 3), (2, 4), (3, 5), (4, 7), (6, 9)])
    def test_closed_form_accepted(self, n, U):
        res = check_kkt(LpInstance(U, n), optimal_distribution(n, U))
        assert res.satisfied, res.conditions
        lam, mu, nu = closed_form_multipliers(n, U)
        np.testing.assert_allclose(res.lam, lam, atol=1e-8)
        np.testing.assert_allclose(res.mu, mu, atol=1e-8)
        assert res.nu == pytest.approx(nu) == pytest.approx(-n * (n + 1) / 2)
        assert (lam >= 0).all() and (mu >= 0).all()

    def test_uniform_rejected(self):
        res = check_kkt(LpInstance(4, 2), LengthDistribution.uniform(1, 4))
        assert not res.satisfied
        assert not res.conditions["stationarity"]

    def test_infeasible_rejected(self):
        res = check_kkt(LpInstance(4, 2), LengthDistribution.point(1))
        assert not res.conditions["primal_maxsum"]


def test_report():
    rep = lp_report(2, 3, 30)
    assert rep["optimal_q"] == ["1/3", "2/3", "0"]
    assert rep["max_sum_ratio"] == "1/2"
    assert rep["kkt"]["satisfied"] and not rep["brute_force_below_closed_form"]
