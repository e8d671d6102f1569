import numpy as np
import pytest

from src.application.services.confint import ATOM_CAVEAT, IntervalService
from src.domain.errors import AllWeightsZero, LengthMismatch, MissingRecords
from src.domain.schemas import PolarizationEstimate


def estimate(u0, u1, u01, m_t=None, u01_t=None):
    if m_t is not None:
        m_t = np.asarray(m_t, dtype=float)
        u01_t = np.asarray(u01_t, dtype=float)
    return PolarizationEstimate(
        n=100, t=200, K=100 if m_t is None else len(m_t), u0=u0, u1=u1, u01=u01,
        m_t=m_t, u0_t=None if m_t is None else np.zeros_like(m_t),
        u1_t=None if m_t is None else np.zeros_like(m_t), u01_t=u01_t,
    )


class TestWeightedCDF:
    """
    Unit Tests for the weighted empirical CDF and its quantiles.
    """

    def test_equal_weights_step_function(self):
        # Act
        cdf = IntervalService.weighted_cdf([0.3, 0.1, 0.2], [1.0, 1.0, 1.0])

        # Assert
        assert cdf(0.15) == pytest.approx(1 / 3)
        assert cdf(0.05) == 0.0
        assert cdf(0.3) == 1.0
        np.testing.assert_array_equal(cdf.points, [0.1, 0.2, 0.3])

    def test_zero_weights_carry_no_mass(self):
        """
        GIVEN weights (0, 0, 1)
        WHEN the CDF and quantiles are evaluated
        THEN all mass sits on 0.3
        """
        # Act
        cdf = IntervalService.weighted_cdf([0.1, 0.2, 0.3], [0.0, 0.0, 1.0])

        # Assert
        assert cdf(0.29) == 0.0
        assert cdf(0.3) == 1.0
        assert IntervalService.weighted_quantile(cdf, 0.01) == 0.3

    def test_zero_quantile_skips_zero_weight_points(self):
        """
        GIVEN a zero-weight sample below every weighted sample
        WHEN the 0-quantile is taken
        THEN it is the smallest sample that carries weight
        """
        # Act
        cdf = IntervalService.weighted_cdf([0.1, 0.2, 0.3], [0.0, 1.0, 1.0])

        # Assert
        np.testing.assert_array_equal(cdf.points, [0.2, 0.3])
        assert IntervalService.weighted_quantile(cdf, 0.0) == 0.2

    def test_duplicate_samples_merge(self):
        cdf = IntervalService.weighted_cdf([0.5, 0.5], [1.0, 2.0])
        np.testing.assert_array_equal(cdf.points, [0.5])
        np.testing.assert_array_equal(cdf.weights, [3.0])
        assert cdf.total_weight == 3.0

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            IntervalService.weighted_cdf([0.1, 0.2], [1.0])
        with pytest.raises(AllWeightsZero):
            IntervalService.weighted_cdf([0.1, 0.2], [0.0, 0.0])
        with pytest.raises(ValueError):
            IntervalService.weighted_cdf([0.1, 0.2], [1.0, -1.0])

    def test_quantile_reference_values(self):
        # Arrange
        cdf = IntervalService.weighted_cdf([0.1, 0.2, 0.3], [1.0, 1.0, 1.0])

        # Act & Assert
        assert IntervalService.weighted_quantile(cdf, 0.5) == 0.2
        assert IntervalService.weighted_quantile(cdf, 1.0) == 0.3
        assert IntervalService.weighted_quantile(cdf, 0.0) == 0.1

    def test_quantile_round_trip(self):
        """
        GIVEN a random weighted sample
        WHEN q = quantile(p) is taken on a grid of p
        THEN F(q) >= p exactly
        """
        # Arrange
        rng = np.random.default_rng(5)
        cdf = IntervalService.weighted_cdf(rng.random(200), rng.random(200))

        # Act & Assert
        for p in np.linspace(0.0, 1.0, 101):
            assert cdf(IntervalService.weighted_quantile(cdf, p)) >= p


class TestInnerInterval:
    """
    Unit Tests for the inner interval built from weighted quantiles.
    """

    def test_theta_one_spans_support_and_zero_is_median(self):
        # Arrange
        cdf = IntervalService.weighted_cdf([0.1, 0.2, 0.3, 0.4, 0.5], np.ones(5))

        # Act & Assert
        assert IntervalService.inner_interval(cdf, 1.0) == (0.1, 0.5)
        assert IntervalService.inner_interval(cdf, 0.0) == (0.3, 0.3)

    def test_uniform_grid(self):
        """
        GIVEN the grid 0.01..0.99 with equal weights
        WHEN theta = 0.9
        THEN the interval is about [0.05, 0.95] within one grid step
        """
        # Arrange
        grid = np.round(np.arange(1, 100) / 100, 2)
        cdf = IntervalService.weighted_cdf(grid, np.ones(99))

        # Act
        lo, hi = IntervalService.inner_interval(cdf, 0.9)

        # Assert
        assert lo == pytest.approx(0.05, abs=0.01)
        assert hi == pytest.approx(0.95, abs=0.01)

    def test_nested_thetas_widen(self):
        # Arrange
        rng = np.random.default_rng(9)
        cdf = IntervalService.weighted_cdf(rng.random(300), rng.random(300))

        # Act
        intervals = [IntervalService.inner_interval(cdf, theta) for theta in np.linspace(0.0, 1.0, 21)]

        # Assert
        for (lo_a, hi_a), (lo_b, hi_b) in zip(intervals, intervals[1:]):
            assert lo_b <= lo_a and hi_a <= hi_b


class TestCompositeInterval:
    """
    Unit Tests for the seven-case composite interval.
    """

    def test_case_one(self):
        ci = IntervalService.composite_interval(estimate(0.97, 0.01, 0.02), 0.05)
        assert ci.case_id == 1
        assert ci.parts() == ["{0}"]

    def test_case_two(self):
        ci = IntervalService.composite_interval(estimate(0.0, 1.0, 0.0), 0.05)
        assert ci.case_id == 2
        assert ci.includes_one and not ci.includes_zero

    def test_case_four(self):
        """
        GIVEN u0 = 0.5, u1 = 0.48, u01 = 0.02 and alpha = 0.05
        WHEN the interval is built
        THEN it is {0} U {1} without an inner part
        """
        ci = IntervalService.composite_interval(estimate(0.5, 0.48, 0.02), 0.05)
        assert ci.case_id == 4
        assert ci.parts() == ["{0}", "{1}"]
        assert ci.inner is None

    def test_case_seven_theta(self):
        """
        GIVEN u0 = 0.4, u1 = 0.35, u01 = 0.25 with records
        WHEN the interval is built at alpha = 0.05
        THEN case 7 fires with theta = 0.8 and an inner part from the weighted quantiles
        """
        # Arrange
        m_t = np.linspace(0.1, 0.9, 9)
        est = estimate(0.4, 0.35, 0.25, m_t=m_t, u01_t=np.ones(9))

        # Act
        ci = IntervalService.composite_interval(est, 0.05)

        # Assert
        assert ci.case_id == 7
        assert ci.theta_used == pytest.approx(0.8)
        assert ci.part_count == 3
        assert ci.inner == IntervalService.inner_interval(IntervalService.weighted_cdf(m_t, np.ones(9)), ci.theta_used)
        assert ci.caveat == ATOM_CAVEAT

    def test_case_three_with_atomless_regime_has_no_caveat(self):
        est = estimate(0.01, 0.01, 0.98, m_t=[0.3, 0.5, 0.7], u01_t=[1.0, 1.0, 1.0])
        ci = IntervalService.composite_interval(est, 0.05, atomless_interior=True)
        assert ci.case_id == 3
        assert ci.theta_used == pytest.approx(0.95 / 0.98)
        assert ci.caveat is None

    def test_inner_part_without_records_raises(self):
        with pytest.raises(MissingRecords):
            IntervalService.composite_interval(estimate(0.01, 0.01, 0.98), 0.05)

    def test_zero_weights_fall_through(self):
        """
        GIVEN case 5 guards but every u01_t weight zero
        WHEN the interval is built
        THEN it falls through to the barrier-only case 1
        """
        # Arrange
        est = estimate(0.6, 0.02, 0.38, m_t=[0.2, 0.4], u01_t=[0.0, 0.0])

        # Act
        ci = IntervalService.composite_interval(est, 0.05)

        # Assert
        assert ci.case_id == 1
        assert ci.fell_through_from == 5

    def test_every_simplex_point_hits_one_case_without_clamping(self):
        """
        GIVEN 10^5 random points of the simplex
        WHEN the case is selected
        THEN a case always fires and every raw theta already lies in [0, 1]
        """
        # Arrange
        rng = np.random.default_rng(0)
        points = rng.dirichlet(np.ones(3), size=100_000)

        for u0, u1, u01 in points:
            # Act
            case_id, theta = IntervalService.select_case(u0, u1, u01, 0.05)

            # Assert
            assert 1 <= case_id <= 7
            if theta is not None:
                assert -1e-12 <= theta <= 1.0 + 1e-12
