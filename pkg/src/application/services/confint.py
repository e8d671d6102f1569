import logging
from typing import Optional

import numpy as np

from src.domain.errors import AllWeightsZero, LengthMismatch, MissingRecords
from src.domain.schemas import CASE_PARTS, ConfidenceInterval, PolarizationEstimate, WeightedCDF

logger = logging.getLogger(__name__)

# Barrier-only case used when an inner part is required but has no mass
FALLTHROUGH = {3: 4, 5: 1, 6: 2, 7: 4}

ATOM_CAVEAT = "limit law not known to be atomless in (0, 1); inner-part coverage is not guaranteed"


class IntervalService:
    """Weighted CDF/quantiles and the composite interval for the common limit."""

    @staticmethod
    def weighted_cdf(samples, weights) -> WeightedCDF:
        x = np.asarray(samples, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        if x.shape != w.shape:
            raise LengthMismatch(f"{x.size} samples but {w.size} weights")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if x.size == 0 or w.sum() <= 0.0:
            raise AllWeightsZero("The weights carry no mass")

        # zero-weight samples are not in the support
        keep = w > 0.0
        x, w = x[keep], w[keep]
        points, inverse = np.unique(x, return_inverse=True)
        merged = np.bincount(inverse.ravel(), weights=w, minlength=points.size)
        cumulative = np.cumsum(merged)
        total = float(cumulative[-1])
        return WeightedCDF(points=points, weights=merged, cumulative=cumulative / total, total_weight=total)

    @staticmethod
    def weighted_quantile(cdf: WeightedCDF, p: float) -> float:
        """min{x in support : F(x) >= p}; p = 0 gives the smallest support point."""
        p = min(max(p, 0.0), 1.0)
        idx = int(np.searchsorted(cdf.cumulative, p, side='left'))
        return float(cdf.points[min(idx, cdf.points.size - 1)])

    @staticmethod
    def inner_interval(cdf: WeightedCDF, theta: float) -> tuple[float, float]:
        if not 0.0 <= theta <= 1.0:
            raise ValueError(f"theta={theta} must lie in [0, 1]")
        return (IntervalService.weighted_quantile(cdf, (1.0 - theta) / 2.0),
                IntervalService.weighted_quantile(cdf, (1.0 + theta) / 2.0))

    @staticmethod
    def select_case(u0: float, u1: float, u01: float, alpha: float) -> tuple[int, Optional[float]]:
        """
        First matching case and its raw (unclamped) theta.

        1 {0} | 2 {1} | 3 inner | 4 {0,1} | 5 {0} + inner | 6 {1} + inner |
        7 {0,1} + inner. Guards are evaluated in this order.
        """
        level = 1.0 - alpha
        if u0 >= level:
            return 1, None
        if u1 >= level:
            return 2, None
        if u01 >= level:
            return 3, level / u01
        if max(u0, u1) < level and u0 + u1 >= level and u01 < min(u0, u1):
            return 4, None
        if max(u0, u01) < level and u0 + u01 >= level and u1 < min(u0, u01):
            return 5, (level - u0) / u01
        if max(u1, u01) < level and u1 + u01 >= level and u0 < min(u1, u01):
            return 6, (level - u1) / u01
        if u01 <= 0.0:
            return 7, None
        return 7, (level - u0 - u1) / u01

    @staticmethod
    def composite_interval(est: PolarizationEstimate, alpha: float,
                           atomless_interior: Optional[bool] = None) -> ConfidenceInterval:
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha={alpha} must lie in (0, 1)")

        case_id, theta = IntervalService.select_case(est.u0, est.u1, est.u01, alpha)
        if not CASE_PARTS[case_id][2]:
            return IntervalService._build(case_id, alpha)

        if not est.has_records:
            raise MissingRecords(f"Case {case_id} needs an inner part but the estimate has no replication records")

        cdf = None
        if theta is not None:
            try:
                cdf = IntervalService.weighted_cdf(est.m_t, est.u01_t)
            except AllWeightsZero:
                pass
        if cdf is None:
            fallback = FALLTHROUGH[case_id]
            logger.warning(f"[Interval] Inner part of case {case_id} has no mass; falling back to case {fallback}")
            return IntervalService._build(fallback, alpha, fell_through_from=case_id)

        clamped = not 0.0 <= theta <= 1.0
        if clamped:
            logger.warning(f"[Interval] theta={theta!r} outside [0, 1] in case {case_id}; clamping")
            theta = min(max(theta, 0.0), 1.0)

        return IntervalService._build(
            case_id, alpha,
            inner=IntervalService.inner_interval(cdf, theta),
            theta=theta,
            theta_clamped=clamped,
            caveat=None if atomless_interior is True else ATOM_CAVEAT,
        )

    # --- Helpers ---

    @staticmethod
    def _build(case_id: int, alpha: float, inner=None, theta=None, theta_clamped=False,
               fell_through_from=None, caveat=None) -> ConfidenceInterval:
        zero, one, _ = CASE_PARTS[case_id]
        return ConfidenceInterval(
            includes_zero=zero,
            includes_one=one,
            inner=inner,
            case_id=case_id,
            theta_used=theta,
            alpha=alpha,
            theta_clamped=theta_clamped,
            fell_through_from=fell_through_from,
            caveat=caveat,
        )
