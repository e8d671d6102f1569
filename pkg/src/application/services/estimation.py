import logging
import math
from typing import Literal, Optional

import numpy as np
from scipy import special

from src.application.services.regime import RegimeService
from src.application.services.sequence import ReinforcementSequence
from src.application.services.simulator import SimulationService
from src.application.services.streams import Purpose, substreams
from src.config import Config
from src.domain.errors import (
    ConfigError,
    DivergentMemory,
    DivergentTail,
    HorizonNotAfterSnapshot,
    NegativeTail,
    UnknownFamily,
)
from src.domain.schemas import NetworkSnapshot, PolarizationEstimate, ValidatedMatrix

logger = logging.getLogger(__name__)

Bound = Literal['hoeffding', 'chebyshev']


class EstimationService:
    """
    Barrier bounds, conditional Monte Carlo estimates and the fixation lower bound.

    With M the v-average of the inclinations and tail = sum_{k>=t} r_k^2,
    the bounds dominate P(M_inf = 0 | state at t) and P(M_inf = 1 | state at t).
    """

    @staticmethod
    def hoeffding_bounds(m: float, tail: float) -> tuple[float, float]:
        """u0 = exp(-2 m^2 / tail), u1 = exp(-2 (1 - m)^2 / tail)."""
        u0, u1 = EstimationService.barrier_bounds(np.array([m]), tail, 'hoeffding')
        return float(u0[0]), float(u1[0])

    @staticmethod
    def chebyshev_bounds(m: float, tail: float) -> tuple[float, float]:
        """u0 = min(1, (1 - m) tail / m), u1 = min(1, m tail / (1 - m))."""
        u0, u1 = EstimationService.barrier_bounds(np.array([m]), tail, 'chebyshev')
        return float(u0[0]), float(u1[0])

    @staticmethod
    def barrier_bounds(m: np.ndarray, tail: float, bound: Bound = 'hoeffding') -> tuple[np.ndarray, np.ndarray]:
        """
        Vectorized barrier bounds.

        m = 0 gives u0 = 1 and m = 1 gives u1 = 1. With tail = 0 the process
        is frozen: u0 = 1 only at m = 0, u1 = 1 only at m = 1.
        """
        if math.isnan(tail):
            raise ValueError("tail is NaN")
        if tail < 0.0:
            raise NegativeTail(f"tail={tail} is negative")
        if math.isinf(tail):
            raise DivergentTail("The tail sum of squares diverges; barrier bounds are vacuous")

        m = np.asarray(m, dtype=float)
        if tail == 0.0:
            return np.where(m > 0.0, 0.0, 1.0), np.where(m < 1.0, 0.0, 1.0)

        if bound == 'hoeffding':
            return np.exp(-2.0 * m * m / tail), np.exp(-2.0 * (1.0 - m) ** 2 / tail)

        if bound == 'chebyshev':
            with np.errstate(divide='ignore', invalid='ignore'):
                u0 = np.where(m > 0.0, np.minimum(1.0, (1.0 - m) * tail / m), 1.0)
                u1 = np.where(m < 1.0, np.minimum(1.0, m * tail / (1.0 - m)), 1.0)
            return u0, u1

        raise ValueError(f"Unknown bound '{bound}'")

    @staticmethod
    def horizon_threshold(eta: float, eps: float) -> float:
        if eta <= 0.0 or not 0.0 < eps < 1.0:
            raise ValueError("eta must be positive and eps in (0, 1)")
        return 2.0 * eta * eta / math.log(1.0 / eps)

    @staticmethod
    def min_horizon(seq: ReinforcementSequence, eta: float, eps: float) -> int:
        """Smallest t with tail_sq_sum(t) < 2 eta^2 / ln(1/eps)."""
        threshold = EstimationService.horizon_threshold(eta, eps)
        tail = seq.tail_sq_sum(0)
        if math.isinf(tail):
            raise DivergentTail(f"{seq.family} sequence has a divergent sum of squares")
        if tail < threshold:
            return 0

        hi = 1
        while seq.tail_sq_sum(hi) >= threshold:
            hi *= 2
        lo = hi // 2
        # invariant: tail(lo) >= threshold > tail(hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if seq.tail_sq_sum(mid) < threshold:
                hi = mid
            else:
                lo = mid
        return hi

    @staticmethod
    def mc_estimate(snapshot: NetworkSnapshot, matrix: ValidatedMatrix, seq: ReinforcementSequence,
                    t: int, K: int, seed: int, *, bound: Bound = 'hoeffding',
                    stream_prefix: tuple[int, ...] = (0,), purpose: Purpose = Purpose.CONTINUATION,
                    threads: Optional[int] = None) -> PolarizationEstimate:
        """
        Averages the barrier bounds over K continuations of the snapshot to t.

        Continuation j uses the substream (purpose, *stream_prefix, j), so
        the estimate does not depend on the thread count.
        """
        if t <= snapshot.step:
            raise HorizonNotAfterSnapshot(f"t={t} must exceed the snapshot step {snapshot.step}")
        if K < 1:
            raise ValueError("K must be at least 1")
        if K > Config.RSP_MAX_RECORDS:
            raise ConfigError(f"K={K} exceeds the record limit {Config.RSP_MAX_RECORDS}")

        tail = seq.tail_sq_sum(t)
        if math.isinf(tail):
            raise DivergentTail(f"{seq.family} sequence has a divergent sum of squares")

        generators = substreams(seed, purpose, tuple(stream_prefix), K)
        result = SimulationService.continue_batch(snapshot, matrix, seq, t, generators,
                                                  threads=threads or Config.THREADS)
        return EstimationService.aggregate(result.final_z_tilde, snapshot.step, t, tail, seed, bound)

    @staticmethod
    def aggregate(m_t: np.ndarray, n: int, t: int, tail: float, seed: int,
                  bound: Bound = 'hoeffding') -> PolarizationEstimate:
        """Builds the estimate from the time-t averages of K continuations."""
        u0_t, u1_t = EstimationService.barrier_bounds(m_t, tail, bound)
        u01_t = np.maximum(0.0, 1.0 - u0_t - u1_t)
        u0, u1 = float(np.mean(u0_t)), float(np.mean(u1_t))

        normalized = u0 + u1 > 1.0
        if normalized:
            total = u0 + u1
            logger.warning(f"[Estimate] u0 + u1 = {total:.6f} > 1 at n={n}, t={t}; normalizing (t may be too small)")
            u0, u1, u01 = u0 / total, u1 / total, 0.0
        else:
            u01 = max(0.0, 1.0 - u0 - u1)

        return PolarizationEstimate(
            n=n, t=t, K=len(m_t), u0=u0, u1=u1, u01=u01, normalized=normalized,
            seed=seed, bound=bound, tail=tail,
            m_t=m_t, u0_t=u0_t, u1_t=u1_t, u01_t=u01_t,
        )

    @staticmethod
    def fixation_lower_bound(snapshot: NetworkSnapshot, seq: ReinforcementSequence, v_min: float,
                             barrier: int = 0, trunc_tol: float = 1e-10,
                             max_terms: int = 10_000_000) -> float:
        """
        Lower bound on the probability that every future action equals the barrier.

        prod_{n>=s} (1 - min(M P(s, n) / v_min, 1)) with P(s, n) the memory
        product of r_s..r_{n-1} and M = Z~ (1 - Z~ for barrier 1). Past the
        truncation index T the product is bounded below by
        exp(-tail / (1 - x_T)), tail being an envelope of sum_{n>=T} x_n.
        Not a consistent estimator; it is a certified lower bound.
        """
        if barrier not in (0, 1):
            raise ValueError("barrier must be 0 or 1")
        if v_min <= 0.0:
            raise ValueError("v_min must be positive")

        verdicts = RegimeService.series_divergence(seq.asymptotic_spec)
        if verdicts is None:
            raise UnknownFamily("Custom sequence declares no asymptotic family")
        if verdicts['sum_memory']:
            raise DivergentMemory(f"The memory-product series of the {seq.family} sequence diverges")

        m = snapshot.z_tilde if barrier == 0 else 1.0 - snapshot.z_tilde
        if m == 0.0:
            return 1.0
        scale = m / v_min
        if scale >= 1.0:
            return 0.0

        start = snapshot.step
        n = start
        log_memory = 0.0
        log_terms = []
        tail = math.inf
        x_next = scale
        chunk = 1 << 16

        while n - start < max_terms:
            rates = seq.values(n, n + chunk)
            logs = np.log1p(-rates)
            cumulative = log_memory + np.concatenate(([0.0], np.cumsum(logs[:-1])))
            x = scale * np.exp(cumulative)
            log_terms.append(float(np.sum(np.log1p(-x))))

            log_memory = float(cumulative[-1] + logs[-1])
            n += chunk
            x_next = scale * math.exp(log_memory)
            tail = EstimationService._memory_tail(seq, n, x_next)
            if tail < trunc_tol or x_next == 0.0:
                break
        else:
            logger.debug(f"[Estimate] Fixation product truncated at {max_terms} terms, tail bound {tail:.3e}")

        if math.isinf(tail):
            return 0.0
        return math.exp(math.fsum(log_terms) - tail / (1.0 - x_next))

    # --- Helpers ---

    @staticmethod
    def _memory_tail(seq: ReinforcementSequence, T: int, x_T: float) -> float:
        """Upper bound on x_T * sum_{j>=0} P(T, T+j); inf while the envelope does not apply yet."""
        if x_T == 0.0:
            return 0.0
        if seq.family == 'custom':
            if T < len(seq.spec.table):
                return math.inf
            return EstimationService._memory_tail(seq.asymptotic, T, x_T)
        if seq.family == 'constant':
            return x_T / seq.spec.r

        c, gamma, b = seq.spec.c, seq.spec.gamma, seq.spec.b
        if gamma <= 0.0:
            return x_T / seq.cap
        if T < seq.first_uncapped:
            return math.inf

        # P(T, T+j) <= exp(-c * integral_T^{T+j} (b+y)^-gamma dy) =: e(T+j), decreasing
        if gamma == 1.0:
            integral = (b + T) / (c - 1.0)
        else:
            beta = 1.0 - gamma
            a = 1.0 / beta
            lam = c / beta
            u = lam * (b + T) ** beta
            if u > 2.0 * (a - 1.0):
                # Gamma(a, u) <= u^(a-1) e^-u u / (u - (a-1)) for a > 1
                log_integral = (-math.log(beta) - a * math.log(lam) + (a - 1.0) * math.log(u)
                                - math.log1p(-(a - 1.0) / u))
            else:
                log_integral = (u - math.log(beta) - a * math.log(lam) + special.gammaln(a)
                                + math.log(special.gammaincc(a, u)))
            integral = math.exp(log_integral)
        return x_T * (1.0 + integral)
