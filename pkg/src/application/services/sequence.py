import logging
import math
from typing import Optional

import numpy as np

from src.domain.errors import UnknownTail, ZeroDenominator
from src.domain.schemas import SequenceSpec

logger = logging.getLogger(__name__)

_CHUNK = 1 << 20


class ReinforcementSequence:
    """
    Reinforcement sequence r_n with analytic accessors.

    Responsibilities:
    1. Evaluates the capped family values r_n = min(raw_n, cap).
    2. Holds read-only prefix tables (partial sums, log memory products)
       up to the declared horizon; indices past it are summed on demand.
    3. Provides tail sums of squares, urn weights and the non-polarization
       diagnostic ratio.

    Instances are immutable after construction and safe to share.
    """

    def __init__(self, spec: SequenceSpec):
        self.spec = spec
        self.family = spec.family
        self.cap = spec.cap
        self.horizon = spec.horizon
        self._asymptotic: Optional[ReinforcementSequence] = None
        if spec.family == 'custom' and spec.asymptotic is not None:
            self._asymptotic = ReinforcementSequence(spec.asymptotic)

        size = spec.horizon + 1
        if spec.family == 'custom' and self._asymptotic is None:
            size = min(size, len(spec.table))

        raw = self._raw_values(0, size)
        self.capped_terms = int(np.count_nonzero(raw > self.cap))
        values = np.minimum(raw, self.cap)

        # Prefix tables are accumulated in extended precision
        self._r = values
        self._partial = np.cumsum(values.astype(np.longdouble))
        self._log_memory = np.cumsum(np.log1p(-values).astype(np.longdouble))
        for table in (self._r, self._partial, self._log_memory):
            table.setflags(write=False)

        if self.capped_terms:
            logger.warning(f"[Sequence] {self.capped_terms} {self.family} term(s) capped at {self.cap}")

    # --- Constructors ---

    @classmethod
    def power_law(cls, c: float, gamma: float, b: float = 1.0, cap: float = 0.99,
                  horizon: int = 200_000) -> 'ReinforcementSequence':
        return cls(SequenceSpec(family='power_law', c=c, gamma=gamma, b=b, cap=cap, horizon=horizon))

    @classmethod
    def constant(cls, r: float, horizon: int = 200_000) -> 'ReinforcementSequence':
        return cls(SequenceSpec(family='constant', r=r, horizon=horizon))

    @classmethod
    def zero(cls, horizon: int = 200_000) -> 'ReinforcementSequence':
        return cls(SequenceSpec(family='zero', horizon=horizon))

    @classmethod
    def custom(cls, table, asymptotic: Optional[SequenceSpec] = None, cap: float = 0.99,
               horizon: int = 200_000) -> 'ReinforcementSequence':
        return cls(SequenceSpec(family='custom', table=list(table), asymptotic=asymptotic,
                                cap=cap, horizon=horizon))

    # --- Accessors ---

    @property
    def capped(self) -> bool:
        return self.capped_terms > 0

    @property
    def sup_r(self) -> float:
        return float(self._r.max())

    @property
    def asymptotic(self) -> Optional['ReinforcementSequence']:
        return self._asymptotic

    @property
    def asymptotic_spec(self) -> Optional[SequenceSpec]:
        """The SequenceSpec that governs the tail: the family itself, or a custom table's declared family."""
        if self.family == 'custom':
            return self.spec.asymptotic
        return self.spec

    def r(self, n: int) -> float:
        if n < 0:
            raise ValueError(f"n must be non-negative, got {n}")
        if n < len(self._r):
            return float(self._r[n])
        return float(self.values(n, n + 1)[0])

    def values(self, start: int, stop: int) -> np.ndarray:
        """Capped r_k for k in [start, stop)."""
        if stop <= len(self._r):
            return self._r[start:stop]
        head = self._r[start:len(self._r)] if start < len(self._r) else self._r[:0]
        tail_start = max(start, len(self._r))
        return np.concatenate([head, np.minimum(self._raw_values(tail_start, stop), self.cap)])

    def partial_sum(self, n: int) -> float:
        """Sum of r_k for k = 0..n."""
        if n < len(self._partial):
            return float(self._partial[n])
        extra = self._chunked_sum(len(self._partial), n + 1, lambda v: v)
        return float(self._partial[-1] + extra)

    def log_memory(self, n: int) -> float:
        """Sum of log(1 - r_k) for k = 0..n."""
        if n < len(self._log_memory):
            return float(self._log_memory[n])
        extra = self._chunked_sum(len(self._log_memory), n + 1, lambda v: np.log1p(-v))
        return float(self._log_memory[-1] + extra)

    def memory_product(self, n: int) -> float:
        # May underflow to 0 for huge n; callers treat 0 as below representable
        return math.exp(self.log_memory(n))

    def tail_sq_sum(self, n: int, rel_tol: float = 1e-9) -> float:
        """
        Sum of r_k^2 for k >= n; math.inf when the series diverges.

        power_law: direct sum up to an index T past the capped prefix, then
        the integral remainder bracketed by Euler-Maclaurin end corrections
        (valid since c^2 (b+x)^(-2 gamma) is completely monotone). T doubles
        until half the bracket width is within rel_tol of the estimate.
        """
        if n < 0:
            raise ValueError(f"n must be non-negative, got {n}")
        if rel_tol <= 0:
            raise ValueError("rel_tol must be positive")

        if self.family == 'zero':
            return 0.0
        if self.family == 'constant':
            return math.inf if self.spec.r > 0 else 0.0
        if self.family == 'custom':
            if self._asymptotic is None:
                raise UnknownTail("Custom sequence declares no asymptotic family; tail sum is unknown")
            boundary = len(self.spec.table)
            if n >= boundary:
                return self._asymptotic.tail_sq_sum(n, rel_tol)
            head = float(np.sum(np.square(self.values(n, boundary))))
            return head + self._asymptotic.tail_sq_sum(boundary, rel_tol)

        return self._power_law_tail(n, rel_tol)

    def urn_weights(self, s0: float, n: int) -> tuple[float, float]:
        """(alpha_n, s_n) of the equivalent two-colour urn with initial mass s0."""
        if s0 <= 0:
            raise ValueError("s0 must be positive")
        if n < 1:
            raise ValueError("urn weights are defined for n >= 1")
        s_n = s0 * math.exp(-self.log_memory(n - 1))
        return s_n * self.r(n - 1), s_n

    def cond_zero_ratio(self, n: int) -> float:
        """r_n / (exp(-S_n) S_n) with S_n = partial_sum(n)."""
        total = self.partial_sum(n)
        if total <= 0.0:
            raise ZeroDenominator(f"partial_sum({n}) is zero")
        try:
            return self.r(n) * math.exp(total) / total
        except OverflowError:
            return math.inf

    # --- Helpers ---

    @property
    def first_uncapped(self) -> int:
        """First index past which power_law values are never capped."""
        c, gamma, b = self.spec.c, self.spec.gamma, self.spec.b
        if gamma <= 0:
            raise ValueError("power_law with gamma <= 0 is capped forever")
        k = max(0, math.ceil((c / self.cap) ** (1.0 / gamma) - b))
        while c / (b + k) ** gamma > self.cap:
            k += 1
        while k > 0 and c / (b + k - 1) ** gamma <= self.cap:
            k -= 1
        return k

    def _raw_values(self, start: int, stop: int) -> np.ndarray:
        k = np.arange(start, stop, dtype=float)
        if self.family == 'power_law':
            return self.spec.c / np.power(self.spec.b + k, self.spec.gamma)
        if self.family == 'constant':
            return np.full(k.shape, self.spec.r)
        if self.family == 'zero':
            return np.zeros(k.shape)

        table = np.asarray(self.spec.table, dtype=float)
        if stop <= len(table):
            return table[start:stop]
        if self._asymptotic is None:
            raise UnknownTail(f"Custom table ends at index {len(table) - 1} and declares no asymptotic family")
        head = table[start:] if start < len(table) else table[:0]
        return np.concatenate([head, self._asymptotic._raw_values(max(start, len(table)), stop)])

    def _chunked_sum(self, start: int, stop: int, transform) -> float:
        total = np.longdouble(0.0)
        for lo in range(start, stop, _CHUNK):
            chunk = np.minimum(self._raw_values(lo, min(lo + _CHUNK, stop)), self.cap)
            total += np.sum(transform(chunk).astype(np.longdouble))
        return float(total)

    def _power_law_tail(self, n: int, rel_tol: float) -> float:
        c, gamma, b = self.spec.c, self.spec.gamma, self.spec.b
        if gamma <= 0.5:
            return math.inf

        s = 2.0 * gamma
        scale = c * c
        truncation = max(n, self.first_uncapped, 64)
        direct = self._chunked_sum(n, truncation, np.square)

        while True:
            x = b + truncation
            f = scale * x ** (-s)
            integral = scale * x ** (1.0 - s) / (s - 1.0)
            upper = integral + f / 2.0 + s * scale * x ** (-s - 1.0) / 12.0
            lower = upper - s * (s + 1.0) * (s + 2.0) * scale * x ** (-s - 3.0) / 720.0
            estimate = direct + (upper + lower) / 2.0
            if (upper - lower) / 2.0 <= rel_tol * estimate:
                return estimate
            nxt = 2 * truncation
            direct += self._chunked_sum(truncation, nxt, np.square)
            truncation = nxt
