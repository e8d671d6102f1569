import logging
import math
from typing import Optional

import numpy as np

from src.application.services.sequence import ReinforcementSequence
from src.domain.errors import OutOfTable, UnknownFamily, UnknownTail
from src.domain.schemas import (
    ConditionsReport,
    PolarizationClass,
    RegimeReport,
    SeriesEvidence,
    SequenceSpec,
    Synchronization,
)

logger = logging.getLogger(__name__)

SERIES = ('sum_r', 'sum_r_one_minus_r', 'sum_r_sq', 'sum_memory')


class RegimeService:
    """
    Analytic classification of the asymptotic regime from the sequence family.

    Numeric scans (diagnose_conditions) only accompany the analytic verdicts;
    a finite scan never decides convergence on its own.
    """

    @staticmethod
    def series_divergence(spec: Optional[SequenceSpec]) -> Optional[dict[str, bool]]:
        """
        Divergence of the four governing series for a family, or None if unknown.

        Keys: sum_r, sum_r_one_minus_r, sum_r_sq, sum_memory (sum of the
        memory products prod_{k<=n}(1 - r_k)).
        """
        if spec is None or spec.family == 'custom':
            return None
        if spec.family == 'zero' or (spec.family == 'constant' and spec.r == 0.0):
            return dict(sum_r=False, sum_r_one_minus_r=False, sum_r_sq=False, sum_memory=True)
        if spec.family == 'constant':
            return dict(sum_r=True, sum_r_one_minus_r=True, sum_r_sq=True, sum_memory=False)

        c, gamma = spec.c, spec.gamma
        if gamma < 1.0:
            memory_diverges = False
        elif gamma == 1.0:
            memory_diverges = c <= 1.0
        else:
            memory_diverges = True
        return dict(
            sum_r=gamma <= 1.0,
            sum_r_one_minus_r=gamma <= 1.0,
            sum_r_sq=gamma <= 0.5,
            sum_memory=memory_diverges,
        )

    @staticmethod
    def check_synchronization(aperiodic: bool, seq: ReinforcementSequence) -> Synchronization:
        verdicts = RegimeService.series_divergence(seq.asymptotic_spec)
        if verdicts is None:
            raise UnknownFamily("Custom sequence declares no asymptotic family")
        if aperiodic and verdicts['sum_r']:
            return Synchronization.GUARANTEED_APERIODIC
        if verdicts['sum_r_one_minus_r']:
            return Synchronization.GUARANTEED_PERIODIC_CONDITION
        return Synchronization.NOT_GUARANTEED

    @staticmethod
    def classify(seq: ReinforcementSequence, z0_mean, v, aperiodic: bool = True,
                 irreducible: bool = True) -> RegimeReport:
        """
        Polarization class for power-law sequences r_n ~ c n^(-gamma).

        gamma = 1, c <= 1 -> zero; gamma = 1, c > 1 or 1/2 < gamma < 1 ->
        interior with positive mass on both barriers; 0 < gamma <= 1/2 ->
        almost sure, with P(limit = 1) = v . z0_mean. Constant sequences
        have a divergent sum of squares and polarize almost surely as well.
        """
        notes: list[str] = []
        p_one = float(np.clip(np.dot(np.asarray(v, dtype=float), np.asarray(z0_mean, dtype=float)), 0.0, 1.0))

        if seq.family == 'power_law' and seq.spec.gamma <= 0.0:
            raise OutOfTable(f"gamma={seq.spec.gamma} is outside the classification table (gamma <= 0)")
        if seq.family == 'power_law' and seq.spec.gamma > 1.0:
            raise OutOfTable(f"gamma={seq.spec.gamma} is outside the classification table (gamma > 1)")

        if seq.family == 'custom':
            synchronization = RegimeService._synchronization_or_unknown(aperiodic and irreducible, seq, notes)
            notes.append("custom sequences are not classified: perturbations of the declared family are not verified")
            return RegimeReport(synchronization=synchronization,
                                polarization_class=PolarizationClass.INCONCLUSIVE, notes=notes)

        synchronization = RegimeService.check_synchronization(aperiodic, seq)
        if not irreducible:
            synchronization = Synchronization.NOT_GUARANTEED
            notes.append("W is reducible: synchronization results do not apply")
            return RegimeReport(synchronization=synchronization,
                                polarization_class=PolarizationClass.INCONCLUSIVE, notes=notes)

        if seq.capped:
            notes.append(f"{seq.capped_terms} initial term(s) capped at {seq.cap}; asymptotics unchanged")

        if seq.family == 'zero' or (seq.family == 'constant' and seq.spec.r == 0.0):
            notes.append("r_n = 0: inclinations never move, the limit equals the initial state")
            return RegimeReport(synchronization=synchronization,
                                polarization_class=PolarizationClass.INCONCLUSIVE, notes=notes)

        if seq.family == 'constant':
            notes.append("sum r_n^2 = inf: almost sure polarization, P(limit = 1) = v . E[Z_0]")
            return RegimeReport(synchronization=synchronization,
                                polarization_class=PolarizationClass.ALMOST_SURE,
                                p_one_if_almost_sure=p_one, notes=notes)

        c, gamma = seq.spec.c, seq.spec.gamma
        if gamma == 1.0 and c <= 1.0:
            notes.append("gamma = 1, c <= 1: r_n = O(exp(-S_n) S_n), polarization has probability zero")
            polarization = PolarizationClass.ZERO
        elif gamma == 1.0 or gamma > 0.5:
            notes.append("sum r_n^2 < inf and sum of memory products < inf: "
                         "interior limit with positive probability of fixation at each barrier")
            polarization = PolarizationClass.INTERIOR_POSITIVE_BOTH_BARRIERS
        else:
            notes.append("sum r_n^2 = inf: almost sure polarization, P(limit = 1) = v . E[Z_0]")
            return RegimeReport(synchronization=synchronization,
                                polarization_class=PolarizationClass.ALMOST_SURE,
                                p_one_if_almost_sure=p_one, atomless_interior=None, notes=notes)

        return RegimeReport(synchronization=synchronization, polarization_class=polarization,
                            atomless_interior=True if 0.5 < gamma <= 1.0 else None, notes=notes)

    @staticmethod
    def diagnose_conditions(seq: ReinforcementSequence, horizon: int = 100_000) -> ConditionsReport:
        """
        Numeric evidence for the series governing the regime, at decade checkpoints.

        Series: sum r_n, sum r_n (1 - r_n), sum r_n^2 and the sum of memory
        products. Also scans r_n / (exp(-S_n) S_n) over [100, horizon], the
        urn ratio alpha_{n+1} / ln s_{n+1} and the partial-sum sandwich
        (1 - sup r) <= S_n / ln s_{n+1} <= 1 (s_0 = 1).
        """
        if horizon < 100:
            raise ValueError("horizon must be at least 100")

        try:
            r = seq.values(0, horizon + 1)
        except UnknownTail:
            r = seq.values(0, len(seq.spec.table))
            logger.warning(f"[Regime] Custom table shorter than horizon; scanning {len(r)} terms")
            horizon = len(r) - 1
        if horizon < 100:
            raise ValueError("the custom table holds fewer than 101 terms")

        r_ext = r.astype(np.longdouble)
        log_memory = np.cumsum(np.log1p(-r).astype(np.longdouble))
        partial = np.cumsum(r_ext)
        cumulative = {
            'sum_r': partial,
            'sum_r_one_minus_r': np.cumsum(r_ext * (1 - r_ext)),
            'sum_r_sq': np.cumsum(r_ext * r_ext),
            'sum_memory': np.cumsum(np.exp(log_memory)),
        }

        checkpoints = [10 ** k for k in range(2, int(math.log10(horizon)) + 1)]
        if checkpoints[-1] != horizon:
            checkpoints.append(horizon)

        verdicts = RegimeService.series_divergence(seq.asymptotic_spec)
        series = []
        for name in SERIES:
            values = [float(cumulative[name][n]) for n in checkpoints]
            growth = RegimeService._relative_growth(values[-2], values[-1]) if len(values) > 1 else 0.0
            if verdicts is None:
                verdict = 'inconclusive'
            else:
                verdict = 'divergent' if verdicts[name] else 'convergent'
            series.append(SeriesEvidence(
                name=name,
                checkpoints=checkpoints,
                partial_values=values,
                relative_growth=growth,
                trend='growing' if growth > 0.10 else 'settled' if growth < 0.01 else 'undetermined',
                verdict=verdict,
            ))

        report = dict(family=seq.family, horizon=horizon, series=series)
        report.update(RegimeService._cond_zero_scan(seq, r, partial, checkpoints))
        report.update(RegimeService._urn_scan(seq, r, partial, log_memory))
        return ConditionsReport(**report)

    # --- Helpers ---

    @staticmethod
    def _synchronization_or_unknown(aperiodic: bool, seq: ReinforcementSequence,
                                    notes: list[str]) -> Synchronization:
        try:
            return RegimeService.check_synchronization(aperiodic, seq)
        except UnknownFamily:
            notes.append("no asymptotic family declared: synchronization undecided")
            return Synchronization.NOT_GUARANTEED

    @staticmethod
    def _relative_growth(previous: float, last: float) -> float:
        if previous == 0.0:
            return 0.0 if last == 0.0 else math.inf
        return (last - previous) / abs(previous)

    @staticmethod
    def _cond_zero_verdict(spec: Optional[SequenceSpec]) -> str:
        if spec is None or spec.family in ('custom', 'zero') or (spec.family == 'constant' and spec.r == 0.0):
            return 'inconclusive'
        if spec.family == 'constant':
            return 'fails'
        # gamma > 1: S_n stays bounded while r_n -> 0
        if spec.gamma > 1.0 or (spec.gamma == 1.0 and spec.c <= 1.0):
            return 'holds'
        return 'fails'

    @staticmethod
    def _cond_zero_scan(seq: ReinforcementSequence, r: np.ndarray, partial: np.ndarray,
                        checkpoints: list[int]) -> dict:
        scan = slice(100, len(r))
        totals = partial[scan].astype(float)
        with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
            ratios = np.where(totals > 0.0, r[scan] * np.exp(totals) / totals, np.nan)
        if np.all(np.isnan(ratios)):
            return dict(cond_zero_verdict='inconclusive')
        values = [float(ratios[n - 100]) for n in checkpoints]
        return dict(
            cond_zero_checkpoints=checkpoints,
            cond_zero_values=values,
            cond_zero_max=float(np.nanmax(ratios)),
            cond_zero_verdict=RegimeService._cond_zero_verdict(seq.asymptotic_spec),
        )

    @staticmethod
    def _urn_scan(seq: ReinforcementSequence, r: np.ndarray, partial: np.ndarray,
                  log_memory: np.ndarray) -> dict:
        log_s = -log_memory.astype(float)
        mask = log_s > 0.0
        if not mask.any():
            return {}
        with np.errstate(over='ignore'):
            alpha_ratio = r[mask] * np.exp(log_s[mask]) / log_s[mask]
        sandwich = None
        sup_r = float(r.max())
        if 0.0 < sup_r < 1.0:
            ratio = partial[mask].astype(float) / log_s[mask]
            sandwich = bool(np.all(ratio <= 1.0) and np.all(ratio >= 1.0 - sup_r))
        return dict(alpha_log_ratio_max=float(np.max(alpha_ratio)), sandwich_holds=sandwich)
