"""
Desk-scale statistical checks of the dynamics, the barrier bounds and the
estimation pipeline. Every stream is keyed, so each assertion runs on fixed
draws; tolerances are several standard errors wide.
"""
import math

import numpy as np
import pandas as pd
import pytest

from src.application.services.estimation import EstimationService
from src.application.services.experiments import ExperimentService
from src.application.services.netgraph import MatrixService
from src.application.services.regime import RegimeService
from src.application.services.sequence import ReinforcementSequence
from src.application.services.simulator import SimulationService
from src.application.services.streams import Purpose, substreams
from src.domain.schemas import ExperimentConfig, PolarizationClass

FIGURE_SEQUENCE = {"family": "power_law", "c": 1.0, "gamma": 0.75, "b": 0.1}


def run_rows(z0, n_rows: int, start: int, stop: int, matrix, seq, seed: int, **kwargs):
    rows = np.repeat(np.asarray(z0, dtype=float)[None, :], n_rows, axis=0)
    return SimulationService.advance(rows, start, stop, matrix, seq,
                                     substreams(seed, Purpose.MASTER, (), n_rows), threads=4, **kwargs)


def pipeline_frame(S: int, K: int, include_target: bool) -> pd.DataFrame:
    config = ExperimentConfig.model_validate({
        "matrix": {"preset": "mean_field", "n_agents": 3},
        "sequence": FIGURE_SEQUENCE,
        "initial": {"kind": "constant", "value": 0.5},
        "estimation": {"t_offset": 10_000, "K": K, "alpha": 0.05,
                       "long_horizon": 100_000, "figure_n": [100, 10_000]},
        "replication": {"S": S, "master_seed": 2024, "threads": 4},
    })
    rows, _ = ExperimentService.run_runs(config, list(range(S)), [100, 10_000], include_target)
    return pd.DataFrame(rows)


@pytest.fixture(scope='module')
def figure_frame():
    """50 masters, K = 100 continuations to n + 10^4 and refined targets at 10^5."""
    return pipeline_frame(S=50, K=100, include_target=True)


@pytest.fixture(scope='module')
def coverage_frame():
    """500 masters, K = 100 continuations to n + 10^4, proxy at 10^5."""
    return pipeline_frame(S=500, K=100, include_target=False)


class TestMartingaleDynamics:
    """
    Integration Tests for the weighted average as a martingale and for its limits.
    """

    @pytest.mark.parametrize("weights,z0", [
        (MatrixService.mean_field(3), [0.5, 0.5, 0.5]),
        (np.array([[0.5, 0.25], [0.5, 0.75]]), [0.9, 0.3]),
    ], ids=["mean_field", "two_agents"])
    def test_weighted_average_keeps_its_mean(self, weights, z0):
        """
        GIVEN 10^4 replications started from a state with weighted average 1/2
        WHEN they run to n = 100, 1000 and 10^4
        THEN the sample mean of the weighted average stays within 4 standard errors of 1/2
        """
        # Arrange
        matrix = MatrixService.validate_matrix(weights)
        seq = ReinforcementSequence.power_law(**{k: v for k, v in FIGURE_SEQUENCE.items() if k != "family"})
        R = 10_000

        # Act
        result = run_rows(z0, R, 0, 10_000, matrix, seq, seed=11, checkpoints=[100, 1_000, 10_000])

        # Assert
        for col in range(3):
            z_tilde = result.z_tilde[:, col]
            standard_error = z_tilde.std(ddof=1) / math.sqrt(R)
            assert abs(z_tilde.mean() - 0.5) <= 4 * standard_error

    def test_fast_decay_polarizes(self, mean_field):
        """
        GIVEN r_n = (1 + n)^-0.4 and a mean-field network at 1/2
        WHEN 10^4 replications run to n = 10^4
        THEN at least 95% end within 1e-3 of a barrier, half of them near 1
        """
        # Arrange
        seq = ReinforcementSequence.power_law(c=1.0, gamma=0.4)
        report = RegimeService.classify(seq, np.full(3, 0.5), mean_field.weighting_vector())
        R = 10_000

        # Act
        z_tilde = run_rows([0.5] * 3, R, 0, 10_000, mean_field, seq, seed=12,
                           checkpoints=[10_000]).final_z_tilde

        # Assert
        assert report.polarization_class is PolarizationClass.ALMOST_SURE
        assert np.mean(np.minimum(z_tilde, 1.0 - z_tilde) < 1e-3) >= 0.95
        assert abs(np.mean(z_tilde > 1.0 - 1e-3) - report.p_one_if_almost_sure) <= 0.02

    def test_harmonic_decay_stays_interior(self, mean_field):
        """
        GIVEN r_n = 0.8 / (1 + n), whose memory product decays like n^-0.8
        WHEN 1000 replications run to n = 10^4
        THEN none comes within 1e-6 of a barrier, nor below 1/2 of the memory product
        """
        # Arrange
        seq = ReinforcementSequence.power_law(c=0.8, gamma=1.0)
        report = RegimeService.classify(seq, np.full(3, 0.5), mean_field.weighting_vector())
        floor = 0.5 * seq.memory_product(9_999)

        # Act
        z_tilde = run_rows([0.5] * 3, 1_000, 0, 10_000, mean_field, seq, seed=13,
                           checkpoints=[10_000]).final_z_tilde

        # Assert
        assert report.polarization_class is PolarizationClass.ZERO
        distance = np.minimum(z_tilde, 1.0 - z_tilde)
        assert distance.min() > 1e-6
        assert distance.min() >= floor * (1.0 - 1e-9)


class TestBarrierBounds:
    """
    Integration Tests for the Hoeffding and fixation bounds against simulated frequencies.
    """

    @pytest.mark.parametrize("m", [0.2, 0.3, 0.5])
    def test_hoeffding_bounds_dominate_barrier_frequencies(self, mean_field, m):
        """
        GIVEN 2000 continuations of the synchronized state m at n = 100
        WHEN they run to n = 10^4
        THEN the frequency of ending within 1e-3 of each barrier is at most its Hoeffding bound
        """
        # Arrange
        seq = ReinforcementSequence.power_law(**{k: v for k, v in FIGURE_SEQUENCE.items() if k != "family"})
        tail = seq.tail_sq_sum(100)
        u0 = EstimationService.hoeffding_bounds(m - 1e-3, tail)[0]
        u1 = EstimationService.hoeffding_bounds(m + 1e-3, tail)[1]
        R = 2_000

        # Act
        z_tilde = run_rows([m] * 3, R, 100, 10_000, mean_field, seq, seed=int(m * 100),
                           checkpoints=[10_000]).final_z_tilde

        # Assert
        assert np.mean(z_tilde < 1e-3) <= u0 + 3 * math.sqrt(u0 * (1 - u0) / R)
        assert np.mean(z_tilde > 1.0 - 1e-3) <= u1 + 3 * math.sqrt(u1 * (1 - u1) / R)

    @pytest.mark.parametrize("seq,horizon", [
        (ReinforcementSequence.constant(0.5, horizon=1_000), 200),
        (ReinforcementSequence.power_law(c=2.0, gamma=1.0, horizon=5_000), 2_000),
    ], ids=["constant", "harmonic"])
    def test_fixation_bound_below_silent_frequency(self, mean_field, snapshot_at, seq, horizon):
        """
        GIVEN every agent at 0.01 at step 10
        WHEN 2000 continuations record their actions over the horizon
        THEN the fixation lower bound does not exceed the frequency of all-zero action paths
        """
        # Arrange
        snapshot = snapshot_at(10, [0.01] * 3)
        bound = EstimationService.fixation_lower_bound(snapshot, seq, mean_field.v_min)
        R = 2_000

        # Act
        actions = run_rows(snapshot.z, R, 10, 10 + horizon, mean_field, seq, seed=14,
                           retain_actions=True).actions
        silent = np.mean(~actions.any(axis=(1, 2)))

        # Assert
        assert 0.0 < bound < 1.0
        assert bound <= silent + 3 * math.sqrt(silent * (1 - silent) / R)


class TestEstimationPipelineBehaviour:
    """
    Integration Tests for the estimates, intervals and coverage of the reproduction setting.
    Mean field N = 3, figure sequence, n in {100, 10^4}, t = n + 10^4, proxy and target at 10^5.
    """

    def test_estimates_agree_with_refined_target(self, figure_frame):
        """
        GIVEN 50 master runs with K = 100
        WHEN the estimates at n = 100 are compared with the targets refined to 10^5
        THEN at least 90% of runs agree within 0.15 on every component
        """
        # Arrange
        at_100 = figure_frame[figure_frame['n'] == 100]

        # Act
        gaps = self.gaps(at_100)

        # Assert
        assert at_100[['u0', 'u1', 'u01']].stack().between(0.0, 1.0).all()
        assert np.mean(gaps <= 0.15) >= 0.90

    def test_estimates_sharpen_with_n(self, figure_frame):
        # Act
        early = self.gaps(figure_frame[figure_frame['n'] == 100])
        late = self.gaps(figure_frame[figure_frame['n'] == 10_000])

        # Assert
        assert np.median(late) < np.median(early)

    def test_coverage_of_long_horizon_proxy(self, coverage_frame):
        """
        GIVEN 500 master runs with alpha = 0.05
        WHEN each interval is checked against the proxy at 10^5
        THEN coverage is at least 0.93 and single-part intervals are more frequent at n = 10^4
        """
        # Act
        by_n = coverage_frame.groupby('n')
        coverage = by_n['covered'].mean()
        single_part = by_n['part_count'].apply(lambda s: int((s == 1).sum()))

        # Assert
        assert coverage[100] >= 0.93
        assert coverage_frame['covered'].mean() >= 0.93
        assert single_part[10_000] > single_part[100]

    def test_interior_mass_grows_on_interior_runs(self, coverage_frame):
        """
        GIVEN masters whose proxy lies in (0.1, 0.9)
        WHEN u01 is compared at n = 100 and n = 10^4
        THEN its median over those runs is larger at n = 10^4
        """
        # Arrange
        interior = coverage_frame[coverage_frame['z_tilde_long'].between(0.1, 0.9)]
        wide = interior.pivot(index='run', columns='n', values='u01')

        # Act
        early, late = wide[100].median(), wide[10_000].median()

        # Assert
        assert len(wide) >= 50
        assert late > early

    @staticmethod
    def gaps(frame: pd.DataFrame) -> np.ndarray:
        return np.max(np.abs(frame[['u0', 'u1', 'u01']].to_numpy()
                             - frame[['target_u0', 'target_u1', 'target_u01']].to_numpy()), axis=1)
