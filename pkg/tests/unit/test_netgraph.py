import numpy as np
import pytest
from unittest.mock import patch

from src.application.services.netgraph import MatrixService
from src.domain.errors import ColumnSumViolation, NegativeEntry, NoConvergence, NotIrreducible


class TestValidateMatrix:
    """
    Unit Tests for MatrixService.validate_matrix.
    Checks stochasticity, the support digraph and the cached spectral data.
    """

    def test_mean_field_is_irreducible_aperiodic_with_uniform_v(self):
        """
        GIVEN the mean-field matrix with N = 3
        WHEN it is validated
        THEN it is irreducible, aperiodic and v is uniform
        """
        # Act
        m = MatrixService.validate_matrix(MatrixService.mean_field(3))

        # Assert
        assert m.irreducible is True
        assert m.period == 1
        assert m.aperiodic is True
        np.testing.assert_allclose(m.left_eigenvector, np.full(3, 1 / 3), atol=1e-12)
        assert m.v_min == pytest.approx(1 / 3)

    def test_column_sum_violation_names_column(self):
        """
        GIVEN a matrix whose second column sums to 0.9
        WHEN it is validated
        THEN ColumnSumViolation is raised naming column 1
        """
        # Arrange
        raw = np.array([[0.5, 0.4], [0.5, 0.5]])

        # Act & Assert
        with pytest.raises(ColumnSumViolation, match="Column 1"):
            MatrixService.validate_matrix(raw)

    def test_negative_entry_rejected(self):
        raw = np.array([[1.2, 0.5], [-0.2, 0.5]])
        with pytest.raises(NegativeEntry):
            MatrixService.validate_matrix(raw)

    def test_renormalize_scales_columns(self):
        """
        GIVEN non-stochastic non-negative weights
        WHEN validated with renormalize=True
        THEN every column sums to 1 and the flag is recorded
        """
        # Arrange
        raw = np.array([[2.0, 1.0], [2.0, 3.0]])

        # Act
        m = MatrixService.validate_matrix(raw, renormalize=True)

        # Assert
        np.testing.assert_allclose(m.weights.sum(axis=0), 1.0)
        assert m.renormalized is True

    def test_reducible_matrix_is_a_value_not_an_error(self):
        """
        GIVEN the identity matrix (no edges between agents)
        WHEN it is validated
        THEN irreducible is False and no period or eigenvector is cached
        """
        # Act
        m = MatrixService.validate_matrix(np.eye(3))

        # Assert
        assert m.irreducible is False
        assert m.period is None
        assert m.left_eigenvector is None
        np.testing.assert_allclose(m.weighting_vector(), np.full(3, 1 / 3))

    def test_weights_are_read_only(self, mean_field):
        with pytest.raises(ValueError):
            mean_field.weights[0, 0] = 0.0

    def test_non_square_rejected(self):
        with pytest.raises(ValueError, match="square"):
            MatrixService.validate_matrix(np.ones((2, 3)) / 2)


class TestPeriodAndEigenvector:
    """
    Unit Tests for the period of the support digraph and the leading left eigenvector.
    """

    def test_directed_cycle_has_period_three(self, cycle_matrix):
        """
        GIVEN the directed 3-cycle
        WHEN its period is computed
        THEN it is 3 and v is still uniform (Cesaro average of the iterates)
        """
        # Act
        period = MatrixService.matrix_period(cycle_matrix)
        v = MatrixService.leading_left_eigenvector(cycle_matrix)

        # Assert
        assert period == 3
        assert cycle_matrix.aperiodic is False
        np.testing.assert_allclose(v, np.full(3, 1 / 3), atol=1e-12)

    def test_self_loop_breaks_periodicity(self):
        """
        GIVEN a 2-cycle with a self-loop on agent 0
        WHEN validated
        THEN the period is 1
        """
        # Arrange
        raw = np.array([[0.5, 1.0], [0.5, 0.0]])

        # Act
        m = MatrixService.validate_matrix(raw)

        # Assert
        assert m.period == 1

    def test_eigenvector_matches_dense_solve(self):
        """
        GIVEN a random irreducible column-stochastic matrix
        WHEN v is computed by power iteration
        THEN Wv = v, v > 0, sum(v) = 1 and it agrees with the dense solve
        """
        # Arrange
        rng = np.random.default_rng(3)
        raw = rng.random((5, 5)) + 0.05
        raw /= raw.sum(axis=0)

        # Act
        m = MatrixService.validate_matrix(raw)
        v = m.left_eigenvector

        # Assert
        np.testing.assert_allclose(raw @ v, v, atol=1e-11)
        assert np.all(v > 0)
        assert v.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(v, MatrixService.dense_solve(raw), atol=1e-10)

    def test_period_of_reducible_matrix_raises(self):
        m = MatrixService.validate_matrix(np.eye(2))
        with pytest.raises(NotIrreducible):
            MatrixService.matrix_period(m)
        with pytest.raises(NotIrreducible):
            MatrixService.leading_left_eigenvector(m)

    def test_iteration_cap_falls_back_to_dense_solve(self):
        """
        GIVEN an iteration cap of one step
        WHEN the eigenvector is requested
        THEN the dense solve is used for small N
        """
        # Arrange
        m = MatrixService.validate_matrix(np.array([[0.9, 0.2], [0.1, 0.8]]))

        # Act
        with patch.object(MatrixService, 'dense_solve', wraps=MatrixService.dense_solve) as dense:
            v = MatrixService.leading_left_eigenvector(m, tol=0.0, max_iter=1)

        # Assert
        dense.assert_called_once()
        np.testing.assert_allclose(v, [2 / 3, 1 / 3], atol=1e-12)

    def test_iteration_cap_without_fallback_raises(self):
        m = MatrixService.validate_matrix(np.array([[0.9, 0.2], [0.1, 0.8]]))
        with pytest.raises(NoConvergence):
            MatrixService.leading_left_eigenvector(m, tol=0.0, max_iter=1, dense_fallback=False)


def random_irreducible(seed: int, n_agents: int, self_loops: bool) -> np.ndarray:
    """Column-stochastic matrix on a random support that contains the cycle 0 -> 1 -> ... -> 0."""
    rng = np.random.default_rng(seed)
    support = rng.random((n_agents, n_agents)) < 0.4
    support[np.arange(n_agents), np.roll(np.arange(n_agents), -1)] = True
    np.fill_diagonal(support, self_loops)
    raw = np.where(support, rng.random((n_agents, n_agents)) + 0.05, 0.0)
    return raw / raw.sum(axis=0)


class TestRandomMatrices:
    """
    Unit Tests for period and eigenvector on random small supports.
    """

    @pytest.mark.parametrize("seed", range(24))
    def test_power_iteration_agrees_with_dense_solve(self, seed):
        """
        GIVEN a random irreducible matrix with 2 to 8 agents, self-loops on or off
        WHEN v is computed by power iteration alone
        THEN it matches the dense solve
        """
        # Arrange
        raw = random_irreducible(seed, 2 + seed % 7, self_loops=seed % 2 == 0)
        m = MatrixService.validate_matrix(raw)

        # Act
        v = MatrixService.leading_left_eigenvector(m, dense_fallback=False)

        # Assert
        assert m.irreducible
        np.testing.assert_allclose(v, MatrixService.dense_solve(raw), atol=1e-9)

    @pytest.mark.parametrize("seed", range(24))
    def test_positive_diagonal_is_aperiodic(self, seed):
        # Arrange
        raw = random_irreducible(seed, 2 + seed % 7, self_loops=True)

        # Act
        m = MatrixService.validate_matrix(raw)

        # Assert
        assert m.period == 1


class TestSmallMatrices:
    """
    Unit Tests for hand-solved matrices.
    """

    def test_two_agent_eigenvector(self):
        """
        GIVEN W = [[1/2, 1/4], [1/2, 3/4]]
        WHEN validated
        THEN v = (1/3, 2/3) and the period is 1
        """
        # Act
        m = MatrixService.validate_matrix(np.array([[0.5, 0.25], [0.5, 0.75]]))

        # Assert
        np.testing.assert_allclose(m.left_eigenvector, [1 / 3, 2 / 3], atol=1e-12)
        assert m.period == 1

    def test_single_agent(self):
        m = MatrixService.validate_matrix(np.array([[1.0]]))
        assert m.irreducible
        assert m.period == 1
        np.testing.assert_array_equal(m.left_eigenvector, [1.0])

    def test_swap_has_period_two(self):
        """
        GIVEN the 2x2 permutation matrix
        WHEN validated
        THEN it is irreducible with period 2 and v = (1/2, 1/2)
        """
        # Act
        m = MatrixService.validate_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))

        # Assert
        assert m.irreducible
        assert m.period == 2
        assert m.aperiodic is False
        np.testing.assert_allclose(m.left_eigenvector, [0.5, 0.5], atol=1e-12)
