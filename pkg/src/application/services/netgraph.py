import logging
import math
from collections import deque
from functools import reduce
from typing import Optional

import networkx as nx
import numpy as np

from src.config import Config
from src.domain.errors import ColumnSumViolation, NegativeEntry, NoConvergence, NotIrreducible
from src.domain.schemas import ValidatedMatrix

logger = logging.getLogger(__name__)


class MatrixService:
    """
    Validation and graph/spectral analysis of the interaction matrix W.

    W is column-stochastic: w[l1][l2] is the weight agent l2 puts on agent
    l1, and the support digraph has an edge l1 -> l2 whenever it is positive.
    """

    DENSE_SOLVE_MAX_N = 64

    @staticmethod
    def validate_matrix(raw, tol: float = 1e-12, renormalize: bool = False,
                        max_iter: Optional[int] = None) -> ValidatedMatrix:
        weights = np.array(raw, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1] or weights.shape[0] < 1:
            raise ValueError(f"Interaction matrix must be square and non-empty, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("Interaction matrix has non-finite entries")
        if np.any(weights < 0.0):
            l1, l2 = np.argwhere(weights < 0.0)[0]
            raise NegativeEntry(f"w[{l1}][{l2}] = {weights[l1, l2]} is negative")

        column_sums = weights.sum(axis=0)
        if renormalize:
            if np.any(column_sums == 0.0):
                raise ColumnSumViolation("Cannot renormalize a column with zero mass")
            weights = weights / column_sums
            column_sums = weights.sum(axis=0)

        deviation = np.abs(column_sums - 1.0)
        if deviation.max() > tol:
            column = int(deviation.argmax())
            raise ColumnSumViolation(
                f"Column {column} sums to {column_sums[column]!r} (tolerance {tol})"
            )

        graph = MatrixService._support_graph(weights)
        irreducible = nx.is_strongly_connected(graph)
        n_agents = weights.shape[0]

        if not irreducible:
            logger.info(f"[Matrix] Support digraph of the {n_agents}x{n_agents} matrix is not strongly connected")
            return ValidatedMatrix(n_agents=n_agents, weights=weights, irreducible=False,
                                   renormalized=renormalize)

        period = MatrixService._digraph_period(graph)
        eigenvector = MatrixService._power_iteration(weights, period, max_iter=max_iter)
        return ValidatedMatrix(
            n_agents=n_agents,
            weights=weights,
            irreducible=True,
            period=period,
            left_eigenvector=eigenvector,
            renormalized=renormalize,
        )

    @staticmethod
    def matrix_period(m: ValidatedMatrix) -> int:
        if not m.irreducible:
            raise NotIrreducible("The period is only defined for irreducible matrices")
        return MatrixService._digraph_period(MatrixService._support_graph(m.weights))

    @staticmethod
    def leading_left_eigenvector(m: ValidatedMatrix, tol: float = 1e-12,
                                 max_iter: Optional[int] = None,
                                 dense_fallback: bool = True) -> np.ndarray:
        """
        Returns v > 0 with Wv = v and sum(v) = 1.

        Power iteration with the last d iterates averaged (d = period). For
        N <= 64 a dense solve takes over when the iteration cap is reached.
        """
        if not m.irreducible:
            raise NotIrreducible("The leading eigenvector needs an irreducible matrix")
        return MatrixService._power_iteration(np.asarray(m.weights), m.period, tol=tol,
                                              max_iter=max_iter, dense_fallback=dense_fallback)

    @staticmethod
    def mean_field(n_agents: int) -> np.ndarray:
        """w[l1][l2] = 1/(2N) + 1/2 * delta(l1, l2)."""
        return np.full((n_agents, n_agents), 1.0 / (2 * n_agents)) + 0.5 * np.eye(n_agents)

    @staticmethod
    def dense_solve(weights: np.ndarray) -> np.ndarray:
        """Solves (W - I)v = 0 together with sum(v) = 1 by least squares."""
        n = weights.shape[0]
        system = np.vstack([weights - np.eye(n), np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        v, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        return v / v.sum()

    # --- Helpers ---

    @staticmethod
    def _support_graph(weights: np.ndarray) -> nx.DiGraph:
        graph = nx.from_numpy_array((weights > 0.0).astype(int), create_using=nx.DiGraph)
        graph.add_nodes_from(range(weights.shape[0]))
        return graph

    @staticmethod
    def _digraph_period(graph: nx.DiGraph) -> int:
        # gcd of level[u] + 1 - level[v] over all edges of a BFS from vertex 0
        level = nx.single_source_shortest_path_length(graph, 0)
        gaps = (level[u] + 1 - level[v] for u, v in graph.edges() if u in level and v in level)
        period = reduce(math.gcd, gaps, 0)
        return period if period > 0 else 1

    @staticmethod
    def _power_iteration(weights: np.ndarray, period: int, tol: float = 1e-12,
                         max_iter: Optional[int] = None, dense_fallback: bool = True) -> np.ndarray:
        n = weights.shape[0]
        cap = max_iter if max_iter is not None else Config.RSP_EIGEN_MAX_ITER
        v = np.full(n, 1.0 / n)
        window = deque([v], maxlen=period)

        for _ in range(cap):
            v = weights @ v
            window.append(v)
            if len(window) < period:
                continue
            average = np.mean(np.array(window), axis=0)
            average = average / average.sum()
            if np.max(np.abs(weights @ average - average)) <= tol and np.all(average > 0.0):
                return average

        if dense_fallback and n <= MatrixService.DENSE_SOLVE_MAX_N:
            logger.warning(f"[Matrix] Power iteration hit the cap ({cap}); using dense solve for N={n}")
            v = MatrixService.dense_solve(weights)
            if np.all(v > 0.0):
                return v
        raise NoConvergence(f"Power iteration did not reach tolerance {tol} within {cap} iterations")
