import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.application.services.sequence import ReinforcementSequence
from src.application.services.streams import Purpose, substream
from src.domain.errors import HorizonNotAfterSnapshot, InvalidInitialCondition
from src.domain.schemas import NetworkSnapshot, Trajectory, ValidatedMatrix

logger = logging.getLogger(__name__)


class BatchResult(BaseModel):
    """
    Output of the vectorized kernel for R rows advanced in lockstep.

    z_tilde, gap (and states, when recorded) have one column per checkpoint
    in `steps`; actions[:, k] holds X_{start+k+1}.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    steps: list[int]
    z: np.ndarray
    z_tilde: np.ndarray
    gap: np.ndarray
    clamp: np.ndarray
    states: Optional[np.ndarray] = None
    actions: Optional[np.ndarray] = None

    @property
    def final_z_tilde(self) -> np.ndarray:
        return self.z_tilde[:, -1]


class SimulationService:
    """
    Forward simulation of the interacting reinforced processes.

    Every replication owns its Philox stream and draws N uniforms per step
    from it, in order. Rows never interact, so results are bit-identical
    whatever the block size, thread count or worker layout.
    """

    CHUNK_STEPS = 256
    # uniforms held per chunk, across all rows
    CHUNK_VALUES = 1 << 22

    @staticmethod
    def step(state: NetworkSnapshot, matrix: ValidatedMatrix, seq: ReinforcementSequence,
             rng: np.random.Generator) -> NetworkSnapshot:
        result = SimulationService.advance(
            state.z[None, :], state.step, state.step + 1, matrix, seq, [rng],
            checkpoints=[state.step + 1], record_states=True,
        )
        return SimulationService._snapshot(result, 0, -1)

    @staticmethod
    def simulate(matrix: ValidatedMatrix, seq: ReinforcementSequence, z0, n_steps: int,
                 checkpoints: Optional[Sequence[int]] = None, seed: int = 0, replication: int = 0,
                 retain_actions: bool = False) -> Trajectory:
        """
        One replication from z0, snapshots at 0, n_steps and every requested checkpoint.

        The stream is the MASTER substream of (seed, replication).
        """
        z0 = SimulationService.check_initial(z0, matrix.n_agents)
        if n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        steps = sorted({0, n_steps} | {c for c in (checkpoints or []) if 0 <= c <= n_steps})

        result = SimulationService.advance(
            z0[None, :], 0, n_steps, matrix, seq, [substream(seed, Purpose.MASTER, replication)],
            checkpoints=steps, record_states=True, retain_actions=retain_actions,
        )
        snapshots = [SimulationService._snapshot(result, 0, i) for i in range(len(steps))]
        return Trajectory(
            snapshots=snapshots,
            seed=seed,
            replication=replication,
            actions=None if result.actions is None else result.actions[0],
            clamp_total=float(result.clamp[0]),
        )

    @staticmethod
    def continue_from(snapshot: NetworkSnapshot, matrix: ValidatedMatrix, seq: ReinforcementSequence,
                      t: int, rng: np.random.Generator) -> NetworkSnapshot:
        """One conditional realization of the time-t state given the snapshot."""
        if t <= snapshot.step:
            raise HorizonNotAfterSnapshot(f"t={t} must exceed the snapshot step {snapshot.step}")
        result = SimulationService.advance(snapshot.z[None, :], snapshot.step, t, matrix, seq, [rng],
                                           checkpoints=[t], record_states=True)
        return SimulationService._snapshot(result, 0, -1)

    @staticmethod
    def continue_batch(snapshot: NetworkSnapshot, matrix: ValidatedMatrix, seq: ReinforcementSequence,
                       t: int, generators: list[np.random.Generator],
                       threads: int = 1) -> BatchResult:
        """len(generators) independent continuations of the snapshot up to t."""
        if t <= snapshot.step:
            raise HorizonNotAfterSnapshot(f"t={t} must exceed the snapshot step {snapshot.step}")
        rows = np.repeat(np.asarray(snapshot.z, dtype=float)[None, :], len(generators), axis=0)
        return SimulationService.advance(rows, snapshot.step, t, matrix, seq, generators,
                                         checkpoints=[t], threads=threads)

    @staticmethod
    def advance(z: np.ndarray, start: int, stop: int, matrix: ValidatedMatrix,
                seq: ReinforcementSequence, generators: list[np.random.Generator],
                checkpoints: Sequence[int] = (), record_states: bool = False,
                retain_actions: bool = False, threads: int = 1) -> BatchResult:
        """
        Advances every row of z (R x N) from step `start` to `stop`.

        Rows are split into contiguous blocks run on a thread pool and
        concatenated back in row order.
        """
        z = np.array(z, dtype=float, ndmin=2)
        if z.shape[0] != len(generators):
            raise ValueError(f"{z.shape[0]} rows but {len(generators)} generators")
        steps = sorted({c for c in checkpoints if start <= c <= stop})
        kwargs = dict(start=start, stop=stop, matrix=matrix, seq=seq, steps=steps,
                      record_states=record_states, retain_actions=retain_actions)

        threads = max(1, min(threads, z.shape[0]))
        if threads == 1:
            return SimulationService._advance_block(z, generators, **kwargs)

        bounds = np.linspace(0, z.shape[0], threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(SimulationService._advance_block, z[lo:hi], generators[lo:hi], **kwargs)
                for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo
            ]
            blocks = [f.result() for f in futures]

        def stack(name):
            parts = [getattr(b, name) for b in blocks]
            return None if parts[0] is None else np.concatenate(parts, axis=0)

        return BatchResult(steps=steps, z=stack('z'), z_tilde=stack('z_tilde'), gap=stack('gap'),
                           clamp=stack('clamp'), states=stack('states'), actions=stack('actions'))

    @staticmethod
    def sync_gap(state: Union[NetworkSnapshot, np.ndarray]) -> float:
        z = state.z if isinstance(state, NetworkSnapshot) else np.asarray(state)
        return float(z.max() - z.min())

    @staticmethod
    def urn_replay(seq: ReinforcementSequence, s0: float, y_stream, m0: float) -> np.ndarray:
        """
        Proportion H_n / s_n of the two-colour urn fed with draws Y_1, Y_2, ...

        H_{n+1} = H_n + alpha_{n+1} Y_{n+1}, s_{n+1} = s_n + alpha_{n+1} with
        alpha_{n+1} = s_n r_n / (1 - r_n). Both masses are rescaled together
        when s_n grows large; the proportion is unaffected.
        """
        if s0 <= 0:
            raise ValueError("s0 must be positive")
        y = np.asarray(y_stream, dtype=float)
        proportions = np.empty(len(y) + 1)
        proportions[0] = m0
        h, s = m0 * s0, s0
        rates = seq.values(0, len(y))
        for n, (r, y_next) in enumerate(zip(rates, y)):
            alpha = s * r / (1.0 - r)
            h += alpha * y_next
            s += alpha
            if s > 1e200:
                h, s = h / s, 1.0
            proportions[n + 1] = h / s
        return proportions

    @staticmethod
    def weighted_average(z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """
        v-weighted average of each row, summed in agent order.

        Rows sitting on a common value return that value exactly.
        """
        z = np.atleast_2d(z)
        acc = z[:, 0] * v[0]
        for l in range(1, z.shape[1]):
            acc = acc + z[:, l] * v[l]
        synced = z.max(axis=1) == z.min(axis=1)
        return np.where(synced, z[:, 0], np.clip(acc, 0.0, 1.0))

    @staticmethod
    def check_initial(z0, n_agents: int) -> np.ndarray:
        z0 = np.asarray(z0, dtype=float)
        if z0.shape != (n_agents,):
            raise InvalidInitialCondition(f"z0 must have length {n_agents}, got shape {z0.shape}")
        if not np.all(np.isfinite(z0)) or np.any(z0 < 0.0) or np.any(z0 > 1.0):
            raise InvalidInitialCondition(f"z0 must lie in [0, 1] componentwise, got {z0}")
        return z0

    # --- Helpers ---

    @staticmethod
    def _snapshot(result: BatchResult, row: int, column: int) -> NetworkSnapshot:
        return NetworkSnapshot(
            step=result.steps[column],
            z=result.states[row, column],
            z_tilde=float(result.z_tilde[row, column]),
        )

    @staticmethod
    def _bernoulli_means(z: np.ndarray, weights: np.ndarray) -> np.ndarray:
        # [W^T z]_l accumulated over l1 in a fixed order, row by row
        means = z[:, 0:1] * weights[0]
        for l1 in range(1, z.shape[1]):
            means += z[:, l1:l1 + 1] * weights[l1]
        return means

    @staticmethod
    def _advance_block(z: np.ndarray, generators: list[np.random.Generator], *, start: int, stop: int,
                       matrix: ValidatedMatrix, seq: ReinforcementSequence, steps: list[int],
                       record_states: bool, retain_actions: bool) -> BatchResult:
        z = z.copy()
        rows, n_agents = z.shape
        weights = np.asarray(matrix.weights)
        v = matrix.weighting_vector()

        z_tilde = np.empty((rows, len(steps)))
        gap = np.empty((rows, len(steps)))
        states = np.empty((rows, len(steps), n_agents)) if record_states else None
        actions_out = np.empty((rows, stop - start, n_agents), dtype=bool) if retain_actions else None
        clamp = np.zeros(rows)
        pending = 0

        def record(step: int):
            nonlocal pending
            while pending < len(steps) and steps[pending] == step:
                z_tilde[:, pending] = SimulationService.weighted_average(z, v)
                gap[:, pending] = z.max(axis=1) - z.min(axis=1)
                if states is not None:
                    states[:, pending] = z
                pending += 1

        budget = SimulationService.CHUNK_VALUES // max(1, rows * n_agents)
        chunk = max(1, min(SimulationService.CHUNK_STEPS, budget))

        record(start)
        current = start
        while current < stop:
            size = min(chunk, stop - current)
            uniforms = np.empty((rows, size, n_agents))
            for i, g in enumerate(generators):
                g.random(out=uniforms[i])
            rates = seq.values(current, current + size)

            for j in range(size):
                # U < p saturates for p outside [0, 1]
                actions = uniforms[:, j, :] < SimulationService._bernoulli_means(z, weights)
                z += rates[j] * (actions - z)
                if z.max() > 1.0 or z.min() < 0.0:
                    clipped = np.clip(z, 0.0, 1.0)
                    clamp += np.abs(z - clipped).sum(axis=1)
                    z = clipped
                if actions_out is not None:
                    actions_out[:, current - start + j] = actions
                record(current + j + 1)
            current += size

        if clamp.any():
            logger.warning(f"[Simulator] Clamped float drift on {int(np.count_nonzero(clamp))} row(s), "
                           f"total magnitude {clamp.sum():.3e}")

        return BatchResult(steps=steps, z=z, z_tilde=z_tilde, gap=gap, clamp=clamp,
                           states=states, actions=actions_out)
