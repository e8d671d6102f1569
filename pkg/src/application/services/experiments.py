import logging
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.application.services.confint import IntervalService
from src.application.services.estimation import EstimationService
from src.application.services.netgraph import MatrixService
from src.application.services.regime import RegimeService
from src.application.services.sequence import ReinforcementSequence
from src.application.services.simulator import SimulationService
from src.application.services.streams import Purpose, substream, substreams
from src.config import Config
from src.domain.errors import ConfigError, DivergentTail, OutOfTable
from src.domain.schemas import (
    ConditionsReport,
    EstimationBlock,
    ExperimentConfig,
    MatrixFile,
    MatrixSpec,
    PolarizationEstimate,
    RegimeReport,
    RunIndex,
    ValidatedMatrix,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'

ESTIMATE_COLUMNS = [
    'run', 'n', 't', 'K', 'alpha', 'z_tilde_n', 'u0', 'u1', 'u01', 'normalized',
    'case_id', 'parts', 'includes_zero', 'includes_one', 'inner_lo', 'inner_hi', 'theta',
    'target_u0', 'target_u1', 'target_u01', 'clamp_total', 'seed', 'config_hash',
]
FIGURE1_COLUMNS = [
    'run', 'n', 't', 'K', 'alpha', 'z_tilde_n', 'u0', 'u1', 'u01', 'normalized',
    'target_u0', 'target_u1', 'target_u01', 'z_tilde_long', 'clamp_total', 'seed', 'config_hash',
]
FIGURE2_COLUMNS = [
    'run', 'n', 't', 'K', 'alpha', 'z_tilde_n', 'case_id', 'parts', 'part_count', 'includes_zero',
    'includes_one', 'inner_lo', 'inner_hi', 'theta', 'z_tilde_long', 'covered', 'clamp_total',
    'seed', 'config_hash',
]
INTERVAL_COLUMNS = [
    'run', 'n', 't', 'K', 'alpha', 'case_id', 'parts', 'includes_zero', 'includes_one',
    'inner_lo', 'inner_hi', 'theta', 'theta_clamped', 'caveat', 'seed', 'config_hash',
]


class ExperimentService:
    """
    Orchestrates the command pipelines: config -> domain objects -> CSV/JSON outputs.

    The estimation pipeline is vectorized across master runs: masters are
    advanced together, then all S*K continuations together. Every row owns
    its substream, so grouping runs differently (threads, Celery tasks)
    yields identical numbers.
    """

    # --- Configuration ---

    @staticmethod
    def load_config(path: str) -> ExperimentConfig:
        try:
            text = Path(path).read_text(encoding='utf-8')
            config = ExperimentConfig.model_validate_json(text)
        except OSError as e:
            raise ConfigError(f"Cannot read config '{path}': {e}") from e
        except ValidationError as e:
            raise ConfigError(f"Invalid config '{path}':\n{e}") from e

        matrix = config.matrix
        if matrix.path is not None and not os.path.isabs(matrix.path):
            resolved = str(Path(path).parent / matrix.path)
            config = config.model_copy(update={'matrix': matrix.model_copy(update={'path': resolved})})
        return config

    @staticmethod
    def build_matrix(spec: MatrixSpec) -> ValidatedMatrix:
        if spec.preset == 'mean_field':
            raw = MatrixService.mean_field(spec.n_agents)
        elif spec.weights is not None:
            raw = np.asarray(spec.weights, dtype=float)
        else:
            raw = ExperimentService._read_matrix_file(spec.path)
        return MatrixService.validate_matrix(raw, tol=spec.tol, renormalize=spec.renormalize)

    @staticmethod
    def build_sequence(config: ExperimentConfig) -> ReinforcementSequence:
        return ReinforcementSequence(config.sequence)

    @staticmethod
    def initial_states(config: ExperimentConfig, n_agents: int, runs: Sequence[int]) -> np.ndarray:
        spec = config.initial
        if spec.kind == 'uniform':
            seed = config.replication.master_seed
            return np.array([substream(seed, Purpose.INITIAL, s).random(n_agents) for s in runs])
        z0 = np.full(n_agents, spec.value) if spec.kind == 'constant' else spec.vector
        z0 = SimulationService.check_initial(z0, n_agents)
        return np.repeat(z0[None, :], len(runs), axis=0)

    @staticmethod
    def z0_mean(config: ExperimentConfig, n_agents: int) -> np.ndarray:
        spec = config.initial
        if spec.kind == 'uniform':
            return np.full(n_agents, 0.5)
        if spec.kind == 'constant':
            return np.full(n_agents, spec.value)
        return SimulationService.check_initial(spec.vector, n_agents)

    # --- Commands ---

    @staticmethod
    def cmd_simulate(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
        """Checkpoint rows (replication, n, z_tilde, sync_gap, ...) for S replications."""
        matrix = ExperimentService.build_matrix(config.matrix)
        seq = ExperimentService.build_sequence(config)
        sim = config.simulation
        S, seed = config.replication.S, config.replication.master_seed
        steps = sim.checkpoint_steps()

        logger.info(f"🚀 [Experiment] Simulating {S} replication(s) to n={sim.n_steps}")
        result = SimulationService.advance(
            ExperimentService.initial_states(config, matrix.n_agents, range(S)), 0, sim.n_steps,
            matrix, seq, substreams(seed, Purpose.MASTER, (), S),
            checkpoints=steps, record_states=config.output.include_z,
            threads=ExperimentService._threads(config),
        )

        frame = pd.DataFrame({
            'replication': np.repeat(np.arange(S), len(steps)),
            'n': np.tile(steps, S),
            'z_tilde': result.z_tilde.ravel(),
            'sync_gap': result.gap.ravel(),
        })
        frame['at_barrier'] = (frame['z_tilde'] == 0.0) | (frame['z_tilde'] == 1.0)
        frame['near_barrier'] = ExperimentService._near_barrier(frame['z_tilde'], sim.near_barrier_eps)
        if result.states is not None:
            for l in range(matrix.n_agents):
                frame[f'z_{l}'] = result.states[:, :, l].ravel()
        frame['seed'] = seed
        frame['config_hash'] = config.config_hash()

        health = {
            'clamp_total': float(result.clamp.sum()),
            'near_barrier_rows': float(frame['near_barrier'].sum()),
            'at_barrier_rows': float(frame['at_barrier'].sum()),
        }
        ExperimentService._write(frame, config, output_dir, 'trajectories.csv')
        ExperimentService._write_records(frame, config, output_dir, 'trajectories.jsonl')
        ExperimentService._write_index('simulate', config, seq, output_dir,
                                       ['trajectories.csv', 'trajectories.jsonl'], health)
        logger.info(f"✅ [Experiment] Wrote {len(frame)} checkpoint rows")
        return frame

    @staticmethod
    def cmd_regime(config: ExperimentConfig, output_dir: Optional[str] = None) -> RegimeReport:
        matrix = ExperimentService.build_matrix(config.matrix)
        seq = ExperimentService.build_sequence(config)
        report = RegimeService.classify(
            seq, ExperimentService.z0_mean(config, matrix.n_agents), matrix.weighting_vector(),
            aperiodic=matrix.aperiodic, irreducible=matrix.irreducible,
        )
        report = report.model_copy(update=ExperimentService._provenance(config))
        directory = ExperimentService._output_dir(config, output_dir)
        (directory / 'regime.json').write_text(report.model_dump_json(indent=2), encoding='utf-8')
        ExperimentService._write_index('regime', config, seq, output_dir, ['regime.json'])
        return report

    @staticmethod
    def cmd_estimate(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
        est = ExperimentService._estimation(config)
        rows, records = ExperimentService.collect(config, [est.n], include_target=True)
        frame = pd.DataFrame(rows)[ESTIMATE_COLUMNS]

        files = ['estimates.csv']
        ExperimentService._write(frame, config, output_dir, 'estimates.csv')
        if config.output.export_records:
            ExperimentService._write(pd.DataFrame(records), config, output_dir, 'replications.csv')
            files.append('replications.csv')
        ExperimentService._write_index('estimate', config, ExperimentService.build_sequence(config),
                                       output_dir, files, ExperimentService._estimate_health(frame))
        return frame

    @staticmethod
    def cmd_interval(config: ExperimentConfig, estimates_path: str, records_path: str,
                     alpha: Optional[float] = None, output_dir: Optional[str] = None) -> pd.DataFrame:
        """Rebuilds intervals from exported estimates and replication records, possibly at another alpha."""
        est_block = ExperimentService._estimation(config)
        alpha = est_block.alpha if alpha is None else alpha
        try:
            estimates = pd.read_csv(estimates_path)
            records = pd.read_csv(records_path)
        except OSError as e:
            raise ConfigError(f"Cannot read estimate files: {e}") from e

        atomless = ExperimentService._atomless(config)
        grouped = {key: group.sort_values('j') for key, group in records.groupby(['run', 'n'])}
        rows = []
        for row in estimates.itertuples(index=False):
            group = grouped.get((row.run, row.n))
            estimate = PolarizationEstimate(
                n=int(row.n), t=int(row.t), K=int(row.K), u0=row.u0, u1=row.u1, u01=row.u01,
                normalized=bool(row.normalized), seed=int(row.seed),
                m_t=None if group is None else group['m_t'].to_numpy(),
                u0_t=None if group is None else group['u0_t'].to_numpy(),
                u1_t=None if group is None else group['u1_t'].to_numpy(),
                u01_t=None if group is None else group['u01_t'].to_numpy(),
            )
            interval = IntervalService.composite_interval(estimate, alpha, atomless)
            rows.append(dict(
                run=int(row.run), n=int(row.n), t=int(row.t), K=int(row.K), alpha=alpha,
                **ExperimentService._interval_fields(interval),
                theta_clamped=interval.theta_clamped, caveat=interval.caveat,
                seed=int(row.seed), config_hash=config.config_hash(),
            ))

        frame = pd.DataFrame(rows, columns=INTERVAL_COLUMNS)
        ExperimentService._write(frame, config, output_dir, 'intervals.csv')
        ExperimentService._write_index('interval', config, ExperimentService.build_sequence(config),
                                       output_dir, ['intervals.csv'])
        return frame

    @staticmethod
    def cmd_figure1(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
        """Estimates against the refined long-horizon target, for every n in figure_n."""
        est = ExperimentService._estimation(config)
        rows, _ = ExperimentService.collect(config, est.figure_n, include_target=True)
        frame = pd.DataFrame(rows)[FIGURE1_COLUMNS]
        ExperimentService._write(frame, config, output_dir, 'figure1.csv')
        ExperimentService._write_index('figure1', config, ExperimentService.build_sequence(config),
                                       output_dir, ['figure1.csv'], ExperimentService._estimate_health(frame))
        return frame

    @staticmethod
    def cmd_figure2(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
        """Interval parts against the long-horizon proxy, for every n in figure_n."""
        est = ExperimentService._estimation(config)
        rows, _ = ExperimentService.collect(config, est.figure_n, include_target=False)
        detail = pd.DataFrame(rows)
        frame = detail[FIGURE2_COLUMNS]
        ExperimentService._write(frame, config, output_dir, 'figure2.csv')
        ExperimentService._write_index('figure2', config, ExperimentService.build_sequence(config),
                                       output_dir, ['figure2.csv'], ExperimentService._estimate_health(detail))
        return frame

    @staticmethod
    def cmd_coverage(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
        """Per-n empirical coverage and single-part interval counts."""
        est = ExperimentService._estimation(config)
        rows, _ = ExperimentService.collect(config, est.figure_n, include_target=False)
        detail = pd.DataFrame(rows)
        summary = (
            detail.groupby('n', sort=True)
            .agg(runs=('run', 'size'),
                 coverage=('covered', 'mean'),
                 single_part=('part_count', lambda s: int((s == 1).sum())),
                 normalized=('normalized', 'sum'),
                 clamp_total=('clamp_total', 'sum'))
            .reset_index()
        )
        summary['K'] = est.K
        summary['alpha'] = est.alpha
        summary['seed'] = config.replication.master_seed
        summary['config_hash'] = config.config_hash()
        ExperimentService._write(summary, config, output_dir, 'coverage.csv')
        ExperimentService._write_index('coverage', config, ExperimentService.build_sequence(config),
                                       output_dir, ['coverage.csv'], ExperimentService._estimate_health(detail))
        return summary

    @staticmethod
    def cmd_horizon(config: ExperimentConfig) -> dict:
        seq = ExperimentService.build_sequence(config)
        est = config.estimation
        eta, eps = (est.eta, est.eps) if est is not None else (0.2, 0.05)
        t_min = EstimationService.min_horizon(seq, eta, eps)
        return {
            'eta': eta,
            'eps': eps,
            'threshold': EstimationService.horizon_threshold(eta, eps),
            't_min': t_min,
            'tail_at_t_min': seq.tail_sq_sum(t_min),
            'tail_before_t_min': seq.tail_sq_sum(t_min - 1) if t_min > 0 else None,
            'sequence_capped': seq.capped,
            **ExperimentService._provenance(config),
        }

    @staticmethod
    def cmd_diagnose(config: ExperimentConfig, horizon: int = 100_000) -> ConditionsReport:
        report = RegimeService.diagnose_conditions(ExperimentService.build_sequence(config), horizon)
        return report.model_copy(update=ExperimentService._provenance(config))

    # --- Estimation pipeline ---

    @staticmethod
    def collect(config: ExperimentConfig, n_values: list[int],
                include_target: bool) -> tuple[list[dict], list[dict]]:
        """Rows for all S master runs, from the local pipeline or from Celery workers."""
        S = config.replication.S
        logger.info(f"🚀 [Experiment] Estimation over {S} master run(s), n in {n_values}, "
                    f"backend={Config.RSP_BACKEND}")
        try:
            if Config.RSP_BACKEND == 'celery':
                from src.application.tasks.celery_worker import run_master

                payload = config.model_dump_json()
                pending = [run_master.delay(payload, s, n_values, include_target) for s in range(S)]
                rows, records = [], []
                for result in pending:
                    part = result.get()
                    rows.extend(part['rows'])
                    records.extend(part['records'])
            else:
                rows, records = ExperimentService.run_runs(config, list(range(S)), n_values, include_target)
        except Exception as e:
            logger.error(f"❌ [Experiment] Estimation pipeline failed: {str(e)}")
            raise e

        rows.sort(key=lambda r: (r['n'], r['run']))
        records.sort(key=lambda r: (r['n'], r['run'], r['j']))
        logger.info(f"✅ [Experiment] {len(rows)} estimate row(s) ready")
        return rows, records

    @staticmethod
    def run_runs(config: ExperimentConfig, runs: list[int], n_values: list[int],
                 include_target: bool = True) -> tuple[list[dict], list[dict]]:
        """
        Estimation pipeline for the given master runs.

        1. Advance the masters to the long horizon, keeping the states at every n.
        2. For each n, continue K copies of every master state to t (and to the
           long horizon when the refined target is requested).
        3. Aggregate per run, build the interval, compare with the proxy.
        """
        est = ExperimentService._estimation(config)
        matrix = ExperimentService.build_matrix(config.matrix)
        seq = ExperimentService.build_sequence(config)
        seed = config.replication.master_seed
        threads = ExperimentService._threads(config)
        config_hash = config.config_hash()
        atomless = ExperimentService._atomless(config)
        t_long = est.long_horizon

        if any(n >= t_long for n in n_values):
            raise ConfigError(f"long_horizon={t_long} must exceed every n in {n_values}")
        if est.K > Config.RSP_MAX_RECORDS:
            raise ConfigError(f"K={est.K} exceeds the record limit {Config.RSP_MAX_RECORDS}")

        steps = sorted(set(n_values) | {t_long})
        masters = SimulationService.advance(
            ExperimentService.initial_states(config, matrix.n_agents, runs), 0, t_long, matrix, seq,
            [substream(seed, Purpose.MASTER, s) for s in runs],
            checkpoints=steps, record_states=True, threads=threads,
        )
        proxy = masters.z_tilde[:, steps.index(t_long)]

        rows, records = [], []
        for n in n_values:
            col = steps.index(n)
            t = est.horizon_for(n)
            m_t, clamp = ExperimentService._continue(masters.states[:, col], runs, n, t, Purpose.CONTINUATION,
                                                     config, matrix, seq, threads)
            clamp = clamp + masters.clamp
            tail = ExperimentService._tail(seq, t)
            targets = None
            if include_target:
                m_long, clamp_long = ExperimentService._continue(masters.states[:, col], runs, n, t_long,
                                                                 Purpose.REFINE, config, matrix, seq, threads)
                clamp = clamp + clamp_long
                tail_long = ExperimentService._tail(seq, t_long)
                targets = [EstimationService.aggregate(m_long[i], n, t_long, tail_long, seed, est.bound)
                           for i in range(len(runs))]

            for i, s in enumerate(runs):
                estimate = EstimationService.aggregate(m_t[i], n, t, tail, seed, est.bound)
                interval = IntervalService.composite_interval(estimate, est.alpha, atomless)
                target = targets[i] if targets is not None else None
                rows.append(dict(
                    run=s, n=n, t=t, K=est.K, alpha=est.alpha,
                    z_tilde_n=float(masters.z_tilde[i, col]),
                    u0=estimate.u0, u1=estimate.u1, u01=estimate.u01, normalized=estimate.normalized,
                    **ExperimentService._interval_fields(interval),
                    part_count=interval.part_count,
                    target_u0=None if target is None else target.u0,
                    target_u1=None if target is None else target.u1,
                    target_u01=None if target is None else target.u01,
                    z_tilde_long=float(proxy[i]),
                    covered=interval.contains(float(proxy[i]), est.coverage_barrier_tol),
                    clamp_total=float(clamp[i]),
                    seed=seed, config_hash=config_hash,
                ))
                if config.output.export_records:
                    records.extend(
                        dict(run=s, n=n, j=j, m_t=float(estimate.m_t[j]), u0_t=float(estimate.u0_t[j]),
                             u1_t=float(estimate.u1_t[j]), u01_t=float(estimate.u01_t[j]))
                        for j in range(estimate.K)
                    )
        return rows, records

    # --- Helpers ---

    @staticmethod
    def _continue(states: np.ndarray, runs: list[int], n: int, horizon: int, purpose: Purpose,
                  config: ExperimentConfig, matrix: ValidatedMatrix, seq: ReinforcementSequence,
                  threads: int) -> tuple[np.ndarray, np.ndarray]:
        """Time-horizon averages of K continuations per run, shape (runs, K), and the clamp per run."""
        K, seed = config.estimation.K, config.replication.master_seed
        rows = np.repeat(states, K, axis=0)
        generators = [g for s in runs for g in substreams(seed, purpose, (s, n), K)]
        result = SimulationService.advance(rows, n, horizon, matrix, seq, generators,
                                           checkpoints=[horizon], threads=threads)
        return result.final_z_tilde.reshape(len(runs), K), result.clamp.reshape(len(runs), K).sum(axis=1)

    @staticmethod
    def _tail(seq: ReinforcementSequence, t: int) -> float:
        tail = seq.tail_sq_sum(t)
        if np.isinf(tail):
            raise DivergentTail(f"{seq.family} sequence has a divergent sum of squares")
        return tail

    @staticmethod
    def _interval_fields(interval) -> dict:
        lo, hi = interval.inner if interval.inner is not None else (None, None)
        return dict(
            case_id=interval.case_id,
            parts=' U '.join(interval.parts()),
            includes_zero=interval.includes_zero,
            includes_one=interval.includes_one,
            inner_lo=lo,
            inner_hi=hi,
            theta=interval.theta_used,
        )

    @staticmethod
    def _atomless(config: ExperimentConfig) -> Optional[bool]:
        try:
            return ExperimentService.cmd_regime_report(config).atomless_interior
        except OutOfTable:
            return None

    @staticmethod
    def cmd_regime_report(config: ExperimentConfig) -> RegimeReport:
        """Regime report without writing any file."""
        matrix = ExperimentService.build_matrix(config.matrix)
        return RegimeService.classify(
            ExperimentService.build_sequence(config), ExperimentService.z0_mean(config, matrix.n_agents),
            matrix.weighting_vector(), aperiodic=matrix.aperiodic, irreducible=matrix.irreducible,
        )

    @staticmethod
    def _estimation(config: ExperimentConfig) -> EstimationBlock:
        if config.estimation is None:
            raise ConfigError("This command needs an 'estimation' block in the config")
        return config.estimation

    @staticmethod
    def _threads(config: ExperimentConfig) -> int:
        return config.replication.threads or Config.THREADS

    @staticmethod
    def _near_barrier(z_tilde: pd.Series, eps: float) -> pd.Series:
        return ((z_tilde > 0.0) & (z_tilde < eps)) | ((z_tilde < 1.0) & (z_tilde > 1.0 - eps))

    @staticmethod
    def _estimate_health(frame: pd.DataFrame) -> dict:
        return {
            'normalized_rows': float(frame['normalized'].sum()),
            'clamp_total': float(frame['clamp_total'].sum()),
        }

    @staticmethod
    def _read_matrix_file(path: str) -> np.ndarray:
        try:
            return MatrixFile.model_validate_json(Path(path).read_text(encoding="utf-8")).to_array()
        except (OSError, ValidationError) as e:
            raise ConfigError(f"Cannot read matrix file '{path}': {e}") from e

    @staticmethod
    def _output_dir(config: ExperimentConfig, output_dir: Optional[str]) -> Path:
        directory = Path(output_dir or config.output.directory or Config.RSP_OUTPUT_DIR)
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    @staticmethod
    def _write(frame: pd.DataFrame, config: ExperimentConfig, output_dir: Optional[str], name: str) -> Path:
        path = ExperimentService._output_dir(config, output_dir) / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path

    @staticmethod
    def _write_records(frame: pd.DataFrame, config: ExperimentConfig, output_dir: Optional[str], name: str) -> Path:
        """Line-delimited JSON, one record per row."""
        path = ExperimentService._output_dir(config, output_dir) / name
        frame.to_json(path, orient='records', lines=True, double_precision=15)
        return path

    @staticmethod
    def _provenance(config: ExperimentConfig) -> dict:
        return {'seed': config.replication.master_seed, 'config_hash': config.config_hash()}

    @staticmethod
    def _write_index(command: str, config: ExperimentConfig, seq: ReinforcementSequence,
                     output_dir: Optional[str], files: list[str], health: Optional[dict] = None) -> None:
        notes = []
        if seq.capped:
            notes.append(f"{seq.capped_terms} sequence term(s) capped at {seq.cap}")
        index = RunIndex(
            command=command,
            config_hash=config.config_hash(),
            master_seed=config.replication.master_seed,
            files=files,
            sequence_capped=seq.capped,
            capped_terms=seq.capped_terms,
            health=health or {},
            notes=notes,
        )
        path = ExperimentService._output_dir(config, output_dir) / 'index.json'
        path.write_text(index.model_dump_json(indent=2), encoding='utf-8')
