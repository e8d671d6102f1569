import hashlib
import json
from enum import Enum
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _readonly(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


# DOMAIN STATE
# Immutable value objects shared by the services. numpy arrays are copied
# on construction and flagged read-only so instances can cross threads.

class ValidatedMatrix(BaseModel):
    """
    Column-stochastic interaction matrix with cached graph metadata.

    weights[l1][l2] is the influence of agent l1 on agent l2, so every
    column sums to 1. period and left_eigenvector are only known when the
    support digraph is strongly connected.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n_agents: int = Field(..., ge=1)
    weights: np.ndarray
    irreducible: bool
    period: Optional[int] = Field(None, ge=1)
    left_eigenvector: Optional[np.ndarray] = None
    renormalized: bool = False

    @field_validator('weights', 'left_eigenvector', mode='before')
    @classmethod
    def freeze_array(cls, v):
        return None if v is None else _readonly(v)

    @model_validator(mode='after')
    def check_shapes(self):
        if self.weights.shape != (self.n_agents, self.n_agents):
            raise ValueError(f"weights must be {self.n_agents}x{self.n_agents}, got {self.weights.shape}")
        if self.irreducible and (self.period is None or self.left_eigenvector is None):
            raise ValueError("irreducible matrices carry a period and a left eigenvector")
        return self

    @property
    def aperiodic(self) -> bool:
        return self.period == 1

    @property
    def v_min(self) -> float:
        return float(self.weighting_vector().min())

    def weighting_vector(self) -> np.ndarray:
        """Returns v, or the uniform average for reducible matrices."""
        if self.left_eigenvector is not None:
            return self.left_eigenvector
        return _readonly(np.full(self.n_agents, 1.0 / self.n_agents))


class NetworkSnapshot(BaseModel):
    """Observable network state at step n: inclinations Z_n and their v-average."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    step: int = Field(..., ge=0)
    z: np.ndarray
    z_tilde: float = Field(..., ge=0.0, le=1.0)

    @field_validator('z', mode='before')
    @classmethod
    def freeze_state(cls, v):
        return _readonly(v)

    @field_validator('z')
    @classmethod
    def check_range(cls, v):
        if v.ndim != 1 or v.size == 0:
            raise ValueError("z must be a non-empty vector")
        if not np.all((v >= 0.0) & (v <= 1.0)):
            raise ValueError("inclinations must lie in [0, 1]")
        return v

    @property
    def barrier(self) -> Optional[int]:
        """0 or 1 when the whole network sits exactly on a barrier."""
        if np.all(self.z == 0.0):
            return 0
        if np.all(self.z == 1.0):
            return 1
        return None


class Trajectory(BaseModel):
    """
    Checkpointed path of one replication.

    actions[k] holds X_{k+1} when the action history was retained.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    snapshots: list[NetworkSnapshot]
    seed: int
    replication: int = 0
    actions: Optional[np.ndarray] = None
    clamp_total: float = 0.0

    @property
    def final(self) -> NetworkSnapshot:
        return self.snapshots[-1]


class PolarizationEstimate(BaseModel):
    """
    Monte Carlo estimate of the conditional barrier probabilities.

    The per-replication arrays (m_t, u0_t, u1_t, u01_t) are kept so the
    interval builder can form the weighted CDF of the interior part.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int = Field(..., ge=0)
    t: int
    K: int = Field(..., ge=1)
    u0: float = Field(..., ge=0.0, le=1.0)
    u1: float = Field(..., ge=0.0, le=1.0)
    u01: float = Field(..., ge=0.0, le=1.0)
    normalized: bool = False
    seed: int = 0
    bound: Literal['hoeffding', 'chebyshev'] = 'hoeffding'
    tail: Optional[float] = None

    # --- Replication records ---
    m_t: Optional[np.ndarray] = None
    u0_t: Optional[np.ndarray] = None
    u1_t: Optional[np.ndarray] = None
    u01_t: Optional[np.ndarray] = None

    @field_validator('m_t', 'u0_t', 'u1_t', 'u01_t', mode='before')
    @classmethod
    def freeze_records(cls, v):
        return None if v is None else _readonly(v)

    @model_validator(mode='after')
    def check_simplex(self):
        if abs(self.u0 + self.u1 + self.u01 - 1.0) > 1e-12:
            raise ValueError("u0 + u1 + u01 must equal 1")
        if self.t <= self.n:
            raise ValueError("t must exceed n")
        return self

    @property
    def has_records(self) -> bool:
        return self.m_t is not None and self.u01_t is not None


class WeightedCDF(BaseModel):
    """
    Right-continuous weighted step CDF over merged support points.

    cumulative[i] is F(points[i]); the last entry is exactly 1.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: np.ndarray
    weights: np.ndarray
    cumulative: np.ndarray
    total_weight: float = Field(..., gt=0.0)

    @field_validator('points', 'weights', 'cumulative', mode='before')
    @classmethod
    def freeze_table(cls, v):
        return _readonly(v)

    def __call__(self, x: float) -> float:
        idx = int(np.searchsorted(self.points, x, side='right'))
        return 0.0 if idx == 0 else float(self.cumulative[idx - 1])


# Parts present for each interval case: (zero, one, inner)
CASE_PARTS = {
    1: (True, False, False),
    2: (False, True, False),
    3: (False, False, True),
    4: (True, True, False),
    5: (True, False, True),
    6: (False, True, True),
    7: (True, True, True),
}


class ConfidenceInterval(BaseModel):
    """Union of up to three parts: {0}, {1} and an inner [lo, hi]."""
    model_config = ConfigDict(frozen=True)

    includes_zero: bool
    includes_one: bool
    inner: Optional[tuple[float, float]] = None
    case_id: int = Field(..., ge=1, le=7)
    theta_used: Optional[float] = Field(None, ge=0.0, le=1.0)
    alpha: float = Field(..., gt=0.0, lt=1.0)
    theta_clamped: bool = False
    fell_through_from: Optional[int] = None
    caveat: Optional[str] = None

    @model_validator(mode='after')
    def check_case_parts(self):
        expected = CASE_PARTS[self.case_id]
        if (self.includes_zero, self.includes_one, self.inner is not None) != expected:
            raise ValueError(f"parts do not match case {self.case_id}")
        if self.inner is not None:
            lo, hi = self.inner
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"invalid inner interval {self.inner}")
            if self.theta_used is None:
                raise ValueError("an inner part requires theta_used")
        return self

    def parts(self) -> list[str]:
        out = []
        if self.includes_zero:
            out.append("{0}")
        if self.inner is not None:
            out.append(f"[{self.inner[0]!r}, {self.inner[1]!r}]")
        if self.includes_one:
            out.append("{1}")
        return out

    @property
    def part_count(self) -> int:
        return sum(CASE_PARTS[self.case_id])

    def contains(self, x: float, barrier_tol: float = 0.0) -> bool:
        if self.includes_zero and x <= barrier_tol:
            return True
        if self.includes_one and x >= 1.0 - barrier_tol:
            return True
        return self.inner is not None and self.inner[0] <= x <= self.inner[1]


# REGIME REPORTS

class Synchronization(str, Enum):
    GUARANTEED_APERIODIC = 'guaranteed_aperiodic'
    GUARANTEED_PERIODIC_CONDITION = 'guaranteed_periodic_condition'
    NOT_GUARANTEED = 'not_guaranteed'


class PolarizationClass(str, Enum):
    ZERO = 'zero'
    INTERIOR_POSITIVE_BOTH_BARRIERS = 'interior_positive_both_barriers'
    ALMOST_SURE = 'almost_sure'
    INCONCLUSIVE = 'inconclusive'


class RegimeReport(BaseModel):
    """Analytic verdict on synchronization and asymptotic polarization."""
    synchronization: Synchronization
    polarization_class: PolarizationClass
    p_one_if_almost_sure: Optional[float] = Field(None, ge=0.0, le=1.0)
    atomless_interior: Optional[bool] = None
    notes: list[str] = Field(default_factory=list)

    # --- Provenance, set by the commands that write the report ---
    seed: Optional[int] = None
    config_hash: Optional[str] = None

    @model_validator(mode='after')
    def check_almost_sure(self):
        if self.polarization_class is PolarizationClass.ALMOST_SURE and self.p_one_if_almost_sure is None:
            raise ValueError("almost_sure polarization requires p_one_if_almost_sure")
        return self


class SeriesEvidence(BaseModel):
    """Partial sums of one series at geometric checkpoints, plus the analytic verdict."""
    name: str
    checkpoints: list[int]
    partial_values: list[float]
    relative_growth: float
    trend: Literal['growing', 'settled', 'undetermined']
    verdict: Literal['convergent', 'divergent', 'inconclusive']


class ConditionsReport(BaseModel):
    family: str
    horizon: int
    series: list[SeriesEvidence]

    # --- Non-polarization condition: r_n = O(exp(-S_n) S_n) ---
    cond_zero_checkpoints: list[int] = Field(default_factory=list)
    cond_zero_values: list[float] = Field(default_factory=list)
    cond_zero_max: Optional[float] = None
    cond_zero_verdict: Literal['holds', 'fails', 'inconclusive'] = 'inconclusive'

    # --- Urn-weight equivalences ---
    alpha_log_ratio_max: Optional[float] = None
    sandwich_holds: Optional[bool] = None

    # --- Provenance ---
    seed: Optional[int] = None
    config_hash: Optional[str] = None

    def get(self, name: str) -> SeriesEvidence:
        return next(s for s in self.series if s.name == name)


# EXPERIMENT CONFIGURATION
# JSON documents read by the CLI. Every block rejects unknown keys.

class SequenceSpec(BaseModel):
    """
    Declarative reinforcement sequence.

    Responsibilities:
    1. Carries the family parameters (c, gamma, b | r | table).
    2. Applies the cap and prefix-table horizon shared by all families.
    3. For custom tables, optionally declares the asymptotic family that
       continues the table past its end.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    family: Literal['power_law', 'constant', 'zero', 'custom']
    c: Optional[float] = Field(None, gt=0.0)
    gamma: Optional[float] = None
    b: float = Field(1.0, gt=0.0)
    r: Optional[float] = Field(None, ge=0.0, lt=1.0)
    cap: float = Field(0.99, gt=0.0, lt=1.0)
    horizon: int = Field(200_000, ge=1)
    table: Optional[list[float]] = None
    asymptotic: Optional['SequenceSpec'] = None

    @model_validator(mode='after')
    def check_family_fields(self):
        if self.family == 'power_law' and (self.c is None or self.gamma is None):
            raise ValueError("power_law needs c and gamma")
        if self.family == 'constant' and self.r is None:
            raise ValueError("constant needs r")
        if self.family == 'custom':
            if not self.table:
                raise ValueError("custom needs a non-empty table")
            if any(not 0.0 <= x < 1.0 for x in self.table):
                raise ValueError("custom table entries must lie in [0, 1)")
            if self.asymptotic is not None and self.asymptotic.family == 'custom':
                raise ValueError("the asymptotic family of a custom table cannot itself be custom")
        return self


class MatrixSpec(BaseModel):
    """Interaction matrix source: inline weights, a named preset or a JSON file."""
    model_config = ConfigDict(extra='forbid', frozen=True)

    weights: Optional[list[list[float]]] = None
    preset: Optional[Literal['mean_field']] = None
    n_agents: Optional[int] = Field(None, ge=1)
    path: Optional[str] = None
    tol: float = Field(1e-12, gt=0.0)
    renormalize: bool = False

    @model_validator(mode='after')
    def check_single_source(self):
        sources = [self.weights is not None, self.preset is not None, self.path is not None]
        if sum(sources) != 1:
            raise ValueError("exactly one of weights, preset or path must be given")
        if self.preset is not None and self.n_agents is None:
            raise ValueError("presets need n_agents")
        return self


class MatrixFile(BaseModel):
    """
    Contents of a matrix JSON file: `n_agents` and the weights, either
    as N rows of N or flattened row-major.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    n_agents: int = Field(ge=1)
    weights: Union[list[list[float]], list[float]]

    @model_validator(mode='after')
    def check_shape(self):
        n = self.n_agents
        if self.weights and isinstance(self.weights[0], list):
            if len(self.weights) != n or any(len(row) != n for row in self.weights):
                raise ValueError(f"weights must have {n} rows of {n} entries")
        elif len(self.weights) != n * n:
            raise ValueError(f"{len(self.weights)} flat weights for n_agents={n}, expected {n * n}")
        return self

    def to_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float).reshape(self.n_agents, self.n_agents)


class InitialSpec(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    kind: Literal['constant', 'vector', 'uniform'] = 'constant'
    value: float = Field(0.5, ge=0.0, le=1.0)
    vector: Optional[list[float]] = None

    @model_validator(mode='after')
    def check_vector(self):
        if self.kind == 'vector' and not self.vector:
            raise ValueError("kind 'vector' needs a vector")
        return self


class SimulationBlock(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    n_steps: int = Field(0, ge=0)
    checkpoints: list[int] = Field(default_factory=lambda: [0])
    near_barrier_eps: float = Field(1e-12, gt=0.0)

    @field_validator('checkpoints')
    @classmethod
    def non_negative(cls, v):
        if any(c < 0 for c in v):
            raise ValueError("checkpoints must be non-negative")
        return v

    def checkpoint_steps(self) -> list[int]:
        """Requested checkpoints inside [0, n_steps], always ending at n_steps."""
        return sorted({c for c in self.checkpoints if c <= self.n_steps} | {self.n_steps})


class EstimationBlock(BaseModel):
    """
    Parameters of the conditional estimation pipeline.

    The continuation horizon is either absolute (t) or relative to the
    snapshot step (t_offset); figure commands evaluate it for every n in
    figure_n.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    n: int = Field(100, ge=0)
    t: Optional[int] = None
    t_offset: Optional[int] = Field(None, ge=1)
    K: int = Field(100, ge=1)
    eta: float = Field(0.2, gt=0.0)
    eps: float = Field(0.05, gt=0.0, lt=1.0)
    alpha: float = Field(0.05, gt=0.0, lt=1.0)
    bound: Literal['hoeffding', 'chebyshev'] = 'hoeffding'
    long_horizon: int = Field(100_000, ge=1)
    figure_n: list[int] = Field(default_factory=lambda: [100, 10_000])
    coverage_barrier_tol: float = Field(1e-3, ge=0.0)

    @model_validator(mode='after')
    def check_horizon(self):
        if (self.t is None) == (self.t_offset is None):
            raise ValueError("give exactly one of t or t_offset")
        if self.t is not None and self.t <= self.n:
            raise ValueError(f"t={self.t} must exceed n={self.n}")
        return self

    def horizon_for(self, n: int) -> int:
        if self.t_offset is not None:
            return n + self.t_offset
        return self.t - self.n + n


class ReplicationBlock(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    S: int = Field(1, ge=1)
    master_seed: int = Field(0, ge=0)
    threads: Optional[int] = Field(None, ge=1)


class OutputBlock(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    directory: Optional[str] = None
    include_z: bool = False
    export_records: bool = False


class ExperimentConfig(BaseModel):
    """Root of an experiment JSON document."""
    model_config = ConfigDict(extra='forbid', frozen=True)

    matrix: MatrixSpec
    sequence: SequenceSpec
    initial: InitialSpec = Field(default_factory=InitialSpec)
    simulation: SimulationBlock = Field(default_factory=SimulationBlock)
    estimation: Optional[EstimationBlock] = None
    replication: ReplicationBlock = Field(default_factory=ReplicationBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    def config_hash(self) -> str:
        """sha256 of the canonical dump; output directory and thread count do not change results."""
        payload = self.model_dump(mode='json')
        payload['output'].pop('directory', None)
        payload['replication'].pop('threads', None)
        canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# OUTPUT RECORDS

class RunIndex(BaseModel):
    """Index written next to every command's CSV output."""
    command: str
    config_hash: str
    master_seed: int
    files: list[str]
    sequence_capped: bool
    capped_terms: int
    health: dict[str, float] = Field(default_factory=dict)
    notes: list[str] = Field(default_factory=list)
