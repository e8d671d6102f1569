import json

import numpy as np
import pytest
from click.testing import CliRunner

from src.app import create_cli
from src.application.services.netgraph import MatrixService
from src.application.services.sequence import ReinforcementSequence
from src.config import Config
from src.domain.schemas import NetworkSnapshot


@pytest.fixture(scope='session')
def cli():
    """
    Creates the CLI group for tests.
    Passes test_config to force eager Celery and in-memory transports.
    """
    test_config = {
        "TESTING": True,
        "RSP_LOG_LEVEL": "WARNING",
        "CELERY_BROKER_URL": "memory://",
        "CELERY_RESULT_BACKEND": "cache+memory://"
    }

    yield create_cli(test_config=test_config)


@pytest.fixture(scope='function')
def runner(cli):
    """
    A test runner for the CLI commands.
    """
    return CliRunner()


@pytest.fixture
def local_backend(monkeypatch):
    monkeypatch.setattr(Config, 'RSP_BACKEND', 'local')
    monkeypatch.setattr(Config, 'THREADS', 1)


@pytest.fixture
def mean_field():
    """Validated mean-field matrix with N = 3 (v uniform, aperiodic)."""
    return MatrixService.validate_matrix(MatrixService.mean_field(3))


@pytest.fixture
def cycle_matrix():
    """Directed 3-cycle: irreducible with period 3."""
    return MatrixService.validate_matrix(np.roll(np.eye(3), 1, axis=0))


@pytest.fixture
def figure_sequence():
    """r_n = 1 / (n + 0.1)^0.75 capped at 0.99, the sequence of the reproduction configs."""
    return ReinforcementSequence.power_law(c=1.0, gamma=0.75, b=0.1, horizon=20_000)


@pytest.fixture
def snapshot_at():
    def build(step: int, z) -> NetworkSnapshot:
        z = np.asarray(z, dtype=float)
        return NetworkSnapshot(step=step, z=z, z_tilde=float(z.mean()))
    return build


@pytest.fixture
def base_config():
    """
    Small desk-scale experiment: mean field N=3, figure sequence,
    S=2 master runs, K=8 continuations.
    """
    return {
        "matrix": {"preset": "mean_field", "n_agents": 3},
        "sequence": {"family": "power_law", "c": 1.0, "gamma": 0.75, "b": 0.1, "horizon": 5_000},
        "initial": {"kind": "constant", "value": 0.5},
        "simulation": {"n_steps": 40, "checkpoints": [0, 10, 20]},
        "estimation": {"n": 20, "t_offset": 60, "K": 8, "alpha": 0.05,
                       "long_horizon": 200, "figure_n": [10, 40]},
        "replication": {"S": 2, "master_seed": 7, "threads": 1},
    }


@pytest.fixture
def write_config(tmp_path):
    """Writes a config dict as JSON and returns its path; output goes to tmp_path/out."""
    def write(config: dict, name: str = 'config.json') -> str:
        config = dict(config)
        config.setdefault('output', {})
        config['output'] = {**config['output'], 'directory': str(tmp_path / 'out')}
        path = tmp_path / name
        path.write_text(json.dumps(config), encoding='utf-8')
        return str(path)
    return write
