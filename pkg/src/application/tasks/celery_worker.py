import logging

from src.application.services.experiments import ExperimentService
from src.domain.schemas import ExperimentConfig
from src.extensions import celery

logger = logging.getLogger(__name__)


@celery.task(
    name='experiments.run_master',
    bind=True,  # Access to 'self'
    autoretry_for=(ConnectionError, OSError),
    retry_backoff=True,
    retry_kwargs={'max_retries': 3},
    retry_jitter=True
)
def run_master(self, config_json: str, run: int, n_values: list[int], include_target: bool = True) -> dict:
    """
    Estimation pipeline for one master run.

    Streams are keyed by the run index, so the rows equal those of the
    local backend whichever worker picks the task up.
    """
    logger.info(f"[Worker] Master run {run}, n in {n_values} (Try {self.request.retries + 1})")

    try:
        config = ExperimentConfig.model_validate_json(config_json)
        rows, records = ExperimentService.run_runs(config, [run], n_values, include_target)
        logger.info(f"[Worker] Master run {run} done: {len(rows)} row(s)")
        return {'rows': rows, 'records': records}

    except Exception as e:
        logger.error(f"[Worker] Master run {run} failed: {str(e)}")
        raise e
