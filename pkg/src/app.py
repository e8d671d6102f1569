import logging
from typing import Optional

import click

from src.config import Config
from src.extensions import celery
from src.interface.cli import cli_group


def configure_celery(test_config: Optional[dict] = None) -> None:
    settings = test_config or {}
    celery_config = {
        'broker_url': settings.get('CELERY_BROKER_URL', Config.CELERY_BROKER_URL),
        'result_backend': settings.get('CELERY_RESULT_BACKEND', Config.CELERY_RESULT_BACKEND),
        'task_serializer': 'json',
        'result_serializer': 'json',
        'broker_connection_retry_on_startup': True,
    }

    if settings.get('TESTING'):
        celery_config['task_always_eager'] = True
        celery_config['task_eager_propagates'] = True

    celery.conf.update(**celery_config)


def create_cli(test_config: Optional[dict] = None) -> click.Group:
    if test_config is None:
        # Load from .env / config.py (Production/Dev)
        level = Config.RSP_LOG_LEVEL
    else:
        # Load from test_config passed by Pytest
        level = test_config.get('RSP_LOG_LEVEL', 'WARNING')

    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    configure_celery(test_config)

    # Registers the task on the shared Celery instance
    from src.application.tasks import celery_worker  # noqa: F401

    return cli_group


def main() -> None:
    """Console entry point. Exit codes: 0 ok, 1 configuration error, 2 runtime error."""
    create_cli()()


if __name__ == '__main__':
    main()
