from src.app import configure_celery
from src.extensions import celery

configure_celery()

from src.application.tasks import celery_worker
