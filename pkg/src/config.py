import os

from dotenv import load_dotenv

load_dotenv()


class Config:
    # Parallelism
    THREADS = int(os.getenv('THREADS', os.cpu_count() or 1))
    RSP_BACKEND = os.getenv('RSP_BACKEND', 'local')

    # Celery Config
    CELERY_BROKER_URL = os.getenv('CELERY_BROKER_URL')
    CELERY_RESULT_BACKEND = os.getenv('CELERY_RESULT_BACKEND')

    # Output and logging
    RSP_OUTPUT_DIR = os.getenv('RSP_OUTPUT_DIR', 'output')
    RSP_LOG_LEVEL = os.getenv('RSP_LOG_LEVEL', 'INFO')

    # Numerical limits
    RSP_MAX_RECORDS = int(os.getenv('RSP_MAX_RECORDS', 1_000_000))
    RSP_EIGEN_MAX_ITER = int(os.getenv('RSP_EIGEN_MAX_ITER', 1_000_000))
