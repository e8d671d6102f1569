from celery import Celery

celery = Celery('rsp')
