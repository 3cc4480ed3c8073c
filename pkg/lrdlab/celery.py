# lrdlab/celery.py
import os
from celery import Celery

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'lrdlab.settings')

app = Celery('lrdlab')
app.config_from_object('django.conf:settings', namespace='CELERY')

# one replicate batch per worker process at a time; ack once its result is stored
app.conf.worker_prefetch_multiplier = 1
app.conf.task_acks_late = True

app.autodiscover_tasks(['lab'])
