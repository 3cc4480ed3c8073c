"""Project package; importing it binds the Celery app before any lab task is declared."""
from .celery import app as celery_app

__all__ = ("celery_app",)
