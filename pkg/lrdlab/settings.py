"""
Django settings for the lrdlab project.

The project has no web surface and no database; Django provides the
configuration layer, the management-command CLI and the test runner, Celery
fans replicate batches out to workers.
"""
from decouple import config
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('DJANGO_SECRET_KEY', default='lrdlab-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'lab',
]

DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# --------------------------------------
# Laboratory
# --------------------------------------
LAB_SEED = config('LAB_SEED', default=20240601, cast=int)
LAB_BUDGET_SECONDS = config('LAB_BUDGET_SECONDS', default=600, cast=int)
LAB_OUTPUT_DIR = config('LAB_OUTPUT_DIR', default=str(BASE_DIR / 'out'))
LAB_CHUNK_SIZE = config('LAB_CHUNK_SIZE', default=500, cast=int)
LAB_DEGREE_CAP = config('LAB_DEGREE_CAP', default=10, cast=int)
LAB_EXPERIMENT_CACHE = config('LAB_EXPERIMENT_CACHE', default=4, cast=int)
LAB_LOG_LEVEL = config('LAB_LOG_LEVEL', default='INFO')
LAB_LOG_FILE = config('LAB_LOG_FILE', default='')


# Celery configuration
CELERY_BROKER_URL = config('CELERY_BROKER_URL', default='redis://127.0.0.1:6379/0')
CELERY_RESULT_BACKEND = config('CELERY_RESULT_BACKEND', default='redis://127.0.0.1:6379/0')
CELERY_TASK_ALWAYS_EAGER = config('CELERY_TASK_ALWAYS_EAGER', default=True, cast=bool)
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_ACCEPT_CONTENT = ['json']

# --------------------------------------
# Logging for the lab & Celery
# --------------------------------------
_handlers = ['console'] + (['file'] if LAB_LOG_FILE else [])

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        **({'file': {
            'class': 'logging.FileHandler',
            'filename': LAB_LOG_FILE,
            'formatter': 'verbose',
        }} if LAB_LOG_FILE else {}),
    },
    'loggers': {
        'lab': {
            'handlers': _handlers,
            'level': LAB_LOG_LEVEL,
            'propagate': False,
        },
        'celery': {
            'handlers': _handlers,
            'level': 'INFO',
            'propagate': True,
        },
    },
}
