from pathlib import Path
import os

import dj_database_url

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('SECRET_KEY', 'dev-secret-key')

DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'pruning',
]

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

db_url = os.getenv('DATABASE_URL')
if db_url:
    DATABASES['default'] = dj_database_url.config(default=db_url, conn_max_age=600, ssl_require=not DEBUG)

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


def _env_int(name, default):
    return int(os.getenv(name, str(default)))


def _env_float(name, default):
    return float(os.getenv(name, str(default)))


# Defaults for every pruning stage; a pipeline config file or CLI flag overrides them.
PRUNING = {
    'THREADS': _env_int('PRUNING_THREADS', 1),
    'SEED': _env_int('PRUNING_SEED', 0),
    'RECORD_RUNS': os.getenv('PRUNING_RECORD_RUNS', 'False').lower() == 'true',
    'KMEANS_ITERS': _env_int('PRUNING_KMEANS_ITERS', 100),
    'DEDUP_K': _env_int('PRUNING_DEDUP_K', 1000),
    'DEDUP_TOL': _env_float('PRUNING_DEDUP_TOL', 1e-4),
    'SCORE_THRESHOLD': _env_float('PRUNING_SCORE_THRESHOLD', 0.3),
    'DBP_K': _env_int('PRUNING_DBP_K', 500),
    'DBP_L': _env_int('PRUNING_DBP_L', 20),
    'DBP_TAU': _env_float('PRUNING_DBP_TAU', 0.1),
    'DBP_KEEP_FRACTION': _env_float('PRUNING_DBP_KEEP_FRACTION', 0.6),
    'DBP_BALANCE_RATIO': _env_float('PRUNING_DBP_BALANCE_RATIO', 0.0),
    'DBP_MIN_SAMPLES': _env_int('PRUNING_DBP_MIN_SAMPLES', 1),
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'pruning': {
            'handlers': ['console'],
            'level': os.getenv('PRUNING_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
