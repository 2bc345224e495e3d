"""
Django settings for the drcc_gnep project.

Solver tolerances, budgets and the EV case-study defaults live here next to
the usual Django configuration. Every numeric knob can be overridden from the
environment (or a .env file) through python-decouple.
"""

from pathlib import Path

from decouple import config, Csv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='drcc-gnep-local-only-key')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = config('ALLOWED_HOSTS', default='localhost', cast=Csv())

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',

    # Third party apps
    'rest_framework',

    # Local apps
    'game_model',
    'wasserstein_drcc',
    'reformulation',
    'ni_residual',
    'equilibrium',
    'ev_case_study',
]

# No tables are used; the database entry only keeps the test runner happy.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

USE_TZ = True
TIME_ZONE = 'UTC'

# ==============================================================================
# SOLVER CONFIGURATION
# ==============================================================================

GNEP_SOLVER = {
    # absolute tolerance for every linear feasibility check
    'TOL_FEAS': config('GNEP_TOL_FEAS', default=1e-9, cast=float),
    # residual value below which a point is reported as an equilibrium
    'TOL_EQ': config('GNEP_TOL_EQ', default=1e-6, cast=float),
    # scaled KKT residual accepted from the QP engine
    'TOL_KKT': config('GNEP_TOL_KKT', default=1e-8, cast=float),
    'QP_MAX_ITER': config('GNEP_QP_MAX_ITER', default=200, cast=int),
    'MULTISTART': config('GNEP_MULTISTART', default=16, cast=int),
    'MAX_OUTER_ITER': config('GNEP_MAX_OUTER_ITER', default=500, cast=int),
    'ENUM_THRESHOLD': config('GNEP_ENUM_THRESHOLD', default=12, cast=int),
    'NODE_BUDGET': config('GNEP_NODE_BUDGET', default=256, cast=int),
    'BRI_MAX_SWEEPS': config('GNEP_BRI_MAX_SWEEPS', default=500, cast=int),
    'BRI_TOL': config('GNEP_BRI_TOL', default=1e-9, cast=float),
    'PG_TOL': config('GNEP_PG_TOL', default=1e-8, cast=float),
    'BIG_M_SAFETY': config('GNEP_BIG_M_SAFETY', default=1.1, cast=float),
    'MAX_MK': config('GNEP_MAX_MK', default=10 ** 6, cast=int),
    'VERTEX_COMBINATION_LIMIT': config('GNEP_VERTEX_COMBINATION_LIMIT', default=2_000_000, cast=int),
    'SEED': config('GNEP_SEED', default=42, cast=int),
    'WORKERS': config('GNEP_WORKERS', default=1, cast=int),
}

# ==============================================================================
# EV CHARGING CASE STUDY DEFAULTS
# ==============================================================================

CASE_STUDY = {
    'I': 3,
    'u0': 50.0,
    'N0': 0.0,
    'N_bar': 50.0,
    'alpha_u': 500.0,
    'alpha_c': 5e-4,
    'c0': 0.12,
    'u_lower': 80.0,
    'E_d': 1.0,
    'price_lower': 0.0,
    'price_upper': 1.0,
    'epsilon': 0.05,
    'theta': 0.05,
    'sampler': {'distribution': 'normal', 'mean': 0.0, 'std': 5.0},
    'K': 10,
    'seed': 42,
    'mc_draws': 100_000,
    'radius_C': 1.0,
}

# ==============================================================================
# LOGGING CONFIGURATION
# ==============================================================================

GNEP_LOG_LEVEL = config('GNEP_LOG_LEVEL', default='INFO')
GNEP_LOG_FILE = config('GNEP_LOG_FILE', default='')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        app: {
            'handlers': ['console'],
            'level': GNEP_LOG_LEVEL,
            'propagate': False,
        }
        for app in INSTALLED_APPS[3:] + ['drcc_gnep']
    },
}

if GNEP_LOG_FILE:
    LOGGING['handlers']['file'] = {
        'class': 'logging.FileHandler',
        'filename': GNEP_LOG_FILE,
        'formatter': 'verbose',
    }
    for logger_config in LOGGING['loggers'].values():
        logger_config['handlers'].append('file')
