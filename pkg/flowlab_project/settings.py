"""
Django settings for the flowlab project.

The project hosts the `flowlab` app: a numerical laboratory for maximal
regular flows driven from management commands, with run history kept in
the database and browsable in the admin.
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = config('SECRET_KEY', default='django-insecure-flowlab-local-only-5c1f0e7b9a2d4e68')

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.admin",
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "django.contrib.sessions",
    "django.contrib.messages",
    "django.contrib.staticfiles",
    # Custom apps
    "flowlab",
]

MIDDLEWARE = [
    "django.middleware.security.SecurityMiddleware",
    "django.contrib.sessions.middleware.SessionMiddleware",
    "django.middleware.common.CommonMiddleware",
    "django.middleware.csrf.CsrfViewMiddleware",
    "django.contrib.auth.middleware.AuthenticationMiddleware",
    "django.contrib.messages.middleware.MessageMiddleware",
    "django.middleware.clickjacking.XFrameOptionsMiddleware",
]

ROOT_URLCONF = "flowlab_project.urls"

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    },
]

WSGI_APPLICATION = "flowlab_project.wsgi.application"


# Database

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


# Static files (admin only)

STATIC_URL = "static/"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# Flow laboratory settings
FLOWLAB_OUTPUT_ROOT = Path(config('FLOWLAB_OUTPUT_ROOT', default=str(BASE_DIR / 'runs')))
FLOWLAB_PRESET_DIR = Path(config('FLOWLAB_PRESET_DIR', default=str(BASE_DIR / 'flowlab' / 'presets')))
FLOWLAB_DEFAULT_THREADS = config('FLOWLAB_DEFAULT_THREADS', default=1, cast=int)
FLOWLAB_RECORD_RUNS = config('FLOWLAB_RECORD_RUNS', default=True, cast=bool)
FLOWLAB_LOG_LEVEL = config('FLOWLAB_LOG_LEVEL', default='INFO')

# Numerical defaults
FLOWLAB_BLOWUP_THRESHOLD = config('FLOWLAB_BLOWUP_THRESHOLD', default=1e6, cast=float)
FLOWLAB_TOL_FRACTION = config('FLOWLAB_TOL_FRACTION', default=1e-3, cast=float)
FLOWLAB_ANGULAR_SAMPLES = config('FLOWLAB_ANGULAR_SAMPLES', default=720, cast=int)

# Logging
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
    },
    "loggers": {
        "flowlab": {
            "handlers": ["console"],
            "level": FLOWLAB_LOG_LEVEL,
            "propagate": False,
        },
    },
}
