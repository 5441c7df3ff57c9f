"""
Django settings for config project.

O projeto não expõe API web: o Django hospeda os comandos de gerenciamento
(generate, train, evaluate, sweep, attribute) e centraliza configuração e logging.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env()
READ_DOT_ENV_FILE = env.bool("DJANGO_READ_DOT_ENV_FILE", default=False)
if READ_DOT_ENV_FILE:
    # OS environment variables take precedence over variables from .env
    env.read_env(str(BASE_DIR / ".env"))


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = env("DJANGO_SECRET_KEY", default="custos-local-somente-linha-de-comando")

DEBUG = env.bool("DEBUG", default=False)

ALLOWED_HOSTS = env.list("DJANGO_ALLOWED_HOSTS", default=[])


# Application definition

INSTALLED_APPS = [
    # Local apps
    'custos.apps.CustosConfig',
]

MIDDLEWARE = []


# Database
# Nenhum comando acessa o banco; a URL existe para o manage.py funcionar sem Postgres.

DATABASES = {
    "default": env.db("DATABASE_URL", default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}"),
}

LANGUAGE_CODE = 'pt-br'
TIME_ZONE = 'America/Sao_Paulo'
USE_I18N = True
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ===========================
# CONFIGURAÇÃO DO PIPELINE DE CUSTOS
# ===========================

# Número de processos para as células do sweep
CUSTOS_WORKERS = env.int("CUSTOS_WORKERS", default=1)

# Diretório raiz dos artefatos quando --output não é informado
CUSTOS_ARTIFACTS_DIR = Path(env.str("CUSTOS_ARTIFACTS_DIR", default=str(BASE_DIR / "artefatos")))

# Trimestres no período de observação (24 = 6 anos)
CUSTOS_QUARTERS = env.int("CUSTOS_QUARTERS", default=24)

# Filtro do vocabulário: código retido se aparecer MAIS que isso (1000 na escala completa)
CUSTOS_MIN_COUNT = env.int("CUSTOS_MIN_COUNT", default=10)

CUSTOS_LOG_LEVEL = env.str("CUSTOS_LOG_LEVEL", default="INFO")


# ===========================
# LOGGING
# ===========================

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "%(levelname)s %(asctime)s %(module)s %(process)d %(thread)d %(message)s",
        },
    },
    "handlers": {
        "console": {
            "level": "DEBUG",
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {"level": "WARNING", "handlers": ["console"]},
    "loggers": {
        "custos": {
            "handlers": ["console"],
            "level": CUSTOS_LOG_LEVEL,
            "propagate": False,
        },
    },
}
