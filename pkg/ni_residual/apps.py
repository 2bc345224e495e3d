# ni_residual/apps.py
from django.apps import AppConfig


class NiResidualConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'ni_residual'
    verbose_name = 'Nikaido-Isoda Residual'
