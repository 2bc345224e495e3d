# reformulation/apps.py
from django.apps import AppConfig


class ReformulationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'reformulation'
    verbose_name = 'Big-M Reformulation'
