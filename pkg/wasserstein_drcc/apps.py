# wasserstein_drcc/apps.py
from django.apps import AppConfig


class WassersteinDrccConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'wasserstein_drcc'
    verbose_name = 'Wasserstein Chance Constraint'
