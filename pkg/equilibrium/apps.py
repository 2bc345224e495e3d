# equilibrium/apps.py
from django.apps import AppConfig


class EquilibriumConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'equilibrium'
    verbose_name = 'Equilibrium Solver'
