# ev_case_study/apps.py
from django.apps import AppConfig


class EvCaseStudyConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'ev_case_study'
    verbose_name = 'EV Charging Case Study'
