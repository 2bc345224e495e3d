# game_model/apps.py
from django.apps import AppConfig


class GameModelConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'game_model'
    verbose_name = 'GNEP Game Model'
