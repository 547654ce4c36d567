from django.apps import AppConfig


class AsrkitConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "asrkit"
    verbose_name = "ASR evaluation and data toolkit"
