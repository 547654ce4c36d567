from django.apps import AppConfig


class AsrkitTestingConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "asrkit_testing"
