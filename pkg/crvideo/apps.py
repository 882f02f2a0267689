from django.apps import AppConfig


class CrvideoConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "crvideo"
    verbose_name = "CR video simulator"
