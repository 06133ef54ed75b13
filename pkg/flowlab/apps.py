from django.apps import AppConfig


class FlowlabConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "flowlab"
    verbose_name = "Flow Lab"
