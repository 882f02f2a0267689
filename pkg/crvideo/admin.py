from django.contrib import admin
from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ("id", "created_at", "scenario_name", "mode", "row_count")
    list_filter = ("mode",)
    search_fields = ("scenario_name",)
