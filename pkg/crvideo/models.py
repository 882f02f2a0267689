from django.db import models


class ExperimentRun(models.Model):
    MODE_CHOICES = (
        ("infrastructure", "Infrastructure"),
        ("multihop", "Multi-hop"),
    )

    created_at = models.DateTimeField(auto_now_add=True)

    scenario_name = models.CharField(max_length=128)
    mode = models.CharField(max_length=16, choices=MODE_CHOICES)
    scenario = models.JSONField(default=dict)

    csv = models.TextField(blank=True, default="")
    row_count = models.PositiveIntegerField(default=0)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self) -> str:  # pragma: no cover
        return f"{self.scenario_name} run #{self.pk}"
