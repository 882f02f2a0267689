# Generated by Django 5.2.7 on 2026-10-18 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("scenario_name", models.CharField(max_length=128)),
                (
                    "mode",
                    models.CharField(
                        choices=[
                            ("infrastructure", "Infrastructure"),
                            ("multihop", "Multi-hop"),
                        ],
                        max_length=16,
                    ),
                ),
                ("scenario", models.JSONField(default=dict)),
                ("csv", models.TextField(blank=True, default="")),
                ("row_count", models.PositiveIntegerField(default=0)),
            ],
            options={
                "ordering": ["-created_at"],
            },
        ),
    ]
