# Generated by Django 5.2.8 on 2026-10-18 09:30

import django.db.models.deletion
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
                ("name", models.CharField(max_length=200, verbose_name="Experiment Name")),
                (
                    "kind",
                    models.CharField(
                        choices=[
                            ("flow", "Flow"),
                            ("compression", "Compression"),
                            ("semigroup", "Semigroup"),
                            ("stability", "Stability"),
                            ("blowup-census", "Blow-up Census"),
                            ("counterexample", "Counterexample"),
                            ("crossing-time", "Crossing Time"),
                            ("no-blowup", "No Blow-up"),
                        ],
                        max_length=50,
                        verbose_name="Kind",
                    ),
                ),
                ("config_path", models.CharField(blank=True, max_length=500, verbose_name="Config Path")),
                (
                    "config_digest",
                    models.CharField(
                        db_index=True,
                        help_text="sha256 of the canonical config",
                        max_length=64,
                        verbose_name="Config Digest",
                    ),
                ),
                ("seed", models.BigIntegerField(default=0, verbose_name="Seed")),
                ("threads", models.PositiveIntegerField(default=1, verbose_name="Threads")),
                ("version", models.CharField(max_length=20, verbose_name="Tool Version")),
                ("output_dir", models.CharField(blank=True, max_length=500, verbose_name="Output Directory")),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("running", "Running"),
                            ("passed", "Passed"),
                            ("failed", "Failed"),
                            ("error", "Error"),
                        ],
                        default="running",
                        max_length=20,
                        verbose_name="Status",
                    ),
                ),
                ("passed", models.BooleanField(default=False, verbose_name="All Checks Passed")),
                ("error_message", models.TextField(blank=True, verbose_name="Error")),
                ("started_at", models.DateTimeField(auto_now_add=True, verbose_name="Started")),
                ("finished_at", models.DateTimeField(blank=True, null=True, verbose_name="Finished")),
            ],
            options={
                "verbose_name": "Experiment Run",
                "verbose_name_plural": "Experiment Runs",
                "ordering": ["-started_at"],
            },
        ),
        migrations.CreateModel(
            name="CheckResult",
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
                ("check_name", models.CharField(max_length=100, verbose_name="Check")),
                ("verdict", models.CharField(max_length=40, verbose_name="Verdict")),
                ("expected", models.CharField(default="pass", max_length=40, verbose_name="Expected Verdict")),
                ("passed", models.BooleanField(default=False, verbose_name="Pass")),
                ("metrics", models.JSONField(blank=True, default=dict, verbose_name="Metrics")),
                ("bound", models.JSONField(blank=True, null=True, verbose_name="Bound")),
                ("tolerance", models.JSONField(blank=True, null=True, verbose_name="Tolerance")),
                ("sample_count", models.PositiveIntegerField(default=0, verbose_name="Samples")),
                ("wall_clock", models.FloatField(default=0.0, verbose_name="Wall Clock (s)")),
                ("inputs_digest", models.CharField(blank=True, max_length=64, verbose_name="Inputs Digest")),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="checks",
                        to="flowlab.experimentrun",
                        verbose_name="Run",
                    ),
                ),
            ],
            options={
                "verbose_name": "Check Result",
                "verbose_name_plural": "Check Results",
                "ordering": ["run", "id"],
            },
        ),
    ]
