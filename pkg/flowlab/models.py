from django.db import models


class ExperimentRun(models.Model):
    """One invocation of an experiment config"""

    STATUS_CHOICES = [
        ('running', 'Running'),
        ('passed', 'Passed'),
        ('failed', 'Failed'),
        ('error', 'Error'),
    ]

    KIND_CHOICES = [
        ('flow', 'Flow'),
        ('compression', 'Compression'),
        ('semigroup', 'Semigroup'),
        ('stability', 'Stability'),
        ('blowup-census', 'Blow-up Census'),
        ('counterexample', 'Counterexample'),
        ('crossing-time', 'Crossing Time'),
        ('no-blowup', 'No Blow-up'),
    ]

    name = models.CharField(max_length=200, verbose_name="Experiment Name")
    kind = models.CharField(max_length=50, choices=KIND_CHOICES, verbose_name="Kind")
    config_path = models.CharField(max_length=500, blank=True, verbose_name="Config Path")
    config_digest = models.CharField(
        max_length=64,
        db_index=True,
        verbose_name="Config Digest",
        help_text="sha256 of the canonical config"
    )
    seed = models.BigIntegerField(default=0, verbose_name="Seed")
    threads = models.PositiveIntegerField(default=1, verbose_name="Threads")
    version = models.CharField(max_length=20, verbose_name="Tool Version")
    output_dir = models.CharField(max_length=500, blank=True, verbose_name="Output Directory")

    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running', verbose_name="Status")
    passed = models.BooleanField(default=False, verbose_name="All Checks Passed")
    error_message = models.TextField(blank=True, verbose_name="Error")

    started_at = models.DateTimeField(auto_now_add=True, verbose_name="Started")
    finished_at = models.DateTimeField(null=True, blank=True, verbose_name="Finished")

    class Meta:
        ordering = ['-started_at']
        verbose_name = "Experiment Run"
        verbose_name_plural = "Experiment Runs"

    def __str__(self):
        return f"{self.name} ({self.kind}) - {self.get_status_display()}"

    @property
    def duration(self):
        if self.finished_at is None:
            return None
        return (self.finished_at - self.started_at).total_seconds()


class CheckResult(models.Model):
    """Outcome of one diagnostic check within a run"""

    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name='checks',
        verbose_name="Run"
    )
    check_name = models.CharField(max_length=100, verbose_name="Check")
    verdict = models.CharField(max_length=40, verbose_name="Verdict")
    expected = models.CharField(max_length=40, default='pass', verbose_name="Expected Verdict")
    passed = models.BooleanField(default=False, verbose_name="Pass")

    metrics = models.JSONField(default=dict, blank=True, verbose_name="Metrics")
    bound = models.JSONField(null=True, blank=True, verbose_name="Bound")
    tolerance = models.JSONField(null=True, blank=True, verbose_name="Tolerance")

    sample_count = models.PositiveIntegerField(default=0, verbose_name="Samples")
    wall_clock = models.FloatField(default=0.0, verbose_name="Wall Clock (s)")
    inputs_digest = models.CharField(max_length=64, blank=True, verbose_name="Inputs Digest")

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'id']
        verbose_name = "Check Result"
        verbose_name_plural = "Check Results"

    def __str__(self):
        return f"{self.run.name} / {self.check_name}: {self.verdict}"
