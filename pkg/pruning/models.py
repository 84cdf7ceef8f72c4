from django.db import models


class PruningRun(models.Model):
    STATUS_CHOICES = [('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')]

    config_text = models.TextField(blank=True)
    embeddings_path = models.CharField(max_length=500)
    output_dir = models.CharField(max_length=500)
    seed = models.BigIntegerField(default=0)
    threads = models.PositiveIntegerField(default=1)
    deterministic = models.BooleanField(default=False)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='running')
    input_size = models.PositiveBigIntegerField(default=0)
    final_size = models.PositiveBigIntegerField(null=True, blank=True)
    error = models.TextField(blank=True, null=True)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']

    @property
    def kept_fraction(self):
        if not self.input_size or self.final_size is None:
            return None
        return self.final_size / self.input_size

    def __str__(self):
        return f"run {self.pk} ({self.status}) {self.embeddings_path}"


class StageResult(models.Model):
    run = models.ForeignKey(PruningRun, on_delete=models.CASCADE, related_name='stages')
    order = models.PositiveIntegerField()
    stage = models.CharField(max_length=20)
    input_size = models.PositiveBigIntegerField()
    output_size = models.PositiveBigIntegerField()
    wall_time = models.FloatField(help_text="seconds")
    metrics = models.JSONField(default=dict, blank=True)
    mask_path = models.CharField(max_length=500, blank=True)

    class Meta:
        ordering = ['run', 'order']
        unique_together = ('run', 'order')

    def clean(self):
        from django.core.exceptions import ValidationError
        if self.output_size > self.input_size:
            raise ValidationError("a stage cannot output more examples than it received")

    def save(self, *args, **kwargs):
        self.full_clean()
        super().save(*args, **kwargs)

    def __str__(self):
        return f"{self.stage}: {self.input_size} -> {self.output_size}"


class ClusterResult(models.Model):
    stage = models.ForeignKey(StageResult, on_delete=models.CASCADE, related_name='clusters')
    cluster_id = models.PositiveIntegerField()
    size = models.PositiveBigIntegerField()
    d_inter = models.FloatField()
    d_intra = models.FloatField()
    complexity = models.FloatField()
    probability = models.FloatField()
    target = models.FloatField()
    x_real = models.FloatField()
    x_int = models.PositiveBigIntegerField()

    class Meta:
        ordering = ['stage', 'cluster_id']
        unique_together = ('stage', 'cluster_id')

    def __str__(self):
        return f"cluster {self.cluster_id}: {self.size} -> {self.x_int}"
