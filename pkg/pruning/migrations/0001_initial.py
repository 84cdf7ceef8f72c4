# Generated by Django 4.2 on 2026-10-19 10:12

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='PruningRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('config_text', models.TextField(blank=True)),
                ('embeddings_path', models.CharField(max_length=500)),
                ('output_dir', models.CharField(max_length=500)),
                ('seed', models.BigIntegerField(default=0)),
                ('threads', models.PositiveIntegerField(default=1)),
                ('deterministic', models.BooleanField(default=False)),
                ('status', models.CharField(choices=[('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='running', max_length=10)),
                ('input_size', models.PositiveBigIntegerField(default=0)),
                ('final_size', models.PositiveBigIntegerField(blank=True, null=True)),
                ('error', models.TextField(blank=True, null=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='StageResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('order', models.PositiveIntegerField()),
                ('stage', models.CharField(max_length=20)),
                ('input_size', models.PositiveBigIntegerField()),
                ('output_size', models.PositiveBigIntegerField()),
                ('wall_time', models.FloatField(help_text='seconds')),
                ('metrics', models.JSONField(blank=True, default=dict)),
                ('mask_path', models.CharField(blank=True, max_length=500)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='stages', to='pruning.pruningrun')),
            ],
            options={
                'ordering': ['run', 'order'],
                'unique_together': {('run', 'order')},
            },
        ),
        migrations.CreateModel(
            name='ClusterResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('cluster_id', models.PositiveIntegerField()),
                ('size', models.PositiveBigIntegerField()),
                ('d_inter', models.FloatField()),
                ('d_intra', models.FloatField()),
                ('complexity', models.FloatField()),
                ('probability', models.FloatField()),
                ('target', models.FloatField()),
                ('x_real', models.FloatField()),
                ('x_int', models.PositiveBigIntegerField()),
                ('stage', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='clusters', to='pruning.stageresult')),
            ],
            options={
                'ordering': ['stage', 'cluster_id'],
                'unique_together': {('stage', 'cluster_id')},
            },
        ),
    ]
