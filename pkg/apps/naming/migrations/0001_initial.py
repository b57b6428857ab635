# Generated by Django 4.2.7 on 2026-10-18 09:12

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='KeygroupRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=255, unique=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['name'],
            },
        ),
        migrations.CreateModel(
            name='NodeRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('node_id', models.CharField(max_length=100, unique=True)),
                ('address', models.CharField(max_length=255)),
                ('last_heartbeat', models.BigIntegerField(default=0)),
                ('registered_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['node_id'],
                'indexes': [models.Index(fields=['address'], name='naming_node_address_idx')],
            },
        ),
        migrations.CreateModel(
            name='KeygroupReplica',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('position', models.PositiveIntegerField()),
                ('joined_at', models.DateTimeField(auto_now_add=True)),
                ('keygroup', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='replicas', to='naming.keygrouprecord')),
                ('node', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='replicas', to='naming.noderecord')),
            ],
            options={
                'ordering': ['keygroup', 'position'],
            },
        ),
        migrations.AddConstraint(
            model_name='keygroupreplica',
            constraint=models.UniqueConstraint(fields=('keygroup', 'node'), name='unique_keygroup_replica'),
        ),
    ]
