from django.db import models


class NodeRecord(models.Model):
    node_id = models.CharField(max_length=100, unique=True)
    address = models.CharField(max_length=255)
    last_heartbeat = models.BigIntegerField(default=0)  # microseconds, process clock of the daemon
    registered_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['node_id']
        indexes = [
            models.Index(fields=['address'], name='naming_node_address_idx'),
        ]

    def __str__(self):
        return f"{self.node_id} @ {self.address}"


class KeygroupRecord(models.Model):
    name = models.CharField(max_length=255, unique=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['name']

    def __str__(self):
        return self.name


class KeygroupReplica(models.Model):
    keygroup = models.ForeignKey(KeygroupRecord, on_delete=models.CASCADE, related_name='replicas')
    node = models.ForeignKey(NodeRecord, on_delete=models.CASCADE, related_name='replicas')
    position = models.PositiveIntegerField()
    joined_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['keygroup', 'position']
        constraints = [
            models.UniqueConstraint(
                fields=['keygroup', 'node'],
                name='unique_keygroup_replica'
            ),
        ]

    def __str__(self):
        return f"{self.keygroup.name} #{self.position}: {self.node.node_id}"
