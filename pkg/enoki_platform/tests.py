"""
Tests for the node heartbeat scheduler.
"""

import time
from unittest.mock import MagicMock

from django.test import SimpleTestCase, override_settings

from core.exceptions import UnavailableError
from enoki_platform.scheduler import send_heartbeat, start_scheduler, stop_scheduler

# Test scheduler configuration using memory job store
TEST_SCHEDULER_CONFIG = {
    'apscheduler.jobstores.default': {
        'type': 'memory'
    },
    'apscheduler.executors.default': {
        'type': 'threadpool',
        'max_workers': 2
    },
    'apscheduler.job_defaults.coalesce': True,
    'apscheduler.job_defaults.max_instances': 1,
    'apscheduler.timezone': 'UTC',
}


@override_settings(SCHEDULER_CONFIG=TEST_SCHEDULER_CONFIG)
class HeartbeatSchedulerTestCase(SimpleTestCase):
    """Test cases for the heartbeat job"""

    def test_send_heartbeat(self):
        """A heartbeat refreshes the node at the naming service"""
        naming = MagicMock()

        send_heartbeat(naming, 'edge-1')

        naming.heartbeat.assert_called_once_with('edge-1')

    def test_failed_heartbeat_is_logged(self):
        """An unreachable naming service only produces a warning"""
        naming = MagicMock()
        naming.heartbeat.side_effect = UnavailableError('naming down')

        with self.assertLogs('enoki_platform.scheduler', 'WARNING') as logs:
            send_heartbeat(naming, 'edge-1')

        self.assertIn('edge-1', logs.output[0])

    def test_start_and_stop(self):
        """The scheduler registers one interval job per node and sends beats"""
        naming = MagicMock()

        scheduler = start_scheduler(naming, 'edge-1', seconds=1)
        try:
            job = scheduler.get_job('heartbeat-edge-1')
            self.assertIsNotNone(job)
            self.assertTrue(scheduler.running)

            deadline = time.monotonic() + 3
            while not naming.heartbeat.called and time.monotonic() < deadline:
                time.sleep(0.05)
            naming.heartbeat.assert_called_with('edge-1')
        finally:
            stop_scheduler(scheduler)

        self.assertFalse(scheduler.running)

    def test_stop_none(self):
        """Stopping a scheduler that never started is harmless"""
        stop_scheduler(None)
