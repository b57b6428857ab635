from apscheduler.schedulers.background import BackgroundScheduler
from django.conf import settings
import logging

from core.exceptions import EnokiError

logger = logging.getLogger(__name__)


def send_heartbeat(naming, node_id):
    """
    Refresh this node's liveness record at the naming service.
    Failures are logged and retried on the next tick.
    """
    try:
        naming.heartbeat(node_id)
    except EnokiError as e:
        logger.warning(f"Heartbeat of {node_id} failed: {e}")


def start_scheduler(naming, node_id, config=None, seconds=None):
    """
    Start the background scheduler that sends heartbeats.

    Args:
        naming: NamingClient of the node
        node_id (str): Id of the node sending heartbeats
        config (dict): Optional scheduler configuration. If None, uses settings.SCHEDULER_CONFIG.
        seconds (int): Heartbeat interval. If None, uses settings.ENOKI_HEARTBEAT_SECONDS.

    Returns:
        scheduler: The started scheduler instance
    """
    try:
        scheduler = BackgroundScheduler(config or settings.SCHEDULER_CONFIG)
        scheduler.add_job(
            send_heartbeat,
            'interval',
            seconds=seconds or settings.ENOKI_HEARTBEAT_SECONDS,
            args=[naming, node_id],
            id=f'heartbeat-{node_id}',
            replace_existing=True,
            max_instances=1,
            coalesce=True,
        )
        scheduler.start()
        logger.info(f"Heartbeat scheduler started for {node_id}")
        return scheduler
    except Exception as e:
        logger.error(f"Failed to start heartbeat scheduler: {e}")
        raise


def stop_scheduler(scheduler):
    """
    Safely stop the scheduler.

    Args:
        scheduler: The scheduler instance to stop
    """
    try:
        if scheduler and scheduler.running:
            scheduler.shutdown(wait=False)
            logger.info("Heartbeat scheduler stopped")
    except Exception as e:
        logger.error(f"Error stopping scheduler: {e}")
