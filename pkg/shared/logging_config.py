"""
Logging setup shared by every component
"""
import logging
import os

LOG_LEVEL = os.getenv("MCONN_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = "[%(asctime)s] [%(levelname)s] %(name)s - %(message)s"


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Install the root handler once; later calls only adjust the level."""
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format=LOG_FORMAT)
    root.setLevel(level)


def get_logger(component: str) -> logging.Logger:
    return logging.getLogger(f"mconn.{component}")
