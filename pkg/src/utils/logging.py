import logging

from src.config.settings import settings

logging.basicConfig(
    level=getattr(logging, settings.CASCADE_LOG_LEVEL.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)

logger = logging.getLogger("cascade")
