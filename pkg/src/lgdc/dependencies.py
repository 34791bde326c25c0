from functools import lru_cache

from lgdc.core.config import config, load_train_config
from lgdc.services.counting_service import CountingService


@lru_cache
def get_counting_service() -> CountingService:
    """Dependency to get the CountingService for the configured checkpoint."""
    train_config = load_train_config(config.CONFIG_PATH) if config.CONFIG_PATH else None
    return CountingService.from_checkpoint(config.CHECKPOINT_PATH, train_config, config.MAX_IMAGE_SIDE)


__all__ = ["get_counting_service"]
