from lgdc.repositories.checkpoint_repository import CheckpointRepository
from lgdc.repositories.manifest_repository import ManifestRepository

__all__ = ["CheckpointRepository", "ManifestRepository"]
