from abc import ABC, abstractmethod
from pathlib import Path
from typing import Generic, TypeVar

T = TypeVar("T")


class BaseRepository(ABC, Generic[T]):
    """Base repository interface for file-backed data access."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    @abstractmethod
    def load(self) -> T:
        """Read the stored entity."""
        pass

    @abstractmethod
    def save(self, obj: T) -> Path:
        """Persist the entity and return where it was written."""
        pass

    def exists(self) -> bool:
        return self.path.is_file()

    def resolve(self, ref: str | Path) -> Path:
        """Relative references are taken relative to the repository file."""
        ref = Path(ref)
        return ref if ref.is_absolute() else self.path.parent / ref
