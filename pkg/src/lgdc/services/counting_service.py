from __future__ import annotations

from pathlib import Path

import numpy as np

from lgdc.core.config import TrainConfig, load_train_config
from lgdc.core.exceptions import DataError, ShapeMismatch
from lgdc.core.logger import get_logger
from lgdc.density.codec import PointAnnotation
from lgdc.models.mldl import PrototypeSet
from lgdc.models.network import LGDCNetwork
from lgdc.repositories.checkpoint_repository import CheckpointRepository
from lgdc.schemas.counts import CountRequest, CountResponse, QueryCount
from lgdc.services.training_service import AdaptResult, adapt_and_predict

logger = get_logger(__name__)


def config_sidecar(checkpoint_path: str | Path) -> Path:
    """Where ``train`` leaves the config a checkpoint was built with."""
    return Path(f"{checkpoint_path}.cfg")


def load_network(
    checkpoint_path: str | Path, config: TrainConfig | None = None
) -> tuple[LGDCNetwork, str, PrototypeSet | None]:
    """Rebuild the network for a checkpoint.

    Returns the network, the checkpoint's sha256 and the adapted prototypes the
    checkpoint carries, if any.
    """
    if config is None:
        sidecar = config_sidecar(checkpoint_path)
        config = load_train_config(sidecar if sidecar.is_file() else None)
    network = LGDCNetwork.from_config(config)
    repository = CheckpointRepository(checkpoint_path)
    prototypes = repository.load_into(network)
    return network, repository.sha256(), prototypes


def to_pixels(image: list | np.ndarray, max_side: int | None = None) -> np.ndarray:
    """H x W or H x W x 3 values in [0, 1] to a 3 x H x W array."""
    try:
        array = np.asarray(image, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"image is not a numeric array: {exc}") from exc
    if array.ndim == 2:
        array = np.repeat(array[None], 3, axis=0)
    elif array.ndim == 3 and array.shape[2] == 3:
        array = array.transpose(2, 0, 1)
    else:
        raise ShapeMismatch(f"expected H x W or H x W x 3 pixels, got {array.shape}")
    if max_side is not None and max(array.shape[1:]) > max_side:
        raise ShapeMismatch(f"image side {max(array.shape[1:])} exceeds the limit of {max_side}")
    if not np.isfinite(array).all() or array.min() < 0.0 or array.max() > 1.0:
        raise DataError("pixel values must be finite and within [0, 1]")
    return np.ascontiguousarray(array)


class CountingService:
    """Adapt-and-predict facade shared by the CLI and the HTTP surface."""

    def __init__(
        self,
        network: LGDCNetwork,
        checkpoint_sha256: str | None = None,
        max_image_side: int | None = None,
        prototypes: PrototypeSet | None = None,
    ):
        self.network = network
        self.prototypes = prototypes
        self.checkpoint_sha256 = checkpoint_sha256
        self.max_image_side = max_image_side

    @classmethod
    def from_checkpoint(
        cls, checkpoint_path: str | Path, config: TrainConfig | None = None, max_image_side: int | None = None
    ) -> "CountingService":
        network, digest, prototypes = load_network(checkpoint_path, config)
        logger.info(
            "counting_service_ready",
            checkpoint=str(checkpoint_path),
            sha256=digest,
            saved_prototypes=prototypes is not None,
        )
        return cls(network, digest, max_image_side, prototypes)

    def count(self, request: CountRequest) -> CountResponse:
        support = to_pixels(request.support_image, self.max_image_side)
        queries = [to_pixels(query, self.max_image_side) for query in request.queries]
        for index, query in enumerate(queries):
            if query.shape != support.shape:
                raise ShapeMismatch(f"query {index} is {query.shape[1:]}, support is {support.shape[1:]}")
        annotation = PointAnnotation(np.asarray(request.support_points, dtype=np.float64), support.shape[1:]).validate()

        result: AdaptResult = adapt_and_predict(
            self.network, support, annotation, queries, support_name="request", prototypes=self.prototypes
        )
        logger.info("counts_predicted", queries=len(queries), support_count=annotation.count)
        return CountResponse(
            support_count=annotation.count,
            prototypes=result.state.prototypes.count,
            em_iterations=result.state.prototypes.iterations,
            results=[
                QueryCount(
                    index=index,
                    count=prediction.count,
                    density=prediction.density.numpy().tolist() if request.return_density else None,
                )
                for index, prediction in enumerate(result.predictions)
            ],
        )
