"""
Configuration fixtures for testing.
"""
import pytest

from lgdc.core.config import TrainConfig, build_train_config


@pytest.fixture
def default_config() -> TrainConfig:
    """Every key at its documented default."""
    return build_train_config({})


@pytest.fixture
def tiny_config() -> TrainConfig:
    """A network small enough for finite differences and a few training steps."""
    return build_train_config(
        {
            "seed": 7,
            "channels": [4, 6],
            "head_channels": 4,
            "crop_size": 16,
            "batch_size": 2,
            "iterations": 3,
            "num_prototypes": 2,
            "em_max_iter": 20,
            "head_bias_init": 0.0,
            "log_every": 1,
        }
    )


@pytest.fixture
def config_file(tmp_path):
    """A key=value config file with comments."""
    path = tmp_path / "run.cfg"
    path.write_text(
        "# desk-scale run\n"
        "learning_rate = 0.002\n"
        "channels = 8,16\n"
        "num_prototypes=2  # two strata\n"
        "\n"
        "use_gdg = false\n",
        encoding="utf-8",
    )
    return path
