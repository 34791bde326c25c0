import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Any, List

from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from lgdc.core.exceptions import ConfigError


class TrainConfig(BaseSettings):
    """Flat experiment configuration.

    The ``key=value`` config file uses exactly these field names. Unknown keys
    are rejected; every key has a default.
    """

    model_config = SettingsConfigDict(
        case_sensitive=False,
        env_prefix="LGDC_",
        extra="forbid",
        validate_default=True,
    )

    seed: int = Field(0, description="Master seed for data, init and episode sampling")

    # Optimisation
    learning_rate: float = Field(1e-3, gt=0, description="Adam base learning rate")
    batch_size: int = Field(8, ge=1, description="Episodes per optimiser step")
    iterations: int = Field(2000, ge=0, description="Optimiser steps in train_base")
    poly_power: float = Field(0.9, ge=0, description="Exponent of the poly learning-rate policy")
    grad_clip_norm: float = Field(5.0, gt=0, description="Global gradient-norm clip")
    adam_beta1: float = Field(0.9, ge=0, lt=1, description="Adam first-moment decay")
    adam_beta2: float = Field(0.999, ge=0, lt=1, description="Adam second-moment decay")
    adam_eps: float = Field(1e-8, gt=0, description="Adam denominator epsilon")

    # Data
    crop_size: int = Field(48, ge=1, description="Square training crop side in pixels")
    sigma: float = Field(4.0, gt=0, description="Isotropic GT kernel width in pixels")
    mirror_prob: float = Field(0.5, ge=0, le=1, description="Horizontal mirror probability")
    blur_prob: float = Field(0.3, ge=0, le=1, description="Gaussian blur probability")
    blur_sigma_min: float = Field(0.5, gt=0, description="Lower bound of blur sigma")
    blur_sigma_max: float = Field(1.5, gt=0, description="Upper bound of blur sigma")

    # Network
    channels: List[int] = Field(
        default_factory=lambda: [16, 32, 32],
        description="Backbone channels per stage; 2x max-pool after every stage but the last",
    )
    kernel_size: int = Field(3, ge=1, description="Backbone kernel size (odd)")
    head_channels: int = Field(16, ge=1, description="Hidden channels of the density head")
    head_bias_init: float = Field(-4.0, description="Initial bias of the softplus output conv")
    init_scale: float = Field(1.0, gt=0, description="Multiplier on Kaiming fan-in init")
    dilation_rate: int = Field(2, ge=1, description="Dilation of Conv3 in each local-guidance branch")
    attention_dim: int = Field(0, ge=0, description="Attention width d_a; 0 means d_a = C")

    # Multiple local density learner
    num_prototypes: int = Field(3, ge=1, description="Number of density prototypes (V-dot)")
    concentration: float = Field(10.0, gt=0, description="Fixed vMF concentration r")
    em_max_iter: int = Field(50, ge=1, description="EM iteration cap")
    em_tol: float = Field(1e-6, ge=0, description="EM stop threshold on mean 1-cos movement")

    # Flags
    use_ldg: bool = Field(True, description="Enable local density guidance")
    use_gdg: bool = Field(True, description="Enable global density guidance")
    tile_q: bool = Field(False, description="Per-cell queries (token tiled onto each cell) instead of broadcast add")
    shared_branch_convs: bool = Field(False, description="Share conv parameters across local-guidance branches")
    weighted_em: bool = Field(False, description="Weight EM samples by their support density norm")

    # Bookkeeping
    checkpoint_every: int = Field(0, ge=0, description="Intermediate checkpoint interval; 0 disables")
    log_every: int = Field(50, ge=1, description="Training log interval in iterations")

    @field_validator("channels", mode="before")
    @classmethod
    def split_channels(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = value.strip()
            if value.startswith("["):
                return json.loads(value)
            return [int(part) for part in value.split(",") if part.strip()]
        return value

    @model_validator(mode="after")
    def validate_configuration(self) -> "TrainConfig":
        """Validate cross-field constraints."""
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("channels must be a non-empty list of positive ints")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.blur_sigma_min > self.blur_sigma_max:
            raise ValueError("blur_sigma_min must not exceed blur_sigma_max")
        if self.crop_size % self.downsample_factor:
            raise ValueError(
                f"crop_size {self.crop_size} must be divisible by the downsample factor {self.downsample_factor}"
            )
        return self

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.channels) - 1)

    @property
    def feature_channels(self) -> int:
        return self.channels[-1]

    def fingerprint(self) -> str:
        """sha256 of the canonical JSON dump."""
        payload = json.dumps(self.model_dump(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def diff(self, other: "TrainConfig") -> set[str]:
        """Keys whose values differ between two configs."""
        mine, theirs = self.model_dump(), other.model_dump()
        return {key for key in mine if mine[key] != theirs[key]}

    def with_overrides(self, **overrides: Any) -> "TrainConfig":
        values = self.model_dump()
        values.update(overrides)
        return build_train_config(values)


def build_train_config(values: dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig(**values)
    except ValidationError as exc:
        unknown = [".".join(str(p) for p in err["loc"]) for err in exc.errors() if err["type"] == "extra_forbidden"]
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}") from exc
        raise ConfigError(str(exc)) from exc


def parse_key_value_file(path: str | Path) -> dict[str, str]:
    """Read a flat ``key=value`` file. ``#`` starts a comment."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_train_config(path: str | Path | None = None, **overrides: Any) -> TrainConfig:
    values: dict[str, Any] = {}
    if path is not None:
        try:
            values.update(parse_key_value_file(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values.update(overrides)
    return build_train_config(values)


def dump_train_config(config: TrainConfig) -> str:
    """Render a config back to the ``key=value`` format."""
    lines = []
    for key, value in config.model_dump().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


class Config(BaseSettings):

    model_config = SettingsConfigDict(
        case_sensitive=False,
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    PROJECT_NAME: str = "LGDC"
    API_V1_STR: str = "/api/v1"
    DEBUG: bool = False

    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = True

    # Checkpoint served by the HTTP surface
    CHECKPOINT_PATH: str = "runs/checkpoint.lgdc"
    CONFIG_PATH: str | None = None
    MAX_IMAGE_SIDE: int = 512

    @model_validator(mode="after")
    def validate_configuration(self) -> "Config":
        """Validate configuration settings."""
        if self.LOG_LEVEL.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unsupported LOG_LEVEL {self.LOG_LEVEL!r}")
        if self.MAX_IMAGE_SIDE < 4:
            raise ValueError("MAX_IMAGE_SIDE must be at least 4")
        return self


@lru_cache
def get_config() -> Config:
    return Config()


config = get_config()
