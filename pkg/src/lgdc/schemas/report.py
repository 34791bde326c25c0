from typing import Optional

from pydantic import BaseModel, Field


class QueryError(BaseModel):
    scene_id: str
    image: str
    predicted: float
    ground_truth: float

    @property
    def error(self) -> float:
        return self.predicted - self.ground_truth


class SceneMetrics(BaseModel):
    scene_id: str
    support: str = Field(..., description="Support image chosen for the scene")
    mae: float
    mse: float
    n_queries: int = Field(..., gt=0)


class Metrics(BaseModel):
    mae: float
    mse: float


class EvalReport(BaseModel):
    per_scene: list[SceneMetrics]
    overall: Metrics = Field(..., description="Pooled over every query")
    scene_mean: Metrics = Field(..., description="Mean of per-scene values")
    queries: list[QueryError] = Field(default_factory=list, description="Per-query error log")
    config_fingerprint: str
    checkpoint_sha256: Optional[str] = None
    seed: int
    config: dict = Field(default_factory=dict)
    references: list[str] = Field(default_factory=list)


class AblationRow(BaseModel):
    variant: str
    overrides: dict = Field(default_factory=dict)
    mae: float = Field(..., description="Median pooled MAE over seeds")
    mse: float = Field(..., description="Median pooled MSE over seeds")
    seed_mae: list[float] = Field(default_factory=list)
    seed_mse: list[float] = Field(default_factory=list)
    reference: Optional[str] = Field(None, description="Published value, not a target")


class AblationTable(BaseModel):
    suite: str
    seeds: list[int]
    rows: list[AblationRow]
    references: list[str] = Field(default_factory=list)
