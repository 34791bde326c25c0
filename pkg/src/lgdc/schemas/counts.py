from typing import Optional

from pydantic import BaseModel, Field, field_validator


def _validate_image(value: list) -> list:
    if not value or not isinstance(value[0], list) or not value[0]:
        raise ValueError("image must be a non-empty H x W (grayscale) or H x W x 3 array")
    return value


class CountRequest(BaseModel):
    support_image: list = Field(..., description="Support pixels in [0, 1], H x W or H x W x 3")
    support_points: list[tuple[float, float]] = Field(..., description="Annotated head positions as (x, y)")
    queries: list[list] = Field(..., min_length=1, description="Query images, same layout as the support")
    return_density: bool = Field(False, description="Include the predicted density grids")

    @field_validator("support_image")
    @classmethod
    def validate_support(cls, value: list) -> list:
        return _validate_image(value)

    @field_validator("queries")
    @classmethod
    def validate_queries(cls, value: list[list]) -> list[list]:
        return [_validate_image(item) for item in value]


class QueryCount(BaseModel):
    index: int
    count: float
    density: Optional[list[list[float]]] = None


class CountResponse(BaseModel):
    support_count: int
    prototypes: int
    em_iterations: int
    results: list[QueryCount]
