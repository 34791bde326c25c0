from lgdc.schemas.counts import CountRequest, CountResponse, QueryCount
from lgdc.schemas.dataset import ManifestEntry, SyntheticDatasetSpec, SyntheticRegion, SyntheticSceneSpec
from lgdc.schemas.report import AblationRow, AblationTable, EvalReport, Metrics, QueryError, SceneMetrics

__all__ = [
    "AblationRow",
    "AblationTable",
    "CountRequest",
    "CountResponse",
    "EvalReport",
    "ManifestEntry",
    "Metrics",
    "QueryCount",
    "QueryError",
    "SceneMetrics",
    "SyntheticDatasetSpec",
    "SyntheticRegion",
    "SyntheticSceneSpec",
]
