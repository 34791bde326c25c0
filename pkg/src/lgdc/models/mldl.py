"""Multiple local density learner.

Support density features (support features weighted by the sum-pooled GT
density) are clustered on the unit sphere by EM over a von Mises-Fisher
mixture with fixed concentration ``r`` and uniform implicit weights. The
shared normaliser cancels in the posterior, so no Bessel function is ever
evaluated: the E-step is a softmax with inverse temperature ``r`` and the
M-step is the normalised responsibility-weighted mean direction.

EM runs on plain numpy arrays; its outputs enter the network as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from lgdc.core.exceptions import AllSamplesDegenerate, InvalidHyperparameter, ShapeMismatch
from lgdc.core.logger import get_logger
from lgdc.density.codec import DensityMap, downsample_preserving_count
from lgdc.models.backbone import FeatureMap
from lgdc.ndcore import Tensor, column_norm, concat, matmul, reshape

logger = get_logger(__name__)

MIN_SAMPLE_NORM = 1e-8
MIN_CELL_DENSITY = 1e-12
MIN_COMPONENT_MASS = 1e-8


@dataclass(frozen=True)
class SupportDensityFeature:
    data: Tensor
    density: np.ndarray | None = None  # h x w sum-pooled GT, when known


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray  # I x C, unit rows
    weights: np.ndarray  # original column norms
    mass: np.ndarray  # GT density per kept cell (norms when no density is attached)
    cells: np.ndarray  # flat indices of kept cells
    excluded: np.ndarray  # flat indices of dropped cells


@dataclass(frozen=True)
class Responsibilities:
    e: np.ndarray  # I x V, rows sum to one


@dataclass(frozen=True)
class PrototypeSet:
    mu: Tensor  # V x C, unit rows, constant
    r: float
    iterations: int = 0
    converged: bool = False
    objective_trace: tuple[float, ...] = ()
    levels: tuple[float, ...] = ()  # responsibility-weighted mean GT density per prototype

    @property
    def count(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class LocalDensitySimilarityMatrix:
    delta: Tensor  # V x h x w
    planes: list[Tensor] = field(default_factory=list)  # V tensors of 1 x h x w


def build_support_density_feature(support_feat: FeatureMap, gt: DensityMap, factor: int) -> SupportDensityFeature:
    """Weight every support feature column by the count-preserving downsampled GT density."""
    if factor != support_feat.downsample_factor:
        raise ShapeMismatch(f"factor {factor} does not match backbone factor {support_feat.downsample_factor}")
    pooled = downsample_preserving_count(gt, factor)
    if pooled.shape != support_feat.spatial:
        raise ShapeMismatch(f"GT at feature resolution is {pooled.shape}, features are {support_feat.spatial}")
    return SupportDensityFeature(support_feat.data * pooled.grid, pooled.numpy())


def prepare_samples(sdf: SupportDensityFeature) -> SampleSet:
    """Unit-normalise spatial columns, dropping empty-density and near-zero columns."""
    values = sdf.data.data
    channels = values.shape[0]
    columns = values.reshape(channels, -1).T
    norms = np.linalg.norm(columns, axis=1)
    keep = norms >= MIN_SAMPLE_NORM
    if sdf.density is not None:
        density = np.asarray(sdf.density, dtype=np.float64).reshape(-1)
        keep &= density >= MIN_CELL_DENSITY
    if not keep.any():
        raise AllSamplesDegenerate(f"all {len(columns)} support density columns are empty")

    cells = np.flatnonzero(keep)
    samples = columns[keep] / norms[keep, None]
    mass = density[keep] if sdf.density is not None else norms[keep]
    return SampleSet(samples, norms[keep], mass, cells, np.flatnonzero(~keep))


def em_step_e(samples: np.ndarray, mu: np.ndarray, r: float) -> Responsibilities:
    if r <= 0:
        raise InvalidHyperparameter(f"concentration must be positive, got {r}")
    return Responsibilities(softmax(r * samples @ mu.T, axis=1))


def _farthest_sample(samples: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Sample with the lowest maximum cosine to any reference direction."""
    closeness = (samples @ reference.T).max(axis=1)
    return samples[int(np.argmin(closeness))]


def em_step_m(
    samples: np.ndarray,
    resp: Responsibilities,
    weights: np.ndarray | None = None,
    previous: np.ndarray | None = None,
) -> np.ndarray:
    """Responsibility-weighted mean per component, renormalised onto the sphere.

    A component whose responsibility mass collapses is reseeded at the sample
    least similar to the surviving prototypes.
    """
    e = resp.e if weights is None else resp.e * weights[:, None]
    totals = e.sum(axis=0)
    sums = e.T @ samples
    norms = np.linalg.norm(sums, axis=1)
    alive = (totals >= MIN_COMPONENT_MASS) & (norms > 0)

    mu = np.zeros_like(sums)
    mu[alive] = (sums[alive] / totals[alive, None]) / (norms[alive, None] / totals[alive, None])
    for v in np.flatnonzero(~alive):
        reference = [mu[alive]]
        if previous is not None:
            reference.append(previous)
        mu[v] = _farthest_sample(samples, np.concatenate(reference))
        alive[v] = True
        logger.debug("prototype_reseeded", component=int(v), mass=float(totals[v]))
    return mu


def surrogate_objective(samples: np.ndarray, mu: np.ndarray, r: float, weights: np.ndarray | None = None) -> float:
    """sum_i log sum_v exp(r mu_v . s_i), the mixture log-likelihood up to constants."""
    per_sample = logsumexp(r * samples @ mu.T, axis=1)
    if weights is not None:
        per_sample = per_sample * weights
    return float(per_sample.sum())


def canonical_order(samples: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Descending mass, ties broken by sample components: independent of input order."""
    keys = tuple(samples[:, c] for c in reversed(range(samples.shape[1]))) + (-mass,)
    return np.lexsort(keys)


def initial_prototypes(samples: np.ndarray, mass: np.ndarray, count: int) -> np.ndarray:
    """Samples at the density-mass quantiles (highest ... lowest).

    Without usable mass information, or when quantiles coincide, fall back to
    farthest-point selection, which is equally deterministic.
    """
    n = len(samples)
    spread = float(np.ptp(mass)) if n else 0.0
    informative = spread > 1e-12 * max(float(np.abs(mass).max()), 1e-300)

    chosen: list[np.ndarray] = []
    if informative:
        positions = [0] if count == 1 else [int(round(v * (n - 1) / (count - 1))) for v in range(count)]
        for pos in positions:
            candidate = samples[pos]
            if chosen and (np.stack(chosen) @ candidate).max() > 1.0 - 1e-9:
                candidate = _farthest_sample(samples, np.stack(chosen))
            chosen.append(candidate)
    else:
        chosen.append(samples[0])
        while len(chosen) < count:
            chosen.append(_farthest_sample(samples, np.stack(chosen)))
    return np.stack(chosen)


def density_levels(samples: np.ndarray, mass: np.ndarray, mu: np.ndarray, r: float) -> tuple[float, ...]:
    e = em_step_e(samples, mu, r).e
    totals = e.sum(axis=0)
    levels = (e * mass[:, None]).sum(axis=0) / np.maximum(totals, 1e-300)
    return tuple(float(v) for v in levels)


def fit_prototypes_from_samples(
    samples: np.ndarray,
    count: int,
    r: float,
    max_iter: int = 50,
    tol: float = 1e-6,
    mass: np.ndarray | None = None,
    weights: np.ndarray | None = None,
) -> PrototypeSet:
    if count < 1:
        raise InvalidHyperparameter(f"prototype count must be >= 1, got {count}")
    if max_iter < 1:
        raise InvalidHyperparameter(f"max_iter must be >= 1, got {max_iter}")
    if len(samples) == 0:
        raise AllSamplesDegenerate("no samples to fit")

    mass = np.ones(len(samples)) if mass is None else np.asarray(mass, dtype=np.float64)
    order = canonical_order(samples, mass)
    samples, mass = samples[order], mass[order]
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)[order]

    mu = initial_prototypes(samples, mass, count)
    trace = [surrogate_objective(samples, mu, r, weights)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        resp = em_step_e(samples, mu, r)
        updated = em_step_m(samples, resp, weights, previous=mu)
        movement = float(np.mean(1.0 - np.sum(mu * updated, axis=1)))
        mu = updated
        trace.append(surrogate_objective(samples, mu, r, weights))
        if movement < tol:
            converged = True
            break

    levels = density_levels(samples, mass, mu, r)
    logger.debug(
        "em_converged" if converged else "em_iteration_cap",
        prototypes=count,
        samples=len(samples),
        iterations=iterations,
        objective=trace[-1],
    )
    return PrototypeSet(Tensor(mu), float(r), iterations, converged, tuple(trace), levels)


def fit_prototypes(
    sdf: SupportDensityFeature,
    count: int,
    r: float,
    max_iter: int = 50,
    tol: float = 1e-6,
    weighted: bool = False,
) -> PrototypeSet:
    """EM on the support density feature; raises AllSamplesDegenerate on an empty support."""
    prepared = prepare_samples(sdf)
    return fit_prototypes_from_samples(
        prepared.samples,
        count,
        r,
        max_iter=max_iter,
        tol=tol,
        mass=prepared.mass,
        weights=prepared.weights if weighted else None,
    )


def encode_similarity(proto: PrototypeSet, query: FeatureMap) -> LocalDensitySimilarityMatrix:
    """Cosine between every prototype and every query column; zero columns map to 0."""
    channels, height, width = query.data.shape
    if proto.mu.shape[1] != channels:
        raise ShapeMismatch(f"prototypes have {proto.mu.shape[1]} channels, query has {channels}")
    flat = reshape(query.data, (channels, height * width))
    norms = column_norm(flat, axis=0)
    planes = []
    for v in range(proto.count):
        direction = Tensor(proto.mu.data[v : v + 1])
        planes.append(reshape(matmul(direction, flat) / norms, (1, height, width)))
    return LocalDensitySimilarityMatrix(concat(planes, axis=0), planes)
