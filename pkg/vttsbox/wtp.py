"""Values of travel time savings and their confidence intervals."""
from __future__ import annotations

import enum
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit
from scipy.stats import norm

from vttsbox.likelihood import ChoiceData, ParameterSet, utility_vector
from vttsbox.transforms import TransformKind, TransformSpec, eval_transform

__all__ = (
    "CiMethod",
    "ConfidenceInterval",
    "CovarianceError",
    "UnboundedInterval",
    "UndefinedVtts",
    "VttsSummary",
    "ZeroCostCoefficientError",
    "asymptotic_vtts",
    "default_curve_grid",
    "summarize_vtts",
    "utility_curve",
    "vtts_at",
    "vtts_ci_fieller",
    "vtts_ci_simulation",
    "vtts_curve",
)

log = logging.getLogger(__name__)

MINUTES_PER_HOUR = 60.0
MIN_DRAWS = 1000


class CovarianceError(ValueError):
    """Raised when a covariance matrix is not symmetric positive (semi-)definite."""


class ZeroCostCoefficientError(ValueError):
    """Raised when the VTTS is requested for a zero cost coefficient."""


class CiMethod(enum.Enum):
    SIMULATION = "sim"
    FIELLER = "fieller"


@dataclass(frozen=True)
class ConfidenceInterval:
    """A bounded interval for the asymptotic VTTS in cost units per hour."""

    low: float
    high: float
    level: float
    method: CiMethod
    draws: int | None = None
    seed: int | None = None

    def __contains__(self, value: float) -> bool:
        return self.low <= value <= self.high

    @property
    def width(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class UnboundedInterval:
    """The cost coefficient is not significantly different from zero at `level`."""

    level: float
    denominator_t: float
    method: CiMethod = CiMethod.FIELLER


@dataclass(frozen=True)
class UndefinedVtts:
    """
    The asymptotic VTTS does not exist for this transformation.

    `diagnostic_ratio` is 60 * beta_t / beta_c, the value a naive ratio would report.
    """

    diagnostic_ratio: float
    reason: str = "the power transformation has no asymptotic VTTS"


@dataclass(frozen=True)
class VttsSummary:
    """Asymptotic VTTS, its interval and the VTTS curve of one fitted model."""

    kind: TransformKind
    asymptotic_vtts: float | UndefinedVtts
    interval: ConfidenceInterval | UnboundedInterval | None
    method: CiMethod
    level: float
    curve: tuple[tuple[float, float], ...]
    draws: int | None = None
    seed: int | None = None

    @property
    def point(self) -> float | None:
        return None if isinstance(self.asymptotic_vtts, UndefinedVtts) else self.asymptotic_vtts


def _ratio(beta_t: float, beta_c: float) -> float:
    if beta_c == 0:
        raise ZeroCostCoefficientError("The VTTS is undefined for a zero cost coefficient")
    return beta_t / beta_c


def _at_zero(ratio: float, spec: TransformSpec) -> float:
    """Limit of the VTTS as dt approaches 0."""
    match spec.kind:
        case TransformKind.LINEAR:
            return ratio
        case TransformKind.HTF:
            return 0.0
        case TransformKind.STF1 | TransformKind.STF2:
            return ratio if spec.is_linear_limit else 0.0
        case TransformKind.POWER:
            if spec.alpha > 1:
                return 0.0
            if spec.alpha == 1:
                return ratio
            return math.copysign(math.inf, ratio) if ratio else 0.0
        case TransformKind.REVERTING:
            return ratio * float(expit(-spec.alpha))
    raise ValueError(f"Unknown transformation kind {spec.kind!r}")  # pragma: no cover


def vtts_curve(params: ParameterSet, spec: TransformSpec, dts: ArrayLike) -> NDArray[np.float64]:
    """
    VTTS in cost units per hour at each time difference in `dts` (minutes).

    The VTTS is 60 * (beta_t / beta_c) * f(dt) / dt, which for each transformation equals its
    closed form; at dt = 0 the analytic limit is used. Cost elasticity terms are evaluated at
    their normalisation means, where they equal 1.

    Raises:
        ZeroCostCoefficientError: If beta_c is 0.
    """
    ratio = _ratio(params.beta_t, params.beta_c)
    dt = np.asarray(dts, dtype=np.float64)
    nonzero = dt != 0
    safe = np.where(nonzero, dt, 1.0)
    slope = np.asarray(eval_transform(spec, safe)) / safe
    return MINUTES_PER_HOUR * np.where(nonzero, ratio * slope, _at_zero(ratio, spec))


def vtts_at(params: ParameterSet, spec: TransformSpec, dt: float) -> float:
    """
    VTTS in cost units per hour at a time difference of `dt` minutes.

    Raises:
        ZeroCostCoefficientError: If beta_c is 0.
    """
    return float(vtts_curve(params, spec, dt))


def default_curve_grid() -> NDArray[np.float64]:
    """Time differences from -25 to 25 minutes in steps of 0.25, without 0."""
    steps = np.arange(-100, 101)
    return steps[steps != 0] * 0.25


def asymptotic_vtts(params: ParameterSet, spec: TransformSpec) -> float | UndefinedVtts:
    """
    The VTTS for large time differences, 60 * beta_t / beta_c.

    For the power transformation the VTTS keeps growing (or shrinking) with |dt|, so an
    `UndefinedVtts` marker carrying the ratio is returned instead.

    Raises:
        ZeroCostCoefficientError: If beta_c is 0.
    """
    value = MINUTES_PER_HOUR * _ratio(params.beta_t, params.beta_c)
    if not spec.kind.has_asymptote:
        return UndefinedVtts(value)
    return value


def _check_level(level: float) -> None:
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level!r}")


def _moments(mean: ArrayLike, cov: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    mean = np.asarray(mean, dtype=np.float64).reshape(2)
    cov = np.asarray(cov, dtype=np.float64).reshape(2, 2)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise CovarianceError("Mean and covariance must be finite")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=0.0):
        raise CovarianceError("The covariance matrix is not symmetric")
    return mean, cov


def vtts_ci_simulation(
    mean: Sequence[float] | ArrayLike,
    cov: ArrayLike,
    draws: int = 100_000,
    level: float = 0.95,
    seed: int = 0,
) -> ConfidenceInterval:
    """
    Interval of 60 * beta_t / beta_c from draws of the bivariate normal (beta_t, beta_c).

    Draws are ``mean + L @ z`` with L the Cholesky factor of `cov` and z standard normal pairs
    from ``numpy.random.default_rng(seed)``. The bounds are the (1 - level) / 2 and
    (1 + level) / 2 percentiles of the ratios with linear interpolation between order
    statistics. A zero covariance gives the point ratio as both bounds.
    Scaling both coefficients by c > 0 reproduces the bounds exactly for the same seed; for
    c < 0 the draws are mirrored and the bounds agree up to simulation noise.

    Raises:
        CovarianceError: If `cov` is not symmetric positive definite (and not zero).
        ZeroCostCoefficientError: If the covariance is zero and beta_c is 0.
        ValueError: If `draws` is below 1000 or `level` is not in (0, 1).
    """
    _check_level(level)
    if draws < MIN_DRAWS:
        raise ValueError(f"At least {MIN_DRAWS} draws are required, got {draws}")
    mean, cov = _moments(mean, cov)

    if not np.any(cov):
        point = MINUTES_PER_HOUR * _ratio(mean[0], mean[1])
        return ConfidenceInterval(point, point, level, CiMethod.SIMULATION, draws, seed)

    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise CovarianceError("The covariance matrix is not positive definite")

    rng = np.random.default_rng(seed)
    samples = mean + rng.standard_normal((draws, 2)) @ factor.T
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = MINUTES_PER_HOUR * samples[:, 0] / samples[:, 1]

    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(ratios, [tail, 100.0 - tail], method="linear")
    return ConfidenceInterval(float(low), float(high), level, CiMethod.SIMULATION, draws, seed)


def vtts_ci_fieller(
    mean: Sequence[float] | ArrayLike, cov: ArrayLike, level: float = 0.95
) -> ConfidenceInterval | UnboundedInterval:
    """
    Fieller interval of 60 * beta_t / beta_c.

    The bounds are the roots in r of (a - r b)^2 = t^2 (v_aa - 2 r v_ab + r^2 v_bb), with t the
    two-sided normal critical value. When b^2 <= t^2 v_bb the cost coefficient is not
    significantly different from zero and the set is unbounded.

    Raises:
        CovarianceError: If `cov` is not symmetric positive semi-definite.
        ZeroCostCoefficientError: If the covariance is zero and beta_c is 0.
        ValueError: If `level` is not in (0, 1).
    """
    _check_level(level)
    (a, b), cov = _moments(mean, cov)
    eigenvalues = np.linalg.eigvalsh(cov)
    if eigenvalues[0] < -1e-12 * max(abs(eigenvalues[-1]), 1e-300):
        raise CovarianceError("The covariance matrix is not positive semi-definite")

    t2 = float(norm.ppf((1.0 + level) / 2.0)) ** 2
    v_aa, v_ab, v_bb = cov[0, 0], cov[0, 1], cov[1, 1]
    if not np.any(cov):
        point = MINUTES_PER_HOUR * _ratio(a, b)
        return ConfidenceInterval(point, point, level, CiMethod.FIELLER)

    quad = b * b - t2 * v_bb
    if quad <= 0:
        return UnboundedInterval(level, abs(b) / math.sqrt(v_bb))

    linear = a * b - t2 * v_ab
    const = a * a - t2 * v_aa
    root = math.sqrt(max(linear * linear - quad * const, 0.0))
    low, high = sorted(MINUTES_PER_HOUR * (linear + s * root) / quad for s in (-1.0, 1.0))
    return ConfidenceInterval(float(low), float(high), level, CiMethod.FIELLER)


def summarize_vtts(
    result,
    method: CiMethod = CiMethod.SIMULATION,
    level: float = 0.95,
    draws: int = 100_000,
    seed: int = 0,
    grid: ArrayLike | None = None,
) -> VttsSummary:
    """
    VTTS curve, asymptotic VTTS and its interval for a `FitResult`.

    Raises:
        CovarianceError: If the fit has no covariance matrix but an interval is required.
        ZeroCostCoefficientError: If the estimated cost coefficient is 0.
    """
    params = result.estimates
    spec = params.transform(result.spec)
    dts = default_curve_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    curve = tuple(zip(dts.tolist(), vtts_curve(params, spec, dts).tolist()))
    point = asymptotic_vtts(params, spec)

    interval = None
    if isinstance(point, UndefinedVtts):
        log.warning(f"No asymptotic VTTS for the {spec.kind.value} model: {point.reason}.")
    else:
        cov = result.covariance_of(("beta_t", "beta_c"))
        if cov is None:
            raise CovarianceError(f"The fit has no covariance matrix: {result.message}")
        mean = (params.beta_t, params.beta_c)
        if method is CiMethod.SIMULATION:
            interval = vtts_ci_simulation(mean, cov, draws, level, seed)
        else:
            interval = vtts_ci_fieller(mean, cov, level)

    simulated = method is CiMethod.SIMULATION
    return VttsSummary(
        kind=spec.kind,
        asymptotic_vtts=point,
        interval=interval,
        method=method,
        level=level,
        curve=curve,
        draws=draws if simulated else None,
        seed=seed if simulated else None,
    )


def utility_curve(
    result, dts: ArrayLike | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Estimated utility difference of a `FitResult` as a function of the time difference alone.

    Every other attribute difference is 0, incomes and trip times sit at their normalisation
    means and the reference group is used, so the values are beta_t * f(dt).
    """
    dt = default_curve_grid() if dts is None else np.asarray(dts, dtype=np.float64)
    zeros = np.zeros_like(dt)
    data = ChoiceData(
        dt=dt,
        dc=zeros,
        chose_alt1=np.zeros(dt.shape, dtype=np.bool_),
        dh=zeros,
        dk=zeros,
        income=np.full_like(dt, np.nan),
        mean_trip_time=np.full_like(dt, np.nan),
        group=np.zeros(dt.shape, dtype=np.int64),
    )
    return dt, utility_vector(result.estimates, data, result.spec)
