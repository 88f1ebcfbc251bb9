"""Systematic utility and the binary logit likelihood."""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from vttsbox.transforms import (
    InvalidSpecError,
    TransformKind,
    TransformSpec,
    eval_transform,
    transform_gradient,
)

__all__ = (
    "ChoiceData",
    "ChoiceRecord",
    "EmptyDataError",
    "InvalidRecordError",
    "ParameterSet",
    "UtilitySpec",
    "choice_probability",
    "likelihood_gradient",
    "log_likelihood",
    "null_log_likelihood",
    "systematic_utility",
    "utility_vector",
)

LINEAR = TransformSpec(TransformKind.LINEAR)


class EmptyDataError(ValueError):
    """Raised when a likelihood is requested for an empty dataset."""


class InvalidRecordError(ValueError):
    """Raised when a choice observation has invalid attribute values."""


@dataclass(frozen=True)
class ChoiceRecord:
    """
    One binary choice observation.

    Differences are taken as alternative 1 minus alternative 2. Missing income or mean trip time
    means "at the normalisation mean", so the corresponding elasticity factor is 1.
    """

    dt: float
    dc: float
    chose_alt1: bool
    dh: float = 0.0
    dk: float = 0.0
    income: float | None = None
    mean_trip_time: float | None = None
    group: int = 0

    def __post_init__(self) -> None:
        for name in ("dt", "dc", "dh", "dk"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidRecordError(f"{name} must be finite, got {getattr(self, name)!r}")
        for name in ("income", "mean_trip_time"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise InvalidRecordError(f"{name} must be positive, got {value!r}")
        if self.group < 0:
            raise InvalidRecordError(f"group must be non-negative, got {self.group}")


@dataclass(frozen=True, eq=False)
class ChoiceData:
    """Columnar view of a list of records; missing incomes and trip times are NaN."""

    dt: NDArray[np.float64]
    dc: NDArray[np.float64]
    chose_alt1: NDArray[np.bool_]
    dh: NDArray[np.float64]
    dk: NDArray[np.float64]
    income: NDArray[np.float64]
    mean_trip_time: NDArray[np.float64]
    group: NDArray[np.int64]

    @classmethod
    def from_records(cls, records: Sequence[ChoiceRecord]) -> ChoiceData:
        """Convert records into columns."""

        def column(name: str, dtype: type = np.float64) -> NDArray:
            values = [getattr(r, name) for r in records]
            if dtype is np.float64:
                values = [np.nan if v is None else v for v in values]
            return np.asarray(values, dtype=dtype)

        return cls(
            dt=column("dt"),
            dc=column("dc"),
            chose_alt1=column("chose_alt1", np.bool_),
            dh=column("dh"),
            dk=column("dk"),
            income=column("income"),
            mean_trip_time=column("mean_trip_time"),
            group=column("group", np.int64),
        )

    @classmethod
    def coerce(cls, data: Sequence[ChoiceRecord] | ChoiceData) -> ChoiceData:
        """Return `data` as ChoiceData, converting a record list if needed."""
        return data if isinstance(data, ChoiceData) else cls.from_records(data)

    def to_records(self) -> list[ChoiceRecord]:
        """Convert the columns back into records."""

        def optional(value: float) -> float | None:
            return None if math.isnan(value) else float(value)

        return [
            ChoiceRecord(
                dt=float(self.dt[i]),
                dc=float(self.dc[i]),
                chose_alt1=bool(self.chose_alt1[i]),
                dh=float(self.dh[i]),
                dk=float(self.dk[i]),
                income=optional(self.income[i]),
                mean_trip_time=optional(self.mean_trip_time[i]),
                group=int(self.group[i]),
            )
            for i in range(len(self))
        ]

    def __len__(self) -> int:
        return len(self.dt)

    @property
    def n_groups(self) -> int:
        """Number of scale groups implied by the largest group id."""
        return int(self.group.max()) + 1 if len(self) else 1


@dataclass(frozen=True)
class UtilitySpec:
    """
    Which terms enter the systematic utility difference.

    `income_mean` and `time_mean` are the normalisation constants of the elasticity terms; None
    means "use the estimation sample mean" and is resolved by `resolve`.
    """

    transform: TransformSpec = LINEAR
    use_headway: bool = False
    use_changes: bool = False
    use_income_elasticity: bool = False
    use_time_elasticity: bool = False
    n_groups: int = 1
    income_mean: float | None = None
    time_mean: float | None = None

    def __post_init__(self) -> None:
        if self.n_groups < 1:
            raise InvalidSpecError(f"n_groups must be at least 1, got {self.n_groups}")
        for name in ("income_mean", "time_mean"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise InvalidSpecError(f"{name} must be positive, got {value!r}")

    @property
    def kind(self) -> TransformKind:
        return self.transform.kind

    def parameter_names(self) -> tuple[str, ...]:
        """Names of the free parameters in their canonical order."""
        names = ["beta_t", "beta_c"]
        if self.kind.has_alpha:
            names.append("alpha")
        if self.use_headway:
            names.append("beta_h")
        if self.use_changes:
            names.append("beta_k")
        if self.use_income_elasticity:
            names.append("lambda_i")
        if self.use_time_elasticity:
            names.append("lambda_t")
        names.extend(f"scale_{g}" for g in range(1, self.n_groups))
        return tuple(names)

    def positive_parameters(self) -> tuple[str, ...]:
        """Parameters restricted to be positive (alpha and the scales)."""
        return tuple(n for n in self.parameter_names() if n == "alpha" or n.startswith("scale_"))

    def with_transform(self, transform: TransformSpec) -> UtilitySpec:
        return replace(self, transform=transform)

    def resolve(self, data: ChoiceData) -> UtilitySpec:
        """Fill in the normalisation means from `data` where they are not set."""

        def mean(values: NDArray[np.float64]) -> float:
            present = values[~np.isnan(values)]
            return float(present.mean()) if present.size else 1.0

        return replace(
            self,
            income_mean=self.income_mean if self.income_mean else mean(data.income),
            time_mean=self.time_mean if self.time_mean else mean(data.mean_trip_time),
        )


@dataclass(frozen=True)
class ParameterSet:
    """Values of the utility parameters. Optional terms are None when not part of the spec."""

    beta_t: float
    beta_c: float
    alpha: float | None = None
    beta_h: float | None = None
    beta_k: float | None = None
    lambda_i: float | None = None
    lambda_t: float | None = None
    scales: tuple[float, ...] = field(default=(1.0,))

    def __post_init__(self) -> None:
        scales = tuple(float(s) for s in self.scales)
        if not scales or scales[0] != 1.0:
            raise InvalidSpecError("The scale of the reference group 0 is fixed to 1")
        if any(not (math.isfinite(s) and s > 0) for s in scales):
            raise InvalidSpecError(f"Scales must be positive, got {scales}")
        object.__setattr__(self, "scales", scales)

    @classmethod
    def zero(cls, spec: UtilitySpec) -> ParameterSet:
        """All coefficients 0 and all scales 1; alpha is taken from the spec's transform."""
        return cls.from_vector(
            [
                spec.transform.alpha if n == "alpha" else 1.0 if n.startswith("scale_") else 0.0
                for n in spec.parameter_names()
            ],
            spec,
        )

    @classmethod
    def from_vector(cls, values: ArrayLike, spec: UtilitySpec) -> ParameterSet:
        """Build a parameter set from a vector ordered as `spec.parameter_names()`."""
        names = spec.parameter_names()
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(names),):
            raise InvalidSpecError(f"Expected {len(names)} parameters, got shape {values.shape}")

        named = dict(zip(names, (float(v) for v in values)))
        scales = (1.0, *(named.pop(f"scale_{g}") for g in range(1, spec.n_groups)))
        return cls(scales=scales, **named)

    def to_vector(self, spec: UtilitySpec) -> NDArray[np.float64]:
        """Return the values ordered as `spec.parameter_names()`."""
        self.check(spec)
        return np.array([self.get(n) for n in spec.parameter_names()], dtype=np.float64)

    def get(self, name: str) -> float:
        """Return a parameter by its canonical name."""
        if name.startswith("scale_"):
            return self.scales[int(name.removeprefix("scale_"))]
        value = getattr(self, name)
        if value is None:
            raise InvalidSpecError(f"Parameter {name!r} is not set")
        return value

    def check(self, spec: UtilitySpec) -> None:
        """
        Verify that the parameters match the spec.

        Raises:
            InvalidSpecError: If a required term is missing, an unused term is set, alpha is not
                positive, or the number of scales differs from the number of groups.
        """
        expected = {
            "alpha": spec.kind.has_alpha,
            "beta_h": spec.use_headway,
            "beta_k": spec.use_changes,
            "lambda_i": spec.use_income_elasticity,
            "lambda_t": spec.use_time_elasticity,
        }
        for name, required in expected.items():
            present = getattr(self, name) is not None
            if present != required:
                state = "missing" if required else "not part of the spec"
                raise InvalidSpecError(f"Parameter {name!r} is {state}")
        if spec.kind.has_alpha and not self.alpha > 0:
            raise InvalidSpecError(f"alpha must be positive, got {self.alpha!r}")
        if len(self.scales) != spec.n_groups:
            raise InvalidSpecError(
                f"Expected {spec.n_groups} scale parameters, got {len(self.scales)}"
            )

    def transform(self, spec: UtilitySpec) -> TransformSpec:
        """The spec's transformation evaluated at the estimated alpha."""
        return spec.transform.with_alpha(self.alpha)


@dataclass(frozen=True, eq=False)
class _Terms:
    """Intermediate quantities shared by the likelihood and its gradient."""

    f: NDArray[np.float64]
    cost_factor: NDArray[np.float64]
    log_income: NDArray[np.float64]
    log_time: NDArray[np.float64]
    v: NDArray[np.float64]
    scale: NDArray[np.float64]

    @property
    def z(self) -> NDArray[np.float64]:
        return self.scale * self.v


def _log_ratio(values: NDArray[np.float64], mean: float | None) -> NDArray[np.float64]:
    if mean is None:
        return np.zeros_like(values)
    return np.where(np.isnan(values), 0.0, np.log(np.where(np.isnan(values), 1.0, values) / mean))


def _terms(params: ParameterSet, data: ChoiceData, spec: UtilitySpec) -> _Terms:
    params.check(spec)
    if len(data) and int(data.group.max()) >= spec.n_groups:
        raise InvalidSpecError(
            f"Data contains group {int(data.group.max())} but the spec has {spec.n_groups} groups"
        )

    f = np.asarray(eval_transform(params.transform(spec), data.dt))
    log_income = _log_ratio(data.income, spec.income_mean)
    log_time = _log_ratio(data.mean_trip_time, spec.time_mean)

    exponent = np.zeros_like(f)
    if spec.use_income_elasticity:
        exponent = exponent + params.lambda_i * log_income
    if spec.use_time_elasticity:
        exponent = exponent + params.lambda_t * log_time
    cost_factor = np.exp(exponent)

    v = params.beta_t * f + params.beta_c * data.dc * cost_factor
    if spec.use_headway:
        v = v + params.beta_h * data.dh
    if spec.use_changes:
        v = v + params.beta_k * data.dk

    scale = np.asarray(params.scales)[data.group]
    return _Terms(f, cost_factor, log_income, log_time, v, scale)


def systematic_utility(record: ChoiceRecord, params: ParameterSet, spec: UtilitySpec) -> float:
    """
    Return the systematic utility difference of one record, before group scaling.

    The choice probability uses ``params.scales[record.group]`` times this value.

    Raises:
        InvalidSpecError: If the parameters do not match the spec.
    """
    data = ChoiceData.from_records([record])
    return float(_terms(params, data, spec).v[0])


def utility_vector(
    params: ParameterSet, data: Sequence[ChoiceRecord] | ChoiceData, spec: UtilitySpec
) -> NDArray[np.float64]:
    """Return the scaled utility differences of all observations."""
    return _terms(params, ChoiceData.coerce(data), spec).z


def choice_probability(dv: ArrayLike) -> float | NDArray[np.float64]:
    """Probability of choosing alternative 1 given the (scaled) utility difference."""
    p = expit(np.asarray(dv, dtype=np.float64))
    return float(p) if np.ndim(dv) == 0 else p


def _signed(data: ChoiceData) -> NDArray[np.float64]:
    return np.where(data.chose_alt1, 1.0, -1.0)


def log_likelihood(
    params: ParameterSet, data: Sequence[ChoiceRecord] | ChoiceData, spec: UtilitySpec
) -> float:
    """
    Sum of log P(observed choice) over all observations.

    Uses log P = -log(1 + exp(-q*z)) with q = +1/-1 for the chosen side, evaluated with
    `numpy.logaddexp` so large utility differences neither overflow nor round to log(0).

    Raises:
        EmptyDataError: If there are no observations.
    """
    data = ChoiceData.coerce(data)
    if not len(data):
        raise EmptyDataError("The log-likelihood of an empty dataset is undefined")
    z = _terms(params, data, spec).z
    return float(-np.logaddexp(0.0, -_signed(data) * z).sum())


def null_log_likelihood(n_obs: int) -> float:
    """Log-likelihood of the equal-shares model: n * ln(1/2)."""
    return n_obs * math.log(0.5)


def likelihood_gradient(
    params: ParameterSet, data: Sequence[ChoiceRecord] | ChoiceData, spec: UtilitySpec
) -> NDArray[np.float64]:
    """
    Analytic gradient of `log_likelihood` ordered as `spec.parameter_names()`.

    Raises:
        EmptyDataError: If there are no observations.
    """
    data = ChoiceData.coerce(data)
    if not len(data):
        raise EmptyDataError("The log-likelihood of an empty dataset is undefined")

    t = _terms(params, data, spec)
    # d logL / dz for each observation.
    residual = np.where(data.chose_alt1, 1.0, 0.0) - expit(t.z)
    weighted = residual * t.scale
    cost = data.dc * t.cost_factor

    grad: dict[str, float] = {
        "beta_t": weighted @ t.f,
        "beta_c": weighted @ cost,
    }
    if spec.kind.has_alpha:
        _, d_alpha = transform_gradient(params.transform(spec), data.dt)
        grad["alpha"] = params.beta_t * (weighted @ np.asarray(d_alpha))
    if spec.use_headway:
        grad["beta_h"] = weighted @ data.dh
    if spec.use_changes:
        grad["beta_k"] = weighted @ data.dk
    if spec.use_income_elasticity:
        grad["lambda_i"] = params.beta_c * (weighted @ (cost * t.log_income))
    if spec.use_time_elasticity:
        grad["lambda_t"] = params.beta_c * (weighted @ (cost * t.log_time))
    for g in range(1, spec.n_groups):
        members = data.group == g
        grad[f"scale_{g}"] = residual[members] @ t.v[members]

    return np.array([grad[n] for n in spec.parameter_names()], dtype=np.float64)
