"""Transformation functions applied to time differences before they enter utility."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import overload

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

__all__ = (
    "InvalidSpecError",
    "TransformDomainError",
    "TransformKind",
    "TransformSpec",
    "eval_transform",
    "transform_gradient",
)

# Below this threshold the soft threshold functions are evaluated as the identity.
SMALL_ALPHA = 1e-8

# Switch to a series expansion of u - tanh(u) below this argument.
_SERIES_CUTOFF = 0.05


class InvalidSpecError(ValueError):
    """Raised when a transformation or utility specification is inconsistent."""


class TransformDomainError(ValueError):
    """Raised when a transformation is evaluated at a non-finite time difference."""


class TransformKind(enum.Enum):
    """The supported attribute transformations."""

    LINEAR = "linear"
    HTF = "htf"
    STF1 = "stf1"
    STF2 = "stf2"
    POWER = "power"
    REVERTING = "reverting"

    @property
    def has_alpha(self) -> bool:
        """True if the transformation carries a threshold or exponent parameter."""
        return self is not TransformKind.LINEAR

    @property
    def nests_linear(self) -> bool:
        """
        True if the linear model is a special case of this transformation.

        The threshold kinds reduce to the identity as alpha approaches 0 (HTF also shifts by a
        vanishing amount) and the power function at alpha = 1. The reverting function only
        reaches the identity for alpha -> -inf, outside its parameter space.
        """
        return self in (
            TransformKind.HTF,
            TransformKind.STF1,
            TransformKind.STF2,
            TransformKind.POWER,
        )

    @property
    def has_asymptote(self) -> bool:
        """True if the slope of the transformation tends to one for large differences."""
        return self is not TransformKind.POWER


@dataclass(frozen=True)
class TransformSpec:
    """
    A transformation kind together with its parameter.

    For the threshold kinds `alpha` is a width in minutes; for the power transformation it is a
    dimensionless exponent. Linear ignores `alpha` and always stores None.
    """

    kind: TransformKind
    alpha: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.kind, TransformKind):
            raise InvalidSpecError(f"Unknown transformation kind {self.kind!r}")

        if self.kind is TransformKind.LINEAR:
            object.__setattr__(self, "alpha", None)
            return

        if self.alpha is None:
            raise InvalidSpecError(f"The {self.kind.value} transformation requires alpha")
        alpha = float(self.alpha)
        if not math.isfinite(alpha) or alpha <= 0:
            raise InvalidSpecError(f"alpha must be positive and finite, got {self.alpha!r}")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def parse(cls, name: str, alpha: float | None = None) -> TransformSpec:
        """
        Create a spec from a command-line name such as ``"stf1"``.

        A missing alpha defaults to 1.0, the starting value used for estimation.
        """
        try:
            kind = TransformKind(name.lower())
        except ValueError:
            choices = ", ".join(k.value for k in TransformKind)
            raise InvalidSpecError(f"Unknown transformation {name!r}; expected one of {choices}")

        if kind.has_alpha and alpha is None:
            alpha = 1.0
        return cls(kind, alpha)

    def with_alpha(self, alpha: float | None) -> TransformSpec:
        """Return a copy with a different alpha."""
        return replace(self, alpha=alpha)

    @property
    def is_linear_limit(self) -> bool:
        """True if a soft threshold is so narrow that it is evaluated as the identity."""
        return (
            self.kind in (TransformKind.STF1, TransformKind.STF2)
            and self.alpha is not None
            and self.alpha < SMALL_ALPHA
        )


def _as_finite(dt: ArrayLike) -> NDArray[np.float64]:
    x = np.asarray(dt, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise TransformDomainError("Time differences must be finite")
    return x


def _u_minus_tanh(u: NDArray[np.float64]) -> NDArray[np.float64]:
    """Evaluate u - tanh(u) for u >= 0 without cancellation near zero."""
    small = u < _SERIES_CUTOFF
    u2 = u * u
    series = u * u2 * (1 / 3 - u2 * (2 / 15 - u2 * (17 / 315 - u2 * 62 / 2835)))
    direct = u - np.tanh(u)
    return np.where(small, series, np.maximum(direct, 0.0))


def _result(value: NDArray[np.float64], like: ArrayLike) -> float | NDArray[np.float64]:
    return float(value) if np.ndim(like) == 0 else value


@overload
def eval_transform(spec: TransformSpec, dt: float) -> float:
    ...


@overload
def eval_transform(spec: TransformSpec, dt: NDArray[np.float64]) -> NDArray[np.float64]:
    ...


def eval_transform(spec, dt):
    """
    Evaluate the transformation f(dt, alpha) for a time difference in minutes.

    Every kind is evaluated as sign(dt) * g(|dt|), so the result is exactly antisymmetric.
    Accepts a scalar or an array of differences.

    Raises:
        TransformDomainError: If any difference is not finite.
    """
    x = _as_finite(dt)
    a = spec.alpha
    ax = np.abs(x)
    s = np.sign(x)

    match spec.kind:
        case TransformKind.LINEAR:
            out = x + 0.0
        case TransformKind.HTF:
            out = s * np.maximum(ax - a, 0.0)
        case TransformKind.STF1:
            out = x + 0.0 if spec.is_linear_limit else s * a * _u_minus_tanh(ax / a)
        case TransformKind.STF2:
            if spec.is_linear_limit:
                out = x + 0.0
            else:
                u = ax / a
                h = np.hypot(u, 1.0)
                # 1 - 1/h rewritten as u^2 / (h * (h + 1)).
                out = s * ax * (u * u / (h * (h + 1.0)))
        case TransformKind.POWER:
            out = s * ax**a
        case TransformKind.REVERTING:
            out = s * ax * expit(ax - a)
        case _:  # pragma: no cover
            raise InvalidSpecError(f"Unknown transformation kind {spec.kind!r}")

    return _result(out, dt)


def transform_gradient(
    spec: TransformSpec, dt: ArrayLike
) -> tuple[float | NDArray[np.float64], float | NDArray[np.float64]]:
    """
    Return the partial derivatives (df/d_dt, df/d_alpha).

    HTF is not differentiable at |dt| = alpha; there the derivative from the outside branch is
    returned (slope 1, df/d_alpha = -sign(dt)). The power function has both partials set to 0 at
    dt = 0. Linear has df/d_alpha = 0.

    Raises:
        TransformDomainError: If any difference is not finite.
    """
    x = _as_finite(dt)
    a = spec.alpha
    ax = np.abs(x)
    s = np.sign(x)
    zeros = np.zeros_like(x)

    if spec.kind is TransformKind.LINEAR or spec.is_linear_limit:
        return _result(np.ones_like(x), dt), _result(zeros, dt)

    match spec.kind:
        case TransformKind.HTF:
            outside = ax >= a
            d_dt = np.where(outside, 1.0, 0.0)
            d_alpha = np.where(outside, -s, 0.0)
        case TransformKind.STF1:
            u = ax / a
            t = np.tanh(u)
            d_dt = t * t
            d_alpha = s * (_u_minus_tanh(u) - u * t * t)
        case TransformKind.STF2:
            u = ax / a
            h = np.hypot(u, 1.0)
            r = u / h
            d_dt = u * u / (h * (h + 1.0)) + r * r / h
            d_alpha = -s * r**3
        case TransformKind.POWER:
            positive = ax > 0
            safe = np.where(positive, ax, 1.0)
            d_dt = np.where(positive, a * safe ** (a - 1.0), 0.0)
            d_alpha = np.where(positive, s * safe**a * np.log(safe), 0.0)
        case TransformKind.REVERTING:
            p = expit(ax - a)
            dp = p * (1.0 - p)
            d_dt = p + ax * dp
            d_alpha = -s * ax * dp
        case _:  # pragma: no cover
            raise InvalidSpecError(f"Unknown transformation kind {spec.kind!r}")

    return _result(d_dt, dt), _result(d_alpha, dt)
