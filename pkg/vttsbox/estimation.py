"""Maximum likelihood estimation of the threshold logit models."""
from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray
from scipy import optimize
from scipy.special import expit
from scipy.stats import norm

from vttsbox.likelihood import (
    LINEAR,
    ChoiceData,
    ChoiceRecord,
    EmptyDataError,
    ParameterSet,
    UtilitySpec,
    likelihood_gradient,
    log_likelihood,
    null_log_likelihood,
    utility_vector,
)
from vttsbox.transforms import InvalidSpecError, TransformKind

__all__ = ("FitOptions", "FitResult", "fit", "wald_test")

log = logging.getLogger(__name__)

HTF_ALPHA_NOTE = (
    "The HTF log-likelihood has a kink in alpha at every observed |dt|; the standard error of "
    "alpha comes from a central difference over the HTF alpha step and is approximate."
)

# Fallback start for soft thresholds when the default start ends below the linear fit.
_NARROW_ALPHA = 0.01


@dataclass(frozen=True)
class FitOptions:
    """
    Numerical settings of `fit`.

    Attributes:
        gtol: Convergence tolerance on the max-norm of the gradient of the free parameters.
        maxiter: Iteration cap of the quasi-Newton optimiser.
        newton_steps: Newton refinement steps taken when BFGS stops above `gtol`.
        alpha_start: Starting alpha for the smooth kinds; None uses the spec's alpha.
        htf_grid_step: Step in minutes of the profile-likelihood grid over the HTF alpha.
        htf_alpha_step: Difference step in minutes for the HTF alpha in the Hessian.
        hessian_step: Relative difference step for all other parameters in the Hessian.
        separation_tol: Fits whose every observed choice has probability above 1 - tol are
            reported as perfectly separated.
    """

    gtol: float = 1e-6
    maxiter: int = 500
    newton_steps: int = 20
    alpha_start: float | None = None
    htf_grid_step: float = 0.25
    htf_alpha_step: float = 0.25
    hessian_step: float = 1e-5
    separation_tol: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("gtol", "htf_grid_step", "htf_alpha_step", "hessian_step", "separation_tol"):
            if not getattr(self, name) > 0:
                raise InvalidSpecError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.maxiter < 1 or self.newton_steps < 0:
            raise InvalidSpecError("maxiter must be positive and newton_steps non-negative")
        if self.alpha_start is not None and not self.alpha_start > 0:
            raise InvalidSpecError(f"alpha_start must be positive, got {self.alpha_start!r}")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Estimates and diagnostics of one maximum likelihood fit."""

    estimates: ParameterSet
    covariance: NDArray[np.float64] | None
    std_errors: NDArray[np.float64] | None
    final_ll: float
    null_ll: float
    converged: bool
    n_obs: int
    n_free_params: int
    spec: UtilitySpec
    start_ll: float
    iterations: int
    gradient_max_norm: float
    message: str = ""
    alpha_se_note: str | None = None

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return self.spec.parameter_names()

    @property
    def rho_squared(self) -> float:
        return 1.0 - self.final_ll / self.null_ll

    def estimate(self, name: str) -> float:
        return self.estimates.get(name)

    def std_error(self, name: str) -> float | None:
        """Standard error of a parameter, or None if the covariance is unavailable."""
        if self.std_errors is None:
            return None
        return float(self.std_errors[self.parameter_names.index(name)])

    def covariance_of(self, names: Sequence[str]) -> NDArray[np.float64] | None:
        """Sub-matrix of the covariance for the given parameters."""
        if self.covariance is None:
            return None
        index = [self.parameter_names.index(n) for n in names]
        return self.covariance[np.ix_(index, index)]

    def wald(self, name: str, target: float) -> float:
        """
        Two-sided p-value of the hypothesis that a parameter equals `target`.

        Raises:
            ValueError: If no standard error is available.
        """
        se = self.std_error(name)
        if se is None:
            raise ValueError(f"No standard error available for {name!r}: {self.message}")
        return wald_test(self.estimate(name), se, target)


def wald_test(estimate: float, std_error: float, target: float) -> float:
    """
    Two-sided normal p-value of (estimate - target) / std_error.

    Raises:
        ValueError: If the standard error is not positive.
    """
    if not std_error > 0:
        raise ValueError(f"std_error must be positive, got {std_error!r}")
    return float(2.0 * norm.sf(abs((estimate - target) / std_error)))


class _Objective:
    """
    Negative log-likelihood over an unconstrained vector.

    Positive parameters (alpha and scales) are represented by their logarithm; parameters listed
    in `fixed` are held at the given natural value.
    """

    def __init__(self, data: ChoiceData, spec: UtilitySpec, fixed: dict[str, float] | None = None):
        self.data = data
        self.spec = spec
        self.names = spec.parameter_names()
        self.fixed = fixed or {}
        self.free = np.array([i for i, n in enumerate(self.names) if n not in self.fixed], int)
        positive = spec.positive_parameters()
        self.log_scaled = np.array([self.names[i] in positive for i in self.free], bool)

    def natural(self, theta: NDArray[np.float64]) -> NDArray[np.float64]:
        full = np.array([self.fixed.get(n, np.nan) for n in self.names], dtype=np.float64)
        values = np.array(theta, dtype=np.float64)
        values[self.log_scaled] = np.exp(np.clip(values[self.log_scaled], -700.0, 700.0))
        full[self.free] = values
        return full

    def theta(self, natural: NDArray[np.float64]) -> NDArray[np.float64]:
        values = np.array(natural, dtype=np.float64)[self.free]
        values[self.log_scaled] = np.log(values[self.log_scaled])
        return values

    def params(self, theta: NDArray[np.float64]) -> ParameterSet:
        return ParameterSet.from_vector(self.natural(theta), self.spec)

    def __call__(self, theta: NDArray[np.float64]) -> float:
        value = -log_likelihood(self.params(theta), self.data, self.spec)
        return value if math.isfinite(value) else math.inf

    def gradient(self, theta: NDArray[np.float64]) -> NDArray[np.float64]:
        natural = self.natural(theta)
        params = ParameterSet.from_vector(natural, self.spec)
        grad = likelihood_gradient(params, self.data, self.spec)
        chain = np.where(self.log_scaled, natural[self.free], 1.0)
        return -grad[self.free] * chain


@dataclass(frozen=True)
class _Optimum:
    params: ParameterSet
    ll: float
    start_ll: float
    gradient_max_norm: float
    iterations: int
    converged: bool
    message: str


def _numerical_hessian(
    gradient: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    x: NDArray[np.float64],
    steps: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Central differences of an analytic gradient, symmetrised. Columns are filled in order."""
    k = len(x)
    hessian = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = steps[j]
        hessian[:, j] = (gradient(x + e) - gradient(x - e)) / (2.0 * steps[j])
    return (hessian + hessian.T) / 2.0


def _newton_refine(
    objective: _Objective, theta: NDArray[np.float64], options: FitOptions
) -> tuple[NDArray[np.float64], NDArray[np.float64], int]:
    """Take Newton steps with backtracking until the gradient criterion holds."""
    grad = objective.gradient(theta)
    taken = 0
    for _ in range(options.newton_steps):
        if not grad.size or np.max(np.abs(grad)) <= options.gtol:
            break

        steps = options.hessian_step * np.maximum(np.abs(theta), 1.0)
        hessian = _numerical_hessian(objective.gradient, theta, steps)
        try:
            np.linalg.cholesky(hessian)
            direction = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            log.debug("Newton refinement stopped: Hessian is not positive definite.")
            break

        current = objective(theta)
        t = 1.0
        for _ in range(30):
            candidate = theta - t * direction
            if objective(candidate) <= current:
                break
            t /= 2
        else:
            break

        theta = candidate
        grad = objective.gradient(theta)
        taken += 1
    return theta, grad, taken


def _maximize(objective: _Objective, start: ParameterSet, options: FitOptions) -> _Optimum:
    theta0 = objective.theta(start.to_vector(objective.spec))
    start_ll = -objective(theta0)

    result = optimize.minimize(
        objective,
        theta0,
        jac=objective.gradient,
        method="BFGS",
        options={"gtol": options.gtol, "maxiter": options.maxiter, "norm": np.inf},
    )
    theta, grad, newton = _newton_refine(objective, result.x, options)
    iterations = int(result.nit) + newton
    gmax = float(np.max(np.abs(grad))) if grad.size else 0.0
    converged = gmax <= options.gtol

    if converged:
        message = "converged"
    else:
        message = f"gradient max-norm {gmax:.3g} above {options.gtol:g}: {result.message}"
    log.debug(f"Optimiser finished after {iterations} iterations: {message}")

    return _Optimum(
        params=objective.params(theta),
        ll=-objective(theta),
        start_ll=start_ll,
        gradient_max_norm=gmax,
        iterations=iterations,
        converged=converged,
        message=message,
    )


def _threshold_start(linear: ParameterSet, spec: UtilitySpec, alpha: float) -> ParameterSet:
    """Betas from the linear fit; alpha as given; elasticities 0; scales 1."""
    values = []
    for name in spec.parameter_names():
        if name == "alpha":
            values.append(alpha)
        elif name.startswith("scale_"):
            values.append(1.0)
        elif name.startswith("lambda_"):
            values.append(0.0)
        else:
            values.append(linear.get(name))
    return ParameterSet.from_vector(values, spec)


def _fit_smooth(
    data: ChoiceData, spec: UtilitySpec, linear: _Optimum, options: FitOptions
) -> _Optimum:
    alpha = options.alpha_start or spec.transform.alpha or 1.0
    start = _threshold_start(linear.params, spec, alpha)
    optimum = _maximize(_Objective(data, spec), start, options)

    if spec.kind.nests_linear and optimum.ll < linear.ll - 1e-9:
        log.debug(
            f"{spec.kind.value} fit from alpha={alpha:g} ended below the linear fit; "
            f"retrying from alpha={_NARROW_ALPHA:g}."
        )
        retry = _maximize(
            _Objective(data, spec), _threshold_start(linear.params, spec, _NARROW_ALPHA), options
        )
        if retry.ll > optimum.ll:
            optimum = replace(retry, start_ll=optimum.start_ll)
    return optimum


def _fit_profile(
    data: ChoiceData, spec: UtilitySpec, linear: _Optimum, options: FitOptions
) -> _Optimum:
    """
    Profile likelihood over the HTF alpha.

    Each alpha on the grid gets a smooth inner fit of the remaining parameters; the best grid point
    is then refined with a golden-section search between its neighbours.
    """
    step = options.htf_grid_step
    upper = float(np.max(np.abs(data.dt))) / 2.0
    grid = np.arange(step, upper + step / 2.0, step)
    if not grid.size:
        grid = np.array([step])

    profiles: dict[float, _Optimum] = {}
    warm = _threshold_start(linear.params, spec, float(grid[0]))
    start_ll = log_likelihood(warm, data, spec)

    def profile(alpha: float, start: ParameterSet) -> _Optimum:
        alpha = float(alpha)
        if alpha not in profiles:
            objective = _Objective(data, spec, fixed={"alpha": alpha})
            profiles[alpha] = _maximize(objective, replace(start, alpha=alpha), options)
        return profiles[alpha]

    for alpha in grid:
        warm = profile(alpha, warm).params

    lls = np.array([profiles[float(a)].ll for a in grid])
    best = int(np.argmax(lls))
    best_alpha = float(grid[best])
    log.debug(f"HTF profile grid optimum at alpha={best_alpha:g} with LL {lls[best]:.4f}")

    anchor = profiles[best_alpha].params
    objective = lambda alpha: -profile(alpha, anchor).ll  # noqa: E731
    low = float(grid[best - 1]) if best > 0 else max(best_alpha - step, step / 100.0)
    high = float(grid[best + 1]) if best + 1 < len(grid) else best_alpha + step
    try:
        if not 0 < best < len(grid) - 1:
            raise ValueError("grid optimum on the boundary")
        refined = optimize.minimize_scalar(
            objective, bracket=(low, best_alpha, high), method="golden", options={"xtol": 1e-5}
        )
    except ValueError:
        refined = optimize.minimize_scalar(objective, bounds=(low, high), method="bounded")

    candidates = [profiles[best_alpha]]
    if refined.x > 0:
        candidates.append(profile(refined.x, anchor))
    optimum = max(candidates, key=lambda o: o.ll)

    return replace(
        optimum,
        start_ll=start_ll,
        iterations=sum(o.iterations for o in profiles.values()),
    )


def _covariance(
    data: ChoiceData, spec: UtilitySpec, estimates: ParameterSet, options: FitOptions
) -> tuple[NDArray[np.float64] | None, str]:
    """Inverse of the observed information from a central-difference Hessian."""
    names = spec.parameter_names()
    x = estimates.to_vector(spec)
    steps = options.hessian_step * np.maximum(np.abs(x), 1.0)
    for name in spec.positive_parameters():
        i = names.index(name)
        if name == "alpha" and spec.kind is TransformKind.HTF:
            steps[i] = options.htf_alpha_step
        steps[i] = min(steps[i], x[i] / 2.0)

    def gradient(values: NDArray[np.float64]) -> NDArray[np.float64]:
        return likelihood_gradient(ParameterSet.from_vector(values, spec), data, spec)

    information = -_numerical_hessian(gradient, x, steps)
    if not np.all(np.isfinite(information)):
        return None, "non-finite information matrix"
    try:
        np.linalg.cholesky(information)
    except np.linalg.LinAlgError:
        return None, "singular or indefinite information matrix"

    covariance = np.linalg.inv(information)
    log.debug(f"Information matrix condition number {np.linalg.cond(information):.3g}")
    return (covariance + covariance.T) / 2.0, ""


def _check_groups(data: ChoiceData, spec: UtilitySpec) -> None:
    present = set(np.unique(data.group).tolist())
    expected = set(range(spec.n_groups))
    if present - expected:
        raise InvalidSpecError(
            f"Data contains groups {sorted(present - expected)} outside 0..{spec.n_groups - 1}"
        )
    if expected - present:
        raise InvalidSpecError(f"Groups {sorted(expected - present)} have no observations")


def fit(
    data: Sequence[ChoiceRecord] | ChoiceData,
    spec: UtilitySpec,
    options: FitOptions = FitOptions(),
) -> FitResult:
    """
    Estimate the parameters of `spec` by maximum likelihood.

    The linear model is fitted first and provides the starting betas of every other kind. HTF
    is estimated by profile likelihood over alpha; all other kinds jointly by BFGS, followed by
    Newton refinement if the gradient criterion is not met yet.

    Numerical failures do not raise: a result with ``converged=False`` and/or
    ``covariance=None`` is returned with an explanatory `message`.

    Raises:
        EmptyDataError: If there are no observations.
        InvalidSpecError: If a declared group has no observations or the data has extra groups.
    """
    data = ChoiceData.coerce(data)
    if not len(data):
        raise EmptyDataError("Cannot fit a model without observations")
    _check_groups(data, spec)
    spec = spec.resolve(data)

    log.info(f"Fitting the {spec.kind.value} model on {len(data)} observations.")
    linear_spec = spec.with_transform(LINEAR)
    linear = _maximize(_Objective(data, linear_spec), ParameterSet.zero(linear_spec), options)

    if spec.kind is TransformKind.LINEAR:
        optimum = linear
    elif spec.kind is TransformKind.HTF:
        optimum = _fit_profile(data, spec, linear, options)
    else:
        optimum = _fit_smooth(data, spec, linear, options)

    converged = optimum.converged
    messages = [optimum.message]

    if np.all(data.chose_alt1) or not np.any(data.chose_alt1):
        converged = False
        messages.append("every record chooses the same alternative")

    signed = np.where(data.chose_alt1, 1.0, -1.0)
    observed = expit(signed * utility_vector(optimum.params, data, spec))
    if np.all(observed > 1.0 - options.separation_tol):
        converged = False
        messages.append("perfect separation: every choice is predicted with certainty")

    covariance, problem = _covariance(data, spec, optimum.params, options)
    std_errors = None
    if covariance is None:
        messages.append(problem)
        log.warning(f"No covariance for the {spec.kind.value} fit: {problem}.")
    else:
        std_errors = np.sqrt(np.diag(covariance))

    if not converged:
        log.warning(f"The {spec.kind.value} fit did not converge: {'; '.join(messages)}")
    log.info(
        f"The {spec.kind.value} fit finished with LL {optimum.ll:.3f} "
        f"({'converged' if converged else 'not converged'})."
    )

    return FitResult(
        estimates=optimum.params,
        covariance=covariance,
        std_errors=std_errors,
        final_ll=optimum.ll,
        null_ll=null_log_likelihood(len(data)),
        converged=converged,
        n_obs=len(data),
        n_free_params=len(spec.parameter_names()),
        spec=spec,
        start_ll=optimum.start_ll,
        iterations=optimum.iterations,
        gradient_max_norm=optimum.gradient_max_norm,
        message="; ".join(m for m in messages if m),
        alpha_se_note=HTF_ALPHA_NOTE if spec.kind is TransformKind.HTF else None,
    )
