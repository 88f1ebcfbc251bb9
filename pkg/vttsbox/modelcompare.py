"""Likelihood-ratio tests for nested models and the Horowitz bound for non-nested models."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

from scipy.special import gammaincc
from scipy.stats import norm

from vttsbox.estimation import FitResult
from vttsbox.likelihood import UtilitySpec
from vttsbox.transforms import TransformKind

__all__ = (
    "HorowitzVariant",
    "ModelOrderError",
    "NestingError",
    "TestMethod",
    "TestReport",
    "adjusted_rho_squared",
    "compare_fits",
    "horowitz_test",
    "is_nested",
    "lr_test",
)

log = logging.getLogger(__name__)

# Negative LR statistics down to this size are rounding noise.
_LR_TOLERANCE = 1e-9


class ModelOrderError(ValueError):
    """Raised when the models of a Horowitz test are given in the wrong order."""


class NestingError(ValueError):
    """Raised when a likelihood-ratio test is requested for models that are not nested."""


class HorowitzVariant(enum.Enum):
    """
    Penalty of the adjusted rho-squared.

    ORIGINAL subtracts K/2 from the log-likelihood; BEN_AKIVA_LERMAN subtracts K.
    """

    ORIGINAL = "original"
    BEN_AKIVA_LERMAN = "bal"


class TestMethod(enum.Enum):
    LIKELIHOOD_RATIO = "lr"
    HOROWITZ_ORIGINAL = "horowitz"
    HOROWITZ_BAL = "horowitz-bal"

    @property
    def variant(self) -> HorowitzVariant | None:
        return {
            TestMethod.HOROWITZ_ORIGINAL: HorowitzVariant.ORIGINAL,
            TestMethod.HOROWITZ_BAL: HorowitzVariant.BEN_AKIVA_LERMAN,
        }.get(self)


@dataclass(frozen=True)
class TestReport:
    """
    Result of a model comparison.

    For the LR test `statistic` is 2 * (ll_full - ll_restricted), `p_value` the chi-squared tail
    and `df` the degrees of freedom. For the Horowitz test `statistic` is the difference z of the
    adjusted rho-squared values, `p_value` the upper bound on the probability that the model with
    the lower fit is the true one, and `df` the parameter-count difference K_b - K_a.
    """

    __test__ = False

    method: TestMethod
    statistic: float
    p_value: float
    df: int
    models: tuple[str, str] | None = None


def lr_test(ll_restricted: float, ll_full: float, df: int) -> TestReport:
    """
    Likelihood-ratio test of a restricted model against the model it is nested in.

    Raises:
        ValueError: If `df` is below 1.
        NestingError: If the restricted model fits better by more than rounding noise.
    """
    if df < 1:
        raise ValueError(f"df must be a positive integer, got {df}")
    gain = ll_full - ll_restricted
    if gain < -_LR_TOLERANCE:
        raise NestingError(
            f"The restricted model has the higher log-likelihood ({ll_restricted} > {ll_full}); "
            "the models are not nested or a fit did not converge"
        )

    statistic = max(2.0 * gain, 0.0)
    p_value = float(gammaincc(df / 2.0, statistic / 2.0))
    return TestReport(TestMethod.LIKELIHOOD_RATIO, statistic, p_value, int(df))


def adjusted_rho_squared(
    ll: float, k: int, null_ll: float, variant: HorowitzVariant = HorowitzVariant.ORIGINAL
) -> float:
    """Rho-squared with a penalty for the number of parameters `k`."""
    penalty = k / 2.0 if variant is HorowitzVariant.ORIGINAL else float(k)
    return 1.0 - (ll - penalty) / null_ll


def horowitz_test(
    ll_a: float,
    k_a: int,
    ll_b: float,
    k_b: int,
    null_ll: float,
    variant: HorowitzVariant = HorowitzVariant.ORIGINAL,
) -> TestReport:
    """
    Bound on the probability that model A is true although model B has the higher adjusted fit.

    With z the difference of the adjusted rho-squared values of B and A, the bound is
    ``Phi(-sqrt(-2 * z * null_ll + (k_b - k_a)))``.

    Raises:
        ValueError: If the null log-likelihood is not negative or a log-likelihood is below it.
        ModelOrderError: If model A has the higher adjusted fit; swap the models.
    """
    if not null_ll < 0:
        raise ValueError(f"null_ll must be negative, got {null_ll}")
    if ll_a < null_ll or ll_b < null_ll:
        raise ValueError("Model log-likelihoods must not be below the null log-likelihood")

    z = adjusted_rho_squared(ll_b, k_b, null_ll, variant) - adjusted_rho_squared(
        ll_a, k_a, null_ll, variant
    )
    if z < 0:
        raise ModelOrderError(
            "Model A has the higher adjusted rho-squared; swap the models so that B fits better"
        )

    argument = max(-2.0 * z * null_ll + (k_b - k_a), 0.0)
    bound = float(norm.cdf(-math.sqrt(argument)))
    method = (
        TestMethod.HOROWITZ_ORIGINAL
        if variant is HorowitzVariant.ORIGINAL
        else TestMethod.HOROWITZ_BAL
    )
    return TestReport(method, z, bound, int(k_b - k_a))


def is_nested(restricted: UtilitySpec, full: UtilitySpec) -> bool:
    """
    True if `restricted` is a special case of `full`.

    The terms of `restricted` must be a subset of those of `full` with the same scale groups,
    and its transformation must either be the same kind or linear with `full` nesting linear.
    """
    if restricted.n_groups != full.n_groups:
        return False
    if not set(restricted.parameter_names()) - {"alpha"} <= set(full.parameter_names()):
        return False
    if restricted.kind is full.kind:
        return True
    return restricted.kind is TransformKind.LINEAR and full.kind.nests_linear


def _label(result: FitResult) -> str:
    return result.spec.kind.value


def compare_fits(
    fit_a: FitResult,
    fit_b: FitResult,
    method: TestMethod = TestMethod.LIKELIHOOD_RATIO,
    df: int | None = None,
) -> TestReport:
    """
    Compare two fits on the same data.

    For the LR test the fit with fewer parameters is the restricted one and `df` defaults to the
    difference in parameter counts (at least 1). For the Horowitz test the models are ordered by
    their adjusted fit.

    Raises:
        ValueError: If the fits are not on datasets of the same size.
        NestingError: If an LR test is requested for models that are not nested.
    """
    if fit_a.n_obs != fit_b.n_obs or not math.isclose(fit_a.null_ll, fit_b.null_ll):
        raise ValueError("The fits were not estimated on the same data")

    if method is TestMethod.LIKELIHOOD_RATIO:
        restricted, full = sorted((fit_a, fit_b), key=lambda f: (f.n_free_params, f.final_ll))
        if not is_nested(restricted.spec, full.spec):
            raise NestingError(
                f"The {_label(restricted)} model is not nested in the {_label(full)} model; "
                "use a Horowitz test for non-nested models"
            )
        df = df if df is not None else max(1, full.n_free_params - restricted.n_free_params)
        report = lr_test(restricted.final_ll, full.final_ll, df)
        models = (_label(restricted), _label(full))
    else:

        def fit_of(f: FitResult) -> float:
            return adjusted_rho_squared(f.final_ll, f.n_free_params, f.null_ll, method.variant)

        a, b = sorted((fit_a, fit_b), key=fit_of)
        report = horowitz_test(
            a.final_ll, a.n_free_params, b.final_ll, b.n_free_params, a.null_ll, method.variant
        )
        models = (_label(a), _label(b))

    log.info(f"{method.value} test of {models[0]} vs {models[1]}: p = {report.p_value:.4g}")
    return TestReport(report.method, report.statistic, report.p_value, report.df, models)
