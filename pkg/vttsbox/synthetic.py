"""Synthetic choice data and the replication study of estimator performance."""
from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray
from scipy.special import logit

from vttsbox.estimation import FitOptions, FitResult, fit
from vttsbox.likelihood import ChoiceData, ChoiceRecord, ParameterSet, UtilitySpec, utility_vector
from vttsbox.transforms import TransformKind, TransformSpec
from vttsbox.utils.timed import time_limit
from vttsbox.wtp import CovarianceError, vtts_ci_simulation

__all__ = (
    "ParameterSummary",
    "ReplicationSummary",
    "SimConfig",
    "SimConfigError",
    "StatedChoiceDgp",
    "derive_run_seed",
    "generate_dataset",
    "mean_ll_gap",
    "replicate_study",
    "simulate_choice_data",
    "threshold_sweep",
    "true_parameters",
    "true_spec",
)

log = logging.getLogger(__name__)


class SimConfigError(ValueError):
    """Raised when a data generating process is misconfigured."""


def _check_range(name: str, bounds: tuple[float, float], straddle_zero: bool = False) -> None:
    low, high = bounds
    if not (math.isfinite(low) and math.isfinite(high) and low < high):
        raise SimConfigError(f"{name} must be a finite (low, high) pair with low < high")
    if straddle_zero and not low < 0 < high:
        raise SimConfigError(f"{name} must contain both negative and positive values")


@dataclass(frozen=True)
class StatedChoiceDgp:
    """
    Extra terms of the stated-choice style utility.

    Headway differences are uniform, changes are uniform integers, and income and mean trip time
    are uniform over positive ranges. The elasticity terms are normalised by the sample means of
    the generated covariates. Records are assigned uniformly to the groups of `group_scales`.
    """

    beta_h: float = -0.03
    beta_k: float = -0.3
    lambda_i: float = -0.25
    lambda_t: float = -0.4
    group_scales: tuple[float, ...] = (1.0, 0.8)
    headway_range: tuple[float, float] = (-30.0, 30.0)
    changes_range: tuple[int, int] = (-2, 2)
    income_range: tuple[float, float] = (2000.0, 12000.0)
    trip_time_range: tuple[float, float] = (10.0, 120.0)

    def __post_init__(self) -> None:
        _check_range("headway_range", self.headway_range)
        _check_range("changes_range", self.changes_range)
        _check_range("income_range", self.income_range)
        _check_range("trip_time_range", self.trip_time_range)
        if self.income_range[0] <= 0 or self.trip_time_range[0] <= 0:
            raise SimConfigError("Income and mean trip time ranges must be positive")
        if not self.group_scales or self.group_scales[0] != 1.0:
            raise SimConfigError("The first group scale is the reference and must be 1")
        if any(not s > 0 for s in self.group_scales):
            raise SimConfigError(f"Group scales must be positive, got {self.group_scales}")


@dataclass(frozen=True)
class SimConfig:
    """
    The synthetic data generating process.

    The defaults are a hard threshold of 5 minutes on uniformly drawn time and cost differences,
    with dominant pairs (one alternative both faster and cheaper) excluded.
    """

    n_obs: int = 5000
    cost_range: tuple[float, float] = (-10.0, 10.0)
    time_range: tuple[float, float] = (-25.0, 25.0)
    transform: TransformSpec = field(default=TransformSpec(TransformKind.HTF, 5.0))
    beta_t: float = -0.1
    beta_c: float = -0.6
    seed: int = 0
    extended: StatedChoiceDgp | None = None

    def __post_init__(self) -> None:
        if self.n_obs < 1:
            raise SimConfigError(f"n_obs must be at least 1, got {self.n_obs}")
        _check_range("cost_range", self.cost_range, straddle_zero=True)
        _check_range("time_range", self.time_range, straddle_zero=True)
        if not (math.isfinite(self.beta_t) and math.isfinite(self.beta_c)):
            raise SimConfigError("beta_t and beta_c must be finite")
        if self.seed < 0:
            raise SimConfigError(f"seed must be non-negative, got {self.seed}")


def true_spec(config: SimConfig) -> UtilitySpec:
    """The utility specification the data is generated from."""
    extended = config.extended
    if extended is None:
        return UtilitySpec(transform=config.transform)
    return UtilitySpec(
        transform=config.transform,
        use_headway=True,
        use_changes=True,
        use_income_elasticity=True,
        use_time_elasticity=True,
        n_groups=len(extended.group_scales),
    )


def true_parameters(config: SimConfig) -> ParameterSet:
    """The parameter values the data is generated from."""
    extended = config.extended
    if extended is None:
        return ParameterSet(config.beta_t, config.beta_c, alpha=config.transform.alpha)
    return ParameterSet(
        config.beta_t,
        config.beta_c,
        alpha=config.transform.alpha,
        beta_h=extended.beta_h,
        beta_k=extended.beta_k,
        lambda_i=extended.lambda_i,
        lambda_t=extended.lambda_t,
        scales=extended.group_scales,
    )


def _mixed_sign_pairs(
    rng: np.random.Generator, config: SimConfig
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Draw (dt, dc) pairs in batches, keeping only those with opposite signs."""
    dt = np.empty(0)
    dc = np.empty(0)
    while len(dt) < config.n_obs:
        size = 2 * max(config.n_obs - len(dt), 16)
        t = rng.uniform(*config.time_range, size)
        c = rng.uniform(*config.cost_range, size)
        keep = t * c < 0
        dt = np.concatenate((dt, t[keep]))
        dc = np.concatenate((dc, c[keep]))
    return dt[: config.n_obs], dc[: config.n_obs]


def simulate_choice_data(config: SimConfig) -> ChoiceData:
    """Generate a columnar dataset; deterministic for a given config."""
    rng = np.random.default_rng(config.seed)
    n = config.n_obs
    dt, dc = _mixed_sign_pairs(rng, config)

    nan = np.full(n, np.nan)
    zeros = np.zeros(n)
    columns = dict(dh=zeros, dk=zeros, income=nan, mean_trip_time=nan, group=np.zeros(n, np.int64))
    if (extended := config.extended) is not None:
        columns = dict(
            dh=rng.uniform(*extended.headway_range, n),
            dk=rng.integers(extended.changes_range[0], extended.changes_range[1] + 1, n).astype(
                np.float64
            ),
            income=rng.uniform(*extended.income_range, n),
            mean_trip_time=rng.uniform(*extended.trip_time_range, n),
            group=rng.integers(0, len(extended.group_scales), n).astype(np.int64),
        )

    data = ChoiceData(dt=dt, dc=dc, chose_alt1=np.zeros(n, np.bool_), **columns)
    spec = true_spec(config).resolve(data)
    dv = utility_vector(true_parameters(config), data, spec)

    # Difference of two Gumbel errors: standard logistic by inverse CDF.
    error = logit(rng.uniform(size=n))
    return replace(data, chose_alt1=dv + error > 0)


def generate_dataset(config: SimConfig) -> list[ChoiceRecord]:
    """
    Generate `config.n_obs` choice records.

    Every record has sign(dt) != sign(dc); dominant pairs are redrawn so the count stays fixed.
    """
    return simulate_choice_data(config).to_records()


def derive_run_seed(master: int, run: int) -> int:
    """Child seed of one replication run, independent of execution order."""
    state = np.random.SeedSequence(master, spawn_key=(run,)).generate_state(1, np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class ParameterSummary:
    """Mean, empirical standard deviation and mean reported standard error of one parameter."""

    name: str
    mean: float
    empirical_sd: float
    mean_std_error: float


@dataclass(frozen=True, eq=False)
class ReplicationSummary:
    """
    Aggregate of one fitted specification over the replication runs.

    Only runs whose fit converged with a covariance matrix enter the statistics; the others are
    counted in `n_excluded`.
    """

    spec: UtilitySpec
    parameters: tuple[ParameterSummary, ...]
    n_runs: int
    n_excluded: int
    run_indices: tuple[int, ...]
    final_lls: NDArray[np.float64]
    estimates: NDArray[np.float64]
    true_vtts: float | None = None
    vtts_coverage: float | None = None

    def parameter(self, name: str) -> ParameterSummary:
        for summary in self.parameters:
            if summary.name == name:
                return summary
        raise KeyError(name)


@dataclass(frozen=True)
class _SpecOutcome:
    estimates: NDArray[np.float64] | None = None
    std_errors: NDArray[np.float64] | None = None
    final_ll: float = math.nan
    covered: bool | None = None
    reason: str = ""

    @property
    def included(self) -> bool:
        return self.estimates is not None


def _fit_run(
    data: ChoiceData,
    spec: UtilitySpec,
    options: FitOptions,
    run_timeout: int | None,
) -> FitResult | str:
    try:
        with time_limit(run_timeout):
            return fit(data, spec, options)
    except TimeoutError:
        return f"timed out after {run_timeout} s"
    except ValueError as e:
        return f"{type(e).__name__}: {e}"


def _run_once(
    config: SimConfig,
    specs: Sequence[UtilitySpec],
    run: int,
    options: FitOptions,
    run_timeout: int | None,
    vtts_draws: int,
    level: float,
) -> tuple[int, list[_SpecOutcome]]:
    seed = derive_run_seed(config.seed, run)
    data = simulate_choice_data(replace(config, seed=seed))
    true_vtts = 60.0 * config.beta_t / config.beta_c

    outcomes = []
    for spec in specs:
        result = _fit_run(data, spec, options, run_timeout)
        if isinstance(result, str):
            outcomes.append(_SpecOutcome(reason=result))
            continue
        if not result.converged or result.covariance is None:
            outcomes.append(_SpecOutcome(reason=result.message))
            continue

        covered = None
        if vtts_draws and spec.kind.has_asymptote:
            mean = (result.estimate("beta_t"), result.estimate("beta_c"))
            try:
                ci = vtts_ci_simulation(
                    mean, result.covariance_of(("beta_t", "beta_c")), vtts_draws, level, seed
                )
                covered = ci.low <= true_vtts <= ci.high
            except CovarianceError as e:
                log.debug(f"Run {run}: no VTTS interval for {spec.kind.value}: {e}")

        outcomes.append(
            _SpecOutcome(
                estimates=result.estimates.to_vector(result.spec),
                std_errors=result.std_errors,
                final_ll=result.final_ll,
                covered=covered,
            )
        )
    return run, outcomes


def _summarize(
    spec: UtilitySpec,
    outcomes: Sequence[tuple[int, _SpecOutcome]],
    true_vtts: float,
) -> ReplicationSummary:
    included = [(run, o) for run, o in outcomes if o.included]
    names = spec.parameter_names()
    estimates = np.array([o.estimates for _, o in included]).reshape(len(included), len(names))
    std_errors = np.array([o.std_errors for _, o in included]).reshape(len(included), len(names))

    parameters = []
    for i, name in enumerate(names):
        column = estimates[:, i]
        parameters.append(
            ParameterSummary(
                name=name,
                mean=float(column.mean()) if column.size else math.nan,
                empirical_sd=float(column.std(ddof=1)) if column.size > 1 else math.nan,
                mean_std_error=float(std_errors[:, i].mean()) if column.size else math.nan,
            )
        )

    covered = [o.covered for _, o in included if o.covered is not None]
    for run, o in outcomes:
        if not o.included:
            log.warning(f"Run {run} excluded for the {spec.kind.value} fit: {o.reason}")

    return ReplicationSummary(
        spec=spec,
        parameters=tuple(parameters),
        n_runs=len(included),
        n_excluded=len(outcomes) - len(included),
        run_indices=tuple(run for run, _ in included),
        final_lls=np.array([o.final_ll for _, o in included]),
        estimates=estimates,
        true_vtts=true_vtts if spec.kind.has_asymptote else None,
        vtts_coverage=float(np.mean(covered)) if covered else None,
    )


def replicate_study(
    config: SimConfig,
    fit_specs: Sequence[UtilitySpec],
    runs: int,
    options: FitOptions = FitOptions(),
    workers: int = 1,
    run_timeout: int | None = None,
    vtts_draws: int = 0,
    level: float = 0.95,
) -> list[ReplicationSummary]:
    """
    Generate `runs` datasets and fit every spec to each of them.

    The dataset of run r uses the seed ``derive_run_seed(config.seed, r)``, so the results do not
    depend on `workers`. Failed, timed-out and non-converged fits are excluded and counted.

    Args:
        config: The data generating process; its seed is the master seed.
        fit_specs: Specifications fitted to every dataset.
        runs: Number of datasets, at least 2.
        options: Numerical settings of every fit.
        workers: Number of worker processes; 1 runs in-process.
        run_timeout: Optional limit in seconds per fit.
        vtts_draws: If positive, the number of draws of a simulated asymptotic VTTS interval per
            fit, whose coverage of the true value is reported.
        level: Confidence level of that interval.

    Returns:
        One summary per spec, in the order of `fit_specs`.
    """
    if runs < 2:
        raise SimConfigError(f"A replication study needs at least 2 runs, got {runs}")
    if workers < 1:
        raise SimConfigError(f"workers must be at least 1, got {workers}")
    if vtts_draws and vtts_draws < 1000:
        raise SimConfigError(f"vtts_draws must be 0 or at least 1000, got {vtts_draws}")
    if not fit_specs:
        raise SimConfigError("No specifications to fit")

    log.info(f"Replicating {len(fit_specs)} specifications over {runs} runs ({workers} workers).")
    args = (options, run_timeout, vtts_draws, level)
    if workers == 1:
        results = [_run_once(config, fit_specs, run, *args) for run in range(runs)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_once, config, fit_specs, run, *args) for run in range(runs)]
            results = [f.result() for f in futures]
    results.sort(key=lambda r: r[0])

    true_vtts = 60.0 * config.beta_t / config.beta_c
    summaries = [
        _summarize(spec, [(run, outcomes[i]) for run, outcomes in results], true_vtts)
        for i, spec in enumerate(fit_specs)
    ]
    for summary in summaries:
        log.info(
            f"{summary.spec.kind.value}: {summary.n_runs} runs included, "
            f"{summary.n_excluded} excluded."
        )
    return summaries


def mean_ll_gap(a: ReplicationSummary, b: ReplicationSummary) -> float:
    """Mean of final_ll(a) - final_ll(b) over the runs included in both summaries."""
    lls_b = dict(zip(b.run_indices, b.final_lls))
    gaps = [ll - lls_b[run] for run, ll in zip(a.run_indices, a.final_lls) if run in lls_b]
    if not gaps:
        raise ValueError("The summaries have no included run in common")
    return float(np.mean(gaps))


def threshold_sweep(
    config: SimConfig,
    thresholds: Iterable[float],
    fit_specs: Sequence[UtilitySpec],
    runs: int,
    **kwargs,
) -> dict[float, list[ReplicationSummary]]:
    """Run `replicate_study` once per DGP threshold; keyword arguments are passed through."""
    return {
        float(alpha): replicate_study(
            replace(config, transform=config.transform.with_alpha(alpha)), fit_specs, runs, **kwargs
        )
        for alpha in thresholds
    }
