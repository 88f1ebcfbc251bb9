import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from vttsbox import dataio, plot, results
from vttsbox.estimation import FitOptions, FitResult, fit
from vttsbox.likelihood import ParameterSet, UtilitySpec, log_likelihood
from vttsbox.modelcompare import TestMethod, compare_fits
from vttsbox.synthetic import (
    SimConfig,
    StatedChoiceDgp,
    mean_ll_gap,
    replicate_study,
    simulate_choice_data,
    true_spec,
)
from vttsbox.transforms import TransformKind, TransformSpec
from vttsbox.wtp import CiMethod, CovarianceError, summarize_vtts, utility_curve

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

TRANSFORMS = [k.value for k in TransformKind]
WALD_PARAMETERS = ("beta_t", "beta_c", "alpha", "beta_h", "beta_k", "lambda_i", "lambda_t")


class _ArgumentParser(argparse.ArgumentParser):
    """Argument parser that exits with the validation error code."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


@dataclass
class _Outcome:
    code: int = EXIT_OK
    outputs: list[str] = field(default_factory=list)
    seeds: dict[str, int] = field(default_factory=dict)


def _add_dgp_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-obs", type=int, default=5000, help="records per dataset")
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument(
        "--transform", choices=TRANSFORMS, default="htf", help="transformation of the DGP"
    )
    parser.add_argument("--alpha", type=float, default=5.0, help="threshold or exponent of the DGP")
    parser.add_argument("--beta-t", type=float, default=-0.1, help="true time coefficient")
    parser.add_argument("--beta-c", type=float, default=-0.6, help="true cost coefficient")
    parser.add_argument(
        "--cost-range", type=float, nargs=2, default=(-10.0, 10.0), metavar=("LOW", "HIGH")
    )
    parser.add_argument(
        "--time-range", type=float, nargs=2, default=(-25.0, 25.0), metavar=("LOW", "HIGH")
    )
    parser.add_argument(
        "--extended",
        action="store_true",
        help="add headway, changes, income and trip time terms and two scale groups",
    )


def _add_fit_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha-start", type=float, help="starting alpha of the smooth kinds")
    parser.add_argument("--gtol", type=float, default=1e-6, help="gradient tolerance")
    parser.add_argument("--maxiter", type=int, default=500, help="optimiser iteration cap")


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse the command-line arguments and return the populated namespace."""
    parser = _ArgumentParser(
        prog="vttsbox",
        description="Threshold logit models and values of travel time savings.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    def command(name: str, help: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(
            name, help=help, formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )
        sub.add_argument("--out", type=Path, default=Path("."), help="output directory")
        return sub

    simulate = command("simulate", "generate a synthetic choice dataset")
    _add_dgp_args(simulate)

    estimate = command("estimate", "fit a model to a dataset")
    estimate.add_argument("dataset", type=Path, help="dataset CSV")
    estimate.add_argument("--transform", choices=TRANSFORMS, default="linear")
    estimate.add_argument("--headway", action="store_true", help="include the headway term")
    estimate.add_argument("--changes", action="store_true", help="include the changes term")
    estimate.add_argument("--income-elasticity", action="store_true")
    estimate.add_argument("--time-elasticity", action="store_true")
    estimate.add_argument(
        "--n-groups", type=int, help="scale groups; defaults to the largest group id + 1"
    )
    estimate.add_argument(
        "--at-zero", action="store_true", help="also report the log-likelihood at zero"
    )
    for name in WALD_PARAMETERS:
        estimate.add_argument(
            f"--target-{name.replace('_', '-')}",
            type=float,
            dest=f"target_{name}",
            help=f"target value of {name} for a Wald test",
        )
    _add_fit_args(estimate)

    replicate = command("replicate", "repeat simulation and estimation")
    _add_dgp_args(replicate)
    replicate.add_argument("--runs", type=int, default=500, help="number of datasets")
    replicate.add_argument(
        "--fit",
        choices=TRANSFORMS,
        action="append",
        help="transformation to fit; repeatable (default: linear htf stf1 stf2 power)",
    )
    replicate.add_argument("--workers", type=int, default=1, help="worker processes")
    replicate.add_argument("--run-timeout", type=int, help="time limit per fit in seconds")
    replicate.add_argument(
        "--vtts-draws", type=int, default=0, help="draws of a VTTS interval per fit (0: none)"
    )
    replicate.add_argument("--level", type=float, default=0.95, help="VTTS interval level")
    _add_fit_args(replicate)

    vtts = command("vtts", "VTTS and utility curves and asymptotic VTTS of one or more fits")
    vtts.add_argument(
        "fits", type=Path, nargs="+", help="fit JSON files written by the estimate command"
    )
    vtts.add_argument("--ci-method", choices=[m.value for m in CiMethod], default="sim")
    vtts.add_argument("--draws", type=int, default=100_000, help="simulation draws")
    vtts.add_argument("--level", type=float, default=0.95, help="confidence level")
    vtts.add_argument("--seed", type=int, default=0, help="simulation seed")
    vtts.add_argument("--plot", action="store_true", help="also write overlaid SVG plots")

    compare = command("compare", "test two fits against each other")
    compare.add_argument("fits", type=Path, nargs=2, help="two fit JSON files")
    compare.add_argument(
        "--test", choices=[m.value for m in TestMethod], default="lr", help="test to run"
    )
    compare.add_argument("--df", type=int, help="LR degrees of freedom")

    return parser.parse_args(argv)


def _sim_config(args: argparse.Namespace) -> SimConfig:
    return SimConfig(
        n_obs=args.n_obs,
        cost_range=tuple(args.cost_range),
        time_range=tuple(args.time_range),
        transform=TransformSpec.parse(args.transform, args.alpha),
        beta_t=args.beta_t,
        beta_c=args.beta_c,
        seed=args.seed,
        extended=StatedChoiceDgp() if args.extended else None,
    )


def _fit_options(args: argparse.Namespace) -> FitOptions:
    return FitOptions(gtol=args.gtol, maxiter=args.maxiter, alpha_start=args.alpha_start)


def cmd_simulate(args: argparse.Namespace) -> _Outcome:
    config = _sim_config(args)
    path = dataio.write_dataset(simulate_choice_data(config), args.out / "dataset.csv")
    return _Outcome(outputs=[path.name], seeds={"seed": config.seed})


def cmd_estimate(args: argparse.Namespace) -> _Outcome:
    data = dataio.read_choice_data(args.dataset)
    transform = TransformSpec.parse(args.transform, args.alpha_start)
    spec = UtilitySpec(
        transform=transform,
        use_headway=args.headway,
        use_changes=args.changes,
        use_income_elasticity=args.income_elasticity,
        use_time_elasticity=args.time_elasticity,
        n_groups=args.n_groups or data.n_groups,
    )
    targets = {n: getattr(args, f"target_{n}") for n in WALD_PARAMETERS}
    targets = {n: t for n, t in targets.items() if t is not None}

    result = fit(data, spec, _fit_options(args))
    document = results.fit_to_dict(result, targets)
    if args.at_zero:
        document["ll_at_zero"] = log_likelihood(ParameterSet.zero(result.spec), data, result.spec)
    path = results.write_json(document, args.out / "fit.json")

    ok = result.converged and result.covariance is not None
    if not ok:
        log.error(f"Estimation failed: {result.message}")
    return _Outcome(EXIT_OK if ok else EXIT_NUMERICAL, [path.name])


def cmd_replicate(args: argparse.Namespace) -> _Outcome:
    config = _sim_config(args)
    kinds = args.fit or ["linear", "htf", "stf1", "stf2", "power"]
    # Fitted models carry the same terms as the DGP.
    specs = [true_spec(config).with_transform(TransformSpec.parse(k)) for k in kinds]

    summaries = replicate_study(
        config,
        specs,
        args.runs,
        _fit_options(args),
        workers=args.workers,
        run_timeout=args.run_timeout,
        vtts_draws=args.vtts_draws,
        level=args.level,
    )

    gaps = {}
    linear = next((s for s in summaries if s.spec.kind is TransformKind.LINEAR), None)
    for summary in summaries:
        if linear is None or summary is linear or not summary.n_runs or not linear.n_runs:
            continue
        try:
            gaps[f"{summary.spec.kind.value}-linear"] = mean_ll_gap(summary, linear)
        except ValueError:
            log.warning(f"No common runs of the {summary.spec.kind.value} and linear fits.")

    table = dataio.write_replication_table(summaries, args.out / "replication.csv")
    document = results.replication_to_dict(summaries, args.runs, gaps)
    path = results.write_json(document, args.out / "replication.json")

    code = EXIT_OK
    if all(s.n_runs == 0 for s in summaries):
        log.error("Every replication run was excluded.")
        code = EXIT_NUMERICAL
    return _Outcome(code, [table.name, path.name], {"seed": config.seed})


def _labels(fits: Sequence[FitResult]) -> list[str]:
    kinds = [f.spec.kind.value for f in fits]
    return [k if kinds.count(k) == 1 else f"{k}_{i + 1}" for i, k in enumerate(kinds)]


def cmd_vtts(args: argparse.Namespace) -> _Outcome:
    fits = [results.fit_from_dict(results.read_json(p, results.FIT_SCHEMA)) for p in args.fits]
    # A single fit keeps the unsuffixed file names.
    labels = _labels(fits)
    suffixes = [""] if len(fits) == 1 else [f"_{label}" for label in labels]

    outcome = _Outcome(seeds={"seed": args.seed})
    vtts_curves, utility_curves = {}, {}
    for label, suffix, result in zip(labels, suffixes, fits):
        dts, dv = utility_curve(result)
        utility_curves[label] = (dts, dv)
        path = args.out / f"utility_curve{suffix}.csv"
        outcome.outputs.append(dataio.write_curve(dts, dv, path, value_column="delta_v").name)

        try:
            summary = summarize_vtts(
                result, CiMethod(args.ci_method), args.level, args.draws, args.seed
            )
        except CovarianceError as e:
            log.error(f"No VTTS interval for the {label} fit: {e}")
            outcome.code = EXIT_NUMERICAL
            continue

        dts, values = zip(*summary.curve)
        vtts_curves[label] = (dts, values)
        document = results.vtts_summary_to_dict(summary)
        outcome.outputs += [
            dataio.write_curve(dts, values, args.out / f"vtts_curve{suffix}.csv").name,
            results.write_json(document, args.out / f"vtts_summary{suffix}.json").name,
        ]

    if args.plot:
        plots = (
            ("vtts_curve.svg", vtts_curves, plot.VTTS_LABEL),
            ("utility_curve.svg", utility_curves, plot.UTILITY_LABEL),
        )
        for name, curves, ylabel in plots:
            if curves and plot.write_curve_svg(curves, args.out / name, ylabel):
                outcome.outputs.append(name)
    return outcome


def cmd_compare(args: argparse.Namespace) -> _Outcome:
    fit_a, fit_b = (
        results.fit_from_dict(results.read_json(path, results.FIT_SCHEMA)) for path in args.fits
    )
    report = compare_fits(fit_a, fit_b, TestMethod(args.test), args.df)
    path = results.write_json(results.report_to_dict(report), args.out / "test_report.json")
    return _Outcome(outputs=[path.name])


COMMANDS: dict[str, Callable[[argparse.Namespace], _Outcome]] = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "replicate": cmd_replicate,
    "vtts": cmd_vtts,
    "compare": cmd_compare,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Run a command and return its exit code."""
    args = parse_args(argv)
    argv = list(sys.argv[1:] if argv is None else argv)

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        outcome = COMMANDS[args.command](args)
    except (ValueError, OSError) as e:
        print(f"vttsbox: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    options = {k: v for k, v in vars(args).items() if k != "command"}
    manifest = results.build_manifest(
        args.command, argv, options, outcome.seeds, outcome.outputs
    )
    results.write_json(manifest, args.out / "manifest.json")
    return outcome.code


def main(argv: Sequence[str] | None = None) -> None:
    """Run the vttsbox command line."""
    code = run(argv)
    if code != EXIT_OK:
        sys.exit(code)


if __name__ == "__main__":  # pragma: no cover
    main()
