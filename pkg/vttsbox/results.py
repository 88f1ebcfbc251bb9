"""JSON serialisation of fits, VTTS summaries, test reports, replication studies and manifests."""
from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping, Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from vttsbox import __version__
from vttsbox.estimation import FitResult
from vttsbox.likelihood import ParameterSet, UtilitySpec
from vttsbox.modelcompare import TestReport
from vttsbox.synthetic import ReplicationSummary
from vttsbox.transforms import TransformKind, TransformSpec
from vttsbox.wtp import ConfidenceInterval, UnboundedInterval, UndefinedVtts, VttsSummary

__all__ = (
    "FIT_SCHEMA",
    "MANIFEST_SCHEMA",
    "SCHEMA_VERSION",
    "ResultFormatError",
    "build_manifest",
    "fit_from_dict",
    "fit_to_dict",
    "read_json",
    "replication_to_dict",
    "report_to_dict",
    "vtts_summary_to_dict",
    "validate",
    "write_json",
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_NUMBER_OR_NULL = {"type": ["number", "null"]}

FIT_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"const": "fit"},
        "spec": {
            "type": "object",
            "properties": {
                "transform": {"enum": [k.value for k in TransformKind]},
                "alpha": _NUMBER_OR_NULL,
                "use_headway": {"type": "boolean"},
                "use_changes": {"type": "boolean"},
                "use_income_elasticity": {"type": "boolean"},
                "use_time_elasticity": {"type": "boolean"},
                "n_groups": {"type": "integer", "minimum": 1},
                "income_mean": _NUMBER_OR_NULL,
                "time_mean": _NUMBER_OR_NULL,
            },
            "required": ["transform", "n_groups"],
        },
        "parameter_names": {"type": "array", "items": {"type": "string"}},
        "estimates": {"type": "object", "additionalProperties": {"type": "number"}},
        "std_errors": {"type": "object", "additionalProperties": _NUMBER_OR_NULL},
        "covariance": {
            "type": ["array", "null"],
            "items": {"type": "array", "items": {"type": "number"}},
        },
        "final_ll": {"type": "number"},
        "null_ll": {"type": "number"},
        "start_ll": _NUMBER_OR_NULL,
        "converged": {"type": "boolean"},
        "n_obs": {"type": "integer", "minimum": 1},
        "n_free_params": {"type": "integer", "minimum": 1},
        "iterations": {"type": "integer", "minimum": 0},
        "gradient_max_norm": _NUMBER_OR_NULL,
        "message": {"type": "string"},
        "alpha_se_note": {"type": ["string", "null"]},
        "wald": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "properties": {"target": {"type": "number"}, "p_value": _NUMBER_OR_NULL},
                "required": ["target", "p_value"],
            },
        },
    },
    "required": [
        "schema_version",
        "kind",
        "spec",
        "parameter_names",
        "estimates",
        "covariance",
        "final_ll",
        "null_ll",
        "converged",
        "n_obs",
    ],
}

MANIFEST_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "tool": {"const": "vttsbox"},
        "version": {"type": "string"},
        "command": {"enum": ["simulate", "estimate", "replicate", "vtts", "compare"]},
        "argv": {"type": "array", "items": {"type": "string"}},
        "options": {"type": "object"},
        "seeds": {"type": "object"},
        "outputs": {"type": "array", "items": {"type": "string"}},
        "created": {"type": "string"},
    },
    "required": ["schema_version", "tool", "version", "command", "argv", "options", "created"],
}


class ResultFormatError(ValueError):
    """Raised when a JSON document does not match its schema."""


def _optional(value: float | None) -> float | None:
    return None if value is None or not math.isfinite(value) else float(value)


def _spec_to_dict(spec: UtilitySpec) -> dict[str, Any]:
    return {
        "transform": spec.kind.value,
        "alpha": spec.transform.alpha,
        "use_headway": spec.use_headway,
        "use_changes": spec.use_changes,
        "use_income_elasticity": spec.use_income_elasticity,
        "use_time_elasticity": spec.use_time_elasticity,
        "n_groups": spec.n_groups,
        "income_mean": spec.income_mean,
        "time_mean": spec.time_mean,
    }


def _spec_from_dict(data: Mapping[str, Any]) -> UtilitySpec:
    kind = TransformKind(data["transform"])
    alpha = data.get("alpha")
    transform = TransformSpec(kind, alpha if alpha is not None or not kind.has_alpha else 1.0)
    return UtilitySpec(
        transform=transform,
        use_headway=data.get("use_headway", False),
        use_changes=data.get("use_changes", False),
        use_income_elasticity=data.get("use_income_elasticity", False),
        use_time_elasticity=data.get("use_time_elasticity", False),
        n_groups=data["n_groups"],
        income_mean=data.get("income_mean"),
        time_mean=data.get("time_mean"),
    )


def fit_to_dict(result: FitResult, wald_targets: Mapping[str, float] | None = None) -> dict:
    """
    Serialise a fit. `wald_targets` maps parameter names to target values for Wald p-values.

    Raises:
        ValueError: If a Wald target names a parameter the model does not have.
    """
    names = result.parameter_names
    estimates = result.estimates.to_vector(result.spec)
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit",
        "spec": _spec_to_dict(result.spec),
        "parameter_names": list(names),
        "estimates": dict(zip(names, estimates.tolist())),
        "std_errors": {n: result.std_error(n) for n in names},
        "covariance": None if result.covariance is None else result.covariance.tolist(),
        "final_ll": result.final_ll,
        "null_ll": result.null_ll,
        "start_ll": _optional(result.start_ll),
        "rho_squared": result.rho_squared,
        "converged": result.converged,
        "n_obs": result.n_obs,
        "n_free_params": result.n_free_params,
        "iterations": result.iterations,
        "gradient_max_norm": _optional(result.gradient_max_norm),
        "message": result.message,
        "alpha_se_note": result.alpha_se_note,
    }
    if wald_targets:
        wald = {}
        for name, target in wald_targets.items():
            if name not in names:
                raise ValueError(f"The {result.spec.kind.value} model has no parameter {name!r}")
            p_value = result.wald(name, target) if result.std_errors is not None else None
            wald[name] = {"target": target, "p_value": p_value}
        data["wald"] = wald
    return data


def validate(data: Any, schema: Mapping) -> None:
    """
    Validate a JSON document against a schema.

    Raises:
        ResultFormatError: If the document does not match.
    """
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ResultFormatError(f"Invalid document at {path}: {e.message}") from e


def fit_from_dict(data: Mapping[str, Any]) -> FitResult:
    """
    Rebuild a fit from its JSON form.

    Raises:
        ResultFormatError: If the document is not a valid fit.
    """
    validate(data, FIT_SCHEMA)
    try:
        spec = _spec_from_dict(data["spec"])
        names = spec.parameter_names()
        if list(names) != list(data["parameter_names"]):
            raise ResultFormatError("The parameter names do not match the specification")
        estimates = ParameterSet.from_vector([data["estimates"][n] for n in names], spec)
    except (KeyError, ValueError) as e:
        if isinstance(e, ResultFormatError):
            raise
        raise ResultFormatError(f"Invalid fit document: {e}") from e

    covariance = None
    std_errors = None
    if data["covariance"] is not None:
        covariance = np.asarray(data["covariance"], dtype=np.float64)
        if covariance.shape != (len(names), len(names)):
            raise ResultFormatError(f"The covariance matrix must be {len(names)}x{len(names)}")
        std_errors = np.sqrt(np.diag(covariance))

    start_ll = data.get("start_ll")
    gradient = data.get("gradient_max_norm")
    return FitResult(
        estimates=estimates,
        covariance=covariance,
        std_errors=std_errors,
        final_ll=data["final_ll"],
        null_ll=data["null_ll"],
        converged=data["converged"],
        n_obs=data["n_obs"],
        n_free_params=data.get("n_free_params", len(names)),
        spec=spec,
        start_ll=math.nan if start_ll is None else start_ll,
        iterations=data.get("iterations", 0),
        gradient_max_norm=math.nan if gradient is None else gradient,
        message=data.get("message", ""),
        alpha_se_note=data.get("alpha_se_note"),
    )


def vtts_summary_to_dict(summary: VttsSummary) -> dict:
    """Serialise a VTTS summary; the curve itself goes to CSV."""
    point = summary.asymptotic_vtts
    interval = summary.interval
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "vtts",
        "transform": summary.kind.value,
        "method": summary.method.value,
        "level": summary.level,
        "point": summary.point,
        "low": interval.low if isinstance(interval, ConfidenceInterval) else None,
        "high": interval.high if isinstance(interval, ConfidenceInterval) else None,
        "draws": summary.draws,
        "seed": summary.seed,
        "asymptote_defined": not isinstance(point, UndefinedVtts),
        "unbounded": isinstance(interval, UnboundedInterval),
    }
    if isinstance(point, UndefinedVtts):
        data["diagnostic_ratio"] = point.diagnostic_ratio
        data["note"] = point.reason
    if isinstance(interval, UnboundedInterval):
        data["denominator_t"] = interval.denominator_t
    return data


def report_to_dict(report: TestReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "test",
        "method": report.method.value,
        "statistic": report.statistic,
        "p_value": report.p_value,
        "df": report.df,
        "models": list(report.models) if report.models else None,
    }


def replication_to_dict(
    summaries: Sequence[ReplicationSummary],
    runs: int,
    ll_gaps: Mapping[str, float] | None = None,
) -> dict:
    specs = []
    for summary in summaries:
        specs.append(
            {
                "transform": summary.spec.kind.value,
                "n_runs": summary.n_runs,
                "n_excluded": summary.n_excluded,
                "mean_final_ll": _optional(
                    float(summary.final_lls.mean()) if summary.final_lls.size else None
                ),
                "true_vtts": summary.true_vtts,
                "vtts_coverage": summary.vtts_coverage,
                "parameters": [
                    {
                        "name": p.name,
                        "mean": _optional(p.mean),
                        "empirical_sd": _optional(p.empirical_sd),
                        "mean_std_error": _optional(p.mean_std_error),
                    }
                    for p in summary.parameters
                ],
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "replication",
        "runs": runs,
        "specs": specs,
        "ll_gaps": dict(ll_gaps or {}),
    }


def build_manifest(
    command: str,
    argv: Sequence[str],
    options: Mapping[str, Any],
    seeds: Mapping[str, int] | None = None,
    outputs: Sequence[str] = (),
) -> dict:
    """Describe a CLI invocation well enough to reproduce its outputs."""
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool": "vttsbox",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "options": {k: _jsonable(v) for k, v in options.items()},
        "seeds": dict(seeds or {}),
        "outputs": list(outputs),
        "created": datetime.now(timezone.utc).isoformat(),
    }
    validate(manifest, MANIFEST_SCHEMA)
    return manifest


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "value") and not isinstance(value, (int, float, str, bool)):
        return value.value
    return value


def write_json(data: Mapping[str, Any], path: Path | str) -> Path:
    """Write a document as indented JSON; non-finite numbers become null."""
    path = Path(path)
    path.write_text(json.dumps(_strip_non_finite(data), indent=2) + "\n", encoding="utf-8")
    log.info(f"Wrote {path}")
    return path


def _strip_non_finite(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {k: _strip_non_finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_strip_non_finite(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def read_json(path: Path | str, schema: Mapping | None = None) -> dict:
    """
    Read a JSON document and optionally validate it.

    Raises:
        ResultFormatError: If the file is not JSON or does not match `schema`.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ResultFormatError(f"{str(path)!r} is not valid JSON: {e}") from e
    if schema is not None:
        validate(data, schema)
    return data
