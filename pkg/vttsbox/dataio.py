"""Reading and writing choice datasets and tables as CSV."""
from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from vttsbox.likelihood import ChoiceData, ChoiceRecord

__all__ = (
    "FLOAT_FORMAT",
    "InvalidValueError",
    "MissingColumnError",
    "ParsingError",
    "UnknownColumnError",
    "read_choice_data",
    "read_dataset",
    "write_curve",
    "write_dataset",
    "write_replication_table",
)

log = logging.getLogger(__name__)

# 17 significant digits reproduce every double exactly.
FLOAT_FORMAT = "%.17g"

REQUIRED_COLUMNS = ("chose_alt1", "dt", "dc")
OPTIONAL_COLUMNS = ("dh", "dk", "income", "mean_trip_time", "group")
COLUMNS = REQUIRED_COLUMNS + OPTIONAL_COLUMNS


class ParsingError(ValueError):
    """Raised when a dataset file cannot be parsed."""


class MissingColumnError(ParsingError):
    """Raised when a required column is absent."""


class UnknownColumnError(ParsingError):
    """Raised when the header has a column that is not part of the dataset format."""


class InvalidValueError(ParsingError):
    """Raised when a cell cannot be converted; the message names the row and column."""


def _to_float(frame: pd.DataFrame, column: str) -> NDArray[np.float64]:
    cells = frame[column].str.strip()
    try:
        return cells.replace("", "nan").astype(np.float64).to_numpy()
    except ValueError:
        pass

    # Find the offending cell for the error message.
    for row, cell in enumerate(cells, start=1):
        try:
            float(cell)
        except ValueError:
            raise InvalidValueError(f"Row {row}, column {column!r}: {cell!r} is not a number")
    raise InvalidValueError(f"Column {column!r} contains invalid values")  # pragma: no cover


def _fail_at(mask: NDArray[np.bool_], column: str, problem: str) -> None:
    if np.any(mask):
        row = int(np.argmax(mask)) + 1
        raise InvalidValueError(f"Row {row}, column {column!r}: {problem}")


def read_choice_data(path: Path | str) -> ChoiceData:
    """
    Read a dataset CSV into columns.

    Rows are numbered from 1, not counting the header. Empty `income` or `mean_trip_time` cells
    mean "missing"; absent optional columns take their defaults (0 for differences, group 0).

    Raises:
        MissingColumnError: If a required column is absent.
        UnknownColumnError: If the header has an unknown column.
        InvalidValueError: If a cell is not a valid value for its column.
        ParsingError: If the file is empty or not CSV.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise ParsingError(f"Dataset {str(path)!r} is empty") from e
    except pd.errors.ParserError as e:
        raise ParsingError(f"Dataset {str(path)!r} is not valid CSV: {e}") from e

    header = [c.strip() for c in frame.columns]
    frame.columns = header
    for column in header:
        if column not in COLUMNS:
            raise UnknownColumnError(f"Unknown column {column!r}; expected a subset of {COLUMNS}")
    for column in REQUIRED_COLUMNS:
        if column not in header:
            raise MissingColumnError(f"Required column {column!r} is missing")

    n = len(frame)
    values = {c: _to_float(frame, c) for c in header}

    for column in ("dt", "dc", "dh", "dk"):
        if column in values:
            _fail_at(~np.isfinite(values[column]), column, "value must be a finite number")
    chosen = values["chose_alt1"]
    _fail_at(~np.isin(chosen, (0.0, 1.0)), "chose_alt1", "value must be 0 or 1")
    for column in ("income", "mean_trip_time"):
        if column in values:
            column_values = values[column]
            _fail_at(~np.isnan(column_values) & ~(column_values > 0), column, "must be positive")
            _fail_at(np.isinf(column_values), column, "must be finite")
    group = values.get("group", np.zeros(n))
    invalid_group = ~np.isfinite(group) | (group < 0) | (group != np.round(group))
    _fail_at(invalid_group, "group", "value must be a non-negative integer")

    data = ChoiceData(
        dt=values["dt"],
        dc=values["dc"],
        chose_alt1=chosen == 1.0,
        dh=values.get("dh", np.zeros(n)),
        dk=values.get("dk", np.zeros(n)),
        income=values.get("income", np.full(n, np.nan)),
        mean_trip_time=values.get("mean_trip_time", np.full(n, np.nan)),
        group=group.astype(np.int64),
    )
    log.debug(f"Read {n} records from {path}")
    return data


def read_dataset(path: Path | str) -> list[ChoiceRecord]:
    """Read a dataset CSV into records. Raises the errors of `read_choice_data`."""
    return read_choice_data(path).to_records()


def write_dataset(data: Sequence[ChoiceRecord] | ChoiceData, path: Path | str) -> Path:
    """
    Write a dataset CSV with floats at 17 significant digits.

    Optional columns are only written when they carry information.
    """
    data = ChoiceData.coerce(data)
    frame = pd.DataFrame(
        {
            "chose_alt1": data.chose_alt1.astype(np.int64),
            "dt": data.dt,
            "dc": data.dc,
        }
    )
    if np.any(data.dh):
        frame["dh"] = data.dh
    if np.any(data.dk):
        frame["dk"] = data.dk
    if not np.all(np.isnan(data.income)):
        frame["income"] = data.income
    if not np.all(np.isnan(data.mean_trip_time)):
        frame["mean_trip_time"] = data.mean_trip_time
    if np.any(data.group):
        frame["group"] = data.group

    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    log.info(f"Wrote {len(frame)} records to {path}")
    return path


def write_curve(
    dts: ArrayLike, values: ArrayLike, path: Path | str, value_column: str = "vtts_per_hour"
) -> Path:
    """Write a curve over time differences as two columns: dt_minutes and `value_column`."""
    frame = pd.DataFrame({"dt_minutes": np.asarray(dts), value_column: np.asarray(values)})
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    log.info(f"Wrote {value_column} curve to {path}")
    return path


def write_replication_table(summaries: Sequence, path: Path | str) -> Path:
    """Write one row per (specification, parameter) of a replication study."""
    rows = [
        {
            "transform": summary.spec.kind.value,
            "parameter": parameter.name,
            "mean": parameter.mean,
            "empirical_sd": parameter.empirical_sd,
            "mean_std_error": parameter.mean_std_error,
            "n_runs": summary.n_runs,
            "n_excluded": summary.n_excluded,
        }
        for summary in summaries
        for parameter in summary.parameters
    ]
    path = Path(path)
    pd.DataFrame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    log.info(f"Wrote replication summary to {path}")
    return path
