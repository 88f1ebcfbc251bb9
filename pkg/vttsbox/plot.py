"""Optional SVG line plots of VTTS and utility curves."""
from __future__ import annotations

import logging
from collections.abc import Mapping
from pathlib import Path

from numpy.typing import ArrayLike

__all__ = ("write_curve_svg",)

log = logging.getLogger(__name__)

VTTS_LABEL = "VTTS [cost units / h]"
UTILITY_LABEL = "Utility difference"


def write_curve_svg(
    curves: Mapping[str, tuple[ArrayLike, ArrayLike]],
    path: Path | str,
    ylabel: str = VTTS_LABEL,
) -> bool:
    """
    Plot one or more curves over the time difference into an SVG file.

    Args:
        curves: Maps a legend label to its (dt in minutes, value) arrays.
        path: The SVG file to write.
        ylabel: Label of the value axis.

    Returns:
        False without writing anything if matplotlib is not installed.
    """
    try:
        from matplotlib.figure import Figure
    except ImportError:
        log.warning("matplotlib is not installed; skipping the SVG plot.")
        return False

    figure = Figure(figsize=(6.4, 4.0))
    ax = figure.add_subplot()
    for label, (dts, values) in curves.items():
        ax.plot(dts, values, label=label)
    ax.set_xlabel("Time difference [min]")
    ax.set_ylabel(ylabel)
    ax.axhline(0.0, color="grey", linewidth=0.5)
    ax.legend()
    figure.savefig(Path(path), format="svg")
    log.info(f"Wrote plot to {path}")
    return True
