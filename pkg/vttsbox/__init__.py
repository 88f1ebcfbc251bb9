import os
from importlib import metadata

DEBUG = os.environ.get("VTTSBOX_DEBUG", False)

try:
    __version__ = metadata.version("vttsbox")
except metadata.PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0+unknown"

from vttsbox.estimation import FitOptions, FitResult, fit  # noqa: E402
from vttsbox.likelihood import ChoiceRecord, ParameterSet, UtilitySpec  # noqa: E402
from vttsbox.synthetic import SimConfig, generate_dataset, replicate_study  # noqa: E402
from vttsbox.transforms import TransformKind, TransformSpec  # noqa: E402
from vttsbox.utils.logging import init_logger, init_sentry  # noqa: E402

__all__ = (
    "ChoiceRecord",
    "DEBUG",
    "FitOptions",
    "FitResult",
    "ParameterSet",
    "SimConfig",
    "TransformKind",
    "TransformSpec",
    "UtilitySpec",
    "fit",
    "generate_dataset",
    "replicate_study",
)

init_sentry(__version__)
init_logger(DEBUG)
