import logging
import os
import sys

__all__ = ("FORMAT", "init_logger", "init_sentry")

FORMAT = "%(asctime)s | %(process)5s | %(name)30s | %(levelname)8s | %(message)s"


def init_logger(debug: bool) -> None:
    """Initialise the package logger with a handler that outputs to stdout."""
    log = logging.getLogger("vttsbox")
    log.setLevel(logging.DEBUG if debug else logging.INFO)
    log.propagate = True

    # Worker processes re-import the package; one handler is enough.
    if any(getattr(h, "_vttsbox", False) for h in log.handlers):
        return

    formatter = logging.Formatter(FORMAT)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(formatter)
    handler._vttsbox = True
    log.addHandler(handler)


def init_sentry(version: str) -> None:
    """Initialise the Sentry SDK if it's installed and a DSN is configured."""
    dsn = os.environ.get("VTTSBOX_SENTRY_DSN", "")
    if not dsn:
        return

    try:
        import sentry_sdk
    except ImportError:
        return

    sentry_sdk.init(dsn=dsn, release=f"vttsbox@{version}")
