"""Running estimation work with time limits."""
import signal
from collections.abc import Generator
from contextlib import contextmanager

__all__ = ("time_limit",)


@contextmanager
def time_limit(timeout: int | None = None) -> Generator[None, None, None]:
    """
    Context manager that interrupts its body after `timeout` seconds.

    Only usable from the main thread of a process. A `timeout` of None disables the limit.

    Args:
        timeout: Timeout limit in whole seconds.

    Raises:
        TimeoutError: If the body takes longer than `timeout` seconds.
    """
    if timeout is None:
        yield
        return

    def signal_handler(_signum, _frame):
        raise TimeoutError(f"time_limit call timed out after {timeout} seconds.")

    previous = signal.signal(signal.SIGALRM, signal_handler)
    signal.alarm(timeout)

    try:
        yield
    finally:
        signal.alarm(0)
        signal.signal(signal.SIGALRM, previous)
