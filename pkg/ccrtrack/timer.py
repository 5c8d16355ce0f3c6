import time
from collections import defaultdict
from contextlib import contextmanager
from time import perf_counter_ns
from typing import Dict, Iterator, Optional


class Timer:
    """ Context manager that tracks elapsed time spent in block. """

    _start: Optional[int] = None
    """ Start time in nanoseconds, from the monotonic `time.perf_counter_ns()` """

    _end: Optional[int] = None
    """ End time in nanoseconds, from the monotonic `time.perf_counter_ns()` """

    def elapsed_nanos(self) -> int:
        """ How many nanoseconds did this timer capture? """
        if self._start is not None and self._end is not None:
            return self._end - self._start
        else:
            raise ValueError("Cannot measure incomplete timer")

    def elapsed_seconds(self) -> float:
        """ How many seconds did this timer capture? """
        return self.elapsed_nanos() * 1e-9

    def __enter__(self):
        self._start = perf_counter_ns()
        return self

    def __exit__(self, *args):
        self._end = perf_counter_ns()


class PhaseTimer:
    """ Accumulates nanoseconds per named phase across repeated blocks. """

    def __init__(self):
        self.nanos: Dict[str, int] = defaultdict(int)

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        with Timer() as timer:
            yield
        self.nanos[name] += timer.elapsed_nanos()


def clock_resolution_nanos() -> float:
    return time.get_clock_info("perf_counter").resolution * 1e9
