""" Instrumented counters for whole-shape feature extraction.

    A pass is one sampling sweep over every landmark of one shape. A stencil
    pass samples the symmetric pair s + delta and s - delta along one axis in
    the same sweep and counts as one pass but two evaluations, so a
    functional block costs 3 passes and 5 whole-shape evaluations. Extraction
    costs are quoted in passes; `evaluations` keeps the underlying count. """

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Iterator, Tuple


@dataclass
class ExtractionCount:
    passes: int = 0
    evaluations: int = 0


_active_counts: ContextVar[Tuple[ExtractionCount, ...]] = ContextVar("active_counts", default=())


@contextmanager
def count_extractions() -> Iterator[ExtractionCount]:
    count = ExtractionCount()
    token = _active_counts.set(_active_counts.get() + (count,))
    try:
        yield count
    finally:
        _active_counts.reset(token)


def record_pass(n: int = 1, evaluations: int = 1) -> None:
    """ `n` passes, each evaluating the shape `evaluations` times. """
    for count in _active_counts.get():
        count.passes += n
        count.evaluations += n * evaluations
