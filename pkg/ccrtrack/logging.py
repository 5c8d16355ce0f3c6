import sys
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Optional

from loguru import logger

from .timer import Timer


@dataclass
class BoxedTime:
    """ Object to hold a time. """
    time: Optional[float] = None


def configure_logging(level: str = "INFO", json_lines: bool = True) -> None:
    """ Route all records to stderr; stdout is reserved for machine output.
        With `json_lines` every record is emitted as one JSON object. """
    logger.remove()
    if json_lines:
        logger.add(sys.stderr, level=level.upper(), serialize=True)
    else:
        logger.add(
            sys.stderr,
            level=level.upper(),
            format="{time:HH:mm:ss.SSS} | {level: <7} | {name}:{function} - {message} | {extra}",
        )


@contextmanager
def log_elapsed_time(name: str, **extra) -> Iterator[BoxedTime]:
    boxed_time = BoxedTime()
    try:
        with Timer() as timer:
            yield boxed_time
    finally:
        boxed_time.time = timer.elapsed_seconds()
        logger.debug(
            f"Elapsed time ({name}) = {boxed_time.time:.3f} seconds",
            phase=name,
            seconds=boxed_time.time,
            **extra,
        )
