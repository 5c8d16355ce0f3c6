""" Exceptions raised by ccrtrack. Anything deriving from `CcrTrackError`
    is a data error and maps to exit code 2 on the command line. """

from typing import Any, Optional


class CcrTrackError(Exception):
    """ Base class of every error raised on bad data or bad models. """


class ShapeError(CcrTrackError, ValueError):
    """ Shapes or parameter vectors with the wrong dimensions or values. """


class ProcrustesError(ShapeError):
    """ Similarity alignment is undefined (e.g. all points coincide). """


class ZeroVarianceError(CcrTrackError, ValueError):
    """ Training shapes carry no variance to build a basis from. """


class ShapeOutOfFrameError(CcrTrackError, ValueError):
    """ A shape lies entirely outside the image it should be read from. """


class RankDeficientError(CcrTrackError, ValueError):
    """ A normal matrix cannot be inverted without regularisation. """


class NotPositiveSemidefiniteError(CcrTrackError, ValueError):
    """ A covariance matrix is asymmetric or has negative eigenvalues. """


class DegenerateStatisticsError(CcrTrackError, ValueError):
    """ Cascade residuals collapsed so no next-level statistics exist. """


class DataTermNotInvertibleError(CcrTrackError, ValueError):
    """ The data-term moment matrix B cannot be inverted (zero covariance). """


class InsufficientDataError(CcrTrackError, ValueError):
    """ Too few samples, frames or pairs for the requested estimate. """


class ModelFormatError(CcrTrackError, ValueError):
    """ A model or sequence file cannot be read back. """


class BenchEnvironmentError(CcrTrackError, RuntimeError):
    """ The benchmark harness cannot pin the linear-algebra layer. """


class FitError(CcrTrackError):
    """ Cascade fitting left the image; `last_params` is the last in-frame
        estimate. """

    def __init__(self, message: str, last_params: Optional[Any] = None, level: int = 0):
        super().__init__(message)
        self.last_params = last_params
        self.level = level
