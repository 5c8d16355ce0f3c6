""" Tracking loop and evaluation protocol.

    Each frame is fitted from the previous estimate. A frame whose error
    exceeds the re-initialisation threshold counts as a failure: its fit is
    discarded, the next frame starts from this frame's ground truth and no
    model update is made from it. """

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger

from .cascade import CascadeModel, fit
from .constants import CED_UPPER_BOUND, GATE_THRESHOLD, REINIT_THRESHOLD, TIMING_PERCENTILES
from .evaluation import ced_and_auc, normalized_error
from .exceptions import FitError, InsufficientDataError
from .features import count_extractions
from .gates import FitDiagnostics, ThresholdGate, UpdateGate
from .image import ImageLike
from .incremental import IccrState, IncrementalSdmState, ModelSnapshot, iccr_update, isdm_update
from .pdm import ShapeParams, compose
from .synth import SyntheticSequence
from .timer import Timer


class IncrementalMode(str, Enum):
    NONE = "none"
    ICCR = "iccr"
    ISDM = "isdm"


@dataclass(frozen=True)
class TrackingProtocol:
    reinit_threshold: float = REINIT_THRESHOLD
    ced_upper_bound: float = CED_UPPER_BOUND
    gate_on_true_error: bool = True
    """ Synthetic mode: the gate sees the true normalised error. Otherwise
        it sees the feature reconstruction score. """

    isdm_samples: int = 10
    refresh_every: Optional[int] = None
    delta_x: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.reinit_threshold <= 0:
            raise ValueError(f"reinit_threshold must be positive, got {self.reinit_threshold}")


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    error: float
    reinitialised: bool
    gate_accepted: Optional[bool] = None
    updated: bool = False
    update_nanos: Optional[int] = None
    update_passes: Optional[int] = None


@dataclass
class TrackerState:
    snapshot: ModelSnapshot
    previous: ShapeParams
    gate: UpdateGate
    frame_index: int = 0
    reinit_count: int = 0
    records: List[FrameRecord] = field(default_factory=list)
    incremental: Optional[Union[IccrState, IncrementalSdmState]] = None


@dataclass(frozen=True)
class EvalReport:
    name: str
    records: tuple
    thresholds: np.ndarray
    ced: np.ndarray
    auc: float
    ced_upper_bound: float

    @property
    def errors(self) -> np.ndarray:
        return np.array([record.error for record in self.records])

    @property
    def failures(self) -> List[int]:
        return [record.frame for record in self.records if record.reinitialised]

    @property
    def reinit_count(self) -> int:
        return len(self.failures)

    @property
    def update_nanos(self) -> List[int]:
        return [record.update_nanos for record in self.records if record.update_nanos is not None]

    @property
    def mean_error(self) -> float:
        return float(self.errors.mean())

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([record.__dict__ for record in self.records])
        frame.insert(0, "sequence", self.name)
        return frame

    def summary(self) -> Dict:
        return {
            "sequence": self.name,
            "n_frames": len(self.records),
            "auc": self.auc,
            "ced_upper_bound": self.ced_upper_bound,
            "mean_error": self.mean_error,
            "reinit_count": self.reinit_count,
            "failures": self.failures,
            "updates": sum(record.updated for record in self.records),
            **timing_percentiles(self.update_nanos),
        }


def timing_percentiles(nanos: Sequence[int]) -> Dict[str, Optional[float]]:
    """ Update timing percentiles in milliseconds; None without updates. """
    if len(nanos) == 0:
        return {f"update_ms_p{p}": None for p in TIMING_PERCENTILES}
    values = np.percentile(np.asarray(nanos, dtype=float) / 1e6, TIMING_PERCENTILES)
    return {f"update_ms_p{p}": float(v) for p, v in zip(TIMING_PERCENTILES, values)}


def _diagnostics(model: CascadeModel, image: ImageLike, params: ShapeParams, error: float, frame: int, protocol: TrackingProtocol) -> FitDiagnostics:
    if protocol.gate_on_true_error:
        return FitDiagnostics(normalized_error=error, frame_index=frame)
    if model.pca is None:
        return FitDiagnostics(frame_index=frame)
    raw = model.extractor.describe(image, compose(model.pdm, params).points)
    return FitDiagnostics(reconstruction_score=model.pca.reconstruction_score(raw), frame_index=frame)


def _update(state: TrackerState, image: ImageLike, params: ShapeParams, protocol: TrackingProtocol, rng: np.random.Generator):
    with state.snapshot.updating():
        with count_extractions() as count, Timer() as timer:
            if isinstance(state.incremental, IccrState):
                state.incremental = iccr_update(state.incremental, image, params, protocol.delta_x)
            else:
                state.incremental = isdm_update(state.incremental, image, params, rng)
        state.snapshot.publish(state.incremental.model)
    return timer.elapsed_nanos(), count.passes


def track_sequence(
    model: CascadeModel,
    sequence: SyntheticSequence,
    incremental: Union[IncrementalMode, str] = IncrementalMode.NONE,
    gate: Optional[UpdateGate] = None,
    protocol: TrackingProtocol = TrackingProtocol(),
) -> EvalReport:
    if len(sequence) == 0:
        raise InsufficientDataError("empty sequence")
    if any(frame.params is None for frame in sequence.frames):
        raise InsufficientDataError(f"Sequence {sequence.name!r} has no ground-truth parameters")
    incremental = IncrementalMode(incremental)
    gate = gate if gate is not None else ThresholdGate(min(GATE_THRESHOLD, protocol.reinit_threshold / 2))
    if (
        incremental != IncrementalMode.NONE
        and protocol.gate_on_true_error
        and isinstance(gate, ThresholdGate)
        and gate.threshold >= protocol.reinit_threshold
    ):
        logger.warning(
            "Gate threshold is not below the reinit threshold, every tracked frame will update",
            gate_threshold=gate.threshold,
            reinit_threshold=protocol.reinit_threshold,
        )
    rng = np.random.default_rng(protocol.seed)
    state = TrackerState(ModelSnapshot(model), sequence.frames[0].params, gate)
    if incremental == IncrementalMode.ICCR:
        state.incremental = IccrState(model, refresh_every=protocol.refresh_every)
    elif incremental == IncrementalMode.ISDM:
        state.incremental = IncrementalSdmState(model, n_samples=protocol.isdm_samples)

    for index, frame in enumerate(sequence.frames):
        state.frame_index = index
        current = state.snapshot.current()
        try:
            estimate = fit(current, frame.image, state.previous)
        except FitError as error:
            logger.debug("Fit left the frame", frame=index, level=error.level)
            estimate = error.last_params
        frame_error = normalized_error(compose(current.pdm, estimate), frame.shape, sequence.eye_corners)

        if frame_error > protocol.reinit_threshold:
            state.reinit_count += 1
            state.previous = frame.params
            state.records.append(FrameRecord(index, frame_error, True))
            logger.debug("Tracking failure, re-initialising", frame=index, error=frame_error)
            continue

        state.previous = estimate
        if state.incremental is None:
            state.records.append(FrameRecord(index, frame_error, False))
            continue
        diagnostics = _diagnostics(current, frame.image, estimate, frame_error, index, protocol)
        accepted = state.gate.accept(diagnostics)
        if not accepted:
            state.records.append(FrameRecord(index, frame_error, False, gate_accepted=False))
            continue
        nanos, passes = _update(state, frame.image, estimate, protocol, rng)
        state.records.append(FrameRecord(index, frame_error, False, True, True, nanos, passes))
        logger.debug("Updated model", frame=index, error=frame_error, mode=incremental.value, nanos=nanos, passes=passes)

    thresholds, ced, auc = ced_and_auc([r.error for r in state.records], protocol.ced_upper_bound)
    report = EvalReport(sequence.name, tuple(state.records), thresholds, ced, auc, protocol.ced_upper_bound)
    logger.info(
        "Tracked sequence",
        sequence=sequence.name,
        frames=len(sequence),
        auc=auc,
        reinits=state.reinit_count,
        mode=incremental.value,
    )
    return report


def evaluate_sequences(
    model: CascadeModel,
    sequences: Sequence[SyntheticSequence],
    incremental: Union[IncrementalMode, str] = IncrementalMode.NONE,
    gate: Optional[UpdateGate] = None,
    protocol: TrackingProtocol = TrackingProtocol(),
    jobs: int = 1,
) -> List[EvalReport]:
    """ Tracks every sequence from the same starting model with independent
        states; reports come back in sequence order. """

    def run(index: int) -> EvalReport:
        seeded = TrackingProtocol(**{**protocol.__dict__, "seed": protocol.seed + index})
        return track_sequence(model, sequences[index], incremental, gate, seeded)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, range(len(sequences))))
    return [run(index) for index in range(len(sequences))]


def summarise_reports(reports: Sequence[EvalReport], upper_bound: Optional[float] = None) -> Dict:
    """ Pools every frame of every report into one CED / AUC summary. """
    if not reports:
        raise InsufficientDataError("No reports to summarise")
    upper_bound = upper_bound if upper_bound is not None else reports[0].ced_upper_bound
    errors = np.concatenate([report.errors for report in reports])
    _, _, auc = ced_and_auc(errors, upper_bound)
    nanos = [n for report in reports for n in report.update_nanos]
    return {
        "auc": auc,
        "ced_upper_bound": upper_bound,
        "mean_sequence_auc": float(np.mean([report.auc for report in reports])),
        "mean_error": float(errors.mean()),
        "reinit_count": sum(report.reinit_count for report in reports),
        "n_frames": int(errors.size),
        "n_sequences": len(reports),
        "updates": len(nanos),
        **timing_percentiles(nanos),
        "sequences": [report.summary() for report in reports],
    }
