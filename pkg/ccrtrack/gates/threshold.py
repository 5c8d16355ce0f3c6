from typing import Dict

from ..constants import GATE_THRESHOLD
from .update_gate import FitDiagnostics, UpdateGate


class ThresholdGate(UpdateGate):
    """ Accepts a frame when its error proxy is below a threshold. The true
        normalised error is used when known, otherwise the feature
        reconstruction score is compared with `score_threshold`. Frames
        with neither are rejected. """

    kind = "threshold"

    def __init__(self, threshold: float = GATE_THRESHOLD, score_threshold: float = 0.5):
        super().__init__()
        if threshold <= 0 or score_threshold <= 0:
            raise ValueError(
                f"Gate thresholds must be positive, got {threshold} and {score_threshold}"
            )
        self.threshold = float(threshold)
        self.score_threshold = float(score_threshold)

    def accept(self, diagnostics: FitDiagnostics) -> bool:
        if diagnostics.normalized_error is not None:
            return diagnostics.normalized_error < self.threshold
        if diagnostics.reconstruction_score is not None:
            return diagnostics.reconstruction_score < self.score_threshold
        return False

    def config(self) -> Dict:
        return {"kind": self.kind, "threshold": self.threshold, "score_threshold": self.score_threshold}
