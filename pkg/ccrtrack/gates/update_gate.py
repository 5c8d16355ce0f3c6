from abc import abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional


@dataclass(frozen=True)
class FitDiagnostics:
    """ What the tracker knows about one fitted frame. """

    reconstruction_score: Optional[float] = None
    """ Share of the raw descriptor energy outside the feature PCA subspace. """

    normalized_error: Optional[float] = None
    """ True error against ground truth; only set in synthetic mode. """

    frame_index: int = 0


class UpdateGate:
    kind: str = ""

    def __init__(self):
        pass

    @abstractmethod
    def accept(self, diagnostics: FitDiagnostics) -> bool:
        pass

    def config(self) -> Dict:
        return {"kind": self.kind}
