from typing import Callable

from .update_gate import FitDiagnostics, UpdateGate


class CallableGate(UpdateGate):
    """ Wraps any predicate over FitDiagnostics, e.g. a learned classifier. """

    kind = "pluggable"

    def __init__(self, predicate: Callable[[FitDiagnostics], bool]):
        super().__init__()
        self.predicate = predicate

    def accept(self, diagnostics: FitDiagnostics) -> bool:
        return bool(self.predicate(diagnostics))
