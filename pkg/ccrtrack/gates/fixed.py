from .update_gate import FitDiagnostics, UpdateGate


class AlwaysGate(UpdateGate):
    kind = "always"

    def accept(self, diagnostics: FitDiagnostics) -> bool:
        return True


class NeverGate(UpdateGate):
    kind = "never"

    def accept(self, diagnostics: FitDiagnostics) -> bool:
        return False
