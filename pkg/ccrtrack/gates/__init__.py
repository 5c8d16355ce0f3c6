from .fixed import AlwaysGate, NeverGate
from .pluggable import CallableGate
from .threshold import ThresholdGate
from .update_gate import FitDiagnostics, UpdateGate

GATE_KINDS = {
    ThresholdGate.kind: ThresholdGate,
    AlwaysGate.kind: AlwaysGate,
    NeverGate.kind: NeverGate,
}


def build_gate(kind: str, **kwargs) -> UpdateGate:
    if kind not in GATE_KINDS:
        raise ValueError(f"{kind} is an invalid gate kind. Valid kinds include {list(GATE_KINDS)}")
    return GATE_KINDS[kind](**kwargs)
