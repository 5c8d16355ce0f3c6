""" Run configuration, resolved in layers: defaults < JSON file <
    CCRTRACK_* environment variables < command-line flags. The resolved
    configuration and its hash are embedded in every artifact. """

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from .constants import CED_UPPER_BOUND, ENV_PREFIX, GATE_THRESHOLD, REINIT_THRESHOLD

PathLike = Union[str, Path]


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    jobs: int = 1

    # data generation
    n_points: int = 12
    width: int = 160
    height: int = 160
    train_sequences: int = 4
    test_sequences: int = 10
    sequence_length: int = 60
    burst_probability: float = 0.0

    # models
    method: str = "ccr"
    extractor: str = "pixel-patch"
    patch_radius: int = 4
    variance_kept: float = 0.98
    pca_dim: int = 40
    n_levels: int = 3
    n_perturbations: int = 10
    validation_perturbations: int = 10
    ridge: Optional[float] = None
    gaps: Tuple[int, ...] = (1, 2, 3, 5)
    delta_x: float = 1.0

    # tracking
    incremental: str = "none"
    gate: str = "threshold"
    gate_threshold: float = GATE_THRESHOLD
    reinit_threshold: float = REINIT_THRESHOLD
    ced_upper_bound: float = CED_UPPER_BOUND
    isdm_samples: int = 10
    refresh_every: Optional[int] = None

    # benchmark
    d_sweep: Tuple[int, ...] = (250, 500, 1000, 2000)
    bench_m: int = 24
    bench_k: int = 10
    bench_levels: int = 3
    bench_reps: int = 21
    bench_warmup: int = 3

    def to_dict(self) -> Dict[str, Any]:
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def updated(self, values: Mapping[str, Any]) -> "RunConfig":
        """ Copy with `values` coerced to the field types. None leaves a
            field unchanged. """
        changes = {}
        for key, value in values.items():
            if value is None:
                continue
            if key not in FIELD_TYPES:
                raise ValueError(f"{key} is an invalid configuration field. Valid fields include {sorted(FIELD_TYPES)}")
            changes[key] = _coerce(key, value)
        return replace(self, **changes)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}

_INTEGER_TUPLES = {"gaps", "d_sweep"}
_OPTIONAL_FLOATS = {"ridge"}
_OPTIONAL_INTS = {"refresh_every"}


def _coerce(key: str, value: Any) -> Any:
    if key in _INTEGER_TUPLES:
        if isinstance(value, str):
            value = [part for part in value.split(",") if part.strip()]
        return tuple(int(part) for part in value)
    if key in _OPTIONAL_FLOATS:
        return None if value in ("", "none", "None") else float(value)
    if key in _OPTIONAL_INTS:
        return None if value in ("", "none", "None") else int(value)
    return type(getattr(RunConfig(), key))(value)


def is_config_data_valid(data: Any) -> Tuple[bool, str]:
    if not isinstance(data, dict):
        return False, "Not a dictionary"

    defaults = RunConfig()
    for key, value in data.items():
        if key not in FIELD_TYPES:
            return False, f"Unknown field {key}"
        if key in _INTEGER_TUPLES:
            if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
                return False, f"{key} is not a list of ints"
            continue
        if value is None and key in _OPTIONAL_FLOATS | _OPTIONAL_INTS:
            continue
        default = getattr(defaults, key)
        if isinstance(value, bool):
            return False, f"{key} is a bool"
        if key in _OPTIONAL_FLOATS or isinstance(default, float):
            if not isinstance(value, (int, float)):
                return False, f"{key} is not a number"
        elif key in _OPTIONAL_INTS or isinstance(default, int):
            if not isinstance(value, int):
                return False, f"{key} is not an int"
        elif not isinstance(value, str):
            return False, f"{key} is not a string"

    return True, "Formatting is good"


def read_config_file(path: PathLike) -> Dict[str, Any]:
    data = json.loads(Path(path).read_text())
    valid, reason = is_config_data_valid(data)
    if not valid:
        raise ValueError(f"{path}: {reason}")
    return data


def environment_values(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    values = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in FIELD_TYPES:
                values[name] = value
    return values


def resolve_config(
    config_path: Optional[PathLike] = None,
    flags: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    config = RunConfig()
    if config_path is not None:
        config = config.updated(read_config_file(config_path))
    config = config.updated(environment_values(environ))
    return config.updated(flags or {})
