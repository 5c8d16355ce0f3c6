""" Update-cost benchmark for incremental SDM against iCCR.

    For every feature dimension d in the sweep the harness builds synthetic
    solver states of the right sizes and times one tracked frame's worth of
    work per method, split into the phases of a per-frame update:

      iCCR: one extraction phase (3 passes), then per level a projection of
            the feature vector and its two gradient images and a Woodbury
            update with the regressor recompute.
      iSDM: per level, K sampled extractions, a projection of the K raw
            descriptors and the rank-K update.

    Only the update phase is used for the log-log slope. """

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from threadpoolctl import threadpool_info, threadpool_limits

from .exceptions import BenchEnvironmentError
from .features import PixelPatch, count_extractions
from .incremental import iccr_level_update, isdm_level_update, woodbury_inner
from .pdm import Shape, train_pdm
from .regression import CrSolverState, LinearRegressor, PerturbationStats, SampledSolverState, symmetrize
from .synth import face_template, make_identity, make_training_shapes, render_shape
from .timer import PhaseTimer, Timer, clock_resolution_nanos

PathLike = Union[str, Path]

METHODS = ("iccr", "isdm")
PHASES = ("extraction", "projection", "update")
SAMPLE_COLUMNS = ["method", "d", "phase", "rep", "nanos"]

# Points whose median is below this many clock ticks are flagged.
RESOLUTION_TICKS = 100


@dataclass(frozen=True)
class BenchConfig:
    d_sweep: Tuple[int, ...] = (250, 500, 1000, 2000)
    m: int = 24
    k: int = 10
    levels: int = 3
    repetitions: int = 21
    warmup: int = 3
    raw_factor: int = 10
    """ Raw descriptor length D = raw_factor * d for the projection phase. """

    n_points: int = 49
    patch_radius: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "d_sweep", tuple(int(d) for d in self.d_sweep))
        if list(self.d_sweep) != sorted(self.d_sweep) or any(d < 2 for d in self.d_sweep):
            raise ValueError(f"d_sweep must be sorted ascending with d >= 2, got {list(self.d_sweep)}")
        if self.repetitions < 5:
            raise ValueError(f"At least 5 repetitions are required, got {self.repetitions}")
        if self.m < 1 or self.k < 1 or self.levels < 1 or self.warmup < 0 or self.raw_factor < 1:
            raise ValueError("m, k, levels and raw_factor must be positive and warmup non-negative")


@dataclass
class BenchReport:
    config: BenchConfig
    samples: pd.DataFrame
    extraction_passes: Dict[str, int] = field(default_factory=dict)
    inner_dims: Dict[int, Tuple[int, int]] = field(default_factory=dict)

    def medians(self) -> pd.DataFrame:
        """ Median and inter-quartile range per (method, d, phase). """
        if self.samples.empty:
            return pd.DataFrame(columns=["method", "d", "phase", "median", "iqr"])
        grouped = self.samples.groupby(["method", "d", "phase"])["nanos"]
        table = grouped.median().rename("median").to_frame()
        table["iqr"] = grouped.quantile(0.75) - grouped.quantile(0.25)
        return table.reset_index()

    def slopes(self, phase: str = "update") -> Dict[str, Optional[float]]:
        """ Slope of log(median time) against log(d), per method. """
        medians = self.medians()
        slopes = {}
        for method in METHODS:
            rows = medians[(medians["method"] == method) & (medians["phase"] == phase)]
            if len(rows) < 2:
                slopes[method] = None
                continue
            slope, _ = np.polyfit(np.log(rows["d"].to_numpy(float)), np.log(rows["median"].to_numpy(float)), 1)
            slopes[method] = float(slope)
        return slopes

    def update_ratio(self, d: int) -> float:
        """ Median per-frame update time of iSDM over iCCR at `d`. """
        medians = self.medians()
        rows = medians[(medians["d"] == d) & (medians["phase"] == "update")].set_index("method")["median"]
        return float(rows["isdm"] / rows["iccr"])

    def flagged(self) -> List[Dict]:
        """ Points too close to the clock resolution to trust. """
        limit = RESOLUTION_TICKS * clock_resolution_nanos()
        medians = self.medians()
        rows = medians[medians["median"] < limit]
        return [{"method": r.method, "d": int(r.d), "phase": r.phase} for r in rows.itertuples()]

    def to_json_dict(self) -> Dict:
        return {
            "config": asdict(self.config),
            "slopes": self.slopes(),
            "medians": self.medians().to_dict(orient="records"),
            "flagged": self.flagged(),
            "extraction_passes": self.extraction_passes,
            "inner_dims": {str(d): list(dims) for d, dims in self.inner_dims.items()},
        }


def _random_psd(rng: np.random.Generator, size: int, floor: float) -> np.ndarray:
    """ Cheap well-conditioned symmetric matrix: a scaled random symmetric
        part plus a diagonal shift. """
    noise = rng.standard_normal((size, size)) / np.sqrt(size)
    return symmetrize(noise) * 0.1 + floor * np.eye(size)


def _iccr_state(rng: np.random.Generator, d: int, m: int) -> Tuple[CrSolverState, np.ndarray]:
    covariance = _random_psd(rng, m, 1.0)
    stats = PerturbationStats(rng.standard_normal(m) * 0.1, covariance)
    sum_d = rng.standard_normal((d, m + 1))
    state = CrSolverState(stats.cross_moments(), stats.moment_matrix(), sum_d, _random_psd(rng, d, 1.0), 1e-3)
    return state, rng.standard_normal((d, m + 1))


def _isdm_state(rng: np.random.Generator, d: int, m: int, k: int) -> Tuple[LinearRegressor, SampledSolverState, np.ndarray, np.ndarray]:
    regressor = LinearRegressor(rng.standard_normal((m, d)))
    state = SampledSolverState(_random_psd(rng, d, 1.0), 1e-3)
    return regressor, state, rng.standard_normal((d, k)), rng.standard_normal((m, k))


class _ExtractionScene:
    """ A real extractor on a rendered face for the extraction phase. """

    def __init__(self, config: BenchConfig):
        template, eyes = face_template(config.n_points)
        pdm = train_pdm(make_training_shapes(template, 40, seed=config.seed))
        identity = make_identity(pdm, eyes, seed=config.seed)
        self.points = pdm.mean_shape.points + np.array([identity.width / 2.0, identity.height / 2.0])
        self.image = render_shape(identity, Shape(self.points))
        self.extractor = PixelPatch(config.n_points, config.patch_radius)

    def functional_passes(self) -> None:
        self.extractor.describe(self.image, self.points)
        self.extractor.stencil(self.image, self.points, axis=0, delta=1.0)
        self.extractor.stencil(self.image, self.points, axis=1, delta=1.0)

    def sampled_passes(self, count: int) -> None:
        for _ in range(count):
            self.extractor.describe(self.image, self.points)


def _check_single_threaded() -> None:
    busy = [info for info in threadpool_info() if info.get("num_threads", 1) != 1]
    if busy:
        raise BenchEnvironmentError(
            f"Linear-algebra thread pools are not pinned to one thread: {[b.get('internal_api') for b in busy]}"
        )


def bench_updates(config: BenchConfig = BenchConfig()) -> BenchReport:
    rng = np.random.default_rng(config.seed)
    scene = _ExtractionScene(config)
    rows = []
    passes = {}
    inner_dims = {}

    with threadpool_limits(limits=1):
        _check_single_threaded()
        for d in config.d_sweep:
            raw_dim = config.raw_factor * d
            projection = rng.standard_normal((d, raw_dim)) / np.sqrt(raw_dim)
            functional_raw = rng.standard_normal((raw_dim, 3))
            sampled_raw = rng.standard_normal((raw_dim, config.k))
            iccr_state, block = _iccr_state(rng, d, config.m)
            regressor, isdm_state, x_s, y_s = _isdm_state(rng, d, config.m, config.k)
            inner_dims[d] = woodbury_inner(iccr_state, block).shape

            def iccr_frame(timer: PhaseTimer) -> None:
                with timer.phase("extraction"):
                    scene.functional_passes()
                for _ in range(config.levels):
                    with timer.phase("projection"):
                        projection @ functional_raw
                    with timer.phase("update"):
                        iccr_level_update(iccr_state, block).regressor()

            def isdm_frame(timer: PhaseTimer) -> None:
                for _ in range(config.levels):
                    with timer.phase("extraction"):
                        scene.sampled_passes(config.k)
                    with timer.phase("projection"):
                        projection @ sampled_raw
                    with timer.phase("update"):
                        isdm_level_update(regressor, isdm_state, x_s, y_s)

            for method, frame in (("iccr", iccr_frame), ("isdm", isdm_frame)):
                for _ in range(config.warmup):
                    frame(PhaseTimer())
                for rep in range(config.repetitions):
                    timer = PhaseTimer()
                    with count_extractions() as count, Timer() as total:
                        frame(timer)
                    passes[method] = count.passes
                    for phase in PHASES:
                        rows.append((method, d, phase, rep, timer.nanos[phase]))
                    rows.append((method, d, "total", rep, total.elapsed_nanos()))
            logger.info("Benchmarked update costs", d=d, m=config.m, k=config.k, levels=config.levels)

    samples = pd.DataFrame(rows, columns=SAMPLE_COLUMNS).astype({"d": "int64", "rep": "int64", "nanos": "int64"})
    report = BenchReport(config, samples, passes, inner_dims)
    for point in report.flagged():
        logger.warning("Timing at the clock resolution limit", **point)
    return report


def emit_report(report: BenchReport, directory: PathLike, extra: Optional[Dict] = None) -> Tuple[Path, Path]:
    """ bench.csv in long format plus bench.json with medians and slopes.
        `extra` entries (run configuration, hashes) are merged into the JSON. """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "bench.csv"
    json_path = directory / "bench.json"
    report.samples.to_csv(csv_path, index=False, columns=SAMPLE_COLUMNS)
    summary = report.to_json_dict()
    summary.update(extra or {})
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def load_samples(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)
