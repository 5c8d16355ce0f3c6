""" Model files: one numpy .npz archive holding every matrix as float64
    plus a JSON manifest (format version, tool version, run configuration
    and its hash, extractor settings and per-level metadata). """

import json
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .cascade import CascadeLevel, CascadeModel, LevelErrors, Method
from .constants import MODEL_FORMAT_VERSION, TOOL_VERSION
from .exceptions import ModelFormatError
from .features import FeaturePca, build_extractor
from .pdm import PdmModel, Shape
from .regression import CrSolverState, FunctionalTrainingSet, LinearRegressor, PerturbationStats, SampledSolverState

PathLike = Union[str, Path]


def _level_arrays(index: int, level: CascadeLevel) -> Tuple[Dict[str, np.ndarray], Dict]:
    prefix = f"level{index}_"
    arrays = {
        prefix + "regressor": level.regressor.matrix,
        prefix + "mean": level.stats.mean,
        prefix + "covariance": level.stats.covariance,
    }
    state = level.solver_state
    if isinstance(state, CrSolverState):
        arrays.update({prefix + "a": state.a, prefix + "b": state.b, prefix + "sum_d": state.sum_d, prefix + "v_inv": state.v_inv})
        return arrays, {"solver": "continuous", "ridge": state.ridge}
    if isinstance(state, SampledSolverState):
        arrays[prefix + "v"] = state.v
        return arrays, {"solver": "sampled", "ridge": state.ridge}
    return arrays, {"solver": None}


def save_model(model: CascadeModel, path: PathLike, config: Optional[Dict] = None, config_hash: Optional[str] = None) -> Path:
    path = Path(path)
    arrays = {
        "pdm_mean": model.pdm.mean_shape.points,
        "pdm_basis": model.pdm.basis,
        "pdm_eigenvalues": model.pdm.eigenvalues,
        "columns": np.asarray(model.columns, dtype=np.int64),
    }
    levels = []
    for index, level in enumerate(model.levels):
        level_arrays, level_meta = _level_arrays(index, level)
        arrays.update(level_arrays)
        levels.append(level_meta)
    manifest = {
        "format_version": MODEL_FORMAT_VERSION,
        "tool_version": TOOL_VERSION,
        "method": model.method.value,
        "extractor": model.extractor.config(),
        "levels": levels,
        "training_errors": [[e.parameter_norm, e.landmark_error] for e in model.training_errors],
        "config": config,
        "config_hash": config_hash,
        "pca_total_variance": None,
        "functional_set_ridge": None,
    }
    if model.pca is not None:
        arrays.update({
            "pca_mean": model.pca.mean,
            "pca_projection": model.pca.projection,
            "pca_explained_variance": model.pca.explained_variance,
        })
        manifest["pca_total_variance"] = model.pca.total_variance
    if model.functional_set is not None:
        arrays["functional_blocks"] = model.functional_set.blocks
        manifest["functional_set_ridge"] = model.functional_set.ridge
    arrays["manifest"] = np.array(json.dumps(manifest, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        np.savez(handle, **arrays)
    logger.info("Saved model", path=str(path), method=model.method.value, levels=model.n_levels)
    return path


def _level(archive, index: int, meta: Dict) -> CascadeLevel:
    prefix = f"level{index}_"
    stats = PerturbationStats(archive[prefix + "mean"], archive[prefix + "covariance"])
    state = None
    if meta["solver"] == "continuous":
        state = CrSolverState(
            archive[prefix + "a"], archive[prefix + "b"], archive[prefix + "sum_d"], archive[prefix + "v_inv"], meta["ridge"]
        )
    elif meta["solver"] == "sampled":
        state = SampledSolverState(archive[prefix + "v"], meta["ridge"])
    return CascadeLevel(LinearRegressor(archive[prefix + "regressor"]), stats, state)


def load_model(path: PathLike) -> Tuple[CascadeModel, Dict]:
    """ Returns the model and its manifest. """
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            manifest = json.loads(str(archive["manifest"]))
            if manifest.get("format_version") != MODEL_FORMAT_VERSION:
                raise ModelFormatError(
                    f"Unsupported model format {manifest.get('format_version')}, expected {MODEL_FORMAT_VERSION}"
                )
            pdm = PdmModel(Shape(archive["pdm_mean"]), archive["pdm_basis"], archive["pdm_eigenvalues"])
            pca = None
            if manifest["pca_total_variance"] is not None:
                pca = FeaturePca(
                    archive["pca_mean"],
                    archive["pca_projection"],
                    archive["pca_explained_variance"],
                    manifest["pca_total_variance"],
                )
            functional_set = None
            if "functional_blocks" in archive.files:
                functional_set = FunctionalTrainingSet.from_blocks(archive["functional_blocks"], manifest["functional_set_ridge"])
            levels = tuple(_level(archive, index, meta) for index, meta in enumerate(manifest["levels"]))
            model = CascadeModel(
                levels,
                pdm,
                build_extractor(manifest["extractor"]),
                pca,
                Method(manifest["method"]),
                columns=tuple(int(c) for c in archive["columns"]),
                training_errors=tuple(LevelErrors(*errors) for errors in manifest["training_errors"]),
                functional_set=functional_set,
            )
    except (KeyError, ValueError, OSError) as error:
        if isinstance(error, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: cannot read model ({error})")
    return model, manifest


def save_pdm(pdm: PdmModel, path: PathLike) -> Path:
    """ A stand-alone shape model, as written next to generated data. """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = json.dumps({"format_version": MODEL_FORMAT_VERSION, "tool_version": TOOL_VERSION}, sort_keys=True)
    with path.open("wb") as handle:
        np.savez(handle, mean=pdm.mean_shape.points, basis=pdm.basis, eigenvalues=pdm.eigenvalues, manifest=np.array(manifest))
    return path


def load_pdm(path: PathLike) -> PdmModel:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            manifest = json.loads(str(archive["manifest"]))
            if manifest.get("format_version") != MODEL_FORMAT_VERSION:
                raise ModelFormatError(
                    f"Unsupported shape model format {manifest.get('format_version')}, expected {MODEL_FORMAT_VERSION}"
                )
            return PdmModel(Shape(archive["mean"]), archive["basis"], archive["eigenvalues"])
    except (KeyError, ValueError, OSError) as error:
        if isinstance(error, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: cannot read shape model ({error})")
