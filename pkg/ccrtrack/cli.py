""" ccrtrack command line.

    Subcommands: gen-data, stats, train, track, eval, bench-update.
    Exit codes: 0 on success, 1 on usage errors, 2 on data errors.
    Logs go to stderr as JSON lines; with --json the result of a command is
    printed to stdout as a single JSON document. """

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from .bench import BenchConfig, bench_updates, emit_report
from .cascade import Method, train_ccr, train_sdm
from .config import FIELD_TYPES, RunConfig, resolve_config
from .constants import TOOL_VERSION
from .evaluation import ced_and_auc
from .exceptions import CcrTrackError, InsufficientDataError
from .features import EXTRACTOR_KINDS, build_extractor, fit_feature_pca
from .gates import GATE_KINDS, build_gate
from .logging import configure_logging, log_elapsed_time
from .model_io import load_model, load_pdm, save_model, save_pdm
from .pdm import PdmModel, train_pdm
from .synth import (
    MotionModel,
    SyntheticSequence,
    attach_params,
    estimate_stats,
    export_sequence,
    face_template,
    generate_sequence,
    load_sequences,
    make_identity,
    make_training_shapes,
)
from .timer import Timer
from .tracker import IncrementalMode, TrackingProtocol, evaluate_sequences, summarise_reports, timing_percentiles

DEFAULTS = RunConfig()

PDM_FILE = "pdm.npz"
PDM_TRAINING_SHAPES = 200

LOG_LEVELS = ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]


class CliParser(argparse.ArgumentParser):
    """ Usage errors exit with status 1. """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _flag(parser: argparse.ArgumentParser, name: str, field: str, kind=None, help: str = "", **kwargs) -> None:
    """ A flag that overrides the `field` entry of the run configuration;
        unset flags fall through to the file and environment layers. """
    default = getattr(DEFAULTS, field)
    shown = ",".join(str(v) for v in default) if isinstance(default, tuple) else default
    parser.add_argument(name, dest=field, type=kind or str, default=None, help=f"{help} (default: {shown})", **kwargs)


def build_parser() -> CliParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON run configuration file.")
    common.add_argument(
        "--log-level", default="INFO", type=str.upper, choices=LOG_LEVELS, help="Log level for stderr records. (default: INFO)"
    )
    common.add_argument("--json", action="store_true", help="Print the command result to stdout as JSON.")
    _flag(common, "--jobs", "jobs", int, help="Worker threads for per-image and per-sequence work.")
    _flag(common, "--seed", "seed", int, help="Seed for every random draw.")

    parser = CliParser(prog="ccrtrack", description="Cascaded continuous regression for facial landmark tracking.")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=CliParser)
    commands.required = True

    gen = commands.add_parser("gen-data", parents=[common], help="Generate synthetic train and test sequences.")
    gen.add_argument("--out", type=Path, required=True, help="Output directory.")
    _flag(gen, "--n-points", "n_points", int, help="Landmarks per face (12 or 49).")
    _flag(gen, "--width", "width", int, help="Frame width.")
    _flag(gen, "--height", "height", int, help="Frame height.")
    _flag(gen, "--train-sequences", "train_sequences", int, help="Number of training sequences.")
    _flag(gen, "--test-sequences", "test_sequences", int, help="Number of test sequences.")
    _flag(gen, "--length", "sequence_length", int, help="Frames per sequence.")
    _flag(gen, "--burst-probability", "burst_probability", float, help="Per-frame probability of a motion burst.")
    _flag(gen, "--variance-kept", "variance_kept", float, help="Shape variance kept by the generating shape model.")

    stats = commands.add_parser("stats", parents=[common], help="Estimate the inter-frame data term.")
    stats.add_argument("--data", type=Path, required=True, help="Directory of sequence directories.")
    stats.add_argument("--pdm", type=Path, default=None, help="Shape model file; trained from the data when absent.")
    _flag(stats, "--gaps", "gaps", help="Comma-separated frame gaps.")
    _flag(stats, "--variance-kept", "variance_kept", float, help="Shape variance kept when training a shape model.")

    train = commands.add_parser("train", parents=[common], help="Train an SDM or CCR cascade.")
    train.add_argument("--data", type=Path, required=True, help="Directory of training sequence directories.")
    train.add_argument("--out", type=Path, required=True, help="Model file to write.")
    train.add_argument("--pdm", type=Path, default=None, help="Shape model file; trained from the data when absent.")
    _flag(train, "--method", "method", choices=[m.value for m in Method], help="Cascade training method.")
    _flag(train, "--extractor", "extractor", choices=list(EXTRACTOR_KINDS), help="Feature extractor.")
    _flag(train, "--patch-radius", "patch_radius", int, help="Pixel patch radius.")
    _flag(train, "--pca-dim", "pca_dim", int, help="Feature dimension after PCA.")
    _flag(train, "--variance-kept", "variance_kept", float, help="Shape variance kept when training a shape model.")
    _flag(train, "--levels", "n_levels", int, help="Cascade levels.")
    _flag(train, "--perturbations", "n_perturbations", int, help="Sampled perturbations per image (sdm).")
    _flag(train, "--validation-perturbations", "validation_perturbations", int, help="Perturbations per image used to estimate the next level (ccr).")
    _flag(train, "--ridge", "ridge", help="Ridge term; 'none' for 1e-3 * trace / d.")
    _flag(train, "--gaps", "gaps", help="Comma-separated frame gaps for the data term.")
    _flag(train, "--delta-x", "delta_x", float, help="Finite-difference step in pixels.")

    track = commands.add_parser("track", parents=[common], help="Track test sequences with a trained model.")
    track.add_argument("--model", type=Path, required=True, help="Model file.")
    track.add_argument("--data", type=Path, required=True, help="Directory of test sequence directories.")
    track.add_argument("--out", type=Path, required=True, help="Output directory for frames.csv and track.json.")
    _flag(track, "--incremental", "incremental", choices=[m.value for m in IncrementalMode], help="Online update rule.")
    _flag(track, "--gate", "gate", choices=list(GATE_KINDS), help="Update gate.")
    _flag(track, "--gate-threshold", "gate_threshold", float, help="Error threshold of the threshold gate.")
    _flag(track, "--reinit-threshold", "reinit_threshold", float, help="Normalised error above which a frame fails.")
    _flag(track, "--ced-upper-bound", "ced_upper_bound", float, help="Upper error bound of the CED curve.")
    _flag(track, "--isdm-samples", "isdm_samples", int, help="Sampled perturbations per level for isdm updates.")
    _flag(track, "--refresh-every", "refresh_every", help="Re-invert from stored blocks every N iccr updates; 'none' disables.")

    evaluate = commands.add_parser("eval", parents=[common], help="CED curve and summary from tracked frames.")
    evaluate.add_argument("--frames", type=Path, required=True, help="frames.csv written by track.")
    evaluate.add_argument("--out", type=Path, required=True, help="Output directory.")
    _flag(evaluate, "--ced-upper-bound", "ced_upper_bound", float, help="Upper error bound of the CED curve.")

    bench = commands.add_parser("bench-update", parents=[common], help="Benchmark iccr against isdm update costs.")
    bench.add_argument("--out", type=Path, required=True, help="Output directory for bench.csv and bench.json.")
    _flag(bench, "--d-sweep", "d_sweep", help="Comma-separated feature dimensions.")
    _flag(bench, "--m", "bench_m", int, help="Number of shape parameters.")
    _flag(bench, "--k", "bench_k", int, help="Sampled perturbations per level for isdm.")
    _flag(bench, "--levels", "bench_levels", int, help="Cascade levels.")
    _flag(bench, "--reps", "bench_reps", int, help="Timed repetitions per point.")
    _flag(bench, "--warmup", "bench_warmup", int, help="Untimed warm-up repetitions per point.")
    return parser


def _artifact_header(config: RunConfig) -> Dict:
    return {"config": config.to_dict(), "config_hash": config.hash(), "tool_version": TOOL_VERSION}


def _sequence_seeds(seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def _shape_model(sequences: Sequence[SyntheticSequence], pdm_path: Optional[Path], config: RunConfig) -> PdmModel:
    if pdm_path is not None:
        return load_pdm(pdm_path)
    shapes = [frame.shape for sequence in sequences for frame in sequence.frames]
    return train_pdm(shapes, config.variance_kept)


def gen_data(config: RunConfig, out: Path) -> Dict:
    template, eyes = face_template(config.n_points)
    seeds = _sequence_seeds(config.seed, 1 + config.train_sequences + config.test_sequences)
    pdm = train_pdm(make_training_shapes(template, PDM_TRAINING_SHAPES, seed=seeds[0]), config.variance_kept)
    save_pdm(pdm, out / PDM_FILE)
    motion = MotionModel(burst_probability=config.burst_probability)
    header = _artifact_header(config)
    written = {"train": [], "test": []}
    splits = (("train", seeds[1:1 + config.train_sequences]), ("test", seeds[1 + config.train_sequences:]))
    for split, split_seeds in splits:
        for index, seed in enumerate(split_seeds):
            name = f"seq_{index:02d}"
            identity = make_identity(pdm, eyes, seed=seed, width=config.width, height=config.height)
            sequence = generate_sequence(identity, config.sequence_length, motion, seed=seed + 1, name=name)
            export_sequence(sequence, out / split / name, extra={"config_hash": header["config_hash"], "seed": seed})
            written[split].append(name)
    logger.info("Generated sequences", out=str(out), train=len(written["train"]), test=len(written["test"]))
    return {"out": str(out), "pdm": str(out / PDM_FILE), **written, **header}


def sequence_stats(config: RunConfig, data: Path, pdm_path: Optional[Path]) -> Dict:
    sequences = load_sequences(data)
    pdm = _shape_model(sequences, pdm_path, config)
    sequences = [attach_params(sequence, pdm) for sequence in sequences]
    estimate = estimate_stats(sequences, config.gaps)
    return {
        "mean": estimate.stats.mean.tolist(),
        "covariance": estimate.stats.covariance.tolist(),
        "sample_count": estimate.sample_count,
        "gaps": list(estimate.gaps),
        **_artifact_header(config),
    }


def train(config: RunConfig, data: Path, out: Path, pdm_path: Optional[Path]) -> Dict:
    sequences = load_sequences(data)
    pdm = _shape_model(sequences, pdm_path, config)
    sequences = [attach_params(sequence, pdm) for sequence in sequences]
    frames = [frame for sequence in sequences for frame in sequence.frames]
    images = [frame.image for frame in frames]
    ground_truth = [frame.params for frame in frames]

    extractor_config = {"kind": config.extractor, "n_points": pdm.n_points}
    if config.extractor == "pixel-patch":
        extractor_config["patch_radius"] = config.patch_radius
    extractor = build_extractor(extractor_config)

    raw = [extractor.describe(frame.image, frame.shape.points) for frame in frames]
    d = min(config.pca_dim, len(raw) - 1, extractor.raw_dim)
    if d < 1:
        raise InsufficientDataError(f"Too few training frames for a feature PCA, got {len(raw)}")
    pca = fit_feature_pca(raw, d)
    init_stats = estimate_stats(sequences, config.gaps).stats

    with log_elapsed_time("train", method=config.method):
        if Method(config.method) == Method.SDM:
            model = train_sdm(
                images, ground_truth, pdm, extractor, pca, init_stats,
                n_perturbations=config.n_perturbations, n_levels=config.n_levels,
                ridge=config.ridge, seed=config.seed, jobs=config.jobs,
            )
        else:
            model = train_ccr(
                images, ground_truth, pdm, extractor, pca, init_stats,
                n_levels=config.n_levels, ridge=config.ridge,
                validation_perturbations=config.validation_perturbations,
                seed=config.seed, jobs=config.jobs, delta_x=config.delta_x,
            )
    save_model(model, out, config=config.to_dict(), config_hash=config.hash())
    return {
        "model": str(out),
        "method": model.method.value,
        "levels": model.n_levels,
        "feature_dim": pca.d,
        "n_params": pdm.n_params,
        "n_images": len(images),
        "training_errors": [[e.parameter_norm, e.landmark_error] for e in model.training_errors],
        **_artifact_header(config),
    }


def track(config: RunConfig, model_path: Path, data: Path, out: Path) -> Dict:
    model, manifest = load_model(model_path)
    sequences = load_sequences(data, model.pdm)
    gate_options = {"threshold": config.gate_threshold} if config.gate == "threshold" else {}
    gate = build_gate(config.gate, **gate_options)
    protocol = TrackingProtocol(
        reinit_threshold=config.reinit_threshold,
        ced_upper_bound=config.ced_upper_bound,
        isdm_samples=config.isdm_samples,
        refresh_every=config.refresh_every,
        delta_x=config.delta_x,
        seed=config.seed,
    )
    with Timer() as timer:
        reports = evaluate_sequences(model, sequences, config.incremental, gate, protocol, jobs=config.jobs)
    out.mkdir(parents=True, exist_ok=True)
    pd.concat([report.to_frame() for report in reports], ignore_index=True).to_csv(out / "frames.csv", index=False)
    summary = {
        **summarise_reports(reports, config.ced_upper_bound),
        "incremental": config.incremental,
        "gate": config.gate,
        "method": model.method.value,
        "model_config_hash": manifest.get("config_hash"),
        "wall_seconds": timer.elapsed_seconds(),
        **_artifact_header(config),
    }
    (out / "track.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    logger.info("Tracked sequences", sequences=len(reports), auc=summary["auc"], reinits=summary["reinit_count"])
    return summary


def evaluate(config: RunConfig, frames_path: Path, out: Path) -> Dict:
    frames = pd.read_csv(frames_path)
    if frames.empty:
        raise InsufficientDataError(f"{frames_path} holds no frames")
    thresholds, ced, auc = ced_and_auc(frames["error"].to_numpy(float), config.ced_upper_bound)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"threshold": thresholds, "ced": ced}).to_csv(out / "ced.csv", index=False)
    frames[["sequence", "frame", "error", "reinitialised"]].to_csv(out / "errors.csv", index=False)

    sequences = []
    for name, rows in frames.groupby("sequence", sort=True):
        _, _, sequence_auc = ced_and_auc(rows["error"].to_numpy(float), config.ced_upper_bound)
        sequences.append({
            "sequence": name,
            "auc": sequence_auc,
            "mean_error": float(rows["error"].mean()),
            "reinit_count": int(rows["reinitialised"].sum()),
        })
    nanos = frames["update_nanos"].dropna().to_numpy(float) if "update_nanos" in frames else np.zeros(0)
    summary = {
        "auc": auc,
        "ced_upper_bound": config.ced_upper_bound,
        "mean_sequence_auc": float(np.mean([s["auc"] for s in sequences])),
        "mean_error": float(frames["error"].mean()),
        "reinit_count": int(frames["reinitialised"].sum()),
        "n_frames": int(len(frames)),
        "updates": int(nanos.size),
        **timing_percentiles(nanos),
        "sequences": sequences,
        **_artifact_header(config),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def bench_update(config: RunConfig, out: Path) -> Dict:
    bench_config = BenchConfig(
        d_sweep=config.d_sweep,
        m=config.bench_m,
        k=config.bench_k,
        levels=config.bench_levels,
        repetitions=config.bench_reps,
        warmup=config.bench_warmup,
        seed=config.seed,
    )
    report = bench_updates(bench_config)
    _, json_path = emit_report(report, out, extra=_artifact_header(config))
    return json.loads(json_path.read_text())


def _flags(args: argparse.Namespace) -> Dict:
    return {key: value for key, value in vars(args).items() if key in FIELD_TYPES}


def run(args: argparse.Namespace) -> Dict:
    config = resolve_config(args.config, _flags(args))
    logger.debug("Resolved configuration", command=args.command, config_hash=config.hash())
    if args.command == "gen-data":
        return gen_data(config, args.out)
    if args.command == "stats":
        return sequence_stats(config, args.data, args.pdm)
    if args.command == "train":
        return train(config, args.data, args.out, args.pdm)
    if args.command == "track":
        return track(config, args.model, args.data, args.out)
    if args.command == "eval":
        return evaluate(config, args.frames, args.out)
    return bench_update(config, args.out)


def _headline(command: str, result: Dict) -> str:
    if command in ("track", "eval"):
        return f"auc={result['auc']:.4f} mean_error={result['mean_error']:.4f} reinits={result['reinit_count']}"
    if command == "bench-update":
        return f"slopes={result['slopes']}"
    if command == "train":
        return f"model={result['model']} method={result['method']} levels={result['levels']}"
    if command == "stats":
        return f"pairs={result['sample_count']} gaps={result['gaps']}"
    return f"out={result['out']}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)

    configure_logging(args.log_level, json_lines=True)
    try:
        result = run(args)
    except (CcrTrackError, ValueError, OSError) as error:
        logger.error("Command failed", command=args.command, error=str(error), error_type=type(error).__name__)
        return 2

    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        print(_headline(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
