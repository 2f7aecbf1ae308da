"""Command-line front end.

Subcommands wire the library into the full flow: generate or ingest a sensor
bundle, synchronize clocks, calibrate and initialize the motion, refine it
under the combined losses, and evaluate against ground truth.

    motionkit synth --spec capture.json --out bundle/
    motionkit run --config run.json [--no-contact|--no-smooth|--no-geo]
    motionkit eval --pred a.json --gt b.json --body body.json
    motionkit fuse-demo --features-dir feats/ --seed 7 --out fused.csv

Exit codes: 0 success, 2 validation failure, 3 synchronization failure,
4 numerical failure. Logs go to stderr, data to files; identical inputs and
seeds produce byte-identical outputs regardless of --threads.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body import BodyShape, build_default_body, load_body, load_motion, save_motion
from .errors import NonFiniteLossError, SyncFailureError, ValidationError
from .fusion import (
    init_trimodal_weights,
    read_features_csv,
    trimodal_fuse,
    write_features_csv,
    zero_output_trimodal,
)
from .metrics import EvalReport, evaluate
from .optim import OptimConfig, initialize_from_sensors, optimize, write_history_csv
from .parallel import default_threads
from .sync import DEFAULT_MATCH_WINDOW, DEFAULT_PEAK_PROMINENCE, estimate_offset
from .synth import SynthSpec, generate, perturb_motion, read_bundle, write_bundle

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SYNC = 3
EXIT_NUMERICAL = 4

PERTURBATION_PRESETS = {
    "none": (0.0, 0.0),
    "easy": (0.05, 0.02),
    "standard": (0.1, 0.05),
}


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for one end-to-end run; round-trips losslessly through JSON."""

    bundle: str
    out: str
    optim: OptimConfig = field(default_factory=OptimConfig)
    sync_min_prominence: float = DEFAULT_PEAK_PROMINENCE
    sync_match_window: float = DEFAULT_MATCH_WINDOW
    perturbation_preset: str = "none"
    perturbation_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.perturbation_preset not in PERTURBATION_PRESETS:
            raise ValidationError(
                f"perturbation preset must be one of {sorted(PERTURBATION_PRESETS)}"
            )

    def to_dict(self) -> dict:
        return {
            "bundle": self.bundle,
            "out": self.out,
            "optim": self.optim.to_dict(),
            "sync": {
                "min_prominence": self.sync_min_prominence,
                "match_window": self.sync_match_window,
            },
            "perturbation": {
                "preset": self.perturbation_preset,
                "seed": self.perturbation_seed,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {"bundle", "out", "optim", "sync", "perturbation", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown pipeline config fields: {sorted(unknown)}")
        if "bundle" not in data or "out" not in data:
            raise ValidationError("pipeline config needs 'bundle' and 'out' paths")
        sync = data.get("sync", {})
        pert = data.get("perturbation", {})
        return cls(
            bundle=data["bundle"],
            out=data["out"],
            optim=OptimConfig.from_dict(data.get("optim", {})),
            sync_min_prominence=float(sync.get("min_prominence", DEFAULT_PEAK_PROMINENCE)),
            sync_match_window=float(sync.get("match_window", DEFAULT_MATCH_WINDOW)),
            perturbation_preset=pert.get("preset", "none"),
            perturbation_seed=int(pert.get("seed", 0)),
            seed=int(data.get("seed", 0)),
        )


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(data)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        data = json.loads(Path(args.spec).read_text())
    except FileNotFoundError:
        raise ValidationError(f"spec file not found: {args.spec}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"spec file is not valid JSON: {exc}") from exc
    vertex_budget = int(data.pop("body_vertex_count", 600))
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SynthSpec.from_dict(data)

    body = build_default_body(vertex_budget)
    _log(f"generating {spec.motion_profile} capture: {spec.duration}s at {spec.frame_rate}Hz")
    bundle = generate(spec, body)
    write_bundle(bundle, body, args.out)
    _log(f"bundle written to {args.out} ({len(bundle.lidar_clouds)} cloud frames, "
         f"{len(bundle.events)} events)")
    return EXIT_OK


def _sensor_initialization(config: PipelineConfig, bundle, body):
    offset = estimate_offset(
        bundle.lidar_height_series,
        bundle.imu_height_series,
        config.sync_min_prominence,
        config.sync_match_window,
    )
    _log(f"estimated IMU clock offset: {offset:+.4f}s")
    aligned = bundle.imu_timestamps + offset

    frame_times = np.arange(len(bundle.lidar_clouds)) / bundle.spec.frame_rate
    idx = np.clip(np.searchsorted(aligned, frame_times), 0, aligned.size - 1)
    left = np.clip(idx - 1, 0, aligned.size - 1)
    pick = np.where(
        np.abs(aligned[idx] - frame_times) <= np.abs(aligned[left] - frame_times), idx, left
    )
    frame_poses = bundle.imu_poses[pick]

    hips = np.stack([np.mean(c, axis=0) for c in bundle.lidar_clouds])
    shape = bundle.gt_motion.shape if bundle.gt_motion is not None else BodyShape.zeros()
    return initialize_from_sensors(frame_poses, bundle.r_wi, hips, shape, bundle.spec.frame_rate)


def cmd_run(args) -> int:
    config = load_pipeline_config(args.config)
    optim_cfg = config.optim
    if args.seed is not None:
        optim_cfg = OptimConfig.from_dict({**optim_cfg.to_dict(), "seed": args.seed})
    ablated = {
        "lambda_contact": 0.0 if args.no_contact else optim_cfg.lambda_contact,
        "lambda_smooth": 0.0 if args.no_smooth else optim_cfg.lambda_smooth,
        "lambda_geo": 0.0 if args.no_geo else optim_cfg.lambda_geo,
    }
    optim_cfg = OptimConfig.from_dict({**optim_cfg.to_dict(), **ablated})

    bundle, body = read_bundle(config.bundle)
    if not bundle.lidar_clouds:
        raise ValidationError("bundle has no LiDAR clouds to refine against")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)

    if config.perturbation_preset != "none":
        if bundle.gt_motion is None:
            raise ValidationError("perturbation presets need a bundle with ground truth")
        sig_t, sig_p = PERTURBATION_PRESETS[config.perturbation_preset]
        initial = perturb_motion(bundle.gt_motion, sig_t, sig_p, config.perturbation_seed)
        _log(f"initial motion: ground truth perturbed ({config.perturbation_preset})")
    else:
        initial = _sensor_initialization(config, bundle, body)
        _log("initial motion: sensor synchronization and calibration")

    _log(f"refining {len(initial)} frames (max {optim_cfg.max_iters} iterations)")
    result = optimize(
        initial,
        body,
        bundle.scene,
        bundle.lidar_clouds,
        np.asarray(bundle.spec.lidar_origin),
        optim_cfg,
        threads=args.threads,
    )
    save_motion(result.motion, out / "motion_refined.json")
    write_history_csv(result.history, out / "history.csv")
    _log(
        f"loss {result.initial.total:.6g} -> {result.final.total:.6g} over "
        f"{len(result.history) - 1} accepted iterations"
        + (" (stalled)" if result.stalled else "")
    )

    if bundle.gt_motion is None:
        report = {"ground_truth": False}
        _log("no ground truth in bundle; metrics skipped")
    else:
        initial_report = evaluate(initial, bundle.gt_motion, body)
        final_report = evaluate(result.motion, bundle.gt_motion, body)
        report = {
            "ground_truth": True,
            "initial": initial_report.to_dict(),
            "final": final_report.to_dict(),
        }
        _log("final metrics:\n" + final_report.to_text())
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    if args.json:
        print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = load_motion(args.pred)
    gt = load_motion(args.gt)
    body = load_body(args.body)
    report = evaluate(pred, gt, body)
    if args.json:
        print(report.to_json())
    else:
        print(report.to_text())
    if args.out:
        Path(args.out).write_text(
            EvalReport.csv_header() + "\n" + report.to_csv_row() + "\n"
        )
    return EXIT_OK


def cmd_fuse_demo(args) -> int:
    feat_dir = Path(args.features_dir)
    features = {}
    for name in ("f_lidar", "f_rgb", "f_event"):
        path = feat_dir / f"{name}.csv"
        if not path.exists():
            raise ValidationError(f"missing feature file {path}")
        features[name] = read_features_csv(path)
    shapes = {f.shape for f in features.values()}
    if len(shapes) != 1:
        raise ValidationError(f"feature files disagree on shape: {sorted(shapes)}")
    d = features["f_lidar"].shape[1]
    weights = init_trimodal_weights(d, args.seed if args.seed is not None else 0)
    if args.residual_zero:
        weights = zero_output_trimodal(weights)
    fused = trimodal_fuse(features["f_lidar"], features["f_rgb"], features["f_event"], weights)
    write_features_csv(fused, args.out)
    _log(f"fused features written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, top_level: bool) -> None:
    # The flags live on the main parser and on every subparser so they are
    # accepted on either side of the subcommand; subparser values only
    # override when explicitly given.
    suppress = {} if top_level else {"default": argparse.SUPPRESS}
    parser.add_argument("--threads", type=int,
                        **({"default": default_threads()} if top_level else suppress),
                        help="worker threads for per-frame computations")
    parser.add_argument("--seed", type=int, **({"default": None} if top_level else suppress),
                        help="override the configured seed")
    parser.add_argument("--json", action="store_true",
                        **({} if top_level else suppress),
                        help="machine-readable report output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionkit", description="Multi-sensor motion annotation and evaluation toolkit"
    )
    _add_common(parser, top_level=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sensor bundle")
    p.add_argument("--spec", required=True, help="capture spec JSON")
    p.add_argument("--out", required=True, help="bundle output directory")
    _add_common(p, top_level=False)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("run", help="synchronize, initialize, refine, evaluate")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--no-contact", action="store_true", help="drop the contact loss")
    p.add_argument("--no-smooth", action="store_true", help="drop the smoothness loss")
    p.add_argument("--no-geo", action="store_true", help="drop the geometry loss")
    _add_common(p, top_level=False)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="evaluate a predicted motion against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--body", required=True)
    p.add_argument("--out", default=None, help="also write a one-row CSV report")
    _add_common(p, top_level=False)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("fuse-demo", help="run the trimodal fusion forward pass on CSV features")
    p.add_argument("--features-dir", required=True,
                   help="directory with f_lidar.csv, f_rgb.csv, f_event.csv")
    p.add_argument("--out", required=True, help="fused feature CSV path")
    p.add_argument("--residual-zero", action="store_true",
                   help="zero all output projections (identity preset)")
    _add_common(p, top_level=False)
    p.set_defaults(fn=cmd_fuse_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NonFiniteLossError as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except SyncFailureError as exc:
        _log(f"synchronization failure in stream '{exc.stream}': {exc}")
        return EXIT_SYNC
    except ValidationError as exc:
        _log(f"invalid input: {exc}")
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        _log(f"missing file: {exc}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
