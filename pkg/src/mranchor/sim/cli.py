"""Command line entry point: simulate, track, metrics, report, calibrate, register, guide.

Exit codes: 0 success, 1 domain error, 2 usage / I/O / format error.
Each subcommand prints one summary line on stdout.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..errors import FormatError, MrAnchorError
from ..geometry import RigidTransform
from ..guidance import ExpertTrajectory, GuidanceConfig, run_session
from ..handeye import build_motion_pairs, corrected_trajectory_rmse, solve_hand_eye
from ..markers import FusedPose
from ..registration.cloud import RegionOfInterest
from ..registration.pipeline import HeadLocatorParams, locate_head
from ..registration.ply import read_ply, write_ply
from ..smoothing import OneEuroState
from . import io
from .config import PRESETS, ScenarioConfig, preset
from .experiments import random_mount, table1_trends
from .head import head_template
from .metrics import compute_metrics
from .scenarios import (
    default_rig,
    gen_calibration_scenario,
    gen_guidance_scenario,
    gen_head_scenario,
    gen_tracking_scenario,
    timestamps,
)
from .tracking import track_frames

SEED_ENV = "MRANCHOR_SEED"


class UsageError(Exception):
    pass


def resolve_seed(flag: Optional[int], config_seed: int) -> int:
    """``--seed`` beats ``MRANCHOR_SEED`` beats the config file."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env, 0)
        except ValueError:
            raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None
    return config_seed


def _fmt_transform(t: RigidTransform) -> str:
    q = ",".join(f"{v:.6f}" for v in t.q)
    p = ",".join(f"{v:.6f}" for v in t.t)
    return f"q=[{q}] p=[{p}]"


# --- simulate -------------------------------------------------------------------


def _load_config(args) -> tuple[str, ScenarioConfig]:
    if args.config is not None:
        name, cfg = Path(args.config).stem, io.read_config(args.config)
    else:
        try:
            name, cfg = args.scenario, preset(args.scenario)
        except KeyError as exc:
            raise UsageError(f"--scenario: {exc.args[0]}") from None
    overrides = {"seed": resolve_seed(args.seed, cfg.seed)}
    if args.frames is not None:
        overrides["frame_count"] = args.frames
    try:
        return name, cfg.with_overrides(**overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> str:
    name, cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", cfg.to_dict())
    io.write_json(out / "scenario.json", {"name": name, "kind": cfg.kind, "seed": cfg.seed})

    if cfg.kind == "tracking":
        rig = default_rig(cfg.marker_count, cfg.marker_size)
        frames, truth = gen_tracking_scenario(cfg, rig)
        io.write_rig(out / "rig.json", rig)
        io.write_marker_log(out / "observations.jsonl", (o for f in frames for o in f.observations))
        io.write_poses(out / "truth.jsonl", truth)
        n_obs = sum(len(f.observations) for f in frames)
        return f"simulate {name} seed={cfg.seed}: {len(frames)} frames, {n_obs} detections -> {out}"
    if cfg.kind == "calibration":
        x_true = random_mount(cfg.seed)
        headset, marker, _ = gen_calibration_scenario(cfg, x_true)
        io.write_poses(out / "headset.jsonl", headset)
        io.write_poses(out / "marker.jsonl", marker)
        io.write_json(out / "truth_x.json", x_true.to_dict())
        return f"simulate {name} seed={cfg.seed}: {len(headset)} samples per stream -> {out}"
    if cfg.kind == "head":
        template = head_template()
        scene, roi, t_true = gen_head_scenario(cfg, template)
        write_ply(out / "template.ply", template)
        write_ply(out / "scene.ply", scene)
        io.write_json(out / "roi.json", roi.to_dict())
        io.write_json(out / "truth.json", t_true.to_dict())
        return f"simulate {name} seed={cfg.seed}: scene with {len(scene)} points -> {out}"
    g = gen_guidance_scenario(cfg)
    io.write_poses(out / "trajectory.jsonl", g.trajectory.samples)
    io.write_checkpoints(out / "checkpoints.json", g.trajectory.checkpoints)
    io.write_json(out / "anchor.json", g.anchor_pose.to_dict())
    times = timestamps(cfg)
    io.write_poses(out / "wrist.jsonl", [(t, RigidTransform(t=w)) for t, w in zip(times, g.wrist)])
    return f"simulate {name} seed={cfg.seed}: {len(g.wrist)} wrist samples -> {out}"


# --- track / metrics / report ------------------------------------------------------


def _run_tracking(run: Path, state: OneEuroState) -> tuple[int, float]:
    cfg = io.read_config(run / "config.json")
    rig = io.read_rig(run / "rig.json")
    frames = io.group_frames(io.read_marker_log(run / "observations.jsonl"), timestamps(cfg))
    result = track_frames(frames, rig, state)
    io.write_poses(run / "raw.jsonl", [(f.timestamp, p.pose if p else None) for f, p in zip(frames, result.raw)])
    io.write_poses(run / "filtered.jsonl",
                   [(f.timestamp, p.pose if p else None) for f, p in zip(frames, result.filtered)])
    total = math.fsum(result.durations)
    fps = len(frames) / total if total > 0 else float("inf")
    # Wall-clock numbers live apart from the deterministic outputs.
    io.write_json(run / "timing.json", {"frames": len(frames), "seconds": total, "throughput_fps": fps})
    lost = sum(p is None for p in result.raw)
    return lost, fps


def _filter_state(args) -> OneEuroState:
    return OneEuroState(min_cutoff=args.min_cutoff, beta=args.beta, d_cutoff=args.d_cutoff)


def cmd_track(args) -> str:
    run = Path(args.run)
    lost, fps = _run_tracking(run, _filter_state(args))
    return f"track {run}: {lost} lost frames, {fps:.1f} fps"


def _as_fused(times, poses) -> list[Optional[FusedPose]]:
    return [None if p is None else FusedPose(t, p, ()) for t, p in zip(times, poses)]


def cmd_metrics(args) -> str:
    run = Path(args.run)
    if not (run / "raw.jsonl").exists():
        _run_tracking(run, _filter_state(args))
    truth = io.read_poses(run / "truth.jsonl")
    reports = {}
    for label in ("raw", "filtered"):
        times, poses = io.read_track(run / f"{label}.jsonl")
        reports[label] = compute_metrics(_as_fused(times, poses), truth)
    meta = io.read_json(run / "scenario.json") if (run / "scenario.json").exists() else {}
    doc = {"scenario": meta.get("name"), "seed": meta.get("seed")}
    doc.update({k: r.to_dict(include_throughput=False) for k, r in reports.items()})
    io.write_json(run / "metrics.json", doc)
    raw, filt = reports["raw"], reports["filtered"]
    return (
        f"metrics {run}: APE {raw.ape_translation.mean:.2f} ± {raw.ape_translation.std:.2f} mm / "
        f"{raw.ape_rotation.mean:.2f} ± {raw.ape_rotation.std:.2f} deg, "
        f"loss {100 * raw.jfp.marker_loss_rate:.2f}%, jitter raw {100 * raw.jfp.pose_jitter_rate:.2f}% "
        f"filtered {100 * filt.jfp.pose_jitter_rate:.2f}%"
    )


REPORT_COLUMNS = (
    "run", "scenario", "seed", "ape_t_mean_mm", "ape_t_std_mm", "ape_r_mean_deg", "ape_r_std_deg",
    "marker_loss_pct", "jitter_raw_pct", "jitter_filtered_pct",
    "filtered_ape_t_mean_mm", "filtered_ape_r_mean_deg",
)


def _report_row(run: str, doc: dict) -> list:
    raw, filt = doc["raw"], doc["filtered"]
    vals = [
        raw["ape_translation_mm"]["mean"], raw["ape_translation_mm"]["std"],
        raw["ape_rotation_deg"]["mean"], raw["ape_rotation_deg"]["std"],
        raw["jfp"]["marker_loss_pct"], raw["jfp"]["pose_jitter_pct"], filt["jfp"]["pose_jitter_pct"],
        filt["ape_translation_mm"]["mean"], filt["ape_rotation_deg"]["mean"],
    ]
    return [run, doc.get("scenario"), doc.get("seed"), *(f"{v:.2f}" for v in vals)]


def cmd_report(args) -> str:
    out = Path(args.out)
    if args.table1:
        out.mkdir(parents=True, exist_ok=True)
        seed = resolve_seed(args.seed, 0)
        res = table1_trends(args.trials, args.frames or 1000, seed)
        with open(out / "table1.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in res["rows"]:
                doc = {"scenario": r.scenario, "seed": r.seed,
                       "raw": r.raw.to_dict(False), "filtered": r.filtered.to_dict(False)}
                w.writerow(_report_row(f"{r.scenario}/{r.seed}", doc))
        trends = {
            "trials": args.trials,
            "loss_ratio_4m_over_2m": round(res["loss_ratio"], 4),
            "ape_ratio_rgbd_over_rgb": {k: round(v, 4) for k, v in res["ape_ratio"].items()},
            "jitter_ratio_filtered_over_raw": round(res["jitter_ratio"], 4),
        }
        io.write_json(out / "trends.json", trends)
        return (f"report table1 ({args.trials} trials): loss ratio {res['loss_ratio']:.3f}, "
                f"APE ratio 2m {res['ape_ratio']['2m']:.3f} 4m {res['ape_ratio']['4m']:.3f}, "
                f"jitter ratio {res['jitter_ratio']:.3f} -> {out}")
    if not args.runs:
        raise UsageError("report: give run directories or --table1")
    rows = [_report_row(r, io.read_json(Path(r) / "metrics.json")) for r in args.runs]
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
    return f"report: {len(rows)} runs -> {out}"


# --- calibrate / register / guide ---------------------------------------------------


def cmd_calibrate(args) -> str:
    headset = io.read_poses(args.headset)
    marker = io.read_poses(args.marker)
    pairs = build_motion_pairs(headset, marker, math.radians(args.min_rotation_deg), pairing=args.pairing)
    res = solve_hand_eye(pairs)
    rmse = corrected_trajectory_rmse(res.x, marker, headset)
    if args.out:
        io.write_json(args.out, {
            "x": res.x.to_dict(), "pairs_used": res.pairs_used,
            "rotation_residual_deg": round(math.degrees(res.rotation_residual), 6),
            "translation_residual_mm": round(res.translation_residual * 1e3, 6),
            "corrected_rmse_mm": round(rmse * 1e3, 6),
        })
    return f"calibrate: X {_fmt_transform(res.x)} pairs={res.pairs_used} corrected_rmse={rmse * 1e3:.2f} mm"


def cmd_register(args) -> str:
    template = read_ply(args.template)
    scene = read_ply(args.scene)
    try:
        roi = RegionOfInterest.from_dict(io.read_json(args.roi))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{args.roi}: bad ROI ({exc})") from exc
    params = HeadLocatorParams(seed=resolve_seed(args.seed, 0))
    res = locate_head(template, scene, roi, params)
    if args.out:
        io.write_json(args.out, {
            "transform": res.transform.to_dict(),
            "coarse": res.coarse.transform.to_dict() if res.coarse is not None else None,
            "fitness": res.fitness, "inlier_rmse": res.inlier_rmse,
            "iterations": res.iterations, "converged": res.converged,
        })
    return (f"register: converged={str(res.converged).lower()} fitness={res.fitness:.3f} "
            f"rmse={res.inlier_rmse * 1e3:.2f} mm T_b {_fmt_transform(res.transform)}")


def cmd_guide(args) -> str:
    samples = io.read_poses(args.trajectory)
    traj = ExpertTrajectory(tuple(samples), tuple(io.read_checkpoints(args.checkpoints)))
    anchor = io.read_transform(args.anchor) if args.anchor else RigidTransform.identity()
    wrist = [p.pose.t for p in io.read_poses(args.wrist)]
    steps = run_session(traj, wrist, anchor, GuidanceConfig(args.trigger_distance))
    events = [(i, s, e) for i, (s, e) in enumerate(steps) if e is not None]
    if args.out:
        io.write_jsonl(args.out, (
            {"frame": i, "event": e.value, "phase": s.phase.value,
             "playback_index": s.playback_index, "next_checkpoint": s.next_checkpoint}
            for i, s, e in events
        ))
    final = steps[-1][0] if steps else None
    prompts = sum(e.value == "CorrectivePrompt" for _, _, e in events)
    phase = final.phase.value if final else "Idle"
    return f"guide: {len(steps)} frames, {len(events)} events, {prompts} corrective prompts, final phase {phase}"


# --- wiring -------------------------------------------------------------------------


def _seed_arg(value: str) -> int:
    try:
        v = int(value, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _add_filter_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-cutoff", type=float, default=1.0, help="one-euro minimum cutoff (Hz)")
    p.add_argument("--beta", type=float, default=0.05, help="one-euro speed coefficient")
    p.add_argument("--d-cutoff", type=float, default=1.0, help="one-euro derivative cutoff (Hz)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mranchor", description="Spatial anchoring toolkit for an MR birth trainer")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="generate a seeded synthetic scenario")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help=f"preset: {', '.join(sorted(PRESETS))}")
    src.add_argument("--config", help="scenario config JSON")
    p.add_argument("--seed", type=_seed_arg)
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="fuse and filter a simulated marker log")
    p.add_argument("run")
    _add_filter_args(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("metrics", help="APE / JFP of a tracked run (tracks first if needed)")
    p.add_argument("run")
    _add_filter_args(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", help="CSV summary of runs, or the Table-1 trend experiment")
    p.add_argument("runs", nargs="*")
    p.add_argument("--out", required=True)
    p.add_argument("--table1", action="store_true")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--frames", type=int)
    p.add_argument("--seed", type=_seed_arg)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("calibrate", help="solve the headset-to-camera transform")
    p.add_argument("--headset", required=True)
    p.add_argument("--marker", required=True)
    p.add_argument("--min-rotation-deg", type=float, default=5.0)
    p.add_argument("--pairing", choices=("consecutive", "all"), default="consecutive")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("register", help="locate the head template in a scene cloud")
    p.add_argument("--template", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--roi", required=True)
    p.add_argument("--seed", type=_seed_arg)
    p.add_argument("--out")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("guide", help="replay a wrist track through the guidance state machine")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--wrist", required=True)
    p.add_argument("--anchor")
    p.add_argument("--trigger-distance", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_guide)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        print(args.func(args))
    except UsageError as exc:
        print(f"mranchor {args.command}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (FormatError, OSError, ValueError) as exc:
        print(f"mranchor {args.command}: {exc}", file=sys.stderr)
        return 2
    except MrAnchorError as exc:
        print(f"mranchor {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())
