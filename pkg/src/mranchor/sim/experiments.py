"""Seeded multi-trial experiments: Table-1 style tracking trends, calibration, head localization."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geometry import RigidTransform, pose_error
from ..handeye import build_motion_pairs, corrected_trajectory_rmse, solve_hand_eye
from ..registration.cloud import PointCloud
from ..registration.pipeline import HeadLocatorParams, locate_head, prepare_template
from .config import ScenarioConfig, preset
from .head import head_template
from .metrics import MetricsReport, compute_metrics
from .scenarios import default_rig, gen_calibration_scenario, gen_head_scenario, gen_tracking_scenario, stream
from .tracking import track_frames

TABLE1_SETUPS = ("table1-2m-rgb", "table1-2m-rgbd", "table1-4m-rgb", "table1-4m-rgbd")


@dataclass(frozen=True)
class SetupResult:
    scenario: str
    seed: int
    raw: MetricsReport
    filtered: MetricsReport


def run_tracking(config: ScenarioConfig, name: str = "") -> SetupResult:
    rig = default_rig(config.marker_count, config.marker_size)
    frames, truth = gen_tracking_scenario(config, rig)
    run = track_frames(frames, rig)
    return SetupResult(
        name, config.seed,
        compute_metrics(run.raw, truth, run.durations),
        compute_metrics(run.filtered, truth, run.durations),
    )


def _median_ratio(num: list[float], den: list[float]) -> float:
    ratios = [n / d for n, d in zip(num, den) if d > 0]
    return float(np.median(ratios)) if ratios else math.nan


def table1_trends(trials: int = 20, frames: int = 1000, base_seed: int = 0) -> dict:
    """Per-trial metrics for the four setups and the three matched-run ratios.

    * loss: 4-marker / 2-marker marker-loss rate (RGB-D runs)
    * ape: RGB-D / RGB mean translation APE, raw fused poses, per marker count
    * jitter: filtered / raw jitter transitions pooled over the four setups
    """
    rows: list[SetupResult] = []
    for k in range(trials):
        seed = base_seed + k
        for name in TABLE1_SETUPS:
            rows.append(run_tracking(preset(name).with_overrides(seed=seed, frame_count=frames), name))

    def col(name, get):
        return [get(r) for r in rows if r.scenario == name]

    loss2 = col("table1-2m-rgbd", lambda r: r.raw.jfp.marker_loss_rate)
    loss4 = col("table1-4m-rgbd", lambda r: r.raw.jfp.marker_loss_rate)
    ape = {
        m: (col(f"table1-{m}-rgbd", lambda r: r.raw.ape_translation.mean),
            col(f"table1-{m}-rgb", lambda r: r.raw.ape_translation.mean))
        for m in ("2m", "4m")
    }
    raw_j = [sum(r.raw.jfp.jitter_transitions for r in rows[i * 4:(i + 1) * 4]) for i in range(trials)]
    filt_j = [sum(r.filtered.jfp.jitter_transitions for r in rows[i * 4:(i + 1) * 4]) for i in range(trials)]
    return {
        "rows": rows,
        "loss_ratio": _median_ratio(loss4, loss2),
        "ape_ratio": {m: _median_ratio(*v) for m, v in ape.items()},
        "jitter_ratio": _median_ratio(filt_j, raw_j),
    }


@dataclass(frozen=True)
class CalibrationTrial:
    seed: int
    x_error: float  # m
    corrected_rmse: float  # m
    uncorrected_rmse: float  # m
    pairs: int


def calibration_trials(trials: int = 10, base_seed: int = 0, config: Optional[ScenarioConfig] = None) -> list[CalibrationTrial]:
    """Solve the mount on noisy synthetic streams; a fresh random mount per trial."""
    config = config or preset("calibration")
    out = []
    for k in range(trials):
        seed = base_seed + k
        x_true = random_mount(seed)
        headset, marker, _ = gen_calibration_scenario(config.with_overrides(seed=seed), x_true)
        pairs = build_motion_pairs(headset, marker)
        res = solve_hand_eye(pairs)
        out.append(CalibrationTrial(
            seed,
            pose_error(res.x, x_true).translation_error,
            corrected_trajectory_rmse(res.x, marker, headset),
            corrected_trajectory_rmse(RigidTransform.identity(), marker, headset),
            len(pairs),
        ))
    return out


def random_mount(seed: int) -> RigidTransform:
    """Plausible camera-in-headset mount: up to ~30 deg and 10 cm off the headset origin."""
    rng = stream(seed, 100)
    rotvec = rng.normal(size=3)
    rotvec *= math.radians(30.0) * rng.random() / np.linalg.norm(rotvec)
    return RigidTransform.from_rotvec(rotvec, rng.uniform(-0.1, 0.1, 3))


@dataclass(frozen=True)
class HeadTrial:
    seed: int
    error_mm: float
    error_deg: float
    coarse_error_mm: float
    coarse_error_deg: float
    converged: bool
    fitness: float
    seconds: float


def head_trials(
    trials: int = 50,
    base_seed: int = 0,
    config: Optional[ScenarioConfig] = None,
    template: Optional[PointCloud] = None,
    params: Optional[HeadLocatorParams] = None,
    prepared: bool = True,
) -> list[HeadTrial]:
    """``locate_head`` on seeded scenes; ``seconds`` times the call alone.

    With ``prepared`` the template is resampled once up front (it is a fixed
    model), otherwise every call includes template preparation.
    """
    config = config or preset("head")
    template = template if template is not None else head_template()
    model = prepare_template(template, params or HeadLocatorParams()) if prepared else template
    out = []
    for k in range(trials):
        seed = base_seed + k
        p = params or HeadLocatorParams(seed=seed)
        scene, roi, t_true = gen_head_scenario(config.with_overrides(seed=seed), template)
        start = time.perf_counter()
        res = locate_head(model, scene, roi, p)
        seconds = time.perf_counter() - start
        e = pose_error(res.transform, t_true)
        ec = pose_error(res.coarse.transform, t_true) if res.coarse is not None else e
        out.append(HeadTrial(seed, e.translation_mm, e.rotation_deg, ec.translation_mm,
                             ec.rotation_deg, res.converged, res.fitness, seconds))
    return out
