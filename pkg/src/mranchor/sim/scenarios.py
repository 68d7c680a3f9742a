"""Seeded synthetic scenarios with ground truth: calibration, marker tracking, head scenes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation, RotationSpline

from ..geometry import RigidTransform, TimedPose
from ..guidance import (
    Checkpoint,
    ExpertTrajectory,
    GuidanceAnchor,
    GuidanceState,
    Phase,
    anchor_coarse,
    guidance_step,
)
from ..markers import MarkerObservation, MarkerRig, backproject_corner, canonical_corners
from ..registration.cloud import PointCloud, RegionOfInterest
from .config import ScenarioConfig, TrajectorySpec
from .head import default_roi, gen_head_scene

# Independent random streams per purpose, so that e.g. switching RGB-D to RGB
# changes only the corner noise scale and never the motion or the occlusions.
_TRAJECTORY, _OCCLUSION, _NOISE, _DROPOUT, _POSE_NOISE, _CLOUD = range(6)

# Looking at the manikin front: model +z points back at the camera.
FACING_CAMERA = Rotation.from_euler("x", 180.0, degrees=True)


def stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose]))


def timestamps(config: ScenarioConfig) -> np.ndarray:
    return np.arange(config.frame_count) / config.frame_rate


def smooth_trajectory(
    rng: np.random.Generator, times: np.ndarray, spec: TrajectorySpec, base: RigidTransform
) -> list[RigidTransform]:
    """C2 random motion around ``base``: cubic splines through seeded waypoints.

    Translation offsets and rotation-vector offsets at the waypoints are uniform
    within the amplitudes; rotations are interpolated with a rotation spline.
    """
    duration = float(times[-1]) if len(times) else 0.0
    n_way = max(4, int(math.ceil(duration / spec.waypoint_interval)) + 1)
    knots = np.linspace(0.0, max(duration, spec.waypoint_interval * (n_way - 1)), n_way)
    offsets = rng.uniform(-spec.translation_amplitude, spec.translation_amplitude, size=(n_way, 3))
    rotvecs = rng.uniform(-spec.rotation_amplitude, spec.rotation_amplitude, size=(n_way, 3))
    pos = CubicSpline(knots, offsets, bc_type="natural")(times)
    rots = RotationSpline(knots, Rotation.from_rotvec(rotvecs))(times)
    base_rot = Rotation.from_quat(np.roll(base.q, -1))
    out = []
    for p, r in zip(pos, rots):
        out.append(RigidTransform.from_rotation(base_rot * r, base.t + p))
    return out


def _perturb(pose: RigidTransform, rng: np.random.Generator, sigma: tuple[float, float]) -> RigidTransform:
    st, sr = sigma
    if st == 0 and sr == 0:
        # Draws still happen so noisy and noiseless runs share every other stream value.
        rng.normal(size=6)
        return pose
    d = rng.normal(size=6)
    delta = RigidTransform.from_rotvec(d[:3] * sr)
    return RigidTransform((delta @ pose).q, pose.t + d[3:] * st)


@dataclass(frozen=True)
class CalibrationTruth:
    x: RigidTransform  # camera pose in the headset frame
    y: RigidTransform  # controller pose in the marker frame
    marker_clean: tuple[TimedPose, ...]
    headset_clean: tuple[TimedPose, ...]


def gen_calibration_scenario(
    config: ScenarioConfig,
    x_true: RigidTransform,
    y: Optional[RigidTransform] = None,
    *,
    pure_translation: bool = False,
) -> tuple[list[TimedPose], list[TimedPose], CalibrationTruth]:
    """Headset-frame controller stream and camera-frame marker stream for a known mount.

    The marker (fixed to the controller by ``y``, identity by default) moves along a
    smooth random path in front of the camera; the headset sees
    ``x_true @ marker @ y``. Marker-pose noise goes on the camera stream and
    controller noise on the headset stream.
    """
    y = y or RigidTransform.identity()
    times = timestamps(config)
    spec = config.trajectory
    if pure_translation:
        spec = TrajectorySpec(spec.distance, spec.waypoint_interval, spec.translation_amplitude, 0.0)
    base = RigidTransform.from_rotation(FACING_CAMERA, (0.0, 0.0, spec.distance))
    marker_poses = smooth_trajectory(stream(config.seed, _TRAJECTORY), times, spec, base)
    headset_poses = [x_true @ m @ y for m in marker_poses]

    noise_rng = stream(config.seed, _POSE_NOISE)
    marker_stream, headset_stream = [], []
    for t, m, h in zip(times, marker_poses, headset_poses):
        marker_stream.append(TimedPose(float(t), _perturb(m, noise_rng, config.noise.marker_pose_sigma)))
        headset_stream.append(TimedPose(float(t), _perturb(h, noise_rng, config.noise.controller_pose_sigma)))
    truth = CalibrationTruth(
        x_true, y,
        tuple(TimedPose(float(t), m) for t, m in zip(times, marker_poses)),
        tuple(TimedPose(float(t), h) for t, h in zip(times, headset_poses)),
    )
    return headset_stream, marker_stream, truth


def default_rig(marker_count: int = 4, marker_size: float = 0.08) -> MarkerRig:
    """Markers on the manikin's front face (model xy-plane, facing model +z).

    The two-marker rig keeps one diagonal of the four-marker layout.
    """
    placements = {
        0: (-0.12, 0.08), 1: (0.12, 0.08), 2: (0.12, -0.08), 3: (-0.12, -0.08),
    }
    ids = (0, 2) if marker_count == 2 else (0, 1, 2, 3)
    # Slight tilts keep the markers from being coplanar in rotation as well.
    tilts = {0: (0.15, -0.15), 1: (0.15, 0.15), 2: (-0.15, 0.15), 3: (-0.15, -0.15)}
    offsets = {}
    for i in ids:
        x, yy = placements[i]
        rx, ry = tilts[i]
        placement = RigidTransform.from_rotvec((rx, ry, 0.0), (x, yy, 0.0))
        offsets[i] = placement.inverse()  # model pose in the marker frame
    return MarkerRig(marker_size, offsets)


@dataclass(frozen=True)
class Frame:
    timestamp: float
    observations: tuple[MarkerObservation, ...]


def gen_tracking_scenario(
    config: ScenarioConfig, rig: Optional[MarkerRig] = None
) -> tuple[list[Frame], list[TimedPose]]:
    """Per-frame marker detections and the ground-truth model track (camera frame).

    Occlusion draws are made for all four layout markers every frame, so 2- and
    4-marker runs with one seed share the motion and the visibility of the
    shared markers.
    """
    rig = rig or default_rig(config.marker_count, config.marker_size)
    if len(rig.offsets) != config.marker_count:
        raise ValueError(f"rig has {len(rig.offsets)} markers, config expects {config.marker_count}")
    times = timestamps(config)
    base = RigidTransform.from_rotation(FACING_CAMERA, (0.0, 0.0, config.trajectory.distance))
    truth = smooth_trajectory(stream(config.seed, _TRAJECTORY), times, config.trajectory, base)

    occ_rng = stream(config.seed, _OCCLUSION)
    noise_rng = stream(config.seed, _NOISE)
    drop_rng = stream(config.seed, _DROPOUT)
    cam = config.camera
    noise = config.noise
    depth_sigma = noise.depth_sigma if config.mode == "rgbd" else noise.rgb_depth_sigma
    corners_local = canonical_corners(rig.marker_size)
    layout = max(4, max(rig.offsets) + 1)

    frames = []
    for t, model in zip(times, truth):
        draws = occ_rng.random(layout)
        pix_noise = noise_rng.normal(size=(layout, 4, 2))
        depth_noise = noise_rng.normal(size=(layout, 4))
        dropped = drop_rng.random((layout, 4)) < noise.depth_dropout
        obs = []
        for mid, offset in sorted(rig.offsets.items()):
            if draws[mid] >= config.occlusion.visibility:
                continue
            marker = model @ offset.inverse()
            corners = marker.apply(corners_local)
            normal = marker.rotate(np.array([0.0, 0.0, 1.0]))
            to_cam = -marker.t / np.linalg.norm(marker.t)
            if math.acos(float(np.clip(normal @ to_cam, -1.0, 1.0))) > config.occlusion.view_cone:
                continue
            if np.any(corners[:, 2] <= 0):
                continue
            px = cam.project(corners) + pix_noise[mid] * noise.corner_pixel_sigma
            if not all(cam.contains(p) for p in px):
                continue
            valid = ~dropped[mid]
            c3 = []
            for k in range(4):
                if not valid[k]:
                    c3.append(None)
                    continue
                depth = corners[k, 2] + depth_noise[mid, k] * depth_sigma
                c3.append(backproject_corner(px[k], depth, cam))
            obs.append(MarkerObservation(mid, float(t), px, c3, tuple(bool(v) for v in valid)))
        frames.append(Frame(float(t), tuple(obs)))
    return frames, [TimedPose(float(t), p) for t, p in zip(times, truth)]


def random_head_pose(rng: np.random.Generator, distance: float = 0.5, spread: float = 0.05) -> RigidTransform:
    """Uniformly random orientation, position jittered around ``(0, 0, distance)``."""
    rot = Rotation.random(random_state=rng)
    return RigidTransform.from_rotation(rot, rng.uniform(-spread, spread, 3) + (0.0, 0.0, distance))


def gen_head_scenario(
    config: ScenarioConfig,
    template: PointCloud,
    t_true: Optional[RigidTransform] = None,
    *,
    include_head: bool = True,
    roi_offset: float = 0.02,
) -> tuple[PointCloud, RegionOfInterest, RigidTransform]:
    """Scene, ROI and true head pose. The ROI is centred near (not on) the head."""
    rng = stream(config.seed, _CLOUD)
    if t_true is None:
        t_true = random_head_pose(rng, config.trajectory.distance)
    center = t_true.t + rng.uniform(-roi_offset, roi_offset, 3)
    roi = default_roi(RigidTransform(t=center))
    scene = gen_head_scene(
        template, t_true,
        visibility=config.visibility_fraction,
        cloud_sigma=config.noise.cloud_sigma,
        clutter=config.clutter,
        include_head=include_head,
        roi=roi,
        rng=rng,
    )
    return scene, roi, t_true


@dataclass(frozen=True)
class GuidanceScenario:
    trajectory: ExpertTrajectory
    anchor: GuidanceAnchor
    anchor_pose: RigidTransform  # anchor in the headset frame
    wrist: list[np.ndarray]  # headset-frame wrist positions, one per frame
    deviation_frames: tuple[int, ...]


def expert_trajectory(samples: int = 60, frame_rate: float = 30.0, checkpoints: int = 4) -> ExpertTrajectory:
    """Synthetic delivery-assist motion: a 12 cm arc with a slow twist, checkpoints evenly spaced."""
    s = np.linspace(0.0, 1.0, samples)
    angle = 0.6 * s
    poses = [
        TimedPose(i / frame_rate, RigidTransform.from_rotvec((0.0, 0.0, 0.5 * a),
                                                             (0.2 * math.sin(a), 0.0, 0.2 * (1 - math.cos(a)))))
        for i, a in enumerate(angle)
    ]
    step = samples // (checkpoints + 1)
    cps = [Checkpoint(step * (k + 1)) for k in range(checkpoints)]
    return ExpertTrajectory(tuple(poses), tuple(cps))


def gen_guidance_scenario(config: ScenarioConfig, deviate_at_checkpoint: int = 1) -> GuidanceScenario:
    """A trainee who approaches, follows the expert with ~5 mm jitter and strays once.

    The wrist is simulated closed-loop against the state machine, so the log
    replays to the same phase sequence. At checkpoint ``deviate_at_checkpoint``
    the wrist is 6 cm off for a few frames (a single pause); -1 disables it.
    """
    rng = stream(config.seed, _POSE_NOISE)
    traj = expert_trajectory(frame_rate=config.frame_rate)
    head_local = RigidTransform.from_rotvec((0.0, 0.0, 0.0), (0.0, -0.05, 0.10))
    anchor = GuidanceAnchor(RigidTransform(t=(0.02, 0.0, 0.12)), head_local)
    model_pose = RigidTransform.from_rotation(FACING_CAMERA, (0.0, 0.1, config.trajectory.distance))
    anchor_pose = anchor_coarse(anchor.g, RigidTransform(), model_pose, RigidTransform())

    start = anchor_pose.apply(traj.samples[0].pose.t)
    approach = start + np.array([0.0, 0.25, 0.0])
    dev_index = (traj.checkpoints[deviate_at_checkpoint].index
                 if 0 <= deviate_at_checkpoint < len(traj.checkpoints) else None)
    state = GuidanceState()
    wrist, deviated, stray_left = [], [], 3
    for f in range(config.frame_count):
        expert = anchor_pose.apply(traj.samples[state.playback_index].pose.t)
        jitter = rng.normal(scale=0.003, size=3)
        if state.phase is Phase.IDLE:
            w = approach + (start - approach) * min(1.0, f / 10.0) + jitter
        elif (dev_index is not None and state.playback_index == dev_index and stray_left > 0
              and state.phase in (Phase.ACTIVE, Phase.PAUSED)):
            w = expert + np.array([0.06, 0.0, 0.0]) + jitter
            stray_left -= 1
            deviated.append(f)
        else:
            w = expert + jitter
        wrist.append(w)
        state, _ = guidance_step(state, traj, w, expert)
    return GuidanceScenario(traj, anchor, anchor_pose, wrist, tuple(deviated))
