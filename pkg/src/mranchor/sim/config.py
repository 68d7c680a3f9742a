"""Scenario configuration, noise models and named presets."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

from ..markers import CameraIntrinsics


KINDS = ("tracking", "calibration", "head", "guidance")


@dataclass(frozen=True)
class NoiseModel:
    corner_pixel_sigma: float = 0.3  # px
    depth_sigma: float = 0.001  # m, per corner, RGB-D mode
    rgb_depth_sigma: float = 0.005  # m, per corner, RGB-only proxy
    depth_dropout: float = 0.0  # probability a corner has no depth reading
    cloud_sigma: float = 0.001  # m
    controller_pose_sigma: tuple[float, float] = (0.0, 0.0)  # (m, rad) on the headset stream
    marker_pose_sigma: tuple[float, float] = (0.0, 0.0)  # (m, rad) on the camera-side stream

    def __post_init__(self) -> None:
        values = [
            self.corner_pixel_sigma, self.depth_sigma, self.rgb_depth_sigma, self.depth_dropout,
            self.cloud_sigma, *self.controller_pose_sigma, *self.marker_pose_sigma,
        ]
        if any(v < 0 for v in values):
            raise ValueError("noise parameters must be non-negative")
        if self.depth_dropout > 1:
            raise ValueError("depth_dropout is a probability")


@dataclass(frozen=True)
class OcclusionModel:
    # Independent per-marker, per-frame detection probability; 0.38^2 ~ 14% loss with two markers.
    visibility: float = 0.62
    view_cone: float = math.radians(70.0)  # max angle between marker normal and line of sight

    def __post_init__(self) -> None:
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must be in [0, 1]")
        if not 0.0 < self.view_cone <= math.pi:
            raise ValueError("view_cone must be in (0, pi]")


@dataclass(frozen=True)
class TrajectorySpec:
    """Random smooth motion; the defaults are a manikin being gently repositioned."""

    distance: float = 0.8  # m, camera to manikin (or controller) origin
    waypoint_interval: float = 3.0  # s
    translation_amplitude: float = 0.02  # m
    rotation_amplitude: float = math.radians(5.0)  # rad


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "tracking"  # tracking | calibration | head | guidance
    seed: int = 0
    frame_count: int = 1000
    frame_rate: float = 30.0
    mode: str = "rgbd"  # or "rgb"
    marker_count: int = 4
    marker_size: float = 0.08
    noise: NoiseModel = field(default_factory=NoiseModel)
    occlusion: OcclusionModel = field(default_factory=OcclusionModel)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    camera: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480))
    visibility_fraction: float = 0.6  # head scenes
    clutter: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.frame_count < 2:
            raise ValueError("frame_count must be at least 2")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.mode not in ("rgb", "rgbd"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.marker_count not in (2, 4):
            raise ValueError("marker_count must be 2 or 4")
        if not 0.0 < self.visibility_fraction <= 1.0:
            raise ValueError("visibility_fraction must be in (0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def with_overrides(self, **kw) -> ScenarioConfig:
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["camera"] = self.camera.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ScenarioConfig:
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "noise" in d:
            n = dict(d["noise"])
            for k in ("controller_pose_sigma", "marker_pose_sigma"):
                if k in n:
                    n[k] = tuple(n[k])
            d["noise"] = NoiseModel(**n)
        if "occlusion" in d:
            d["occlusion"] = OcclusionModel(**d["occlusion"])
        if "trajectory" in d:
            d["trajectory"] = TrajectorySpec(**d["trajectory"])
        if "camera" in d:
            d["camera"] = CameraIntrinsics.from_dict(d["camera"])
        return cls(**d)


def _table1(markers: int, mode: str) -> ScenarioConfig:
    return ScenarioConfig(marker_count=markers, mode=mode)


PRESETS: dict[str, ScenarioConfig] = {
    "table1-2m-rgb": _table1(2, "rgb"),
    "table1-2m-rgbd": _table1(2, "rgbd"),
    "table1-4m-rgb": _table1(4, "rgb"),
    "table1-4m-rgbd": _table1(4, "rgbd"),
    "calibration": ScenarioConfig(
        kind="calibration", frame_count=60, frame_rate=2.0,
        noise=NoiseModel(marker_pose_sigma=(0.002, math.radians(0.2))),
        trajectory=TrajectorySpec(distance=0.6, waypoint_interval=1.0, translation_amplitude=0.15,
                                  rotation_amplitude=math.radians(40.0)),
    ),
    "calibration-noiseless": ScenarioConfig(
        kind="calibration", frame_count=21, frame_rate=2.0,
        noise=NoiseModel(marker_pose_sigma=(0.0, 0.0)),
        trajectory=TrajectorySpec(distance=0.6, waypoint_interval=1.0, translation_amplitude=0.15,
                                  rotation_amplitude=math.radians(40.0)),
    ),
    "head": ScenarioConfig(kind="head", frame_count=2, trajectory=TrajectorySpec(distance=0.5)),
    "head-clutter": ScenarioConfig(kind="head", frame_count=2, trajectory=TrajectorySpec(distance=0.5), clutter=True),
    "guidance": ScenarioConfig(kind="guidance", frame_count=120, frame_rate=30.0),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
