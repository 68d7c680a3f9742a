"""Dataset files: JSONL pose streams and marker logs, JSON rigs/configs/checkpoints.

Every reader raises :class:`FormatError` on unreadable or malformed input.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from ..errors import FormatError
from ..geometry import RigidTransform, TimedPose
from ..guidance import DEFAULT_CHECKPOINT_THRESHOLD, Checkpoint
from ..markers import FusedPose, MarkerObservation, MarkerRig
from .config import ScenarioConfig


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def _read_lines(path: str | Path) -> list[dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{n}: invalid JSON ({exc})") from exc
    return out


def pose_record(t: float, pose: Optional[RigidTransform]) -> dict:
    if pose is None:
        return {"t": float(t), "q": None, "p": None}
    return {"t": float(t), **pose.to_dict()}


def write_poses(path: str | Path, stream: Sequence) -> None:
    """TimedPose / FusedPose stream; ``(t, None)`` tuples mark frames without a pose."""
    recs = []
    for item in stream:
        if isinstance(item, (TimedPose, FusedPose)):
            recs.append(pose_record(item.timestamp, item.pose))
        else:
            t, pose = item
            recs.append(pose_record(t, pose))
    write_jsonl(path, recs)


def read_poses(path: str | Path, allow_missing: bool = False) -> list[Optional[TimedPose]]:
    """Pose stream; records with null pose become ``None`` when ``allow_missing``."""
    out: list[Optional[TimedPose]] = []
    for n, rec in enumerate(_read_lines(path), 1):
        try:
            t = float(rec["t"])
            if rec.get("q") is None or rec.get("p") is None:
                if not allow_missing:
                    raise FormatError(f"{path}:{n}: missing pose")
                out.append(None)
                continue
            out.append(TimedPose(t, RigidTransform(rec["q"], rec["p"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{n}: bad pose record ({exc})") from exc
    return out


def read_track(path: str | Path) -> tuple[list[float], list[Optional[RigidTransform]]]:
    """Timestamps and poses (``None`` where lost) of an estimated track."""
    times, poses = [], []
    for n, rec in enumerate(_read_lines(path), 1):
        try:
            times.append(float(rec["t"]))
            poses.append(None if rec.get("q") is None else RigidTransform(rec["q"], rec["p"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{n}: bad pose record ({exc})") from exc
    return times, poses


def observation_record(obs: MarkerObservation) -> dict:
    c3 = [None if not v else [float(x) for x in c] for c, v in zip(obs.corners_3d, obs.valid_depth)]
    return {
        "t": obs.timestamp,
        "id": obs.marker_id,
        "c2d": [[float(u), float(v)] for u, v in obs.corners_2d],
        "c3d": c3,
        "valid": list(obs.valid_depth),
    }


def write_marker_log(path: str | Path, observations: Iterable[MarkerObservation]) -> None:
    write_jsonl(path, (observation_record(o) for o in observations))


def read_marker_log(path: str | Path) -> list[MarkerObservation]:
    out = []
    for n, rec in enumerate(_read_lines(path), 1):
        try:
            out.append(MarkerObservation(
                int(rec["id"]), float(rec["t"]), np.asarray(rec["c2d"], dtype=float),
                rec["c3d"], tuple(rec["valid"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{n}: bad marker record ({exc})") from exc
    return out


def group_frames(observations: Sequence[MarkerObservation], times: Sequence[float], tol: float = 1e-6):
    """One Frame per timestamp in ``times``; observations attach to the matching frame."""
    from .scenarios import Frame

    times = np.asarray(times, dtype=float)
    buckets: list[list[MarkerObservation]] = [[] for _ in times]
    for obs in observations:
        k = int(np.argmin(np.abs(times - obs.timestamp))) if len(times) else -1
        if k < 0 or abs(times[k] - obs.timestamp) > tol:
            raise FormatError(f"observation at t={obs.timestamp} matches no frame")
        buckets[k].append(obs)
    return [Frame(float(t), tuple(b)) for t, b in zip(times, buckets)]


def write_rig(path: str | Path, rig: MarkerRig) -> None:
    write_json(path, rig.to_dict())


def read_rig(path: str | Path) -> MarkerRig:
    try:
        return MarkerRig.from_dict(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad rig ({exc})") from exc


def read_config(path: str | Path) -> ScenarioConfig:
    try:
        return ScenarioConfig.from_dict(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad config ({exc})") from exc


def write_checkpoints(path: str | Path, checkpoints: Sequence[Checkpoint]) -> None:
    write_json(path, [{"index": c.index, "threshold": c.threshold} for c in checkpoints])


def read_checkpoints(path: str | Path) -> list[Checkpoint]:
    try:
        return [Checkpoint(int(c["index"]), float(c.get("threshold", DEFAULT_CHECKPOINT_THRESHOLD))) for c in read_json(path)]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad checkpoint table ({exc})") from exc


def read_transform(path: str | Path) -> RigidTransform:
    try:
        return RigidTransform.from_dict(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad transform ({exc})") from exc
