"""Expert-hand guidance: anchoring transform chains and the playback state machine."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import FrameMismatch, NotConverged
from .geometry import RigidTransform, TimedPose, compose_all
from .registration.results import RegistrationResult

TRIGGER_DISTANCE = 0.05
DEFAULT_CHECKPOINT_THRESHOLD = 0.03


def anchor_coarse(
    g: RigidTransform, t_hc: RigidTransform, t_cf: RigidTransform, t_fm: RigidTransform
) -> RigidTransform:
    """Headset-frame hand pose: model pose (headset <- camera <- marker <- model) then ``g``."""
    return compose_all([t_hc, t_cf, t_fm, g])


@dataclass(frozen=True)
class GuidanceAnchor:
    """Preset hand pose ``g_local`` in the maternal-model frame.

    ``head_local`` is where the model expects the neonatal head to be; the
    hand-to-head relation ``head_local^-1 @ g_local`` is what re-anchoring keeps.
    """

    g_local: RigidTransform
    head_local: RigidTransform
    g_refined: Optional[RigidTransform] = None

    @property
    def g(self) -> RigidTransform:
        return self.g_refined if self.g_refined is not None else self.g_local

    @property
    def hand_to_head(self) -> RigidTransform:
        return self.head_local.inverse() @ self.g_local


def refine_anchor(
    anchor: GuidanceAnchor,
    t_b: RegistrationResult | RigidTransform,
    model_pose: RigidTransform,
) -> GuidanceAnchor:
    """Re-express the hand pose relative to the observed head ``t_b``.

    ``model_pose`` and ``t_b`` must share a frame. A registration result that did
    not converge raises ``NotConverged``.
    """
    if isinstance(t_b, RegistrationResult):
        if not t_b.converged:
            raise NotConverged(f"head registration did not converge (fitness {t_b.fitness:.3f})")
        t_b = t_b.transform
    g_hat = model_pose.inverse() @ t_b @ anchor.hand_to_head
    return replace(anchor, g_refined=g_hat)


@dataclass(frozen=True)
class Checkpoint:
    index: int
    threshold: float = DEFAULT_CHECKPOINT_THRESHOLD


@dataclass(frozen=True)
class ExpertTrajectory:
    samples: tuple[TimedPose, ...]
    checkpoints: tuple[Checkpoint, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        cps = tuple(c if isinstance(c, Checkpoint) else Checkpoint(*c) for c in self.checkpoints)
        object.__setattr__(self, "checkpoints", cps)
        if not self.samples:
            raise ValueError("trajectory has no samples")
        idx = [c.index for c in cps]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("checkpoint indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= len(self.samples)):
            raise ValueError("checkpoint index outside the trajectory")
        if any(c.threshold < 0 for c in cps):
            raise ValueError("checkpoint thresholds must be non-negative")

    def __len__(self) -> int:
        return len(self.samples)


class Phase(str, enum.Enum):
    IDLE = "Idle"
    ACTIVE = "Active"
    PAUSED = "Paused"
    COMPLETED = "Completed"


class Event(str, enum.Enum):
    ANIMATION_STARTED = "AnimationStarted"
    CHECKPOINT_PASSED = "CheckpointPassed"
    CORRECTIVE_PROMPT = "CorrectivePrompt"
    RESUMED = "Resumed"
    ANIMATION_COMPLETED = "AnimationCompleted"


@dataclass(frozen=True)
class GuidanceState:
    phase: Phase = Phase.IDLE
    playback_index: int = 0
    next_checkpoint: int = 0


@dataclass(frozen=True)
class GuidanceConfig:
    trigger_distance: float = TRIGGER_DISTANCE


def _position(pose) -> np.ndarray:
    """Translation of a RigidTransform, a 4x4 matrix or a bare 3-vector."""
    if isinstance(pose, RigidTransform):
        return pose.t
    a = np.asarray(pose, dtype=float)
    if a.shape == (4, 4):
        a = a[:3, 3] if np.all(np.isfinite(a)) else np.full(3, np.nan)
    if a.shape != (3,):
        raise FrameMismatch(f"cannot read a position from shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise FrameMismatch("non-finite pose")
    return a


def _advance(state: GuidanceState, trajectory: ExpertTrajectory, passed: bool):
    nc = state.next_checkpoint + int(passed)
    nxt = state.playback_index + 1
    if nxt >= len(trajectory):
        return GuidanceState(Phase.COMPLETED, len(trajectory) - 1, nc), Event.ANIMATION_COMPLETED
    return GuidanceState(Phase.ACTIVE, nxt, nc), Event.CHECKPOINT_PASSED if passed else None


def guidance_step(
    state: GuidanceState,
    trajectory: ExpertTrajectory,
    wrist,
    expert_now,
    config: GuidanceConfig = GuidanceConfig(),
) -> tuple[GuidanceState, Optional[Event]]:
    """One frame of guidance. ``expert_now`` is the expert hand at ``state.playback_index``.

    Both poses may be RigidTransforms, 4x4 matrices or bare positions (tracked
    wrists often come as points); non-finite input raises ``FrameMismatch``.

    Deviation is the wrist-to-expert translation distance. Playback advances one
    sample per Active step. A pending checkpoint at the current sample pauses
    playback when the deviation exceeds its threshold; once the wrist is back
    within the threshold the checkpoint counts as passed and playback resumes on
    the next step. Passing the last sample completes the animation (which takes
    precedence over a checkpoint event on that sample).
    """
    d = float(np.linalg.norm(_position(wrist) - _position(expert_now)))
    phase = state.phase
    cps = trajectory.checkpoints
    pending = cps[state.next_checkpoint] if state.next_checkpoint < len(cps) else None

    if phase is Phase.IDLE:
        if d < config.trigger_distance:
            return GuidanceState(Phase.ACTIVE, 0, 0), Event.ANIMATION_STARTED
        return state, None
    if phase is Phase.ACTIVE:
        if pending is not None and pending.index == state.playback_index:
            if d > pending.threshold:
                return replace(state, phase=Phase.PAUSED), Event.CORRECTIVE_PROMPT
            return _advance(state, trajectory, passed=True)
        return _advance(state, trajectory, passed=False)
    if phase is Phase.PAUSED:
        if d <= pending.threshold:
            return GuidanceState(Phase.ACTIVE, state.playback_index, state.next_checkpoint + 1), Event.RESUMED
        return state, None
    return state, None


def run_session(
    trajectory: ExpertTrajectory,
    wrist_track: Sequence,
    anchor_pose: RigidTransform,
    config: GuidanceConfig = GuidanceConfig(),
) -> list[tuple[GuidanceState, Optional[Event]]]:
    """Drive the state machine over a wrist track; expert samples are mapped by ``anchor_pose``.

    Trajectory samples are expressed relative to the anchor; ``anchor_pose`` is
    the anchor in the wrist (headset) frame, typically
    ``anchor_coarse(anchor.g, t_hc, t_cf, t_fm)``.
    """
    state = GuidanceState()
    out = []
    for wrist in wrist_track:
        expert = anchor_pose.apply(trajectory.samples[state.playback_index].pose.t)
        state, event = guidance_step(state, trajectory, wrist, expert, config)
        out.append((state, event))
    return out
