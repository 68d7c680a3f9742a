import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mranchor.errors import EmptyTrack, FormatError, StreamMismatch
from mranchor.geometry import RigidTransform, TimedPose
from mranchor.guidance import Checkpoint, Event, run_session
from mranchor.markers import FusedPose, MarkerObservation, jitter_stats
from mranchor.sim import io
from mranchor.sim.config import PRESETS, NoiseModel, OcclusionModel, ScenarioConfig, preset
from mranchor.sim.experiments import run_tracking
from mranchor.sim.metrics import compute_metrics
from mranchor.sim.scenarios import default_rig, gen_guidance_scenario, gen_tracking_scenario
from mranchor.sim.tracking import track_frames


# --- independent brute-force metric oracle ---------------------------------

def as_matrix(pose: RigidTransform) -> np.ndarray:
    w, x, y, z = pose.q
    m = np.eye(4)
    m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    m[:3, 3] = pose.t
    return m


def matrix_angle(r):
    s = 0.5 * math.hypot(r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1])
    return math.atan2(s, 0.5 * (r[0, 0] + r[1, 1] + r[2, 2] - 1.0))


def oracle_metrics(estimated, truth):
    t_err, r_err = [], []
    for est, tru in zip(estimated, truth):
        if est is None:
            continue
        a, b = as_matrix(est), as_matrix(tru)
        t_err.append(1e3 * math.sqrt(sum((a[i, 3] - b[i, 3]) ** 2 for i in range(3))))
        r_err.append(math.degrees(matrix_angle(a[:3, :3].T @ b[:3, :3])))

    def mean_std(v):
        m = math.fsum(v) / len(v)
        return m, math.sqrt(math.fsum((x - m) ** 2 for x in v) / len(v))

    detected = [e for e in estimated if e is not None]
    jumps = 0
    for p, c in zip(detected, detected[1:]):
        mp, mc = as_matrix(p), as_matrix(c)
        dt = math.sqrt(sum((mc[i, 3] - mp[i, 3]) ** 2 for i in range(3)))
        dr = matrix_angle(mp[:3, :3].T @ mc[:3, :3])
        jumps += dt > 0.005 or dr > math.radians(5.0)
    return mean_std(t_err), mean_std(r_err), len(estimated) - len(detected), jumps, len(detected) - 1


def random_track(rng, n):
    truth, est = [], []
    pose = RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    for i in range(n):
        pose = RigidTransform.from_rotvec(rng.normal(scale=0.05, size=3), rng.normal(scale=0.004, size=3)) @ pose
        truth.append(TimedPose(i / 30, pose))
        if rng.random() < 0.15:
            est.append(None)
        else:
            noise = RigidTransform.from_rotvec(rng.normal(scale=0.03, size=3), rng.normal(scale=0.003, size=3))
            est.append(FusedPose(i / 30, noise @ pose, ((0, 1.0),)))
    if all(e is None for e in est):
        est[0] = FusedPose(0.0, truth[0].pose, ())
    return est, truth


def check_against_oracle(est, truth):
    rep = compute_metrics(est, truth)
    (tm, ts), (rm, rs), lost, jumps, transitions = oracle_metrics([e and e.pose for e in est], [t.pose for t in truth])
    assert rep.ape_translation.mean == pytest.approx(tm, rel=1e-12, abs=1e-15)
    assert rep.ape_translation.std == pytest.approx(ts, rel=1e-9, abs=1e-12)
    assert rep.ape_rotation.mean == pytest.approx(rm, rel=1e-12, abs=1e-15)
    assert rep.ape_rotation.std == pytest.approx(rs, rel=1e-9, abs=1e-12)
    assert rep.jfp.lost_frames == lost
    assert rep.jfp.jitter_transitions == jumps
    assert rep.jfp.detected_transitions == max(transitions, 0)
    assert rep.jfp.marker_loss_rate == lost / len(truth)


class TestMetrics:
    def test_oracle_equivalence_random_tracks(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            check_against_oracle(*random_track(rng, int(rng.integers(2, 120))))

    def test_exact_estimates(self):
        _, truth = random_track(np.random.default_rng(0), 30)
        rep = compute_metrics([t.pose for t in truth], truth)
        assert (rep.ape_translation.mean, rep.ape_translation.std) == (0.0, 0.0)
        assert (rep.ape_rotation.mean, rep.ape_rotation.std) == (0.0, 0.0)

    def test_constant_offset(self):
        _, truth = random_track(np.random.default_rng(1), 30)
        est = [RigidTransform(t.pose.q, t.pose.t + (0.0, 0.003, 0.0)) for t in truth]
        rep = compute_metrics(est, truth)
        assert rep.ape_translation.mean == pytest.approx(3.0, abs=1e-9)
        assert rep.ape_translation.std == pytest.approx(0.0, abs=1e-9)

    def test_throughput(self):
        _, truth = random_track(np.random.default_rng(1), 10)
        rep = compute_metrics([t.pose for t in truth], truth, [0.01] * 10)
        assert rep.throughput == pytest.approx(100.0)
        assert rep.to_dict()["throughput_fps"] == 100.0
        assert "throughput_fps" not in rep.to_dict(include_throughput=False)

    def test_report_rounding(self):
        _, truth = random_track(np.random.default_rng(1), 10)
        est = [RigidTransform(t.pose.q, t.pose.t + (0.0012345, 0, 0)) for t in truth]
        d = compute_metrics(est, truth).to_dict()
        assert d["ape_translation_mm"] == {"mean": 1.23, "std": 0.0}

    def test_mismatches(self):
        est, truth = random_track(np.random.default_rng(3), 10)
        with pytest.raises(StreamMismatch):
            compute_metrics(est[:-1], truth)
        with pytest.raises(StreamMismatch):
            compute_metrics(est, truth, [0.1] * 3)
        shifted = [FusedPose(t.timestamp + 0.01, t.pose, ()) for t in truth]
        with pytest.raises(StreamMismatch):
            compute_metrics(shifted, truth)
        with pytest.raises(EmptyTrack):
            compute_metrics([None] * 10, truth)


class TestConfig:
    def test_roundtrip(self):
        for name, cfg in PRESETS.items():
            assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg, name

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            ScenarioConfig.from_dict({"seed": 1, "colour": "red"})

    @pytest.mark.parametrize("kw", [
        {"frame_count": 1}, {"mode": "ir"}, {"marker_count": 3}, {"seed": -1}, {"kind": "other"},
        {"visibility_fraction": 0.0},
    ])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            ScenarioConfig(**kw)

    def test_model_validation(self):
        with pytest.raises(ValueError):
            NoiseModel(depth_sigma=-1.0)
        with pytest.raises(ValueError):
            OcclusionModel(visibility=1.5)

    def test_presets(self):
        assert {"table1-2m-rgb", "table1-2m-rgbd", "table1-4m-rgb", "table1-4m-rgbd"} <= set(PRESETS)
        with pytest.raises(KeyError):
            preset("table1-8m-rgbd")


def noiseless(cfg):
    return cfg.with_overrides(
        noise=NoiseModel(corner_pixel_sigma=0.0, depth_sigma=0.0, rgb_depth_sigma=0.0),
        occlusion=OcclusionModel(visibility=1.0, view_cone=math.radians(89.0)),
    )


class TestTrackingScenario:
    def test_noiseless_closed_loop(self):
        res = run_tracking(noiseless(preset("table1-4m-rgbd")).with_overrides(frame_count=300))
        assert res.raw.ape_translation.mean < 0.1 and res.raw.ape_rotation.mean < 0.01
        assert res.raw.jfp.marker_loss_rate == 0.0

    def test_binomial_loss(self):
        cfg = preset("table1-2m-rgbd").with_overrides(
            occlusion=OcclusionModel(visibility=0.5, view_cone=math.radians(89.0)))
        res = run_tracking(cfg)
        assert abs(res.raw.jfp.marker_loss_rate - 0.25) <= 0.05

    def test_truth_as_estimate(self):
        _, truth = gen_tracking_scenario(preset("table1-4m-rgbd").with_overrides(frame_count=300))
        rep = compute_metrics([t.pose for t in truth], truth)
        assert rep.ape_translation.mean == 0.0 and rep.jfp.pose_jitter_rate == 0.0

    def test_matched_runs_share_motion_and_visibility(self):
        f2, t2 = gen_tracking_scenario(preset("table1-2m-rgbd").with_overrides(frame_count=200, seed=4))
        f4, t4 = gen_tracking_scenario(preset("table1-4m-rgbd").with_overrides(frame_count=200, seed=4))
        assert all(np.array_equal(a.pose.t, b.pose.t) for a, b in zip(t2, t4))
        for a, b in zip(f2, f4):
            assert {o.marker_id for o in a.observations} == {o.marker_id for o in b.observations} & {0, 2}

    def test_deterministic(self):
        cfg = preset("table1-4m-rgb").with_overrides(frame_count=50, seed=9)
        a, _ = gen_tracking_scenario(cfg)
        b, _ = gen_tracking_scenario(cfg)
        for fa, fb in zip(a, b):
            for oa, ob in zip(fa.observations, fb.observations):
                assert np.array_equal(oa.corners_2d, ob.corners_2d)
                assert np.array_equal(oa.corners_3d, ob.corners_3d, equal_nan=True)

    def test_rig_size_checked(self):
        with pytest.raises(ValueError):
            gen_tracking_scenario(preset("table1-4m-rgbd"), default_rig(2))

    def test_depth_dropout_marks_corners(self):
        cfg = preset("table1-4m-rgbd").with_overrides(frame_count=30, noise=NoiseModel(depth_dropout=0.3))
        frames, _ = gen_tracking_scenario(cfg)
        flags = [v for f in frames for o in f.observations for v in o.valid_depth]
        assert 0.5 < np.mean(flags) < 0.9

    def test_track_frames_timing(self):
        cfg = preset("table1-4m-rgbd").with_overrides(frame_count=40)
        frames, _ = gen_tracking_scenario(cfg)
        run = track_frames(frames, default_rig(4))
        assert len(run.raw) == len(run.filtered) == len(run.durations) == 40
        assert all(d > 0 for d in run.durations)
        assert all((r is None) == (f is None) for r, f in zip(run.raw, run.filtered))


class TestGuidanceScenario:
    def test_replay_reproduces_events(self):
        sc = gen_guidance_scenario(preset("guidance").with_overrides(seed=1))
        events = [(k, e) for k, (_, e) in enumerate(run_session(sc.trajectory, sc.wrist, sc.anchor_pose)) if e]
        names = [e for _, e in events]
        assert names[0] is Event.ANIMATION_STARTED and names[-1] is Event.ANIMATION_COMPLETED
        assert names.count(Event.CORRECTIVE_PROMPT) == 1 and names.count(Event.RESUMED) == 1
        assert names.count(Event.CHECKPOINT_PASSED) == 3
        assert sc.deviation_frames

    def test_no_deviation(self):
        sc = gen_guidance_scenario(preset("guidance"), deviate_at_checkpoint=-1)
        names = [e for _, e in run_session(sc.trajectory, sc.wrist, sc.anchor_pose) if e]
        assert Event.CORRECTIVE_PROMPT not in names and names.count(Event.CHECKPOINT_PASSED) == 4


class TestIO:
    def test_pose_stream_roundtrip(self, tmp_path):
        est, truth = random_track(np.random.default_rng(5), 20)
        io.write_poses(tmp_path / "t.jsonl", truth)
        back = io.read_poses(tmp_path / "t.jsonl")
        assert all(a.timestamp == b.timestamp and a.pose.is_close(b.pose, 1e-12) for a, b in zip(truth, back))

        io.write_poses(tmp_path / "e.jsonl", [e if e else (t.timestamp, None) for e, t in zip(est, truth)])
        with pytest.raises(FormatError):
            io.read_poses(tmp_path / "e.jsonl")
        back = io.read_poses(tmp_path / "e.jsonl", allow_missing=True)
        assert [b is None for b in back] == [e is None for e in est]
        times, poses = io.read_track(tmp_path / "e.jsonl")
        assert times == [t.timestamp for t in truth]

    def test_marker_log_roundtrip(self, tmp_path):
        frames, _ = gen_tracking_scenario(preset("table1-4m-rgbd").with_overrides(
            frame_count=20, noise=NoiseModel(depth_dropout=0.2)))
        obs = [o for f in frames for o in f.observations]
        io.write_marker_log(tmp_path / "m.jsonl", obs)
        back = io.read_marker_log(tmp_path / "m.jsonl")
        for a, b in zip(obs, back):
            assert a.marker_id == b.marker_id and a.timestamp == b.timestamp and a.valid_depth == b.valid_depth
            assert np.array_equal(a.corners_2d, b.corners_2d)
            assert np.array_equal(a.corners_3d, b.corners_3d, equal_nan=True)
        regrouped = io.group_frames(back, [f.timestamp for f in frames])
        assert [len(f.observations) for f in regrouped] == [len(f.observations) for f in frames]

    def test_group_frames_rejects_orphans(self):
        obs = MarkerObservation(0, 0.5, np.zeros((4, 2)), np.zeros((4, 3)) + 1, (True,) * 4)
        with pytest.raises(FormatError):
            io.group_frames([obs], [0.0, 1.0])

    def test_documents(self, tmp_path):
        rig = default_rig(4)
        io.write_rig(tmp_path / "rig.json", rig)
        assert io.read_rig(tmp_path / "rig.json").to_dict() == rig.to_dict()
        io.write_checkpoints(tmp_path / "cp.json", [Checkpoint(3, 0.02), Checkpoint(8)])
        assert io.read_checkpoints(tmp_path / "cp.json") == [Checkpoint(3, 0.02), Checkpoint(8, 0.03)]
        cfg = preset("calibration")
        io.write_json(tmp_path / "cfg.json", cfg.to_dict())
        assert io.read_config(tmp_path / "cfg.json") == cfg
        tr = RigidTransform.from_rotvec((0.1, 0.2, 0.3), (1, 2, 3))
        io.write_json(tmp_path / "x.json", tr.to_dict())
        assert io.read_transform(tmp_path / "x.json").is_close(tr, 1e-12)

    @pytest.mark.parametrize("reader,text", [
        (io.read_poses, '{"t": 0, "q": [1, 0, 0, 0]}\n'),
        (io.read_poses, "not json\n"),
        (io.read_marker_log, '{"t": 0, "id": 1}\n'),
        (io.read_rig, '{"marker_size": 0.1}'),
        (io.read_checkpoints, '[{"threshold": 0.1}]'),
        (io.read_config, '{"seed": "x", "frame_count": 1}'),
        (io.read_transform, '{"q": [0, 0, 0, 0], "p": [0, 0, 0]}'),
    ])
    def test_malformed(self, tmp_path, reader, text):
        path = tmp_path / "bad"
        path.write_text(text)
        with pytest.raises(FormatError):
            reader(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            io.read_poses(tmp_path / "none.jsonl")


def test_jitter_stats_of_fused_track_matches_metrics():
    res = run_tracking(preset("table1-2m-rgb").with_overrides(frame_count=200, seed=3))
    frames, truth = gen_tracking_scenario(preset("table1-2m-rgb").with_overrides(frame_count=200, seed=3))
    run = track_frames(frames, default_rig(2))
    assert jitter_stats(run.raw) == res.raw.jfp
