import math

import numpy as np
import pytest

from posevents import synth
from posevents.core import SWIM_EVENT_ORDER, Detection, Pose, Track, TrackEntry
from posevents.swim import (
    SwimRuleConfig,
    detect_first_kick,
    detect_jump_off,
    detect_position_event,
    detect_presence_event,
    detect_swim_start,
    knee_angle,
)
from posevents.tracker import TrackerConfig, run_tracker


def _leg_pose(hip, knee, ankle, head=(0.0, 0.0), head_score=0.9):
    arr = np.zeros((14, 3))
    arr[:, 2] = 0.8
    arr[0, :2] = head
    arr[0, 2] = head_score
    arr[8, :2] = hip
    arr[9, :2] = knee
    arr[10, :2] = ankle
    arr[11, :2] = hip
    arr[12, :2] = knee
    arr[13, :2] = ankle
    return Pose(arr)


def test_knee_angle_collinear():
    pose = _leg_pose(hip=(0, 0), knee=(0, 1), ankle=(0, 2))
    assert knee_angle(pose, "right") == pytest.approx(180.0)


def test_knee_angle_right_angle():
    pose = _leg_pose(hip=(0, 0), knee=(0, 1), ankle=(1, 1))
    assert knee_angle(pose, "right") == pytest.approx(90.0)


def test_knee_angle_masked_is_none():
    pose = _leg_pose(hip=(0, 0), knee=(0, 1), ankle=(1, 1))
    kp = pose.keypoints.copy()
    kp[9] = 0.0
    assert knee_angle(Pose(kp), "right") is None


def test_knee_angle_similarity_invariant():
    rng = np.random.default_rng(0)
    for _ in range(50):
        hip, knee, ankle = rng.uniform(-50, 50, (3, 2))
        if np.allclose(hip, knee) or np.allclose(ankle, knee):
            continue
        base = knee_angle(_leg_pose(hip, knee, ankle), "right")
        theta = rng.uniform(0, 2 * math.pi)
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])
        scale = rng.uniform(0.2, 8.0)
        shift = rng.uniform(-100, 100, 2)
        moved = [scale * (rot @ p) + shift for p in (hip, knee, ankle)]
        assert knee_angle(_leg_pose(*moved), "right") == pytest.approx(base, abs=1e-6)


def _track_from_poses(poses, t1=0):
    entries = tuple(
        TrackEntry(Detection(t1 + i, 50, 50, 40, 40, 0.9), pose)
        for i, pose in enumerate(poses)
    )
    return Track(t1=t1, t2=t1 + len(poses) - 1, entries=entries)


def _head_track(xs=None, scores=None):
    n = len(xs) if xs is not None else len(scores)
    poses = []
    for i in range(n):
        x = xs[i] if xs is not None else 50.0
        s = scores[i] if scores is not None else 0.9
        poses.append(_leg_pose((0, 0), (0, 1), (1, 1), head=(x, 20.0), head_score=s))
    return _track_from_poses(poses)


def test_position_event_linear_crossing():
    track = _head_track(xs=[10.0 * t for t in range(30)])
    assert detect_position_event(track, 100.0, direction=1, persistence=3) == 10


def test_position_event_requires_persistence():
    xs = [0.0] * 5 + [120.0] + [0.0] * 10 + [120.0] * 6
    track = _head_track(xs=xs)
    assert detect_position_event(track, 100.0, 1, persistence=3) == 16


def test_position_event_never_crossed():
    track = _head_track(xs=[10.0 * t for t in range(30)])
    assert detect_position_event(track, 1e5, 1, persistence=3) is None


def test_presence_event_scan():
    track = _head_track(scores=[0.9, 0.9, 0.1, 0.1, 0.1, 0.1])
    assert detect_presence_event(track, c_head=0.2, persistence=3) == 2


def test_presence_event_single_dropout_skipped():
    track = _head_track(scores=[0.9, 0.1, 0.9, 0.9, 0.9, 0.9])
    assert detect_presence_event(track, 0.2, persistence=3) is None


def test_presence_event_none_when_confident():
    track = _head_track(scores=[0.9] * 10)
    assert detect_presence_event(track, 0.2, persistence=3) is None


def _angle_track(angles, head_score=0.9):
    poses = []
    for theta in angles:
        if theta is None:
            arr = np.zeros((14, 3))
            arr[0] = [50, 20, head_score]
            poses.append(Pose(arr))
            continue
        phi = math.radians(180.0 - theta)
        hip = np.array([0.0, 0.0])
        knee = np.array([0.0, 30.0])
        ankle = knee + 30.0 * np.array([math.sin(phi), math.cos(phi)])
        poses.append(_leg_pose(hip, knee, ankle, head_score=head_score))
    return _track_from_poses(poses)


def test_jump_off_finds_smoothed_argmax():
    angles = [90 + 2.1 * t for t in range(41)] + [175 - 5.0 * t for t in range(11)]
    track = _angle_track(angles)
    found = detect_jump_off(track, search_end=None, persistence=3)
    assert found == pytest.approx(40, abs=1)


def test_jump_off_median_suppresses_spike():
    angles = [120.0] * 30
    angles[7] = 179.0  # single-frame glitch
    angles[20] = 130.0
    angles[21] = 131.0
    angles[22] = 130.0
    track = _angle_track(angles)
    # The glitch at 7 is median-filtered away; the broad bump wins (the
    # filter may flatten its tip into a small plateau).
    assert detect_jump_off(track, None, persistence=3) in (20, 21, 22)


def test_jump_off_all_masked_is_none():
    track = _angle_track([None] * 20)
    assert detect_jump_off(track, None, persistence=3) is None


def test_first_kick_takes_first_qualifying_minimum():
    angles = []
    for t in range(160):
        a = 166.0
        a -= 66.0 * max(0.0, 1.0 - ((t - 80) / 6.0) ** 2)   # dip to 100
        a -= 71.0 * max(0.0, 1.0 - ((t - 120) / 6.0) ** 2)  # deeper dip to 95
        angles.append(a)
    track = _angle_track(angles)
    # Smoothing may flatten the dip tip into a two-frame plateau.
    assert detect_first_kick(track, None, kick_angle_max=120.0, persistence=3) in (79, 80)


def test_first_kick_shallow_dip_rejected():
    angles = [166.0 - 16.0 * max(0.0, 1.0 - ((t - 40) / 5.0) ** 2) for t in range(80)]
    track = _angle_track(angles)
    assert detect_first_kick(track, None, 120.0, persistence=3) is None


def test_first_kick_monotone_series_rejected():
    track = _angle_track([170.0 - 0.5 * t for t in range(60)])
    assert detect_first_kick(track, None, 120.0, persistence=3) is None


def _scene_config(params):
    thresholds = {
        name: mark - params.camera_ranges[ci][0]
        for name, mark, ci in zip(("d5m", "d10m", "d15m"), params.mark_x, (1, 2, 3))
    }
    return SwimRuleConfig(
        event_cameras={"jump_off": "cam0", "dive_in": "cam0", "first_kick": "cam1",
                       "d5m": "cam1", "d10m": "cam2", "d15m": "cam3"},
        position_thresholds=thresholds,
    )


def _detect_on_scene(params, seed=0, noise=None):
    rng = np.random.default_rng(seed)
    recordings, truth = synth.generate_swim_start(params, rng)
    if noise is not None:
        recordings = [synth.perturb(rec, synth.NoiseModel(seed=seed + 13 * i, **noise))
                      for i, rec in enumerate(recordings)]
    cfg = TrackerConfig(domain="swim")
    tracks = {}
    for rec in recordings:
        selected, _ = run_tracker(rec, cfg)
        if selected is not None:
            tracks[rec.camera_id] = selected
    return detect_swim_start(tracks, _scene_config(params)), truth


def test_swim_start_clean_scene_within_one_frame():
    params = synth.SwimStartParams(num_distractors=2)
    detected, truth = _detect_on_scene(params, seed=4)
    truth_by = {tl.event_type: tl.occurrences[0] for tl in truth}
    for tl in detected:
        assert len(tl.occurrences) == 1, tl.event_type
        assert abs(tl.occurrences[0] - truth_by[tl.event_type]) <= 1, tl.event_type


def test_swim_start_output_is_ordered():
    params = synth.SwimStartParams()
    detected, _ = _detect_on_scene(params, seed=9)
    found = [tl.occurrences[0] for tl in detected if tl.occurrences]
    assert found == sorted(found)
    assert all(a < b for a, b in zip(found, found[1:]))


def test_swim_start_without_under_water_cameras():
    params = synth.SwimStartParams()
    rng = np.random.default_rng(2)
    recordings, _ = synth.generate_swim_start(params, rng)
    cfg = TrackerConfig(domain="swim")
    selected, _ = run_tracker(recordings[0], cfg)
    detected = detect_swim_start({"cam0": selected}, _scene_config(params))
    by_type = {tl.event_type: tl.occurrences for tl in detected}
    assert by_type["jump_off"] and by_type["dive_in"]
    for name in ("first_kick", "d5m", "d10m", "d15m"):
        assert by_type[name] == ()


def test_swim_start_kick_before_dive_rejected():
    # A deep knee dip before the dive must not be reported as the first kick;
    # the chained search window starts after the detected dive-in.
    n = 200
    angles = []
    for t in range(n):
        a = 166.0
        a -= 70.0 * max(0.0, 1.0 - ((t - 40) / 6.0) ** 2)   # spurious pre-dive dip
        a -= 70.0 * max(0.0, 1.0 - ((t - 130) / 6.0) ** 2)  # real kick
        angles.append(a)
    scores = [0.9] * 80 + [0.05] * (n - 80)  # dive-in at frame 80
    poses = []
    for t in range(n):
        base = _angle_track([angles[t]]).entries[0].pose.keypoints.copy()
        base[0, 2] = scores[t]
        poses.append(Pose(base))
    track = _track_from_poses(poses)
    cfg = SwimRuleConfig(
        event_cameras={name: "cam0" for name in SWIM_EVENT_ORDER},
        position_thresholds={"d5m": 1e9, "d10m": 1e9, "d15m": 1e9},
    )
    detected = {tl.event_type: tl.occurrences for tl in
                detect_swim_start({"cam0": track}, cfg)}
    assert detected["dive_in"] == (80,)
    assert detected["first_kick"][0] in (129, 130)


def test_detectors_shift_at_most_persistence_under_single_frame_corruption():
    rng = np.random.default_rng(6)
    xs = [8.0 * t for t in range(40)]
    base_track = _head_track(xs=xs)
    base = detect_position_event(base_track, 150.0, 1, persistence=3)
    for trial in range(25):
        frame = int(rng.integers(0, 40))
        poses = [e.pose for e in base_track.entries]
        corrupted = poses.copy()
        arr = corrupted[frame].keypoints.copy()
        arr[:, :2] = rng.uniform(-500, 500, (14, 2))
        arr[:, 2] = rng.uniform(0.0, 1.0, 14)
        corrupted[frame] = Pose(arr)
        out = detect_position_event(_track_from_poses(corrupted), 150.0, 1, persistence=3)
        assert out is not None
        assert abs(out - base) <= 3
