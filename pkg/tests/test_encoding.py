import numpy as np
import pytest

from posevents import encoding
from posevents.core import EventTimeline, Pose


def test_encode_targets_hand_example():
    series = encoding.encode_targets([EventTimeline("x", (3,))], num_frames=6, t_max=4)
    assert series.forward[0] == pytest.approx([0.75, 0.5, 0.25, 0.0, 1.0, 1.0])
    assert series.backward[0] == pytest.approx([-1.0, -1.0, -1.0, 0.0, -0.25, -0.5])


def test_encode_targets_zero_on_occurrences():
    occ = (4, 11, 30)
    series = encoding.encode_targets([EventTimeline("x", occ)], 40, 8)
    for t in occ:
        assert series.forward[0][t] == 0.0
        assert series.backward[0][t] == 0.0


def test_encode_targets_event_at_zero():
    series = encoding.encode_targets([EventTimeline("x", (0,))], 5, 10)
    assert series.forward[0][0] == 0.0
    assert series.backward[0][0] == 0.0
    assert series.backward[0][1:] == pytest.approx([-0.1, -0.2, -0.3, -0.4])


def test_encode_targets_empty_timeline_is_clamped():
    series = encoding.encode_targets([EventTimeline("x", ())], 4, 10)
    assert np.all(series.forward[0] == 1.0)
    assert np.all(series.backward[0] == -1.0)


def test_indicator_slopes_between_events():
    rng = np.random.default_rng(2)
    occ = tuple(np.cumsum(rng.integers(3, 20, size=8)))
    t_max = 50.0
    series = encoding.encode_targets([EventTimeline("x", occ)], int(occ[-1]) + 5, t_max)
    f, b = series.forward[0], series.backward[0]
    for t in range(len(f) - 1):
        if 0.0 < f[t] < 1.0 and f[t + 1] < f[t]:
            assert f[t] - f[t + 1] == pytest.approx(1.0 / t_max)
        if -1.0 < b[t] < 0.0 and b[t + 1] < b[t]:
            assert b[t] - b[t + 1] == pytest.approx(1.0 / t_max)


def _pose(xy, scores=0.9):
    arr = np.zeros((len(xy), 3))
    arr[:, :2] = xy
    arr[:, 2] = scores
    return Pose(arr)


def test_minmax_norm_affine_map():
    reference = [_pose([[100.0, 0.0], [200.0, 10.0]])]
    pose = _pose([[150.0, 5.0], [100.0, 0.0], [200.0, 10.0]])
    out = encoding.minmax_norm(pose, reference)
    assert out.keypoints[0, 0] == pytest.approx(0.0)
    assert out.keypoints[1, 0] == pytest.approx(-1.0)
    assert out.keypoints[2, 0] == pytest.approx(1.0)
    assert out.keypoints[:, 2] == pytest.approx([0.9, 0.9, 0.9])  # scores untouched


def test_minmax_norm_degenerate_axis_maps_to_zero():
    reference = [_pose([[100.0, 7.0], [200.0, 7.0]])]
    out = encoding.minmax_norm(_pose([[150.0, 7.0]]), reference)
    assert out.keypoints[0, 1] == 0.0
    assert out.keypoints[0, 0] == pytest.approx(0.0)


def test_minmax_norm_all_masked_reference():
    reference = [Pose.fully_masked(3)]
    out = encoding.minmax_norm(_pose([[5.0, 5.0]]), reference)
    assert out.keypoints[0, 0] == 0.0
    assert out.keypoints[0, 1] == 0.0


def test_mask_low_confidence():
    pose = _pose([[1.0, 2.0], [3.0, 4.0]], scores=[0.5, 0.05])
    out = encoding.mask_low_confidence(pose, c_min=0.1)
    assert out.keypoints[0] == pytest.approx([1.0, 2.0, 0.5])
    assert np.all(out.keypoints[1] == 0.0)
    untouched = encoding.mask_low_confidence(pose, c_min=0.01)
    assert untouched == pose


def test_masked_keypoints_never_affect_statistics():
    # A low-confidence outlier is zeroed by masking and must then be
    # invisible to the min/max statistics.
    base = Pose(np.array([[0.0, 0.0, 0.9], [10.0, 10.0, 0.9], [0.0, 0.0, 0.0]]))
    with_outlier = Pose(np.array([[0.0, 0.0, 0.9], [10.0, 10.0, 0.9], [1e6, -1e6, 0.05]]))
    target = _pose([[5.0, 5.0], [0.0, 0.0], [10.0, 10.0]])
    a = encoding.minmax_norm(target, [base])
    b = encoding.minmax_norm(target, [encoding.mask_low_confidence(with_outlier, 0.1)])
    assert np.allclose(a.keypoints, b.keypoints)
    c = encoding.minmax_norm(target, [with_outlier])  # unmasked outlier does count
    assert not np.allclose(a.keypoints, c.keypoints)


def _random_pose_track(rng, n=40, k=5):
    walk = np.cumsum(rng.normal(0, 2, (n, 1, 2)), axis=0)
    base = rng.uniform(0, 50, (1, k, 2))
    arr = np.zeros((n, k, 3))
    arr[:, :, :2] = base + walk
    arr[:, :, 2] = 0.9
    return arr


def test_sequence_mode_removes_constant_pan():
    # A static pose under constant camera pan: every jointly normalized
    # window is identical, while global normalization retains the drift.
    k, n, s = 4, 50, 9
    base = np.array([[0.0, 0.0], [10.0, 4.0], [3.0, 8.0], [7.0, 1.0]])
    arr = np.zeros((n, k, 3))
    arr[:, :, 2] = 0.9
    for t in range(n):
        arr[t, :, :2] = base + np.array([3.0 * t, 0.0])
    poses = encoding.array_to_poses(arr)
    windows = encoding.normalize(poses, "sequence", s)
    first = encoding.poses_to_array(windows[s // 2])
    for t in range(s // 2, n - s // 2):
        assert np.allclose(encoding.poses_to_array(windows[t]), first, atol=1e-9)
    global_norm = encoding.poses_to_array(encoding.normalize(poses, "global", s))
    assert not np.allclose(global_norm[0, :, 0], global_norm[n - 1, :, 0], atol=1e-3)


def test_sequence_mode_similarity_invariance():
    rng = np.random.default_rng(7)
    arr = _random_pose_track(rng)
    poses = encoding.array_to_poses(arr)
    moved = arr.copy()
    moved[:, :, :2] = arr[:, :, :2] * 3.7 + np.array([123.0, -55.0])
    windows_a = encoding.normalize(poses, "sequence", 9)
    windows_b = encoding.normalize(encoding.array_to_poses(moved), "sequence", 9)
    for wa, wb in zip(windows_a, windows_b):
        assert np.allclose(encoding.poses_to_array(wa), encoding.poses_to_array(wb), atol=1e-9)


def test_local_mode_single_frame():
    pose = _pose([[10.0, 20.0], [30.0, 40.0]])
    out = encoding.normalize([pose], "local", 9)
    expected = encoding.minmax_norm(pose, [pose])
    assert out[0] == expected


def test_short_sequence_yields_single_clamped_window():
    rng = np.random.default_rng(1)
    poses = encoding.array_to_poses(_random_pose_track(rng, n=5))
    windows = encoding.normalize(poses, "sequence", 9)
    assert len(windows) == 1
    assert len(windows[0]) == 5


def _toy_training_data(rng, n_videos=6, frames=40, k=3, s=9):
    samples = []
    for v in range(n_videos):
        arr = _random_pose_track(rng, n=frames, k=k)
        poses = encoding.array_to_poses(arr)
        occ = tuple(range(5, frames - 5, 10))
        timelines = [EventTimeline("step_begin", occ), EventTimeline("step_end", tuple(t + 3 for t in occ))]
        samples.append(encoding.VideoSample(f"v{v}", poses, timelines))
    return encoding.build_training_data(samples, mode="sequence", s=s, t_max=20.0)


def test_batch_has_distinct_videos_when_possible():
    rng = np.random.default_rng(0)
    data = _toy_training_data(rng, n_videos=6)
    crops = encoding.sample_training_crops(data, 6, np.random.default_rng(1))
    assert len({c.video_id for c in crops}) == 6


def test_batch_repeats_videos_evenly():
    rng = np.random.default_rng(0)
    data = _toy_training_data(rng, n_videos=4)
    crops = encoding.sample_training_crops(data, 10, np.random.default_rng(1))
    counts = {v: 0 for v in data.video_ids}
    for c in crops:
        counts[c.video_id] += 1
    assert set(counts.values()) <= {2, 3}


def test_sampling_is_deterministic_per_seed():
    rng = np.random.default_rng(0)
    data = _toy_training_data(rng)
    a = encoding.sample_training_crops(data, 8, np.random.default_rng(42))
    b = encoding.sample_training_crops(data, 8, np.random.default_rng(42))
    for ca, cb in zip(a, b):
        assert ca.video_id == cb.video_id
        assert np.array_equal(ca.input, cb.input)
        assert np.array_equal(ca.target, cb.target)


def test_crop_centers_uniform_over_one_video():
    rng = np.random.default_rng(0)
    frames, s = 100, 29
    arr = _random_pose_track(rng, n=frames)
    sample = encoding.VideoSample(
        "v0", encoding.array_to_poses(arr),
        [EventTimeline("step_begin", (20,)), EventTimeline("step_end", (60,))])
    data = encoding.build_training_data([sample], mode="global", s=s, t_max=20.0)
    feats = data.items[0].feats
    m = s // 2
    n_centers = frames - s + 1
    draws = 10_000
    counts = np.zeros(n_centers, dtype=int)
    sample_rng = np.random.default_rng(11)
    for _ in range(draws // 100):
        for crop in data.sample(100, sample_rng):
            # In global mode the crop's center row equals a column of the
            # pre-normalized feature matrix, which identifies the center.
            center = int(np.argmin(np.abs(feats.T - crop.input[m]).sum(axis=1)))
            counts[center - m] += 1
    expected = draws / n_centers
    sigma = np.sqrt(draws * (1 / n_centers) * (1 - 1 / n_centers))
    assert counts.sum() == draws
    assert np.all(np.abs(counts - expected) < 3 * sigma)


def test_multi_variant_assembly():
    rng = np.random.default_rng(3)
    variant_a = []
    variant_b = []
    for v in range(10):
        arr = _random_pose_track(rng, n=30)
        poses = encoding.array_to_poses(arr)
        tls = [EventTimeline("step_begin", (5, 15)), EventTimeline("step_end", (8, 18))]
        variant_a.append(encoding.VideoSample(f"v{v}", poses, tls))
        jittered = arr.copy()
        jittered[:, :, :2] += rng.normal(0, 1, arr[:, :, :2].shape)
        variant_b.append(encoding.VideoSample(f"v{v}", encoding.array_to_poses(jittered), tls))
    data = encoding.assemble_multi_variant_dataset([variant_a, variant_b], mode="sequence",
                                                   s=9, t_max=20.0)
    assert len(data.items) == 20
    assert len(data.video_ids) == 10
    by_video = {}
    for item in data.items:
        by_video.setdefault(item.video_id, []).append(item)
    for items in by_video.values():
        assert np.array_equal(items[0].targets, items[1].targets)
    crops = data.sample(10, np.random.default_rng(5))
    assert len({c.video_id for c in crops}) == 10


def test_crop_dataset_file_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    data = _toy_training_data(rng, n_videos=3, frames=25, s=9)
    path = tmp_path / "dataset.bin"
    encoding.save_crop_dataset(path, data)
    loaded = encoding.load_crop_dataset(path)
    assert loaded.meta == data.meta
    assert loaded.num_crops == data.num_crops
    assert sorted(loaded.video_ids) == sorted(data.video_ids)
    crop = loaded.sample(3, np.random.default_rng(0))[0]
    assert crop.input.shape == (9, 9)
    assert crop.target.shape == (4,)
