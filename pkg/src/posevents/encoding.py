"""Model input/target encoding.

Converts (pose sequence, event timeline) pairs into what the sequence model
consumes: per-frame forward/backward timing indicators as regression targets,
min-max normalized pose features under one of three strategies (global,
local, sequence), confidence masking, and crop sampling with per-batch video
diversity.  Also holds the binary crop-dataset format used by the CLI.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import EventTimeline, Pose, PoseventsError

DEFAULT_T_MAX = 100.0
DEFAULT_C_MIN = 0.1
NORMALIZATION_MODES = ("global", "local", "sequence")

_DATASET_MAGIC = b"PEVD"


@dataclass(frozen=True, eq=False)
class IndicatorSeries:
    """Forward/backward timing indicators per event type.

    ``forward[c, t]`` is the normalized distance to the next occurrence of
    type c (0 exactly on occurrences, clamped at 1 beyond t_max or past the
    last occurrence); ``backward[c, t]`` is the negated distance to the
    previous occurrence, clamped at -1.  ``boundary`` flags frames whose
    values came from clamped windows during inference.
    """

    event_types: tuple[str, ...]
    forward: np.ndarray  # (C, N), values in [0, 1]
    backward: np.ndarray  # (C, N), values in [-1, 0]
    t_max: float
    boundary: np.ndarray | None = None  # (N,) bool

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=float)
        bwd = np.asarray(self.backward, dtype=float)
        if fwd.shape != bwd.shape or fwd.ndim != 2 or fwd.shape[0] != len(self.event_types):
            raise ValueError("forward/backward must both be (num_types, num_frames)")
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "backward", bwd)

    @property
    def num_frames(self) -> int:
        return self.forward.shape[1]

    def type_index(self, event_type: str) -> int:
        return self.event_types.index(event_type)

    def stacked_targets(self) -> np.ndarray:
        """(2C, N) rows ordered (f_type0, b_type0, f_type1, b_type1, ...)."""
        rows = []
        for c in range(len(self.event_types)):
            rows.append(self.forward[c])
            rows.append(self.backward[c])
        return np.stack(rows)


def encode_targets(timelines: Sequence[EventTimeline], num_frames: int,
                   t_max: float = DEFAULT_T_MAX) -> IndicatorSeries:
    """Build the indicator series for the given timelines over ``num_frames``."""
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    types = tuple(tl.event_type for tl in timelines)
    fwd = np.ones((len(types), num_frames))
    bwd = -np.ones((len(types), num_frames))
    t = np.arange(num_frames)
    for c, tl in enumerate(timelines):
        occ = np.asarray(tl.occurrences, dtype=int)
        if np.any(occ >= num_frames):
            raise ValueError(f"occurrence beyond sequence end in '{tl.event_type}'")
        if len(occ) == 0:
            continue
        nxt = np.searchsorted(occ, t, side="left")
        has_next = nxt < len(occ)
        dist = occ[np.minimum(nxt, len(occ) - 1)] - t
        fwd[c, has_next] = np.minimum(dist[has_next] / t_max, 1.0)
        prv = np.searchsorted(occ, t, side="right") - 1
        has_prev = prv >= 0
        dist = t - occ[np.maximum(prv, 0)]
        bwd[c, has_prev] = -np.minimum(dist[has_prev] / t_max, 1.0)
    return IndicatorSeries(event_types=types, forward=fwd, backward=bwd, t_max=float(t_max))


# ---------------------------------------------------------------------------
# Pose arrays and normalization


def poses_to_array(poses: Sequence[Pose]) -> np.ndarray:
    """Stack poses into a (T, K, 3) array."""
    if not poses:
        raise ValueError("empty pose sequence")
    k = poses[0].k
    if any(p.k != k for p in poses):
        raise ValueError("all poses must share keypoint count K")
    return np.stack([p.keypoints for p in poses]).astype(float)


def array_to_poses(arr: np.ndarray) -> list[Pose]:
    return [Pose(arr[t].copy()) for t in range(arr.shape[0])]


def features_from_array(arr: np.ndarray) -> np.ndarray:
    """Flatten (T, K, 3) to the model's channel-major (3K, T) layout."""
    t = arr.shape[0]
    return np.ascontiguousarray(arr.reshape(t, -1).T)


def mask_low_confidence_array(arr: np.ndarray, c_min: float) -> np.ndarray:
    out = arr.copy()
    out[arr[..., 2] < c_min] = 0.0
    return out


def mask_low_confidence(pose: Pose, c_min: float = DEFAULT_C_MIN) -> Pose:
    """Zero out keypoints whose score is below c_min (before normalization)."""
    return Pose(mask_low_confidence_array(pose.keypoints, c_min))


def _valid_mask(arr: np.ndarray) -> np.ndarray:
    """True where a keypoint row is not the (0, 0, 0) masked sentinel."""
    return ~np.all(arr == 0.0, axis=-1)


def normalize_against(target: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Min-max normalize coordinates of ``target`` to [-1, 1] per axis.

    Statistics are taken over the unmasked keypoints of ``reference``
    ((..., K, 3) shaped); masked keypoints stay (0, 0, 0) and scores pass
    through unchanged.  A degenerate axis (max == min, or no unmasked
    keypoints) maps to 0.
    """
    out = target.astype(float).copy()
    ref_valid = _valid_mask(reference)
    tgt_valid = _valid_mask(target)
    for axis in (0, 1):
        vals = reference[..., axis][ref_valid]
        if vals.size == 0:
            out[..., axis] = np.where(tgt_valid, 0.0, out[..., axis])
            continue
        lo, hi = vals.min(), vals.max()
        span = hi - lo
        if span == 0.0:
            norm = np.zeros_like(out[..., axis])
        else:
            norm = 2.0 * (target[..., axis] - lo) / span - 1.0
        out[..., axis] = np.where(tgt_valid, norm, 0.0)
    return out


def minmax_norm(pose: Pose, reference: Sequence[Pose]) -> Pose:
    """Normalize one pose against a non-empty reference set of poses."""
    if not reference:
        raise ValueError("reference must be non-empty")
    ref = poses_to_array(list(reference))
    return Pose(normalize_against(pose.keypoints, ref))


def normalize_global_array(arr: np.ndarray) -> np.ndarray:
    return normalize_against(arr, arr)


def normalize_local_array(arr: np.ndarray, s: int) -> np.ndarray:
    m = s // 2
    n = arr.shape[0]
    out = np.empty_like(arr, dtype=float)
    for t in range(n):
        ref = arr[max(0, t - m): min(n, t + m + 1)]
        out[t] = normalize_against(arr[t], ref)
    return out


def sequence_window_bounds(n: int, t: int, s: int) -> tuple[int, int, bool]:
    """Window [lo, lo+s) for output index t, clamped into the sequence.

    Returns (lo, hi, clamped); for n < s the whole sequence is the window.
    """
    if n < s:
        return 0, n, True
    m = s // 2
    lo = min(max(0, t - m), n - s)
    return lo, lo + s, lo != t - m


def normalize_sequence_window(arr: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Jointly normalize frames [lo, hi) against themselves."""
    win = arr[lo:hi]
    return normalize_against(win, win)


def normalize(poses: Sequence[Pose], mode: str, s: int):
    """Apply one of the three normalization strategies.

    ``global``/``local`` return a list of normalized poses; ``sequence``
    returns one jointly-normalized window (list of poses) per output index,
    with clamped windows at the boundaries.  A sequence shorter than s yields
    a single clamped window.
    """
    if mode not in NORMALIZATION_MODES:
        raise ValueError(f"unknown normalization mode '{mode}'")
    arr = poses_to_array(list(poses))
    if mode == "global":
        return array_to_poses(normalize_global_array(arr))
    if mode == "local":
        return array_to_poses(normalize_local_array(arr, s))
    n = arr.shape[0]
    if n < s:
        return [array_to_poses(normalize_sequence_window(arr, 0, n))]
    windows = []
    for t in range(n):
        lo, hi, _ = sequence_window_bounds(n, t, s)
        windows.append(array_to_poses(normalize_sequence_window(arr, lo, hi)))
    return windows


# ---------------------------------------------------------------------------
# Training data and crop sampling


@dataclass(frozen=True)
class TrainingCrop:
    """One training example: an s x 3K input window and its center targets."""

    input: np.ndarray  # (s, 3K), time-major
    target: np.ndarray  # (2C,) indicator values at the window center
    video_id: str


@dataclass(eq=False)
class SequenceItem:
    """One pose sequence with its targets; variants share a video_id."""

    video_id: str
    raw: np.ndarray  # (T, K, 3), confidence-masked
    targets: np.ndarray  # (2C, T)
    feats: np.ndarray | None = None  # (3K, T) pre-normalized (global/local modes)

    @property
    def num_frames(self) -> int:
        return self.raw.shape[0]


@dataclass(frozen=True)
class VideoSample:
    """Raw input to dataset assembly: one extracted pose sequence per video."""

    video_id: str
    poses: Sequence[Pose]
    timelines: Sequence[EventTimeline]


class TrainingData:
    """Pose sequences ready for crop sampling under a fixed encoding config."""

    def __init__(self, items: Sequence[SequenceItem], mode: str, s: int, t_max: float,
                 c_min: float, event_types: tuple[str, ...], k: int):
        if mode not in NORMALIZATION_MODES:
            raise ValueError(f"unknown normalization mode '{mode}'")
        self.items = list(items)
        self.mode = mode
        self.s = int(s)
        self.t_max = float(t_max)
        self.c_min = float(c_min)
        self.event_types = tuple(event_types)
        self.k = int(k)
        self._by_video: dict[str, list[SequenceItem]] = {}
        for item in self.items:
            self._by_video.setdefault(item.video_id, []).append(item)
        self.video_ids = sorted(self._by_video)
        short = [it.video_id for it in self.items if it.num_frames < self.s]
        if short:
            raise ValueError(f"sequences shorter than s={self.s}: {short}")

    @property
    def meta(self) -> dict:
        return {
            "K": self.k,
            "s": self.s,
            "mode": self.mode,
            "t_max": self.t_max,
            "c_min": self.c_min,
            "event_types": list(self.event_types),
        }

    @property
    def num_crops(self) -> int:
        return sum(it.num_frames - self.s + 1 for it in self.items)

    def _crop(self, item: SequenceItem, center: int) -> TrainingCrop:
        m = self.s // 2
        lo = center - m
        if self.mode == "sequence":
            win = normalize_sequence_window(item.raw, lo, lo + self.s)
            feats = win.reshape(self.s, -1)
        else:
            feats = item.feats[:, lo:lo + self.s].T
        return TrainingCrop(input=np.ascontiguousarray(feats),
                            target=item.targets[:, center].copy(),
                            video_id=item.video_id)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[TrainingCrop]:
        """Draw one batch: uniform crop centers, videos spread evenly.

        While batch_size <= number of distinct videos, every crop comes from
        a different video; beyond that, videos repeat as evenly as possible.
        Variants of a video count as the same video for this rule.
        """
        ids = self.video_ids
        n = len(ids)
        if n == 0:
            raise ValueError("no training sequences")
        reps, rem = divmod(batch_size, n)
        slots: list[str] = []
        for _ in range(reps):
            slots.extend(ids[i] for i in rng.permutation(n))
        if rem:
            slots.extend(ids[i] for i in rng.permutation(n)[:rem])
        crops = []
        m = self.s // 2
        for vid in slots:
            variants = self._by_video[vid]
            item = variants[int(rng.integers(len(variants)))] if len(variants) > 1 else variants[0]
            hi = item.num_frames - self.s + m  # last valid center (inclusive)
            center = int(rng.integers(m, hi + 1))
            crops.append(self._crop(item, center))
        return crops


def sample_training_crops(dataset, batch_size: int, rng: np.random.Generator) -> list[TrainingCrop]:
    """Draw one training batch from any crop source (lazy or materialized)."""
    return dataset.sample(batch_size, rng)


def build_training_data(samples: Sequence[VideoSample], mode: str = "sequence",
                        s: int = 29, t_max: float = DEFAULT_T_MAX,
                        c_min: float = DEFAULT_C_MIN,
                        event_types: Sequence[str] | None = None) -> TrainingData:
    """Assemble sequences + indicator targets into a sampleable dataset."""
    if not samples:
        raise ValueError("no video samples")
    if event_types is None:
        event_types = tuple(tl.event_type for tl in samples[0].timelines)
    event_types = tuple(event_types)
    items = []
    k = None
    for sample in samples:
        arr = mask_low_confidence_array(poses_to_array(list(sample.poses)), c_min)
        if k is None:
            k = arr.shape[1]
        elif arr.shape[1] != k:
            raise ValueError("all videos must share keypoint count K")
        by_type = {tl.event_type: tl for tl in sample.timelines}
        ordered = [by_type.get(name, EventTimeline(name, ())) for name in event_types]
        series = encode_targets(ordered, arr.shape[0], t_max)
        feats = None
        if mode == "global":
            feats = features_from_array(normalize_global_array(arr))
        elif mode == "local":
            feats = features_from_array(normalize_local_array(arr, s))
        items.append(SequenceItem(video_id=sample.video_id, raw=arr,
                                  targets=series.stacked_targets(), feats=feats))
    return TrainingData(items, mode=mode, s=s, t_max=t_max, c_min=c_min,
                        event_types=event_types, k=k)


def assemble_multi_variant_dataset(variant_sets: Sequence[Sequence[VideoSample]],
                                   mode: str = "sequence", s: int = 29,
                                   t_max: float = DEFAULT_T_MAX, c_min: float = DEFAULT_C_MIN,
                                   event_types: Sequence[str] | None = None) -> TrainingData:
    """Merge several extraction variants of the same videos into one dataset.

    Every variant of a video becomes an independent training sequence sharing
    that video's identity (and therefore its timeline and the batch-diversity
    accounting).
    """
    flat: list[VideoSample] = []
    for variant in variant_sets:
        flat.extend(variant)
    return build_training_data(flat, mode=mode, s=s, t_max=t_max, c_min=c_min,
                               event_types=event_types)


# ---------------------------------------------------------------------------
# Materialized crop dataset (CLI interchange)


class MaterializedCrops:
    """All crops of a dataset, flattened; same sampling interface as TrainingData."""

    def __init__(self, inputs: np.ndarray, targets: np.ndarray, video_ids: Sequence[str],
                 mode: str, s: int, t_max: float, c_min: float,
                 event_types: tuple[str, ...], k: int):
        self.inputs = inputs  # (M, s, 3K) float32
        self.targets = targets  # (M, 2C) float32
        self.crop_video_ids = list(video_ids)
        self.mode = mode
        self.s = int(s)
        self.t_max = float(t_max)
        self.c_min = float(c_min)
        self.event_types = tuple(event_types)
        self.k = int(k)
        self._by_video: dict[str, np.ndarray] = {}
        order: dict[str, list[int]] = {}
        for i, vid in enumerate(self.crop_video_ids):
            order.setdefault(vid, []).append(i)
        self._by_video = {vid: np.asarray(ix) for vid, ix in order.items()}
        self.video_ids = sorted(self._by_video)

    @property
    def meta(self) -> dict:
        return {
            "K": self.k,
            "s": self.s,
            "mode": self.mode,
            "t_max": self.t_max,
            "c_min": self.c_min,
            "event_types": list(self.event_types),
        }

    @property
    def num_crops(self) -> int:
        return self.inputs.shape[0]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[TrainingCrop]:
        ids = self.video_ids
        n = len(ids)
        reps, rem = divmod(batch_size, n)
        slots: list[str] = []
        for _ in range(reps):
            slots.extend(ids[i] for i in rng.permutation(n))
        if rem:
            slots.extend(ids[i] for i in rng.permutation(n)[:rem])
        crops = []
        for vid in slots:
            pool = self._by_video[vid]
            i = int(pool[int(rng.integers(len(pool)))])
            crops.append(TrainingCrop(input=self.inputs[i], target=self.targets[i],
                                      video_id=vid))
        return crops


def save_crop_dataset(path, data: TrainingData) -> None:
    """Materialize every crop of ``data`` into the binary dataset format."""
    mode_code = NORMALIZATION_MODES.index(data.mode)
    m = data.s // 2
    crops: list[TrainingCrop] = []
    video_ids = data.video_ids
    id_index = {vid: i for i, vid in enumerate(video_ids)}
    for item in data.items:
        for center in range(m, item.num_frames - data.s + m + 1):
            crops.append(data._crop(item, center))
    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(struct.pack("<IIIddII", data.k, data.s, mode_code,
                             data.t_max, data.c_min, len(video_ids), len(crops)))
        names = "\n".join(video_ids).encode("utf-8")
        fh.write(struct.pack("<I", len(names)))
        fh.write(names)
        types = "\n".join(data.event_types).encode("utf-8")
        fh.write(struct.pack("<I", len(types)))
        fh.write(types)
        for crop in crops:
            rec = np.empty(2 + crop.target.size + crop.input.size, dtype="<f4")
            rec[0] = id_index[crop.video_id]
            rec[1] = 0.0  # reserved (center index is not needed downstream)
            rec[2:2 + crop.target.size] = crop.target
            rec[2 + crop.target.size:] = crop.input.reshape(-1)
            fh.write(rec.tobytes())


def load_crop_dataset(path) -> MaterializedCrops:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DATASET_MAGIC:
            raise PoseventsError(f"{path}: not a crop dataset file")
        k, s, mode_code, t_max, c_min, n_videos, n_crops = struct.unpack(
            "<IIIddII", fh.read(36))
        (names_len,) = struct.unpack("<I", fh.read(4))
        video_ids = fh.read(names_len).decode("utf-8").split("\n") if names_len else []
        (types_len,) = struct.unpack("<I", fh.read(4))
        event_types = tuple(fh.read(types_len).decode("utf-8").split("\n"))
        n_targets = 2 * len(event_types)
        rec_len = 2 + n_targets + s * 3 * k
        raw = np.frombuffer(fh.read(), dtype="<f4")
    if raw.size != n_crops * rec_len:
        raise PoseventsError(f"{path}: truncated crop data")
    raw = raw.reshape(n_crops, rec_len)
    ids = [video_ids[int(i)] for i in raw[:, 0]]
    targets = np.ascontiguousarray(raw[:, 2:2 + n_targets])
    inputs = np.ascontiguousarray(raw[:, 2 + n_targets:].reshape(n_crops, s, 3 * k))
    return MaterializedCrops(inputs=inputs, targets=targets, video_ids=ids,
                             mode=NORMALIZATION_MODES[mode_code], s=s, t_max=t_max,
                             c_min=c_min, event_types=event_types, k=k)
