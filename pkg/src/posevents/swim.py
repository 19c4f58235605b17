"""Rule-based swim-start event detection on pose statistics.

Six events are read off the per-camera pose sequences with three rule
families: position (head x past a calibrated distance marking), presence
(head detection confidence collapsing when it submerges), and pose (knee
angle extrema for the jump off the block and the first dolphin kick).  Every
rule requires its cue to persist over several frames, and detections are
chained so each event is searched only after the ones before it in the fixed
order jump_off < dive_in < first_kick < d5m < d10m < d15m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import SWIM_EVENT_ORDER, EventTimeline, Pose, Track

# Keypoint indices of the 14-point swim body model.
DEFAULT_HEAD_INDEX = 0
DEFAULT_LEGS = ((8, 9, 10), (11, 12, 13))  # (hip, knee, ankle) per leg
POSITION_EVENTS = ("d5m", "d10m", "d15m")


@dataclass(frozen=True)
class SwimRuleConfig:
    """Calibrated thresholds and camera assignment for the six swim events."""

    event_cameras: Mapping[str, str]
    position_thresholds: Mapping[str, float]  # camera pixels per distance event
    direction: int = 1                        # swim direction sign along x
    c_head: float = 0.2
    persistence: int = 3
    kick_angle_max: float = 120.0
    head_index: int = DEFAULT_HEAD_INDEX
    legs: tuple[tuple[int, int, int], ...] = DEFAULT_LEGS

    def __post_init__(self):
        if self.persistence < 1:
            raise ValueError("persistence must be >= 1")
        missing = [e for e in SWIM_EVENT_ORDER if e not in self.event_cameras]
        if missing:
            raise ValueError(f"camera assignment missing events: {missing}")
        missing = [e for e in POSITION_EVENTS if e not in self.position_thresholds]
        if missing:
            raise ValueError(f"position thresholds missing events: {missing}")


def knee_angle(pose: Pose, side: str, legs: Sequence[tuple[int, int, int]] = DEFAULT_LEGS
               ) -> float | None:
    """Interior angle at the knee in degrees, or None if a keypoint is masked."""
    index = {"left": 1, "right": 0}.get(side)
    if index is None:
        raise ValueError("side must be 'left' or 'right'")
    hip_i, knee_i, ankle_i = legs[index]
    hip = pose.point(hip_i)
    knee = pose.point(knee_i)
    ankle = pose.point(ankle_i)
    if hip is None or knee is None or ankle is None:
        return None
    u = np.array(hip) - np.array(knee)
    v = np.array(ankle) - np.array(knee)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return None
    cos = float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
    return math.degrees(math.acos(cos))


def _first_persistent_run(satisfied: np.ndarray, persistence: int) -> int | None:
    """Index of the first run of ``persistence`` consecutive True values."""
    run = 0
    for i, ok in enumerate(satisfied):
        run = run + 1 if ok else 0
        if run >= persistence:
            return i - persistence + 1
    return None


def detect_position_event(track: Track, x_threshold: float, direction: int,
                          persistence: int, head_index: int = DEFAULT_HEAD_INDEX,
                          search_start: int | None = None) -> int | None:
    """First frame the head x stays past the threshold for ``persistence`` frames."""
    start = max(track.t1, search_start) if search_start is not None else track.t1
    if start > track.t2:
        return None
    satisfied = []
    for frame in range(start, track.t2 + 1):
        head = track.entry_at(frame).pose.point(head_index)
        satisfied.append(head is not None and (head[0] - x_threshold) * direction >= 0.0)
    hit = _first_persistent_run(np.asarray(satisfied), persistence)
    return start + hit if hit is not None else None


def detect_presence_event(track: Track, c_head: float, persistence: int,
                          head_index: int = DEFAULT_HEAD_INDEX,
                          search_start: int | None = None) -> int | None:
    """First frame the head confidence stays below ``c_head`` for ``persistence`` frames."""
    start = max(track.t1, search_start) if search_start is not None else track.t1
    if start > track.t2:
        return None
    low = [track.entry_at(f).pose.keypoints[head_index, 2] < c_head
           for f in range(start, track.t2 + 1)]
    hit = _first_persistent_run(np.asarray(low), persistence)
    return start + hit if hit is not None else None


def _leg_angle_series(track: Track, start: int, end: int, reduce,
                      legs: Sequence[tuple[int, int, int]]) -> np.ndarray:
    """Per-frame knee angle reduced over both legs; NaN where undefined."""
    out = np.full(end - start, np.nan)
    for i, frame in enumerate(range(start, end)):
        pose = track.entry_at(frame).pose
        angles = [a for a in (knee_angle(pose, "right", legs), knee_angle(pose, "left", legs))
                  if a is not None]
        if angles:
            out[i] = reduce(angles)
    return out


def _nan_median_smooth(series: np.ndarray, window: int) -> np.ndarray:
    """Centered median filter ignoring NaNs; shrinks the window at the edges."""
    half = window // 2
    out = np.full_like(series, np.nan)
    n = len(series)
    for i in range(n):
        seg = series[max(0, i - half): min(n, i + half + 1)]
        if np.any(~np.isnan(seg)):
            out[i] = np.nanmedian(seg)
    return out


def detect_jump_off(track: Track, search_end: int | None, persistence: int,
                    legs: Sequence[tuple[int, int, int]] = DEFAULT_LEGS) -> int | None:
    """Frame of maximal (median-smoothed) knee angle before ``search_end``."""
    end = min(track.t2 + 1, search_end) if search_end is not None else track.t2 + 1
    if end <= track.t1:
        return None
    series = _leg_angle_series(track, track.t1, end, max, legs)
    if np.sum(~np.isnan(series)) < persistence:
        return None
    smoothed = _nan_median_smooth(series, persistence)
    return track.t1 + int(np.nanargmax(smoothed))


def detect_first_kick(track: Track, search_start: int | None, kick_angle_max: float,
                      persistence: int,
                      legs: Sequence[tuple[int, int, int]] = DEFAULT_LEGS) -> int | None:
    """First local minimum of the smoothed knee angle below ``kick_angle_max``."""
    start = max(track.t1, search_start) if search_start is not None else track.t1
    if start > track.t2:
        return None
    series = _leg_angle_series(track, start, track.t2 + 1, min, legs)
    if np.sum(~np.isnan(series)) < persistence:
        return None
    smoothed = _nan_median_smooth(series, persistence)
    valid = np.nonzero(~np.isnan(smoothed))[0]
    for pos, i in enumerate(valid):
        if smoothed[i] >= kick_angle_max:
            continue
        if pos == 0 or pos == len(valid) - 1:
            continue  # endpoints cannot be local minima
        prev_v = smoothed[valid[pos - 1]]
        next_v = smoothed[valid[pos + 1]]
        if smoothed[i] <= prev_v and smoothed[i] <= next_v and (smoothed[i] < prev_v or smoothed[i] < next_v):
            return start + int(i)
    return None


def detect_swim_start(tracks: Mapping[str, Track | None], cfg: SwimRuleConfig
                      ) -> list[EventTimeline]:
    """Run all six detectors with chained search windows.

    Each event is searched from one frame past the latest already detected
    upstream event; missing upstream events do not shrink any window.  Every
    timeline carries at most one occurrence; a failed detection yields an
    empty timeline, never an error.
    """
    found: dict[str, int | None] = {name: None for name in SWIM_EVENT_ORDER}

    def window_start() -> int | None:
        detected = [f for f in found.values() if f is not None]
        return max(detected) + 1 if detected else None

    def track_for(event: str) -> Track | None:
        return tracks.get(cfg.event_cameras[event])

    dive_track = track_for("dive_in")
    if dive_track is not None:
        found["dive_in"] = detect_presence_event(
            dive_track, cfg.c_head, cfg.persistence, cfg.head_index)

    jump_track = track_for("jump_off")
    if jump_track is not None:
        found["jump_off"] = detect_jump_off(
            jump_track, found["dive_in"], cfg.persistence, cfg.legs)

    kick_track = track_for("first_kick")
    if kick_track is not None:
        found["first_kick"] = detect_first_kick(
            kick_track, window_start(), cfg.kick_angle_max, cfg.persistence, cfg.legs)

    for event in POSITION_EVENTS:
        track = track_for(event)
        if track is None:
            continue
        found[event] = detect_position_event(
            track, cfg.position_thresholds[event], cfg.direction,
            cfg.persistence, cfg.head_index, search_start=window_start())

    return [
        EventTimeline(name, (found[name],) if found[name] is not None else ())
        for name in SWIM_EVENT_ORDER
    ]
