"""Core domain types shared by every stage of the pipeline.

The whole toolkit is expressed over a small vocabulary: per-frame person
detections with pose estimates, contiguous single-person tracks, and event
timelines (sorted frame indices per event type).  Types validate their
invariants at construction and are treated as immutable afterwards, so they
can be shared freely across threads.

Boxes are stored center-based (cx, cy, w, h) and converted to corner form
only inside ``iou`` to avoid convention bugs.  Masked keypoints use the
in-band sentinel (0, 0, 0); frame indices are 0-based everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

SWIM_EVENT_ORDER = ("jump_off", "dive_in", "first_kick", "d5m", "d10m", "d15m")
ATHLETICS_EVENT_TYPES = ("step_begin", "step_end")

# Candidates kept per frame throughout the pipeline.
DEFAULT_MAX_CANDIDATES = 3


class PoseventsError(Exception):
    """Base for all toolkit errors."""


@dataclass(frozen=True)
class Detection:
    """One person candidate in one frame: center-based box plus confidence."""

    frame: int
    cx: float
    cy: float
    w: float
    h: float
    score: float

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"frame must be >= 0, got {self.frame}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) axis-aligned corners."""
        hw, hh = self.w / 2.0, self.h / 2.0
        return self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh


def iou(a: Detection, b: Detection) -> float:
    """Intersection over union of two detections' boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


@dataclass(frozen=True, eq=False)
class Pose:
    """K keypoints of one person in one frame.

    ``keypoints`` is a (K, 3) array of (x, y, score) rows.  A keypoint is
    masked iff its row is exactly (0, 0, 0); masked keypoints are excluded
    from all statistics downstream.
    """

    keypoints: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=float)
        if kp.ndim != 2 or kp.shape[1] != 3 or kp.shape[0] < 1:
            raise ValueError(f"keypoints must have shape (K, 3), got {kp.shape}")
        scores = kp[:, 2]
        if np.any(scores < 0.0) or np.any(scores > 1.0):
            raise ValueError("keypoint scores must be in [0, 1]")
        object.__setattr__(self, "keypoints", kp)

    @property
    def k(self) -> int:
        return self.keypoints.shape[0]

    def masked(self) -> np.ndarray:
        """Boolean array, True where the keypoint is the (0, 0, 0) sentinel."""
        return np.all(self.keypoints == 0.0, axis=1)

    def point(self, index: int) -> tuple[float, float] | None:
        """(x, y) of a keypoint, or None when masked."""
        row = self.keypoints[index]
        if row[0] == 0.0 and row[1] == 0.0 and row[2] == 0.0:
            return None
        return float(row[0]), float(row[1])

    @classmethod
    def fully_masked(cls, k: int) -> "Pose":
        return cls(np.zeros((k, 3)))

    def __eq__(self, other) -> bool:
        return isinstance(other, Pose) and np.array_equal(self.keypoints, other.keypoints)


@dataclass(frozen=True)
class FrameCandidates:
    """Up to D (detection, pose) pairs for one frame, best score first."""

    frame: int
    items: tuple[tuple[Detection, Pose], ...]

    def __post_init__(self):
        for det, _ in self.items:
            if det.frame != self.frame:
                raise ValueError(f"detection frame {det.frame} != candidate frame {self.frame}")
        scores = [det.score for det, _ in self.items]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("candidates must be sorted by descending detection score")


@dataclass(frozen=True, eq=False)
class TrackEntry:
    """One (detection, pose) pair inside a track.

    ``interpolated`` marks gap frames synthesized during track merging; their
    poses are fully masked and their boxes are linear interpolations.
    """

    detection: Detection
    pose: Pose
    interpolated: bool = False

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TrackEntry)
            and self.detection == other.detection
            and self.pose == other.pose
            and self.interpolated == other.interpolated
        )


@dataclass(frozen=True, eq=False)
class Track:
    """A temporally contiguous run of detections: one entry per frame in [t1, t2]."""

    t1: int
    t2: int
    entries: tuple[TrackEntry, ...]

    def __post_init__(self):
        if self.t1 > self.t2:
            raise ValueError(f"t1 ({self.t1}) must be <= t2 ({self.t2})")
        entries = tuple(self.entries)
        if len(entries) != self.t2 - self.t1 + 1:
            raise ValueError(
                f"track [{self.t1}, {self.t2}] needs {self.t2 - self.t1 + 1} entries, got {len(entries)}"
            )
        for offset, entry in enumerate(entries):
            if entry.detection.frame != self.t1 + offset:
                raise ValueError(f"entry {offset} has frame {entry.detection.frame}, expected {self.t1 + offset}")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def entry_at(self, frame: int) -> TrackEntry:
        if not self.t1 <= frame <= self.t2:
            raise KeyError(f"frame {frame} outside track [{self.t1}, {self.t2}]")
        return self.entries[frame - self.t1]

    def covers(self, frame: int) -> bool:
        return self.t1 <= frame <= self.t2

    @property
    def detections(self) -> list[Detection]:
        return [e.detection for e in self.entries]

    @property
    def poses(self) -> list[Pose]:
        return [e.pose for e in self.entries]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Track)
            and self.t1 == other.t1
            and self.t2 == other.t2
            and self.entries == other.entries
        )


@dataclass(frozen=True)
class EventTimeline:
    """Sorted frame indices on which one event type occurs."""

    event_type: str
    occurrences: tuple[int, ...]

    def __post_init__(self):
        occ = tuple(int(t) for t in self.occurrences)
        if any(t < 0 for t in occ):
            raise ValueError("occurrences must be non-negative frame indices")
        if any(a >= b for a, b in zip(occ, occ[1:])):
            raise ValueError("occurrences must be strictly increasing")
        object.__setattr__(self, "occurrences", occ)

    def __len__(self) -> int:
        return len(self.occurrences)


@dataclass(frozen=True, eq=False)
class CameraRecording:
    """Per-frame candidate sets of one camera, plus its role metadata."""

    camera_id: str
    fps: float
    num_frames: int
    candidates: tuple[FrameCandidates, ...]
    role: str = "pannable"  # above_water | under_water | pannable

    def __post_init__(self):
        cands = tuple(self.candidates)
        if len(cands) != self.num_frames:
            raise ValueError(f"expected {self.num_frames} frame entries, got {len(cands)}")
        for i, fc in enumerate(cands):
            if fc.frame != i:
                raise ValueError(f"frame entry {i} carries frame index {fc.frame}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "candidates", cands)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CameraRecording)
            and self.camera_id == other.camera_id
            and self.fps == other.fps
            and self.num_frames == other.num_frames
            and self.role == other.role
            and all(
                a.frame == b.frame and a.items == b.items
                for a, b in zip(self.candidates, other.candidates)
            )
        )


def timelines_by_type(timelines: Iterable[EventTimeline]) -> dict[str, EventTimeline]:
    return {tl.event_type: tl for tl in timelines}
