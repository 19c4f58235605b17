"""Single-athlete tracking: build, merge, and rank detection tracks.

Initial tracks greedily link temporally adjacent detections whose box IoU
exceeds a strict threshold (no backtracking).  Nearby disjoint tracks are
merged when they overlap spatially across the gap, have similar per-frame
scale, and (for swimming) move in the same horizontal direction; gap frames
are filled by linear interpolation with fully masked poses.  The athlete of
interest is the track with the best summed ranking over domain-appropriate
criteria.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CameraRecording, Detection, Pose, Track, TrackEntry, iou


@dataclass(frozen=True)
class TrackerConfig:
    tau_iou: float = 0.75
    tau_gap: int = 25
    tau_scale: float = 1.5
    domain: str = "athletics"  # athletics | swim

    def __post_init__(self):
        if not 0.0 < self.tau_iou < 1.0:
            raise ValueError("tau_iou must be in (0, 1)")
        if self.tau_gap < 1:
            raise ValueError("tau_gap must be >= 1")
        if self.tau_scale < 1.0:
            raise ValueError("tau_scale must be >= 1")
        if self.domain not in ("athletics", "swim"):
            raise ValueError(f"unknown domain '{self.domain}'")


def build_initial_tracks(rec: CameraRecording, cfg: TrackerConfig) -> list[Track]:
    """Greedy frame-by-frame linking; every detection joins at most one track.

    Among possible continuations the highest-IoU pair wins, ties broken by
    higher detection score, then by track age order.
    """
    finished: list[list[TrackEntry]] = []
    active: list[list[TrackEntry]] = []
    for fc in rec.candidates:
        items = list(fc.items)
        pairs = []
        for ti, trk in enumerate(active):
            last = trk[-1].detection
            for ci, (det, _) in enumerate(items):
                v = iou(last, det)
                if v > cfg.tau_iou:
                    pairs.append((-v, -det.score, ti, ci))
        pairs.sort()
        used_tracks: set[int] = set()
        used_cands: set[int] = set()
        for neg_iou, _, ti, ci in pairs:
            if ti in used_tracks or ci in used_cands:
                continue
            det, pose = items[ci]
            active[ti].append(TrackEntry(detection=det, pose=pose))
            used_tracks.add(ti)
            used_cands.add(ci)
        still_active = []
        for ti, trk in enumerate(active):
            if ti in used_tracks:
                still_active.append(trk)
            else:
                finished.append(trk)
        for ci, (det, pose) in enumerate(items):
            if ci not in used_cands:
                still_active.append([TrackEntry(detection=det, pose=pose)])
        active = still_active
    finished.extend(active)
    tracks = [
        Track(t1=entries[0].detection.frame, t2=entries[-1].detection.frame,
              entries=tuple(entries))
        for entries in finished
    ]
    tracks.sort(key=lambda t: (t.t1, t.t2))
    return tracks


def _net_dx(track: Track) -> float:
    return track.entries[-1].detection.cx - track.entries[0].detection.cx


def _scale_ratio(a: Track, b: Track) -> float:
    """(|b| / |a|) * (sum of a's box areas / sum of b's box areas)."""
    area_a = sum(e.detection.area for e in a.entries)
    area_b = sum(e.detection.area for e in b.entries)
    return (len(b) / len(a)) * (area_a / area_b)


def _mergeable(a: Track, b: Track, cfg: TrackerConfig) -> bool:
    gap = b.t1 - a.t2
    if not 1 <= gap <= cfg.tau_gap:
        return False
    if iou(a.entries[-1].detection, b.entries[0].detection) <= 0.0:
        return False
    ratio = _scale_ratio(a, b)
    if not (1.0 / cfg.tau_scale) <= ratio <= cfg.tau_scale:
        return False
    if cfg.domain == "swim" and np.sign(_net_dx(a)) != np.sign(_net_dx(b)):
        return False
    return True


def _merge_pair(a: Track, b: Track) -> Track:
    last = a.entries[-1].detection
    first = b.entries[0].detection
    gap = b.t1 - a.t2
    k = a.entries[-1].pose.k
    filled = []
    for frame in range(a.t2 + 1, b.t1):
        w = (frame - a.t2) / gap
        det = Detection(
            frame=frame,
            cx=last.cx + w * (first.cx - last.cx),
            cy=last.cy + w * (first.cy - last.cy),
            w=last.w + w * (first.w - last.w),
            h=last.h + w * (first.h - last.h),
            score=last.score + w * (first.score - last.score),
        )
        filled.append(TrackEntry(detection=det, pose=Pose.fully_masked(k), interpolated=True))
    return Track(t1=a.t1, t2=b.t2, entries=a.entries + tuple(filled) + b.entries)


def merge_tracks(tracks: Sequence[Track], cfg: TrackerConfig) -> list[Track]:
    """Merge temporally close, disjoint tracks until no pair qualifies.

    Candidate pairs are taken smallest gap first, earlier start first, and
    merging repeats to a fixpoint.
    """
    current = sorted(tracks, key=lambda t: (t.t1, t.t2))
    while True:
        best = None
        for i, a in enumerate(current):
            for j, b in enumerate(current):
                if i == j:
                    continue
                gap = b.t1 - a.t2
                if gap < 1 or gap > cfg.tau_gap:
                    continue
                if _mergeable(a, b, cfg):
                    key = (gap, a.t1)
                    if best is None or key < best[0]:
                        best = (key, i, j)
        if best is None:
            return current
        _, i, j = best
        merged = _merge_pair(current[i], current[j])
        current = [t for idx, t in enumerate(current) if idx not in (i, j)]
        current.append(merged)
        current.sort(key=lambda t: (t.t1, t.t2))


def _rank(values: Sequence[float]) -> list[int]:
    """Descending competition ranks (best value gets 1; ties share the minimum)."""
    return [1 + sum(1 for other in values if other > v) for v in values]


@dataclass(frozen=True)
class RankedTrack:
    track: Track
    ranks: dict
    total: int


def rank_and_select(tracks: Sequence[Track], cfg: TrackerConfig) -> tuple[Track | None, list[RankedTrack]]:
    """Pick the athlete track by best summed ranking.

    Criteria: mean box area and mean detection score always; track length for
    athletics; net horizontal displacement magnitude for swimming.  Returns
    (None, []) when no tracks exist (an explicit no-athlete result).
    """
    tracks = list(tracks)
    if not tracks:
        return None, []
    criteria = {
        "area": [float(np.mean([e.detection.area for e in t.entries])) for t in tracks],
        "score": [float(np.mean([e.detection.score for e in t.entries])) for t in tracks],
    }
    if cfg.domain == "athletics":
        criteria["length"] = [float(len(t)) for t in tracks]
    else:
        criteria["travel"] = [abs(_net_dx(t)) for t in tracks]
    ranks_per_criterion = {name: _rank(vals) for name, vals in criteria.items()}
    ranked = []
    for i, t in enumerate(tracks):
        ranks = {name: ranks_per_criterion[name][i] for name in criteria}
        ranked.append(RankedTrack(track=t, ranks=ranks, total=sum(ranks.values())))
    order = sorted(range(len(tracks)), key=lambda i: (ranked[i].total, tracks[i].t1, i))
    ranked_sorted = [ranked[i] for i in order]
    return ranked_sorted[0].track, ranked_sorted


def run_tracker(rec: CameraRecording, cfg: TrackerConfig) -> tuple[Track | None, list[RankedTrack]]:
    """Full pipeline: build, merge, rank; returns the selected track."""
    tracks = build_initial_tracks(rec, cfg)
    merged = merge_tracks(tracks, cfg)
    return rank_and_select(merged, cfg)
