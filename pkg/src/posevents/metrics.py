"""Evaluation protocols: temporal event matching, PCK, AP, and tracker FPR.

Event matching assigns every prediction exclusively to its closest ground
truth occurrence (ties toward the earlier one); at most one prediction per
ground truth counts, and a counted prediction is a true positive iff its
frame distance does not exceed the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Detection, EventTimeline, Pose, Track, iou


@dataclass(frozen=True)
class MatchReport:
    """Counts and scores for one (prediction, ground truth) timeline pair."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    mean_abs_dev_frames: float | None = None
    mean_abs_dev_ms: float | None = None


def _occurrences(timeline) -> list[int]:
    if isinstance(timeline, EventTimeline):
        return list(timeline.occurrences)
    return sorted(int(t) for t in timeline)


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def match_events(pred, gt, max_dist: int, fps: float | None = None) -> MatchReport:
    """Match predicted to ground-truth occurrences at frame tolerance ``max_dist``."""
    preds = _occurrences(pred)
    gts = _occurrences(gt)

    # Nearest ground truth per prediction; equidistant ties go to the earlier one.
    assigned: dict[int, list[int]] = {}
    for p in preds:
        if not gts:
            continue
        dists = [abs(p - g) for g in gts]
        gi = int(np.argmin(dists))  # argmin returns the first (earlier) on ties
        assigned.setdefault(gi, []).append(p)

    tp = 0
    fp = len(preds) - sum(len(v) for v in assigned.values())  # preds with no gt at all
    deviations = []
    for gi, plist in assigned.items():
        # Closest prediction wins the ground truth; ties toward the earlier prediction.
        plist = sorted(plist, key=lambda p: (abs(p - gts[gi]), p))
        winner = plist[0]
        if abs(winner - gts[gi]) <= max_dist:
            tp += 1
            deviations.append(abs(winner - gts[gi]))
        else:
            fp += 1
        fp += len(plist) - 1

    fn = len(gts) - tp
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    mad = float(np.mean(deviations)) if deviations else None
    mad_ms = (mad / fps * 1000.0) if (mad is not None and fps) else None
    return MatchReport(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1,
                       mean_abs_dev_frames=mad, mean_abs_dev_ms=mad_ms)


def pooled_match_report(pairs: Iterable[tuple[Sequence[int], Sequence[int]]],
                        max_dist: int, fps: float | None = None) -> MatchReport:
    """Pool TP/FP/FN counts over several (pred, gt) pairs into one report."""
    tp = fp = fn = 0
    devs: list[float] = []
    for pred, gt in pairs:
        rep = match_events(pred, gt, max_dist, fps)
        tp += rep.tp
        fp += rep.fp
        fn += rep.fn
        if rep.mean_abs_dev_frames is not None:
            devs.extend([rep.mean_abs_dev_frames] * rep.tp)
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    mad = float(np.mean(devs)) if devs else None
    mad_ms = (mad / fps * 1000.0) if (mad is not None and fps) else None
    return MatchReport(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1,
                       mean_abs_dev_frames=mad, mean_abs_dev_ms=mad_ms)


def pck(pred_poses: Sequence[Pose], gt_poses: Sequence[Pose], alpha: float) -> float:
    """Percentage of correct keypoints at radius alpha * max(gt bbox w, h).

    Evaluated over visible ground-truth keypoints only (masked = invisible);
    the bbox is spanned by the visible keypoints of each ground-truth pose.
    """
    if len(pred_poses) != len(gt_poses):
        raise ValueError("pred and gt pose lists must have equal length")
    total = 0
    correct = 0
    for pred, gt in zip(pred_poses, gt_poses):
        visible = gt.keypoints[:, 2] > 0.0
        if not np.any(visible):
            continue
        pts = gt.keypoints[visible, :2]
        ref = max(pts[:, 0].max() - pts[:, 0].min(), pts[:, 1].max() - pts[:, 1].min())
        dist = np.linalg.norm(pred.keypoints[visible, :2] - pts, axis=1)
        correct += int(np.sum(dist <= alpha * ref))
        total += int(np.sum(visible))
    return _safe_div(100.0 * correct, total)


def average_precision(detections: Mapping[int, Sequence[Detection]],
                      ground_truth: Mapping[int, Sequence[Detection]],
                      iou_threshold: float = 0.75) -> float:
    """AP (percent) at a fixed box IoU, all-point interpolated PR curve."""
    n_gt = sum(len(v) for v in ground_truth.values())
    flat = []
    for frame, dets in detections.items():
        for order, det in enumerate(dets):
            flat.append((-det.score, frame, order, det))
    flat.sort(key=lambda item: item[:3])
    if n_gt == 0 or not flat:
        return 0.0

    matched: dict[int, set[int]] = {}
    tps = []
    for _, frame, _, det in flat:
        gts = ground_truth.get(frame, ())
        used = matched.setdefault(frame, set())
        best_iou, best_gi = 0.0, None
        for gi, gt in enumerate(gts):
            if gi in used:
                continue
            v = iou(det, gt)
            if v >= iou_threshold and v > best_iou:
                best_iou, best_gi = v, gi
        if best_gi is not None:
            used.add(best_gi)
            tps.append(1.0)
        else:
            tps.append(0.0)

    tps = np.asarray(tps)
    cum_tp = np.cumsum(tps)
    recalls = cum_tp / n_gt
    precisions = cum_tp / np.arange(1, len(tps) + 1)
    # All-point interpolation: running max of precision from the right.
    interp = np.maximum.accumulate(precisions[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recalls, interp):
        ap += (r - prev_r) * p
        prev_r = r
    return 100.0 * ap


def fpr(track: Track | None, negative_frames: Iterable[int]) -> float:
    """Percentage of negative frames on which the tracker emits a detection.

    Interpolated gap entries count as emissions.
    """
    negatives = list(negative_frames)
    if not negatives:
        return 0.0
    if track is None:
        return 0.0
    emitted = sum(1 for f in negatives if track.covers(f))
    return 100.0 * emitted / len(negatives)
