"""On-disk interchange formats.

Three file kinds move between pipeline stages:

* ``candidates.jsonl``: one metadata header line per camera recording
  (camera id, fps, frame count, role) followed by one object per frame:
  ``{"frame": int, "detections": [{"box": [cx, cy, w, h], "score": s,
  "keypoints": [[x, y, s] * K]}]}`` with detections sorted by descending
  score.  Several recordings may be concatenated in one file.
* ``events.json``: ``{"fps": float, "events": {"<type>": [frame, ...]}}``.
* ``track.jsonl``: a ``{"track_frame_range": [t1, t2], ...}`` header line,
  then the per-frame schema with exactly one detection per frame;
  interpolated gap entries carry ``"interpolated": true``.

Floats are serialized with full round-trip precision (``repr``), and the
writers emit canonical key order, so save(load(x)) is byte-identical for
files produced here.
"""

from __future__ import annotations

import json
from typing import Any, Sequence

import numpy as np

from .core import (
    CameraRecording,
    Detection,
    EventTimeline,
    FrameCandidates,
    Pose,
    PoseventsError,
    Track,
    TrackEntry,
)


class ParseError(PoseventsError):
    """A file does not parse as the expected interchange format."""


class SchemaError(PoseventsError):
    """A file parses but violates the schema (wrong K, bad field types, ...)."""


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, separators=(", ", ": "))


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ParseError(f"{where}: missing field '{key}'")
    return obj[key]


def _detection_obj(det: Detection, pose: Pose) -> dict:
    return {
        "box": [float(det.cx), float(det.cy), float(det.w), float(det.h)],
        "score": float(det.score),
        "keypoints": [[float(x), float(y), float(s)] for x, y, s in pose.keypoints],
    }


def _parse_detection(obj: dict, frame: int, where: str, expected_k: int | None) -> tuple[Detection, Pose]:
    box = _require(obj, "box", where)
    score = _require(obj, "score", where)
    kps = _require(obj, "keypoints", where)
    if len(box) != 4:
        raise SchemaError(f"{where}: box must have 4 entries, got {len(box)}")
    if expected_k is not None and len(kps) != expected_k:
        raise SchemaError(f"{where}: expected K={expected_k} keypoints, got {len(kps)}")
    try:
        det = Detection(frame=frame, cx=box[0], cy=box[1], w=box[2], h=box[3], score=score)
        pose = Pose(np.asarray(kps, dtype=float))
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc
    if pose.keypoints.shape[1] != 3:
        raise SchemaError(f"{where}: keypoints must be [x, y, score] triples")
    return det, pose


def _frame_line(fc: FrameCandidates, extra: dict | None = None) -> str:
    obj: dict[str, Any] = {"frame": fc.frame}
    obj["detections"] = [_detection_obj(det, pose) for det, pose in fc.items]
    if extra:
        obj.update(extra)
    return _dump_line(obj)


def save_candidates(path, recordings: Sequence[CameraRecording]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in recordings:
            header = {
                "camera_id": rec.camera_id,
                "fps": float(rec.fps),
                "num_frames": rec.num_frames,
                "role": rec.role,
            }
            fh.write(_dump_line(header) + "\n")
            for fc in rec.candidates:
                fh.write(_frame_line(fc) + "\n")


def _read_json_lines(path) -> list[tuple[int, dict]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from exc
    return out


def load_candidates(path, expected_k: int | None = None) -> list[CameraRecording]:
    """Read one or more camera recordings; enforces K when given."""
    lines = _read_json_lines(path)
    recordings: list[CameraRecording] = []
    i = 0
    while i < len(lines):
        lineno, header = lines[i]
        if "camera_id" not in header:
            raise ParseError(f"{path}:{lineno}: expected recording header with 'camera_id'")
        num_frames = int(_require(header, "num_frames", f"{path}:{lineno}"))
        fps = float(_require(header, "fps", f"{path}:{lineno}"))
        role = header.get("role", "pannable")
        i += 1
        frames = []
        for f in range(num_frames):
            if i >= len(lines):
                raise ParseError(f"{path}: truncated recording '{header['camera_id']}', missing frame {f}")
            lineno, obj = lines[i]
            where = f"{path}:{lineno}"
            frame = int(_require(obj, "frame", where))
            if frame != f:
                raise ParseError(f"{where}: expected frame {f}, got {frame}")
            dets = _require(obj, "detections", where)
            items = tuple(_parse_detection(d, frame, where, expected_k) for d in dets)
            frames.append(FrameCandidates(frame=frame, items=items))
            i += 1
        recordings.append(
            CameraRecording(
                camera_id=header["camera_id"],
                fps=fps,
                num_frames=num_frames,
                candidates=tuple(frames),
                role=role,
            )
        )
    return recordings


def save_timeline(path, timelines: Sequence[EventTimeline], fps: float) -> None:
    obj = {"fps": float(fps), "events": {tl.event_type: list(tl.occurrences) for tl in timelines}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, separators=(", ", ": "))
        fh.write("\n")


def load_timeline(path) -> tuple[list[EventTimeline], float]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc.msg})") from exc
    fps = float(_require(obj, "fps", str(path)))
    events = _require(obj, "events", str(path))
    timelines = []
    for name, occ in events.items():
        try:
            timelines.append(EventTimeline(event_type=name, occurrences=tuple(int(t) for t in occ)))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: events['{name}']: {exc}") from exc
    return timelines, fps


def save_track(path, track: Track, camera_id: str = "cam0", fps: float = 50.0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "track_frame_range": [track.t1, track.t2],
            "camera_id": camera_id,
            "fps": float(fps),
        }
        fh.write(_dump_line(header) + "\n")
        for entry in track.entries:
            fc = FrameCandidates(frame=entry.detection.frame, items=((entry.detection, entry.pose),))
            extra = {"interpolated": True} if entry.interpolated else None
            fh.write(_frame_line(fc, extra) + "\n")


def load_track(path, expected_k: int | None = None) -> tuple[Track, dict]:
    """Read a single-athlete track; returns (track, header metadata)."""
    lines = _read_json_lines(path)
    if not lines:
        raise ParseError(f"{path}: empty track file")
    lineno, header = lines[0]
    frange = _require(header, "track_frame_range", f"{path}:{lineno}")
    t1, t2 = int(frange[0]), int(frange[1])
    entries = []
    for offset, (lineno, obj) in enumerate(lines[1:]):
        where = f"{path}:{lineno}"
        frame = int(_require(obj, "frame", where))
        if frame != t1 + offset:
            raise ParseError(f"{where}: expected frame {t1 + offset}, got {frame}")
        dets = _require(obj, "detections", where)
        if len(dets) != 1:
            raise SchemaError(f"{where}: track lines must carry exactly one detection, got {len(dets)}")
        det, pose = _parse_detection(dets[0], frame, where, expected_k)
        entries.append(TrackEntry(detection=det, pose=pose, interpolated=bool(obj.get("interpolated", False))))
    try:
        track = Track(t1=t1, t2=t2, entries=tuple(entries))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    meta = {"camera_id": header.get("camera_id", "cam0"), "fps": float(header.get("fps", 50.0))}
    return track, meta
