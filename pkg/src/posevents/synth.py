"""Synthetic athlete motion with analytically known event timing.

Two generators provide ground truth for every pipeline stage at desk scale:
a kinematic stick-figure runner (stride events defined by the contact-phase
schedule, so they are exact by construction) and a scripted swim start over
a four-camera setup (marking crossings, head submersion, and knee-angle
extrema placed at known frames).  ``perturb`` adds realistic pose-estimation
error modes (jitter, dropout, outliers) without touching labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    CameraRecording,
    Detection,
    EventTimeline,
    FrameCandidates,
    Pose,
)

RUNNER_KEYPOINTS = {
    "head": 0, "neck": 1,
    "r_shoulder": 2, "r_elbow": 3, "r_wrist": 4,
    "l_shoulder": 5, "l_elbow": 6, "l_wrist": 7,
    "pelvis": 8,
    "r_hip": 9, "r_knee": 10, "r_ankle": 11, "r_heel": 12, "r_toe": 13,
    "l_hip": 14, "l_knee": 15, "l_ankle": 16, "l_heel": 17, "l_toe": 18,
    "spine": 19,
}
RUNNER_K = 20

SWIM_KEYPOINTS = {
    "head": 0, "neck": 1,
    "r_shoulder": 2, "r_elbow": 3, "r_wrist": 4,
    "l_shoulder": 5, "l_elbow": 6, "l_wrist": 7,
    "r_hip": 8, "r_knee": 9, "r_ankle": 10,
    "l_hip": 11, "l_knee": 12, "l_ankle": 13,
}
SWIM_K = 14

# Dropped keypoints get scores below this, under any sensible masking cutoff.
DROPPED_SCORE_MAX = 0.05


# ---------------------------------------------------------------------------
# Runner


@dataclass(frozen=True)
class RunnerParams:
    """Kinematic stick-figure runner seen from the side.

    Stride events follow the contact-phase schedule exactly: each leg is in
    ground contact while its phase is inside the contact window, step_begin
    and step_end are the window edges.  All geometry is proportional to
    ``scale`` when ``speed`` is left derived.
    """

    fps: float = 200.0
    num_strides: int = 5          # full cycles per leg
    period: int = 40              # frames per stride cycle
    contact_fraction: float = 0.3
    speed: float | None = None    # px/frame; None derives 0.06 * scale
    pan_speed: float = 0.0        # px/frame subtracted from observed x
    pan_wobble: float = 0.0       # px amplitude of sinusoidal horizontal pan error
    pan_wobble_period: float = 90.0
    pan_wobble_y: float = 0.0     # px amplitude of vertical pan error
    pan_wobble_y_period: float = 250.0
    scale: float = 100.0          # leg length scale in px
    start_x: float = 200.0
    ground_y: float = 600.0
    tail_margin: int = 15         # frames kept after the final touchdown
    camera_id: str = "run000"

    def __post_init__(self):
        if not 0.0 < self.contact_fraction < 1.0:
            raise ValueError("contact fraction must be in (0, 1)")
        if self.period < 4:
            raise ValueError("period must be at least 4 frames")
        if self.period % 2 != 0:
            raise ValueError("period must be even so both legs touch down on frames")

    @property
    def resolved_speed(self) -> float:
        return self.speed if self.speed is not None else 0.06 * self.scale

    @property
    def num_frames(self) -> int:
        # The video ends shortly after the last touchdown so no stretch of
        # frames shows motion approaching an event that never occurs.
        last_touchdown = self.period * (self.num_strides - 1) + self.period // 2
        return last_touchdown + self.tail_margin

    @property
    def contact_frames(self) -> int:
        return max(1, round(self.contact_fraction * self.period))


def _knee_ik(hip: np.ndarray, ankle: np.ndarray, l1: float, l2: float) -> np.ndarray:
    """Knee position for a two-segment leg, bending forward (+x)."""
    d = ankle - hip
    dist = float(np.hypot(d[0], d[1]))
    if dist >= l1 + l2 - 1e-9 or dist < 1e-9:
        return hip + d * (l1 / max(dist, 1e-9))
    a = (l1 * l1 - l2 * l2 + dist * dist) / (2.0 * dist)
    h = math.sqrt(max(l1 * l1 - a * a, 0.0))
    u = d / dist
    perp = np.array([u[1], -u[0]])  # +x when the leg points down
    return hip + a * u + h * perp


def runner_step_events(params: RunnerParams) -> tuple[EventTimeline, EventTimeline]:
    """Exact stride events from the contact schedule (both feet merged)."""
    n = params.num_frames
    cl = params.contact_frames
    begins: list[int] = []
    ends: list[int] = []
    for offset in (0.0, 0.5):
        k = 0
        while True:
            td = round(params.period * (k + offset))
            if td >= n:
                break
            begins.append(td)
            if td + cl < n:
                ends.append(td + cl)
            k += 1
    return (
        EventTimeline("step_begin", tuple(sorted(begins))),
        EventTimeline("step_end", tuple(sorted(ends))),
    )


def generate_runner(params: RunnerParams, rng: np.random.Generator
                    ) -> tuple[CameraRecording, list[EventTimeline]]:
    """One runner video: single-candidate frames plus exact stride events."""
    kp = RUNNER_KEYPOINTS
    s = params.scale
    n = params.num_frames
    period = params.period
    cl = params.contact_frames
    speed = params.resolved_speed
    ground = params.ground_y
    thigh = shank = 0.45 * s
    ankle_h = 0.04 * s
    lift = 0.22 * s
    plant_lead = 0.2 * s

    bob_phase = rng.uniform(0.0, 2.0 * math.pi)
    pan_phase = rng.uniform(0.0, 2.0 * math.pi)
    pan_phase_y = rng.uniform(0.0, 2.0 * math.pi)
    det_scores = 0.86 + 0.08 * rng.random(n)

    def plant_x(cycle: float) -> float:
        # Touchdown position of a leg whose cycle index (k + offset) is given.
        td = period * cycle
        return params.start_x + speed * td + plant_lead

    def foot(t: int, offset: float) -> np.ndarray:
        # Planted while the leg phase is inside the contact window; the foot
        # velocity is discontinuous at both contact edges, which is what makes
        # the events sharp.
        k = math.floor(t / period - offset)
        td = period * (k + offset)
        phase = t - td
        if phase < cl:
            return np.array([plant_x(k + offset), ground - ankle_h])
        q = (phase - cl) / (period - cl)
        x0, x1 = plant_x(k + offset), plant_x(k + 1 + offset)
        x = x0 + (x1 - x0) * q
        y = ground - ankle_h - lift * math.sin(math.pi * q)
        return np.array([x, y])

    frames = []
    timelines = runner_step_events(params)
    arr = np.zeros((n, RUNNER_K, 3))
    for t in range(n):
        pelvis = np.array([
            params.start_x + speed * t,
            ground - 0.86 * s + 0.02 * s * math.sin(4.0 * math.pi * t / period + bob_phase),
        ])
        pts = np.zeros((RUNNER_K, 2))
        pts[kp["pelvis"]] = pelvis
        neck = pelvis + np.array([0.05 * s, -0.52 * s])
        pts[kp["neck"]] = neck
        pts[kp["head"]] = neck + np.array([0.03 * s, -0.13 * s])
        pts[kp["spine"]] = 0.5 * (pelvis + neck)
        for side, offset, sign in (("r", 0.0, 1.0), ("l", 0.5, -1.0)):
            hip = pelvis + np.array([sign * 0.03 * s, 0.02 * s])
            ankle = foot(t, offset)
            knee = _knee_ik(hip, ankle, thigh, shank)
            pts[kp[f"{side}_hip"]] = hip
            pts[kp[f"{side}_knee"]] = knee
            pts[kp[f"{side}_ankle"]] = ankle
            pts[kp[f"{side}_heel"]] = ankle + np.array([-0.06 * s, 0.03 * s])
            pts[kp[f"{side}_toe"]] = ankle + np.array([0.10 * s, 0.035 * s])
            # Arm swings counter to the same-side leg.
            swing = 0.7 * math.sin(2.0 * math.pi * (t / period + offset + 0.5))
            shoulder = neck + np.array([sign * 0.03 * s, 0.04 * s])
            elbow = shoulder + 0.24 * s * np.array([math.sin(swing), 0.95])
            wrist = elbow + 0.22 * s * np.array([math.sin(swing + 0.9), 0.45])
            pts[kp[f"{side}_shoulder"]] = shoulder
            pts[kp[f"{side}_elbow"]] = elbow
            pts[kp[f"{side}_wrist"]] = wrist

        pan = params.pan_speed * t
        if params.pan_wobble > 0.0:
            pan += params.pan_wobble * math.sin(
                2.0 * math.pi * t / params.pan_wobble_period + pan_phase)
        pts[:, 0] -= pan
        if params.pan_wobble_y > 0.0:
            pts[:, 1] -= params.pan_wobble_y * math.sin(
                2.0 * math.pi * t / params.pan_wobble_y_period + pan_phase_y)

        arr[t, :, :2] = pts
        arr[t, :, 2] = 0.9
        arr[t, [kp["r_heel"], kp["r_toe"], kp["l_heel"], kp["l_toe"]], 2] = 0.85

        pad = 0.12 * s
        x1, y1 = pts.min(axis=0) - pad
        x2, y2 = pts.max(axis=0) + pad
        det = Detection(frame=t, cx=(x1 + x2) / 2.0, cy=(y1 + y2) / 2.0,
                        w=x2 - x1, h=y2 - y1, score=float(det_scores[t]))
        frames.append(FrameCandidates(frame=t, items=((det, Pose(arr[t].copy())),)))

    rec = CameraRecording(camera_id=params.camera_id, fps=params.fps, num_frames=n,
                          candidates=tuple(frames), role="pannable")
    return rec, list(timelines)


def generate_runner_videos(base: RunnerParams, count: int, rng: np.random.Generator,
                           pan_follow: bool = False
                           ) -> list[tuple[CameraRecording, list[EventTimeline]]]:
    """A set of runner videos with per-video speed/start/pan variation.

    With ``pan_follow`` the camera tracks the athlete loosely (under-panning
    plus slow horizontal and vertical wander), so the athlete drifts across a
    field of view several body heights wide and the drift differs per video.
    """
    out = []
    for i in range(count):
        speed = base.resolved_speed * rng.uniform(0.9, 1.1)
        start_x = rng.uniform(120.0, 420.0)
        params = replace(base, speed=speed, start_x=start_x, camera_id=f"run{i:03d}")
        if pan_follow:
            params = replace(
                params,
                pan_speed=speed * rng.uniform(0.25, 0.75),
                pan_wobble=rng.uniform(30.0, 80.0),
                pan_wobble_period=rng.uniform(200.0, 400.0),
                pan_wobble_y=rng.uniform(15.0, 50.0),
                pan_wobble_y_period=rng.uniform(150.0, 350.0),
            )
        out.append(generate_runner(params, rng))
    return out


# ---------------------------------------------------------------------------
# Swim start


@dataclass(frozen=True)
class SwimStartParams:
    """Scripted swim start over one above-water and three under-water cameras.

    The head trajectory crosses the distance markings at frames solvable in
    closed form, the head detection score collapses at the dive, and the knee
    angle has a scripted maximum at the jump and its first minimum at the
    first kick (later kicks dip deeper on purpose).
    """

    fps: float = 50.0
    num_frames: int = 520
    block_x: float = 150.0
    jump_frame: int = 55
    dive_frame: int = 95
    kick_frame: int = 120
    kick_period: int = 36
    kick_width: int = 8
    flight_speed: float = 9.0
    swim_speed: float = 7.0
    mark_x: tuple[float, float, float] = (900.0, 1510.0, 2200.0)
    camera_ranges: tuple[tuple[float, float], ...] = (
        (0.0, 640.0), (400.0, 1250.0), (1150.0, 2000.0), (1900.0, 2750.0))
    above_hold: int = 25          # frames cam 0 keeps seeing the body after the dive
    num_distractors: int = 0
    distractor_window: int = 60   # frames per on/off presence stretch
    detection_gaps: tuple[tuple[int, int, int], ...] = ()  # (camera, start, length)
    scale: float = 120.0
    water_y: float = 430.0

    def __post_init__(self):
        if not self.jump_frame < self.dive_frame < self.kick_frame:
            raise ValueError("need jump_frame < dive_frame < kick_frame")
        if len(self.camera_ranges) != 4:
            raise ValueError("exactly four cameras expected")

    def head_x(self, t: float) -> float:
        if t < self.jump_frame:
            return self.block_x
        if t < self.dive_frame:
            return self.block_x + self.flight_speed * (t - self.jump_frame)
        x_dive = self.block_x + self.flight_speed * (self.dive_frame - self.jump_frame)
        return x_dive + self.swim_speed * (t - self.dive_frame)

    def head_y(self, t: float) -> float:
        if t < self.jump_frame:
            return self.water_y - 1.9 * self.scale
        if t < self.dive_frame:
            # Ease in and out so the detection box never jumps between frames.
            q = (t - self.jump_frame) / (self.dive_frame - self.jump_frame)
            drop = q * q * (3.0 - 2.0 * q)
            return self.water_y - 1.9 * self.scale * (1.0 - drop)
        depth = min(1.0, (t - self.dive_frame) / 15.0)
        return self.water_y + depth * (0.25 * self.scale + 0.05 * self.scale * math.sin(
            2.0 * math.pi * (t - self.dive_frame) / 50.0))

    def knee_angle(self, t: float) -> float:
        if t <= self.jump_frame:
            return max(100.0, 172.0 - 1.0 * (t - self.jump_frame) ** 2)
        if t < self.dive_frame:
            return max(150.0, 172.0 - 1.8 * (t - self.jump_frame))
        angle = 166.0
        i = 0
        while True:
            center = self.kick_frame + i * self.kick_period
            if center - self.kick_width > t:
                break
            if abs(t - center) <= self.kick_width:
                depth = 70.0 if i == 0 else 80.0
                angle -= depth * (1.0 - ((t - center) / self.kick_width) ** 2)
            i += 1
            if center > self.num_frames + self.kick_width:
                break
        return max(angle, 80.0)


def swim_ground_truth(params: SwimStartParams) -> list[EventTimeline]:
    """Exact event frames implied by the scripted trajectory."""
    events = {
        "jump_off": params.jump_frame,
        "dive_in": params.dive_frame,
        "first_kick": params.kick_frame,
    }
    for name, mark in zip(("d5m", "d10m", "d15m"), params.mark_x):
        t = params.dive_frame
        while t < params.num_frames and params.head_x(t) < mark:
            t += 1
        if t >= params.num_frames:
            raise ValueError(f"marking {name} at x={mark} never reached")
        events[name] = t
    ordered = ["jump_off", "dive_in", "first_kick", "d5m", "d10m", "d15m"]
    frames = [events[name] for name in ordered]
    if any(a >= b for a, b in zip(frames, frames[1:])):
        raise ValueError(f"scripted events out of order: {dict(zip(ordered, frames))}")
    return [EventTimeline(name, (events[name],)) for name in ordered]


def athlete_visibility(params: SwimStartParams) -> list[tuple[int, int] | None]:
    """Inclusive frame window in which the athlete appears, per camera."""
    windows: list[tuple[int, int] | None] = []
    for ci, (x0, x1) in enumerate(params.camera_ranges):
        if ci == 0:
            windows.append((0, min(params.num_frames - 1,
                                   params.dive_frame + params.above_hold)))
            continue
        lo = None
        hi = None
        for t in range(params.dive_frame, params.num_frames):
            inside = x0 <= params.head_x(t) <= x1
            if inside and lo is None:
                lo = t
            if inside:
                hi = t
        windows.append((lo, hi) if lo is not None else None)
    return windows


def _swim_pose(params: SwimStartParams, t: int, x_offset: float, head_score: float) -> Pose:
    """14-keypoint athlete pose in camera pixels (head leads in +x)."""
    s = params.scale
    head = np.array([params.head_x(t) - x_offset, params.head_y(t)])
    if t < params.jump_frame:
        u = np.array([-0.15, 1.0])
    elif t < params.dive_frame:
        q = (t - params.jump_frame) / (params.dive_frame - params.jump_frame)
        u = np.array([-0.15 - 0.85 * q, 1.0 - 0.9 * q])
    else:
        u = np.array([-1.0, 0.08])
    u = u / np.linalg.norm(u)
    w = -u  # arms reach past the head
    theta = math.radians(params.knee_angle(t))

    pts = np.zeros((SWIM_K, 2))
    kp = SWIM_KEYPOINTS
    neck = head + 0.15 * s * u
    pts[kp["head"]] = head
    pts[kp["neck"]] = neck
    perp = np.array([-u[1], u[0]])
    for side, sign in (("r", 1.0), ("l", -1.0)):
        shoulder = neck + sign * 0.04 * s * perp
        elbow = shoulder + 0.24 * s * w
        wrist = elbow + 0.22 * s * w
        hip = head + 0.62 * s * u + sign * 0.03 * s * perp
        phi = math.pi - theta + sign * 0.02
        rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
        knee = hip + 0.45 * s * u
        ankle = knee + 0.45 * s * (rot @ u)
        pts[kp[f"{side}_shoulder"]] = shoulder
        pts[kp[f"{side}_elbow"]] = elbow
        pts[kp[f"{side}_wrist"]] = wrist
        pts[kp[f"{side}_hip"]] = hip
        pts[kp[f"{side}_knee"]] = knee
        pts[kp[f"{side}_ankle"]] = ankle

    arr = np.zeros((SWIM_K, 3))
    arr[:, :2] = pts
    arr[:, 2] = 0.8
    arr[kp["head"], 2] = head_score
    return Pose(arr)


def generate_swim_start(params: SwimStartParams, rng: np.random.Generator
                        ) -> tuple[list[CameraRecording], list[EventTimeline]]:
    """Four synchronized camera recordings plus the exact event timelines.

    Athlete detections carry scores above 0.85; distractor swimmers stay
    below 0.7 and move against the swim direction with smaller boxes.
    """
    timelines = swim_ground_truth(params)
    windows = athlete_visibility(params)
    gaps: dict[int, set[int]] = {}
    for cam, start, length in params.detection_gaps:
        gaps.setdefault(cam, set()).update(range(start, start + length))

    s = params.scale
    recordings = []
    roles = ("above_water", "under_water", "under_water", "under_water")
    for ci, (x0, x1) in enumerate(params.camera_ranges):
        span = x1 - x0
        window = windows[ci]
        athlete_scores = 0.87 + 0.07 * rng.random(params.num_frames)
        distractor_scores = 0.5 + 0.15 * rng.random((max(params.num_distractors, 1),
                                                     params.num_frames))
        frames = []
        for t in range(params.num_frames):
            items = []
            visible = window is not None and window[0] <= t <= window[1]
            if ci == 0:
                head_score = 0.92 if t < params.dive_frame else 0.06
            else:
                head_score = 0.88
            if visible and t not in gaps.get(ci, ()):  # athlete candidate
                pose = _swim_pose(params, t, x0, head_score)
                pts = pose.keypoints[:, :2]
                pad = 0.15 * s
                lo = pts.min(axis=0) - pad
                hi = pts.max(axis=0) + pad
                det = Detection(frame=t, cx=float((lo[0] + hi[0]) / 2),
                                cy=float((lo[1] + hi[1]) / 2),
                                w=float(hi[0] - lo[0]), h=float(hi[1] - lo[1]),
                                score=float(athlete_scores[t]))
                items.append((det, pose))
            if ci > 0:
                for j in range(params.num_distractors):
                    stretch = (t + 37 * j + 19 * ci) // params.distractor_window
                    if stretch % 2 != 0:
                        continue
                    x = (0.8 * span - 25.0 * j - 2.3 * (j + 1) * t) % span
                    y = params.water_y + 0.9 * s + 0.35 * s * j
                    w_box, h_box = 0.95 * s, 0.5 * s
                    det = Detection(frame=t, cx=x, cy=y, w=w_box, h=h_box,
                                    score=float(min(distractor_scores[j, t], 0.7)))
                    arr = np.zeros((SWIM_K, 3))
                    offs = np.linspace(-0.4, 0.4, SWIM_K)
                    arr[:, 0] = x + offs * w_box
                    arr[:, 1] = y + 0.2 * h_box * np.sin(np.arange(SWIM_K))
                    arr[:, 2] = 0.6
                    items.append((det, Pose(arr)))
            items.sort(key=lambda pair: -pair[0].score)
            frames.append(FrameCandidates(frame=t, items=tuple(items)))
        recordings.append(CameraRecording(
            camera_id=f"cam{ci}", fps=params.fps, num_frames=params.num_frames,
            candidates=tuple(frames), role=roles[ci]))
    return recordings, timelines


def vary_swim_params(base: SwimStartParams, rng: np.random.Generator,
                     max_gap: int = 0) -> SwimStartParams:
    """Per-scene timing/speed variation, optionally with detection gaps.

    The jitter ranges are chosen so the scripted event order survives for
    the default camera/marking geometry.
    """
    jump = base.jump_frame + int(rng.integers(-8, 9))
    dive = jump + (base.dive_frame - base.jump_frame) + int(rng.integers(-5, 6))
    kick = dive + (base.kick_frame - base.dive_frame) + int(rng.integers(-4, 5))
    params = replace(
        base,
        jump_frame=jump,
        dive_frame=dive,
        kick_frame=kick,
        flight_speed=base.flight_speed * rng.uniform(0.9, 1.1),
        swim_speed=base.swim_speed * rng.uniform(0.92, 1.08),
    )
    if max_gap > 0:
        windows = athlete_visibility(params)
        gaps = []
        for ci in range(1, 4):
            if windows[ci] is None:
                continue
            lo, hi = windows[ci]
            if hi - lo < 30:
                continue
            length = int(rng.integers(3, max_gap + 1))
            start = int(rng.integers(lo + 5, hi - length - 5))
            gaps.append((ci, start, length))
        params = replace(params, detection_gaps=tuple(gaps))
    return params


# ---------------------------------------------------------------------------
# Noise


@dataclass(frozen=True)
class NoiseModel:
    """Pose-estimation error modes, applied independently per keypoint."""

    sigma_px: float = 0.0
    dropout: float = 0.0
    score_sigma: float = 0.0
    outlier_prob: float = 0.0
    outlier_px: float = 150.0
    seed: int = 0

    def __post_init__(self):
        for p in (self.dropout, self.outlier_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")
        if self.sigma_px < 0:
            raise ValueError("sigma must be non-negative")


def perturb(rec: CameraRecording, noise: NoiseModel) -> CameraRecording:
    """Corrupt keypoints (never boxes, frame counts, or labels); deterministic per seed."""
    rng = np.random.default_rng(noise.seed)
    frames = []
    for fc in rec.candidates:
        items = []
        for det, pose in fc.items:
            arr = pose.keypoints.copy()
            live = ~pose.masked()
            k = arr.shape[0]
            if noise.sigma_px > 0:
                jitter = rng.normal(0.0, noise.sigma_px, size=(k, 2))
                arr[live, :2] += jitter[live]
            if noise.outlier_prob > 0:
                hit = (rng.random(k) < noise.outlier_prob) & live
                angles = rng.uniform(0.0, 2.0 * math.pi, size=k)
                radii = rng.uniform(0.5, 1.5, size=k) * noise.outlier_px
                arr[hit, 0] += radii[hit] * np.cos(angles[hit])
                arr[hit, 1] += radii[hit] * np.sin(angles[hit])
            if noise.score_sigma > 0:
                bump = rng.normal(0.0, noise.score_sigma, size=k)
                arr[live, 2] = np.clip(arr[live, 2] + bump[live], 0.001, 1.0)
            if noise.dropout > 0:
                dropped = (rng.random(k) < noise.dropout) & live
                arr[dropped, 2] = rng.uniform(0.0, DROPPED_SCORE_MAX, size=int(dropped.sum()))
            items.append((det, Pose(arr)))
        frames.append(FrameCandidates(frame=fc.frame, items=tuple(items)))
    return CameraRecording(camera_id=rec.camera_id, fps=rec.fps,
                           num_frames=rec.num_frames, candidates=tuple(frames),
                           role=rec.role)
