"""Video-level inference and discrete event extraction.

``infer_video`` runs the trained network over a full pose sequence under the
chosen normalization mode; output index t corresponds to input frame t with
centered alignment, and the (s - 1) frames nearest the edges carry copies of
the closest interior output, flagged as boundary.

``extract_events`` turns predicted indicators into frame indices: a frame is
an occurrence iff f - b is at or below a threshold and is the minimum within
a suppression window (ties resolved toward the earlier frame).
"""

from __future__ import annotations

import numpy as np

from .core import EventTimeline
from .encoding import (
    DEFAULT_C_MIN,
    IndicatorSeries,
    features_from_array,
    mask_low_confidence_array,
    normalize_global_array,
    normalize_local_array,
    normalize_sequence_window,
    poses_to_array,
)
from .tcn import SequenceTooShortError, TcnParams, _forward

DEFAULT_SUPPRESSION_RADIUS = 5


def infer_video(params: TcnParams, poses, mode: str | None = None,
                c_min: float | None = None) -> IndicatorSeries:
    """Predict indicator series for a whole pose sequence.

    Sequence mode normalizes and evaluates one window per output index;
    global/local modes run a single convolutional pass over the normalized
    sequence.
    """
    meta = params.meta
    mode = mode or meta.get("mode", "sequence")
    c_min = c_min if c_min is not None else meta.get("c_min", DEFAULT_C_MIN)
    t_max = float(meta.get("t_max", 100.0))
    event_types = tuple(meta.get("event_types", ("step_begin", "step_end")))
    s = params.config.receptive_field
    m = s // 2

    arr = mask_low_confidence_array(poses_to_array(list(poses)), c_min)
    n = arr.shape[0]
    if n < s:
        raise SequenceTooShortError(
            f"sequence of {n} frames is shorter than the receptive field s={s}")

    if mode == "sequence":
        windows = np.stack([
            features_from_array(normalize_sequence_window(arr, j, j + s))
            for j in range(n - s + 1)
        ])  # (n-s+1, 3K, s)
        xc = np.ascontiguousarray(windows.astype(params.dtype).transpose(1, 0, 2))
        y, _ = _forward(params, xc, train=False, dropout=0.0, rng=None,
                        update_stats=False)
        interior = y[:, :, 0]  # (outputs, n-s+1)
    elif mode in ("global", "local"):
        norm = normalize_global_array(arr) if mode == "global" else normalize_local_array(arr, s)
        feats = features_from_array(norm).astype(params.dtype)[:, None, :]
        y, _ = _forward(params, feats, train=False, dropout=0.0, rng=None,
                        update_stats=False)
        interior = y[:, 0, :]  # (outputs, n-s+1)
    else:
        raise ValueError(f"unknown normalization mode '{mode}'")

    outputs = params.config.outputs
    pred = np.empty((outputs, n), dtype=float)
    pred[:, m: m + interior.shape[1]] = interior
    pred[:, :m] = interior[:, :1]
    pred[:, m + interior.shape[1]:] = interior[:, -1:]
    boundary = np.zeros(n, dtype=bool)
    boundary[:m] = True
    boundary[m + interior.shape[1]:] = True

    fwd = pred[0::2]
    bwd = pred[1::2]
    return IndicatorSeries(event_types=event_types, forward=fwd, backward=bwd,
                           t_max=t_max, boundary=boundary)


def extract_events(series: IndicatorSeries, threshold: float | None = None,
                   suppression_radius: int = DEFAULT_SUPPRESSION_RADIUS) -> list[EventTimeline]:
    """Read occurrences off an indicator series.

    Threshold defaults to 2 / t_max (two frames' worth of indicator).
    Boundary-flagged frames never become occurrences but still take part in
    the window-minimum comparison.
    """
    if threshold is None:
        threshold = 2.0 / series.t_max
    n = series.num_frames
    boundary = series.boundary if series.boundary is not None else np.zeros(n, dtype=bool)
    out = []
    for c, name in enumerate(series.event_types):
        g = series.forward[c] - series.backward[c]
        candidates = np.nonzero((g <= threshold) & ~boundary)[0]
        events: list[int] = []
        for t in candidates:
            lo = max(0, t - suppression_radius)
            hi = min(n, t + suppression_radius + 1)
            if g[t] > g[lo:hi].min():
                continue
            if events and t - events[-1] <= suppression_radius:
                continue
            events.append(int(t))
        out.append(EventTimeline(event_type=name, occurrences=tuple(events)))
    return out
