"""Command-line entry point.

Subcommands wire the pipeline stages together over the on-disk interchange
formats: synth -> track -> swim-detect / encode -> train -> infer ->
eval-events / eval-pose -> report.  Exit codes: 0 success, 1 domain errors
(no athlete, sequence shorter than the receptive field, malformed data),
2 usage/config errors.  All randomness is seeded from flags/config, and
reruns with identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import encoding, infer, io, metrics, swim, synth, tcn, tracker
from .core import EventTimeline, PoseventsError

from dataclasses import dataclass

log = logging.getLogger("posevents")


class ConfigError(PoseventsError):
    """Bad configuration file or flag combination (exit code 2)."""


class DomainError(PoseventsError):
    """Valid invocation that cannot produce a result (exit code 1)."""


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from exc


def _build_dataclass(cls, obj: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_SECTION_NAMES = ("tracker", "swim", "encoding", "train", "metrics")


def _section(config: dict, name: str) -> dict:
    """Fetch a nested config section, tolerating flat single-purpose files."""
    if name in config and isinstance(config[name], dict):
        return dict(config[name])
    return {k: v for k, v in config.items()
            if k not in ("domain", "seeds") and k not in _SECTION_NAMES}


@dataclass(frozen=True)
class PipelineConfig:
    """One config file for the whole pipeline, section per stage.

    Flags still override individual values; every constant is validated by
    the dataclass of the module that owns it.
    """

    domain: str = "athletics"
    tracker: "tracker.TrackerConfig | None" = None
    swim: "swim.SwimRuleConfig | None" = None
    encoding: dict = None  # mode, t_max, c_min, s
    train: "tcn.TrainConfig | None" = None
    metrics: dict = None  # dt list, alpha list
    seeds: dict = None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        obj = _load_json(path)
        domain = obj.get("domain", "athletics")
        if domain not in ("athletics", "swim"):
            raise ConfigError(f"{path}: unknown domain '{domain}'")
        enc = dict(obj.get("encoding", {}))
        unknown = set(enc) - {"mode", "t_max", "c_min", "s"}
        if unknown:
            raise ConfigError(f"{path}: encoding: unknown keys {sorted(unknown)}")
        if enc.get("mode", "sequence") not in encoding.NORMALIZATION_MODES:
            raise ConfigError(f"{path}: encoding: unknown mode '{enc['mode']}'")
        met = dict(obj.get("metrics", {}))
        unknown = set(met) - {"dt", "alpha"}
        if unknown:
            raise ConfigError(f"{path}: metrics: unknown keys {sorted(unknown)}")
        trk = None
        if "tracker" in obj:
            trk = _build_dataclass(tracker.TrackerConfig,
                                   {"domain": domain, **obj["tracker"]}, f"{path}: tracker")
        swm = None
        if "swim" in obj:
            swim_obj = dict(obj["swim"])
            if "legs" in swim_obj:
                swim_obj["legs"] = tuple(tuple(leg) for leg in swim_obj["legs"])
            swm = _build_dataclass(swim.SwimRuleConfig, swim_obj, f"{path}: swim")
        trn = None
        if "train" in obj:
            trn = _build_dataclass(tcn.TrainConfig, obj["train"], f"{path}: train")
        return cls(domain=domain, tracker=trk, swim=swm, encoding=enc, train=trn,
                   metrics=met, seeds=dict(obj.get("seeds", {})))


def _tracker_config(path, domain_flag=None) -> tracker.TrackerConfig:
    obj = _section(_load_json(path), "tracker") if path else {}
    if domain_flag:
        if obj.get("domain") not in (None, domain_flag):
            log.warning("config domain %s overridden by flag %s", obj.get("domain"), domain_flag)
        obj["domain"] = domain_flag
    return _build_dataclass(tracker.TrackerConfig, obj, str(path))


def _swim_config(path) -> swim.SwimRuleConfig:
    obj = _section(_load_json(path), "swim")
    if "legs" in obj:
        obj["legs"] = tuple(tuple(leg) for leg in obj["legs"])
    return _build_dataclass(swim.SwimRuleConfig, obj, str(path))


def _train_config(obj: dict, where: str) -> tcn.TrainConfig:
    return _build_dataclass(tcn.TrainConfig, obj, where)


# ---------------------------------------------------------------------------
# synth


def _write_recording(out_dir: Path, recordings, timelines, fps: float):
    out_dir.mkdir(parents=True, exist_ok=True)
    io.save_candidates(out_dir / "candidates.jsonl", recordings)
    io.save_timeline(out_dir / "events.json", timelines, fps)


def cmd_synth(args) -> int:
    params_obj = _load_json(args.params) if args.params else {}
    count = int(params_obj.pop("count", 1))
    noise_obj = params_obj.pop("noise", None)
    rng = np.random.default_rng(args.seed)
    out_root = Path(args.out_dir)
    if args.kind == "runner":
        pan_follow = bool(params_obj.pop("pan_follow", False))
        base = _build_dataclass(synth.RunnerParams, params_obj, args.params or "<defaults>")
        videos = synth.generate_runner_videos(base, count, rng, pan_follow=pan_follow)
        for i, (rec, timelines) in enumerate(videos):
            if noise_obj:
                noise = _build_dataclass(synth.NoiseModel, {**noise_obj, "seed": args.seed + i},
                                         args.params)
                rec = synth.perturb(rec, noise)
            _write_recording(out_root / f"video_{i:03d}", [rec], timelines, base.fps)
    else:
        base = _build_dataclass(synth.SwimStartParams, {
            k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v)
            for k, v in params_obj.items()
        }, args.params or "<defaults>")
        for i in range(count):
            params = synth.vary_swim_params(base, rng) if count > 1 else base
            recs, timelines = synth.generate_swim_start(params, rng)
            if noise_obj:
                recs = [
                    synth.perturb(rec, _build_dataclass(
                        synth.NoiseModel, {**noise_obj, "seed": args.seed + 7 * i + ci},
                        args.params))
                    for ci, rec in enumerate(recs)
                ]
            _write_recording(out_root / f"rec_{i:03d}", recs, timelines, base.fps)
    return 0


# ---------------------------------------------------------------------------
# track


def cmd_track(args) -> int:
    recordings = io.load_candidates(args.input)
    if args.camera:
        recordings = [r for r in recordings if r.camera_id == args.camera]
        if not recordings:
            raise DomainError(f"no recording with camera id '{args.camera}' in {args.input}")
    cfg = _tracker_config(args.config, args.domain)

    def run(rec):
        return rec, tracker.run_tracker(rec, cfg)

    if len(recordings) > 1 and args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run, recordings))
    else:
        results = [run(rec) for rec in recordings]

    wrote = 0
    for rec, (selected, ranked) in results:
        if selected is None:
            log.warning("no athlete found in %s", rec.camera_id)
            continue
        out = Path(args.out)
        if len(results) > 1:
            out = out.parent / f"{out.stem}_{rec.camera_id}{out.suffix}"
        io.save_track(out, selected, camera_id=rec.camera_id, fps=rec.fps)
        wrote += 1
        if args.dump_all_tracks:
            dump = Path(args.dump_all_tracks)
            if len(results) > 1:
                dump = dump.parent / f"{dump.stem}_{rec.camera_id}{dump.suffix}"
            with open(dump, "w", encoding="utf-8") as fh:
                for rank, rt in enumerate(ranked):
                    fh.write(json.dumps({
                        "rank": rank + 1, "total": rt.total, "ranks": rt.ranks,
                        "t1": rt.track.t1, "t2": rt.track.t2,
                        "length": len(rt.track),
                    }) + "\n")
    if wrote == 0:
        raise DomainError("no athlete track found in any recording")
    return 0


# ---------------------------------------------------------------------------
# swim-detect


def cmd_swim_detect(args) -> int:
    cfg = _swim_config(args.config)
    tracks = {}
    fps = 50.0
    for path in args.tracks:
        track, meta = io.load_track(path)
        tracks[meta["camera_id"]] = track
        fps = meta["fps"]
    timelines = swim.detect_swim_start(tracks, cfg)
    io.save_timeline(args.out, timelines, fps)
    for tl in timelines:
        log.info("%s: %s", tl.event_type, list(tl.occurrences) or "none")
    return 0


# ---------------------------------------------------------------------------
# encode / train


def cmd_encode(args) -> int:
    if len(args.track) != len(args.events):
        raise ConfigError("--track and --events must be given the same number of times")
    samples = []
    for track_path, events_path in zip(args.track, args.events):
        track, meta = io.load_track(track_path)
        timelines, _ = io.load_timeline(events_path)
        offset_tl = []
        for tl in timelines:
            occ = tuple(t - track.t1 for t in tl.occurrences if track.t1 <= t <= track.t2)
            offset_tl.append(EventTimeline(tl.event_type, occ))
        samples.append(encoding.VideoSample(
            video_id=meta["camera_id"] or Path(track_path).stem,
            poses=track.poses, timelines=offset_tl))
    data = encoding.build_training_data(
        samples, mode=args.mode, s=args.s, t_max=args.tmax, c_min=args.cmin)
    encoding.save_crop_dataset(args.out, data)
    log.info("wrote %d crops from %d sequences", data.num_crops, len(samples))
    return 0


def cmd_train(args) -> int:
    dataset = encoding.load_crop_dataset(args.data)
    obj = _load_json(args.config) if args.config else {}
    net_keys = {"hidden", "blocks", "kernel"}
    net_obj = {k: obj.pop(k) for k in list(obj) if k in net_keys}
    cfg = _train_config(_section(obj, "train"), args.config or "<defaults>")
    net = tcn.TcnConfig(in_channels=3 * dataset.k,
                        outputs=2 * len(dataset.event_types), **net_obj)
    rng = np.random.default_rng(args.seed)
    params, history = tcn.train(dataset, cfg, net=net, rng=rng,
                                log_fn=lambda h: log.info("epoch %(epoch)d loss %(loss).5f", h))
    tcn.save_model(args.out, params)
    if args.loss_log:
        with open(args.loss_log, "w", encoding="utf-8") as fh:
            json.dump(history, fh, indent=1)
    return 0


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args) -> int:
    params = tcn.load_model(args.model)
    track, meta = io.load_track(args.track)
    mode = args.mode
    if mode and params.meta.get("mode") and mode != params.meta["mode"]:
        log.warning("mode flag '%s' overrides model's trained mode '%s'",
                    mode, params.meta["mode"])
    series = infer.infer_video(params, track.poses, mode=mode)
    timelines = infer.extract_events(series, threshold=args.theta,
                                     suppression_radius=args.suppression)
    # Report occurrences in recording frame indices, not track offsets.
    shifted = [EventTimeline(tl.event_type, tuple(t + track.t1 for t in tl.occurrences))
               for tl in timelines]
    io.save_timeline(args.out, shifted, meta["fps"])
    if args.dump_indicators:
        with open(args.dump_indicators, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            header = ["frame", "boundary"]
            for name in series.event_types:
                header += [f"f_{name}", f"b_{name}"]
            writer.writerow(header)
            for t in range(series.num_frames):
                row = [track.t1 + t, int(series.boundary[t]) if series.boundary is not None else 0]
                for c in range(len(series.event_types)):
                    row += [repr(float(series.forward[c, t])), repr(float(series.backward[c, t]))]
                writer.writerow(row)
    return 0


# ---------------------------------------------------------------------------
# evaluation


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad numeric list '{text}'") from exc


def cmd_eval_events(args) -> int:
    pred, fps = io.load_timeline(args.pred)
    gt, _ = io.load_timeline(args.gt)
    pred_by = {tl.event_type: tl for tl in pred}
    gt_by = {tl.event_type: tl for tl in gt}
    dts = [int(x) for x in _parse_float_list(args.dt)]
    rows = []
    for dt in dts:
        pooled = []
        for name in sorted(gt_by):
            rep = metrics.match_events(pred_by.get(name, ()), gt_by[name], dt, fps)
            rows.append({"event_type": name, "dt": dt, **rep.__dict__})
            pooled.append((list(pred_by.get(name, EventTimeline(name, ())).occurrences)
                           if name in pred_by else [],
                           list(gt_by[name].occurrences)))
        rep = metrics.pooled_match_report(pooled, dt, fps)
        rows.append({"event_type": "all", "dt": dt, **rep.__dict__})
    report = {"fps": fps, "rows": rows}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    for row in rows:
        print(f"dt={row['dt']} {row['event_type']}: "
              f"P={row['precision']:.3f} R={row['recall']:.3f} F1={row['f1']:.3f}")
    return 0


def _poses_from_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        first = json.loads(fh.readline())
    if "track_frame_range" in first:
        track, _ = io.load_track(path)
        return track.poses
    recordings = io.load_candidates(path)
    poses = []
    for rec in recordings:
        for fc in rec.candidates:
            if not fc.items:
                raise DomainError(f"{path}: frame {fc.frame} has no detection to evaluate")
            poses.append(fc.items[0][1])
    return poses


def cmd_eval_pose(args) -> int:
    pred = _poses_from_file(args.pred)
    gt = _poses_from_file(args.gt)
    if len(pred) != len(gt):
        raise DomainError(f"pose counts differ: {len(pred)} predicted vs {len(gt)} ground truth")
    rows = [{"alpha": a, "pck": metrics.pck(pred, gt, a)} for a in _parse_float_list(args.alpha)]
    report = {"rows": rows}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1)
            fh.write("\n")
    for row in rows:
        print(f"PCK@{row['alpha']}: {row['pck']:.2f}")
    return 0


# ---------------------------------------------------------------------------
# report


def emit_report(report: dict, fmt: str, out_path, indicators=None,
                pred_events=None, gt_events=None) -> None:
    """Write a report as canonical json, flat csv, or an indicator plot."""
    if fmt == "json":
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return
    if fmt == "csv":
        rows = report.get("rows", [])
        keys: list[str] = []
        for row in rows:
            for k in row:
                if k not in keys:
                    keys.append(k)
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        return
    if fmt == "plot":
        if indicators is None:
            raise ConfigError("plot format needs --indicators (csv from `infer --dump-indicators`)")
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        frames = indicators["frame"]
        names = [k[2:] for k in indicators if k.startswith("f_")]
        fig, axes = plt.subplots(len(names), 1, figsize=(10, 2.8 * len(names)),
                                 squeeze=False, sharex=True)
        for ax, name in zip(axes[:, 0], names):
            ax.plot(frames, indicators[f"f_{name}"], label="forward", lw=1.0)
            ax.plot(frames, indicators[f"b_{name}"], label="backward", lw=1.0)
            for t in (pred_events or {}).get(name, ()):
                ax.axvline(t, color="tab:red", alpha=0.7, lw=1.0)
            for t in (gt_events or {}).get(name, ()):
                ax.axvline(t, color="tab:green", alpha=0.5, lw=1.0, ls="--")
            ax.set_ylabel(name)
            ax.legend(loc="upper right", fontsize="small")
        axes[-1, 0].set_xlabel("frame")
        fig.tight_layout()
        fig.savefig(out_path, dpi=120)
        plt.close(fig)
        return
    raise ConfigError(f"unknown report format '{fmt}'")


def _read_indicators_csv(path) -> dict[str, list[float]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v))
    return cols


def cmd_report(args) -> int:
    report = _load_json(args.input) if args.input else {}
    indicators = _read_indicators_csv(args.indicators) if args.indicators else None
    pred_events = gt_events = None
    if args.pred:
        timelines, _ = io.load_timeline(args.pred)
        pred_events = {tl.event_type: tl.occurrences for tl in timelines}
    if args.gt:
        timelines, _ = io.load_timeline(args.gt)
        gt_events = {tl.event_type: tl.occurrences for tl in timelines}
    emit_report(report, args.format, args.out, indicators=indicators,
                pred_events=pred_events, gt_events=gt_events)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posevents",
                                     description="Pose-sequence motion event detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic recordings with exact events")
    p.add_argument("kind", choices=("runner", "swim"))
    p.add_argument("--params", help="JSON parameter file (fields of the generator params)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="select the athlete track from candidates")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config", help="tracker config JSON")
    p.add_argument("--domain", choices=("athletics", "swim"))
    p.add_argument("--camera", help="process only this camera id")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-all-tracks", help="write ranked track summaries here")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("swim-detect", help="detect the six swim-start events")
    p.add_argument("--tracks", nargs="+", required=True, help="per-camera track files")
    p.add_argument("--config", required=True, help="swim rule config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_swim_detect)

    p = sub.add_parser("encode", help="build a training crop dataset")
    p.add_argument("--track", action="append", required=True)
    p.add_argument("--events", action="append", required=True)
    p.add_argument("--mode", choices=encoding.NORMALIZATION_MODES, default="sequence")
    p.add_argument("--tmax", type=float, default=encoding.DEFAULT_T_MAX)
    p.add_argument("--cmin", type=float, default=encoding.DEFAULT_C_MIN)
    p.add_argument("--s", type=int, default=29, help="crop length (receptive field)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the sequence model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--loss-log", help="write per-epoch loss JSON here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict events for a tracked video")
    p.add_argument("--model", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--mode", choices=encoding.NORMALIZATION_MODES)
    p.add_argument("--out", required=True)
    p.add_argument("--theta", type=float, help="extraction threshold (default 2 / t_max)")
    p.add_argument("--suppression", type=int, default=infer.DEFAULT_SUPPRESSION_RADIUS)
    p.add_argument("--dump-indicators", help="write per-frame indicator csv here")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval-events", help="match predicted events against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--dt", default="1,2,3", help="comma-separated frame tolerances")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_events)

    p = sub.add_parser("eval-pose", help="PCK of predicted poses against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--alpha", default="0.05,0.1,0.2")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_pose)

    p = sub.add_parser("report", help="convert or plot evaluation artifacts")
    p.add_argument("--in", dest="input", help="report JSON to convert")
    p.add_argument("--format", choices=("json", "csv", "plot"), default="json")
    p.add_argument("--indicators", help="indicator csv for plot format")
    p.add_argument("--pred", help="predicted events.json for plot markers")
    p.add_argument("--gt", help="ground truth events.json for plot markers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("POSEVENTS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PoseventsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
