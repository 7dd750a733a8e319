"""File-based pipeline stages: simulate -> detect -> beamform -> fuse -> localize -> evaluate.

Every stage reads its inputs from, and writes its outputs to, one output
directory.  Outputs are first written to a staging directory and moved
into place only when the whole stage succeeds, so a failed stage leaves no
partial files behind.

Directory layout (all paths relative to the output directory)::

    clips.jsonl              one record per clip: clip_id, wav, cloud, array,
                             acoustic_camera, duration, gt_box
    events_gt.jsonl          annotated events (clip_id, time_s, hop_frame,
                             video_frame, optional end_s / tail_s)
    <clip>.wav / .ply / .array.json / .acoustic_camera.json / .scene.json
    detections.jsonl         detected events
    detection_report.json    per-fold and mean +/- std hard/relaxed metrics
    models.json              trained classifier per fold
    triggers.jsonl           localization timestamps and their heatmaps
    heatmaps/<clip>_<i>.f32  normalized heatmaps (+ .json sidecar)
    weighted/<clip>_<i>.ply  fused weighted clouds
    localizations.jsonl      predicted/ground-truth boxes and IoU
    report.json, recall_table.json, iou_histogram.json

Recorded data can enter at the detect stage by providing ``clips.jsonl``,
``events_gt.jsonl`` and the per-clip files it references.
"""

from __future__ import annotations

import json
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import detect
from .beamform import AcousticHeatmap, ScanGrid, compute_steering, delay_and_sum, normalize_heatmap, trigger_window
from .dsp import SpectrogramConfig, bandpass
from .fusion import CalibrationNoise, fuse, load_camera, read_ply, save_camera, write_ply
from .geometry import OrientedBox3, PointCloud, WeightedPointCloud
from .localize import IOU_THRESHOLDS, ClusterParams, iou_histogram, localize_event, recall_table
from .profiles import get_profile
from .scene import (
    MicArray,
    MultichannelRecording,
    ground_truth_box,
    load_scene,
    random_scene,
    save_scene,
    simulate_propagation,
    synth_point_cloud,
)


class InputError(Exception):
    """Missing or invalid user input (exit code 1)."""


class StageError(Exception):
    """A stage failed while processing valid input (exit code 2)."""


@dataclass
class PipelineConfig:
    out: str = "sonomap-out"
    profile: str = "chiseling"
    seed: int = 0
    jobs: int = 1
    scene: str | None = None
    clips: int = 6
    duration: float = 5.0
    mics: int = 48
    snr_db: float = 20.0
    cloud_density: float = 2e5
    k: int | None = None  # folds; profile default when None
    j: int | None = None  # relaxed tolerance; profile default when None
    grid_distance: float | None = None
    grid_width: float = 1.0
    grid_height: float = 1.0
    grid_nx: int = 100
    grid_ny: int = 100
    cluster: ClusterParams = field(default_factory=ClusterParams)
    iou_thresholds: tuple = IOU_THRESHOLDS
    histogram_bin: float = 0.05
    trigger_interval: float = 0.04
    calibration_noise: bool = False
    heatmaps_in: str | None = None
    predictions_in: str | None = None
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    train: detect.TrainConfig = field(default_factory=detect.TrainConfig)
    augment: detect.AugmentationSpec = field(default_factory=detect.AugmentationSpec)

    def __post_init__(self):
        try:
            self.action = get_profile(self.profile)
        except ValueError as e:
            raise InputError(str(e)) from None
        if self.jobs < 1:
            raise InputError("--jobs must be >= 1")
        if self.clips < 1 or self.duration <= 0 or self.mics < 1:
            raise InputError("clips, duration and mics must be positive")
        if any(not 0.0 <= t <= 1.0 for t in self.iou_thresholds):
            raise InputError("IoU thresholds must lie in [0, 1]")

    @property
    def folds(self):
        return self.action.k_cv if self.k is None else self.k

    @property
    def tolerance(self):
        return self.action.j if self.j is None else self.j

    def grid(self, array_pose):
        d = self.action.grid_distance if self.grid_distance is None else self.grid_distance
        return ScanGrid(d, self.grid_width, self.grid_height, self.grid_nx, self.grid_ny, array_pose)

    def to_dict(self):
        d = asdict(self)
        d["effective"] = {"folds": self.folds, "j": self.tolerance, "action": asdict(self.action)}
        return d


# --------------------------------------------------------------------------
# file helpers
# --------------------------------------------------------------------------

class StageWriter:
    """Stage outputs go to ``<out>/.staging-<stage>`` and are moved into place on success."""

    def __init__(self, out, stage, replace_dirs=()):
        self.out = Path(out)
        self.tmp = self.out / f".staging-{stage}"
        self.replace_dirs = replace_dirs

    def __enter__(self):
        shutil.rmtree(self.tmp, ignore_errors=True)
        self.tmp.mkdir(parents=True)
        return self

    def path(self, rel):
        p = self.tmp / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        for d in self.replace_dirs:
            shutil.rmtree(self.out / d, ignore_errors=True)
        for f in sorted(p for p in self.tmp.rglob("*") if p.is_file()):
            dest = self.out / f.relative_to(self.tmp)
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(f, dest)
        shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_jsonl(path, records):
    detect.write_jsonl(path, records)


def _read_jsonl(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing input file: {path}")
    try:
        return detect.read_jsonl(path)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON-lines ({e})") from None


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing input file: {path}")
    return json.loads(path.read_text())


def _map(fn, items, jobs):
    """Ordered map, optionally on a thread pool."""
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _manifest(out):
    clips = _read_jsonl(Path(out) / "clips.jsonl")
    if not clips:
        raise InputError(f"{Path(out) / 'clips.jsonl'} lists no clips")
    return clips


def _gt_events(out):
    grouped = {}
    for r in _read_jsonl(Path(out) / "events_gt.jsonl"):
        grouped.setdefault(r["clip_id"], []).append(r)
    for recs in grouped.values():
        recs.sort(key=lambda r: r["time_s"])
    return grouped


def save_array(array: MicArray, pose, path):
    Path(path).write_text(_dump({
        "positions": array.positions.tolist(), "sample_rate": array.sample_rate,
        "pose": np.asarray(pose).reshape(-1).tolist(),
    }))


def load_array(path):
    d = _read_json(path)
    return MicArray(d["positions"], float(d["sample_rate"])), np.asarray(d.get("pose", np.eye(4)), float).reshape(4, 4)


def read_channel(path, channel=0):
    """One channel of a WAV file as float64, without loading the others."""
    if not Path(path).exists():
        raise InputError(f"missing input file: {path}")
    rate, data = wavfile.read(path, mmap=True)
    x = np.array(data[:, channel] if data.ndim == 2 else data, dtype=float)
    return x, float(rate)


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def clip_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def annotate(scene, profile, config: SpectrogramConfig):
    """Ground-truth event records for the reference microphone (channel 0)."""
    ref = scene.mic_positions()[0]
    n_frames = config.n_frames(int(round(scene.duration * config.sample_rate)))
    a, b = detect.label_zone(config)
    recs = []
    for src in scene.sources:
        delay = float(np.linalg.norm(src.position - ref)) / scene.speed_of_sound
        if profile.trigger_mode == "impulsive":
            w = src.waveform
            tail = 8.0 * getattr(w, "decay", 0.0)
            for t in src.event_times(scene.duration):
                recs.append({"time_s": t + delay, "tail_s": tail})
        else:
            ivs = src.active_intervals or [(t, scene.duration) for t in src.event_times(scene.duration)]
            for s0, s1 in ivs:
                recs.append({"time_s": s0 + delay, "end_s": min(s1 + delay, scene.duration)})
    out = []
    for r in sorted(recs, key=lambda r: r["time_s"]):
        k = max(0, int(np.floor((r["time_s"] - b) / config.hop_len)) + 1)
        if k >= n_frames:
            continue
        r.update(hop_frame=k, video_frame=int(np.floor(r["time_s"] * detect.VIDEO_FPS)))
        out.append(r)
    return out


def stage_simulate(cfg: PipelineConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.scene is not None:
        if not Path(cfg.scene).exists():
            raise InputError(f"scene file not found: {cfg.scene}")
        try:
            scenes = [(Path(cfg.scene).stem, load_scene(cfg.scene), cfg.seed)]
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
            raise InputError(f"invalid scene file {cfg.scene}: {e}") from None
    else:
        scenes = []
        for i in range(cfg.clips):
            s = clip_seed(cfg.seed, i)
            scenes.append((f"clip{i:02d}", random_scene(cfg.action, seed=s, n_mics=cfg.mics, duration=cfg.duration,
                                                       snr_db=cfg.snr_db, cloud_density=cfg.cloud_density), s))
    with StageWriter(out, "simulate") as w:
        def one(item):
            cid, scene, s = item
            rec = simulate_propagation(scene, seed=s)
            rec.save_wav(w.path(f"{cid}.wav"))
            del rec
            cloud = synth_point_cloud(scene, seed=s)
            write_ply(w.path(f"{cid}.ply"), cloud.points)
            save_scene(scene, w.path(f"{cid}.scene.json"))
            save_array(scene.array, scene.array_pose, w.path(f"{cid}.array.json"))
            save_camera(scene.acoustic_camera, w.path(f"{cid}.acoustic_camera.json"))
            gt = ground_truth_box(scene.sources[0], cfg.action).to_dict() if scene.sources else None
            entry = {
                "clip_id": cid, "wav": f"{cid}.wav", "cloud": f"{cid}.ply", "array": f"{cid}.array.json",
                "acoustic_camera": f"{cid}.acoustic_camera.json", "scene": f"{cid}.scene.json",
                "duration": scene.duration, "gt_box": gt,
            }
            events = [{"clip_id": cid, **r} for r in annotate(scene, cfg.action, cfg.spectrogram)]
            return entry, events

        results = _map(one, scenes, cfg.jobs)
        _write_jsonl(w.path("clips.jsonl"), [e for e, _ in results])
        _write_jsonl(w.path("events_gt.jsonl"), [r for _, evs in results for r in evs])
    return {"clips": len(results), "events": sum(len(e) for _, e in results)}


# --------------------------------------------------------------------------
# detect
# --------------------------------------------------------------------------

def _gt_eventlist(recs):
    return detect.EventList([detect.Event(int(r["hop_frame"]), float(r["time_s"]), int(r["video_frame"]))
                             for r in recs])


def _load_clip(out, entry, gt_recs, cfg: PipelineConfig):
    sc = cfg.spectrogram
    x, rate = read_channel(Path(out) / entry["wav"])
    audio = detect.prepare_audio(x, rate, sc)
    X = detect.extract_features(audio, sc)
    onsets = [r["time_s"] for r in gt_recs if "end_s" not in r]
    intervals = [(r["time_s"], r["end_s"]) for r in gt_recs if "end_s" in r]
    y = detect.frame_labels(len(X), onsets, intervals, sc)
    w = np.ones(len(X))
    for r in gt_recs:
        if r.get("tail_s"):
            w = np.minimum(w, detect.tail_weights(len(X), [r["time_s"]], r["tail_s"], sc))
    return detect.Clip(entry["clip_id"], audio, y, X, w, _gt_eventlist(gt_recs))


def _fold_results(predictions, clips, folds, j):
    hard, relaxed = [], []
    for fold in folds:
        h, r = detect.MatchResult(0, 0, 0), detect.MatchResult(0, 0, 0)
        for ci in fold:
            clip = clips[ci]
            pe = detect.transitions_to_events(predictions[clip.clip_id]) if clip.clip_id in predictions \
                else detect.EventList()
            h = h + detect.match_events(pe, clip.events, detect.MatchConfig.hard())
            r = r + detect.match_events(pe, clip.events, detect.MatchConfig.relaxed(j))
        hard.append(h)
        relaxed.append(r)
    return hard, relaxed


def stage_detect(cfg: PipelineConfig):
    out = Path(cfg.out)
    entries = _manifest(out)
    gt = _gt_events(out)
    clips = _map(lambda e: _load_clip(out, e, gt.get(e["clip_id"], []), cfg), entries, cfg.jobs)
    ids = [c.clip_id for c in clips]
    models = []
    if cfg.predictions_in is not None:
        if not Path(cfg.predictions_in).exists():
            raise InputError(f"predictions file not found: {cfg.predictions_in}")
        try:
            preds = detect.read_predictions_jsonl(cfg.predictions_in, cfg.train.threshold, cfg.spectrogram)
        except (KeyError, ValueError) as e:
            raise InputError(f"invalid predictions file {cfg.predictions_in}: {e}") from None
        unknown = sorted(set(preds) - set(ids))
        if unknown:
            raise InputError(f"predictions reference unknown clips: {unknown}")
        folds = [list(range(len(clips)))]
        source = "imported"
    else:
        if not 2 <= cfg.folds <= len(clips):
            raise InputError(f"{cfg.folds}-fold cross-validation needs at least {cfg.folds} clips, have {len(clips)}")
        report = detect.cross_validate(clips, cfg.folds, cfg.tolerance, cfg.augment, cfg.train, cfg.spectrogram,
                                       seed=cfg.seed, jobs=cfg.jobs, action=cfg.action.name)
        preds = report.predictions()
        folds = [[ids.index(c) for c in f.test_clips] for f in report.folds]
        models = [{"fold": f.fold, "test_clips": f.test_clips, **f.model.to_dict()} for f in report.folds]
        source = "cross-validation"
    hard, relaxed = _fold_results(preds, clips, folds, cfg.tolerance)
    records = []
    for cid in ids:
        if cid in preds:
            records.extend(detect.events_to_records(cid, detect.transitions_to_events(preds[cid])))
    rep = {
        "action": cfg.action.name, "source": source, "k": len(folds), "j": cfg.tolerance,
        "folds": [[ids[i] for i in f] for f in folds],
        "hard": detect.DetectionMetrics.from_folds(hard).as_dict(),
        "relaxed": detect.DetectionMetrics.from_folds(relaxed).as_dict(),
        "degenerate_folds": [m["fold"] for m in models if m["metadata"].get("degenerate_labels")],
    }
    with StageWriter(out, "detect") as w:
        _write_jsonl(w.path("detections.jsonl"), records)
        w.path("detection_report.json").write_text(_dump(rep))
        w.path("models.json").write_text(_dump(models))
    return {"events": len(records), "relaxed_f1": rep["relaxed"]["f1"]["mean"], "hard_f1": rep["hard"]["f1"]["mean"]}


# --------------------------------------------------------------------------
# beamform
# --------------------------------------------------------------------------

def _triggers(out, cfg, entries):
    dets = {}
    for r in _read_jsonl(Path(out) / "detections.jsonl"):
        dets.setdefault(r["clip_id"], []).append(float(r["time_s"]))
    trig = []
    for e in entries:
        times = detect.trigger_schedule(sorted(dets.get(e["clip_id"], [])), cfg.action, float(e["duration"]),
                                        cfg.trigger_interval)
        for i, t in enumerate(times):
            window, frame = trigger_window(t, float(e["duration"]))
            trig.append({"clip_id": e["clip_id"], "index": i, "timestamp": t, "video_frame": frame,
                         "window": list(window), "heatmap": f"heatmaps/{e['clip_id']}_{i:04d}.f32"})
    return trig


def _import_heatmap(src_dir, name, dest):
    src = Path(src_dir) / Path(name).name
    if not src.exists() or not Path(str(src) + ".json").exists():
        raise InputError(f"imported heatmap missing: {src} (and its .json sidecar)")
    try:
        h = AcousticHeatmap.load(src)
    except (ValueError, KeyError) as e:
        raise InputError(f"invalid heatmap {src}: {e}") from None
    if not h.normalized:
        h = normalize_heatmap(h)
    h.save(dest)


def stage_beamform(cfg: PipelineConfig):
    out = Path(cfg.out)
    entries = _manifest(out)
    trig = _triggers(out, cfg, entries)
    if cfg.heatmaps_in is not None and not Path(cfg.heatmaps_in).is_dir():
        raise InputError(f"heatmap directory not found: {cfg.heatmaps_in}")
    with StageWriter(out, "beamform", replace_dirs=("heatmaps",)) as w:
        for e in entries:
            items = [t for t in trig if t["clip_id"] == e["clip_id"]]
            if not items:
                continue
            if cfg.heatmaps_in is not None:
                for t in items:
                    _import_heatmap(cfg.heatmaps_in, t["heatmap"], w.path(t["heatmap"]))
                continue
            wav = out / e["wav"]
            if not wav.exists():
                raise InputError(f"missing input file: {wav}")
            rec = MultichannelRecording.load_wav(wav)
            if cfg.action.band is not None:
                rec = MultichannelRecording(bandpass(rec.channels, cfg.action.band, rec.sample_rate, axis=1),
                                            rec.sample_rate)
            array, pose = load_array(out / e["array"])
            steering = compute_steering(array, cfg.grid(pose))

            def one(t):
                h = delay_and_sum(rec, steering, tuple(t["window"]), video_frame=t["video_frame"])
                normalize_heatmap(h).save(w.path(t["heatmap"]))

            _map(one, items, cfg.jobs)
            del rec
        _write_jsonl(w.path("triggers.jsonl"), trig)
    return {"triggers": len(trig)}


# --------------------------------------------------------------------------
# fuse
# --------------------------------------------------------------------------

def stage_fuse(cfg: PipelineConfig):
    out = Path(cfg.out)
    entries = {e["clip_id"]: e for e in _manifest(out)}
    trig = _read_jsonl(out / "triggers.jsonl")
    clouds, cams = {}, {}
    for cid in dict.fromkeys(t["clip_id"] for t in trig):
        e = entries.get(cid)
        if e is None:
            raise InputError(f"trigger for unknown clip {cid}")
        path = out / e["cloud"]
        if not path.exists():
            raise InputError(f"missing input file: {path}")
        clouds[cid] = PointCloud(read_ply(path)[0])
        cams[cid] = load_camera(out / e["acoustic_camera"])
    order = [e for e in entries]
    with StageWriter(out, "fuse", replace_dirs=("weighted",)) as w:
        def one(t):
            hp = out / t["heatmap"]
            if not hp.exists():
                raise InputError(f"missing heatmap {hp}")
            h = AcousticHeatmap.load(hp)
            noise = None
            if cfg.calibration_noise:
                noise = CalibrationNoise(seed=clip_seed(cfg.seed, 1000 * order.index(t["clip_id"]) + t["index"]))
            wc = fuse(clouds[t["clip_id"]], h, cams[t["clip_id"]], noise)
            write_ply(w.path(f"weighted/{t['clip_id']}_{t['index']:04d}.ply"), wc.points, wc.weights)

        _map(one, trig, cfg.jobs)
    return {"clouds": len(trig)}


# --------------------------------------------------------------------------
# localize
# --------------------------------------------------------------------------

def stage_localize(cfg: PipelineConfig):
    out = Path(cfg.out)
    entries = {e["clip_id"]: e for e in _manifest(out)}
    trig = _read_jsonl(out / "triggers.jsonl")

    def one(t):
        path = out / f"weighted/{t['clip_id']}_{t['index']:04d}.ply"
        if not path.exists():
            raise InputError(f"missing weighted cloud {path}")
        pts, wts = read_ply(path)
        if wts is None:
            raise InputError(f"{path} has no weight property")
        gt = entries[t["clip_id"]].get("gt_box")
        gt = OrientedBox3.from_dict(gt) if gt else None
        cloud = WeightedPointCloud(pts, np.clip(wts, 0.0, 1.0), t["video_frame"])
        r = localize_event(cloud, cfg.action, cfg.cluster, gt, t["timestamp"])
        rec = {"clip_id": t["clip_id"], "index": t["index"], "video_frame": t["video_frame"], **r.to_dict()}
        if gt is None:
            rec["iou"] = None
        return rec

    records = _map(one, trig, cfg.jobs)
    with StageWriter(out, "localize") as w:
        _write_jsonl(w.path("localizations.jsonl"), records)
    return {"localizations": len(records)}


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def stage_evaluate(cfg: PipelineConfig, warn=None):
    warn = warn or (lambda msg: print(f"warning: {msg}", file=sys.stderr))
    out = Path(cfg.out)
    entries = _manifest(out)
    ids = [e["clip_id"] for e in entries]
    gt = _gt_events(out)
    dets = {}
    for r in _read_jsonl(out / "detections.jsonl"):
        dets.setdefault(r["clip_id"], []).append(detect.Event(int(r["hop_frame"]), float(r["time_s"]),
                                                              int(r["video_frame"])))
    rep_path = out / "detection_report.json"
    folds = _read_json(rep_path)["folds"] if rep_path.exists() else [ids]
    warnings = []
    if not any(dets.values()):
        warnings.append("no detected events: detection and localization metrics are zero")
    hard, relaxed = [], []
    for fold in folds:
        h, r = detect.MatchResult(0, 0, 0), detect.MatchResult(0, 0, 0)
        for cid in fold:
            pe = detect.EventList(sorted(dets.get(cid, []), key=lambda e: e.time_s))
            ge = _gt_eventlist(gt.get(cid, []))
            h = h + detect.match_events(pe, ge, detect.MatchConfig.hard())
            r = r + detect.match_events(pe, ge, detect.MatchConfig.relaxed(cfg.tolerance))
        hard.append(h)
        relaxed.append(r)
    loc_path = out / "localizations.jsonl"
    locs = _read_jsonl(loc_path) if loc_path.exists() else []
    ious = [r["iou"] for r in locs if r.get("iou") is not None]
    table = recall_table(ious, tuple(cfg.iou_thresholds))
    if table.undefined:
        warnings.append("no scored localizations: recall reported as 0")
    counts, edges = iou_histogram(ious, cfg.histogram_bin)
    recall = {f"{t:g}": r for t, r in zip(table.thresholds, table.recalls)}
    report = {
        "action": cfg.action.name,
        "detection": {
            "k": len(folds), "j": cfg.tolerance,
            "hard": detect.DetectionMetrics.from_folds(hard).as_dict(),
            "relaxed": detect.DetectionMetrics.from_folds(relaxed).as_dict(),
        },
        "localization": {"recall": recall, "count": table.count, "undefined": table.undefined},
        "warnings": warnings,
    }
    hist = {"bin_width": cfg.histogram_bin, "edges": edges.tolist(), "counts": counts.tolist()}
    with StageWriter(out, "evaluate") as w:
        w.path("report.json").write_text(_dump(report))
        w.path("recall_table.json").write_text(_dump(table.as_dict()))
        w.path("iou_histogram.json").write_text(_dump(hist))
    for m in warnings:
        warn(m)
    return report


STAGES = {
    "simulate": stage_simulate,
    "detect": stage_detect,
    "beamform": stage_beamform,
    "fuse": stage_fuse,
    "localize": stage_localize,
    "evaluate": stage_evaluate,
}


def run_pipeline(cfg: PipelineConfig, simulate=True):
    """All stages in order; identical to running them one by one."""
    names = list(STAGES) if simulate else list(STAGES)[1:]
    result = None
    for name in names:
        result = STAGES[name](cfg)
    return result
