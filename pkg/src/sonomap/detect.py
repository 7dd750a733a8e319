"""Acoustic event detection on mono audio and its hard/relaxed evaluation.

Audio is cut into overlapping windows (150 ms, hop 20 ms at 16 kHz) and
each window becomes a 128-bin log-mel vector, the mean over its short STFT
frames.  A binary classifier marks the windows that carry an event; every
0 -> 1 transition of the decision sequence is an event.

Labelling convention: window ``k`` spans ``[k*hop, k*hop + W)``; its STFT
frame centers cover ``[k*hop + a, k*hop + b)`` with ``a = stft_len/2`` and
``b = W - stft_len/2`` (the middle half of the window when a single STFT
frame spans it).  The window is positive when an onset falls in that span
(for sustained sounds: when the span overlaps an active interval).  The
first positive window of an onset is the one whose span has just reached
it, placing the onset at ``k*hop + b - hop/2 +/- hop/2``.  That offset is
the ``origin_time`` of prediction sequences, so an event's time is
``origin_time + k*hop``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SpectrogramConfig, TooShortInput, log_mel, resample
from .profiles import ActionProfile

VIDEO_FPS = 25


def label_zone(config: SpectrogramConfig = SpectrogramConfig()):
    """(a, b): offsets from a window's start of the span whose onsets make it positive."""
    if config.stft_len is None:
        return 0.25 * config.window_len, 0.75 * config.window_len
    return 0.5 * config.stft_len, config.window_len - 0.5 * config.stft_len


def event_origin(config: SpectrogramConfig = SpectrogramConfig()):
    """Time of hop frame 0's event, in seconds."""
    return label_zone(config)[1] - 0.5 * config.hop_len


# --------------------------------------------------------------------------
# features and labels
# --------------------------------------------------------------------------

def prepare_audio(channel, sample_rate, config: SpectrogramConfig = SpectrogramConfig()):
    """Resample one channel to the detector's rate."""
    return resample(np.asarray(channel, dtype=float), sample_rate, config.sample_rate)


def extract_features(audio, config: SpectrogramConfig = SpectrogramConfig()):
    """(n_frames, n_mels) log-mel features; frame k covers ``[k*hop, k*hop + window)``."""
    audio = np.asarray(audio, dtype=float)
    if audio.size < config.window_samples:
        raise TooShortInput(f"audio of {audio.size} samples is shorter than one {config.window_len} s window")
    return log_mel(audio, config).frames


def frame_labels(n_frames, onsets=(), intervals=(), config: SpectrogramConfig = SpectrogramConfig()):
    """Per-window 0/1 targets (see module docstring for the convention)."""
    a, b = label_zone(config)
    k = np.arange(n_frames)
    lo = k * config.hop_len + a
    hi = k * config.hop_len + b
    y = np.zeros(n_frames, dtype=np.int8)
    for t in onsets:
        y |= ((lo <= t) & (t < hi)).astype(np.int8)
    for a, b in intervals:
        y |= ((lo < b) & (a < hi)).astype(np.int8)
    return y


def tail_weights(n_frames, onsets, tail, config: SpectrogramConfig = SpectrogramConfig()):
    """Training weights that ignore windows holding only the decay of an impulse.

    A window whose span starts after an onset but that still overlaps
    ``[onset, onset + tail)`` is neither clearly an event nor clearly
    background; it gets weight 0.  Its label is unchanged.
    """
    a, _ = label_zone(config)
    start = np.arange(n_frames) * config.hop_len
    w = np.ones(n_frames)
    for t in onsets:
        w[(t < start + a) & (start < t + tail)] = 0.0
    return w


def remove_background(features, percentile):
    """Subtract each bin's ``percentile``-th value over the clip (a background estimate)."""
    X = np.asarray(features, dtype=float)
    if percentile is None or len(X) == 0:
        return X
    return X - np.percentile(X, percentile, axis=0)


@dataclass
class Clip:
    """One training/evaluation unit: mono detector-rate audio plus frame targets."""

    clip_id: str
    audio: np.ndarray | None
    labels: np.ndarray
    features: np.ndarray | None = None
    weights: np.ndarray | None = None  # per-frame training weights
    events: "EventList | None" = None  # annotated events; derived from labels when absent

    def get_features(self, config: SpectrogramConfig):
        if self.features is None:
            self.features = extract_features(self.audio, config)
        return self.features


# --------------------------------------------------------------------------
# prediction sequences and events
# --------------------------------------------------------------------------

@dataclass
class PredictionSequence:
    labels: np.ndarray
    hop_len: float = 0.020
    origin_time: float = 0.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise ValueError("prediction labels must be 0 or 1")

    def __len__(self):
        return self.labels.size


@dataclass(frozen=True)
class Event:
    hop_frame: int
    time_s: float
    video_frame: int


@dataclass
class EventList:
    events: list = field(default_factory=list)

    def __post_init__(self):
        times = [e.time_s for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be strictly increasing")

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def frames(self):
        return [e.hop_frame for e in self.events]

    @property
    def times(self):
        return [e.time_s for e in self.events]

    @classmethod
    def from_frames(cls, frames, hop_len=0.020, origin_time=0.0, fps=VIDEO_FPS):
        events = []
        for k in frames:
            t = origin_time + int(k) * hop_len
            events.append(Event(int(k), t, int(math.floor(t * fps + 1e-9))))
        return cls(events)


def transitions_to_events(pred: PredictionSequence, fps=VIDEO_FPS):
    """One event per 0 -> 1 transition, at the first 1; a leading 1 counts."""
    y = pred.labels
    prev = np.concatenate([[0], y[:-1]])
    frames = np.flatnonzero((y == 1) & (prev == 0))
    return EventList.from_frames(frames, pred.hop_len, pred.origin_time, fps)


# --------------------------------------------------------------------------
# matching
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchConfig:
    mode: str = "relaxed"
    j: int = 1

    def __post_init__(self):
        if self.mode not in ("hard", "relaxed"):
            raise ValueError(f"unknown match mode {self.mode!r}")
        if self.j < 0:
            raise ValueError("j must be >= 0")
        if self.mode == "hard" and self.j != 0:
            raise ValueError("hard matching requires j = 0")

    @classmethod
    def hard(cls):
        return cls("hard", 0)

    @classmethod
    def relaxed(cls, j):
        return cls("relaxed", j)


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self):
        if self.tp + self.fp == 0:
            return 1.0 if self.fn == 0 else 0.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self):
        if self.tp + self.fn == 0:
            return 1.0 if self.fp == 0 else 0.0
        return self.tp / (self.tp + self.fn)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def __add__(self, other):
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def greedy_match(pred_frames, gt_frames, j):
    """Pairs ``(pred_idx, gt_idx)``; each prediction, in time order, takes the
    earliest unmatched ground-truth frame within ``j``.

    With a common tolerance this greedy order yields a maximum matching, so
    the count does not depend on which side drives it.
    """
    pairs, g = [], 0
    gt = list(gt_frames)
    for i, p in enumerate(pred_frames):
        while g < len(gt) and gt[g] < p - j:
            g += 1
        if g < len(gt) and abs(gt[g] - p) <= j:
            pairs.append((i, g))
            g += 1
    return pairs


def match_events(pred, gt, cfg: MatchConfig = MatchConfig()):
    """TP/FP/FN under hard (same frame) or relaxed (within j frames) matching."""
    pf = pred.frames if isinstance(pred, EventList) else list(pred)
    gf = gt.frames if isinstance(gt, EventList) else list(gt)
    if any(b < a for a, b in zip(pf, pf[1:])) or any(b < a for a, b in zip(gf, gf[1:])):
        raise ValueError("event lists must be sorted")
    tp = len(greedy_match(pf, gf, cfg.j))
    return MatchResult(tp, len(pf) - tp, len(gf) - tp)


@dataclass
class DetectionMetrics:
    """Mean and population std over folds."""

    precision: tuple
    recall: tuple
    f1: tuple
    per_fold: list = field(default_factory=list)

    @classmethod
    def from_folds(cls, results):
        results = list(results)
        if not results:
            return cls((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), [])

        def ms(vals):
            return float(np.mean(vals)), float(np.std(vals))

        return cls(ms([r.precision for r in results]), ms([r.recall for r in results]),
                   ms([r.f1 for r in results]), [r.as_dict() for r in results])

    def as_dict(self):
        return {
            "precision": {"mean": self.precision[0], "std": self.precision[1]},
            "recall": {"mean": self.recall[0], "std": self.recall[1]},
            "f1": {"mean": self.f1[0], "std": self.f1[1]},
            "per_fold": self.per_fold,
        }


# --------------------------------------------------------------------------
# classifier
# --------------------------------------------------------------------------

def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_grad(w, b, X, y, l2, sample_weight=None):
    """Mean binary cross-entropy plus ``l2/2 * |w|^2``, and its gradient (dw, db).

    With ``sample_weight`` the mean is the weighted mean.
    """
    sw = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    sw = sw / sw.sum()
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = float(sw @ (np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    r = (sigmoid(z) - y) * sw
    return loss, X.T @ r + l2 * w, float(r.sum())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    learning_rate: float = 1.0
    l2: float = 1e-3
    threshold: float = 0.5
    balance_classes: bool = True
    background_percentile: float | None = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or self.l2 < 0:
            raise ValueError("invalid training configuration")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")


@dataclass(frozen=True)
class AugmentationSpec:
    """Ranges for the audio augmentations applied to training clips.

    ``clip_fraction_range`` is the clipping level as a fraction of the clip's
    peak amplitude (1.0 = no clipping).
    """

    gain_db_range: tuple = (-3.0, 3.0)
    noise_snr_db_range: tuple = (20.0, 40.0)
    clip_fraction_range: tuple = (0.8, 1.0)
    copies: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("gain_db_range", "noise_snr_db_range", "clip_fraction_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be (low, high) with low <= high")
        lo, hi = self.clip_fraction_range
        if lo <= 0 or hi > 1:
            raise ValueError("clip fractions must lie in (0, 1]")
        if self.copies < 0:
            raise ValueError("copies must be >= 0")

    def apply(self, audio, rng):
        x = np.asarray(audio, dtype=float) * 10.0 ** (rng.uniform(*self.gain_db_range) / 20.0)
        rms = float(np.sqrt(np.mean(x ** 2)))
        snr = rng.uniform(*self.noise_snr_db_range)
        x = x + rng.normal(0.0, rms * 10.0 ** (-snr / 20.0), x.shape)
        level = rng.uniform(*self.clip_fraction_range) * float(np.max(np.abs(x)))
        return np.clip(x, -level, level) if level > 0 else x


NO_AUGMENTATION = AugmentationSpec(copies=0)


@dataclass
class ClassifierModel:
    """Energy-threshold or logistic classifier over per-window log-mel vectors.

    The logistic model works on a whole clip's features at once: it removes
    the clip's background level (see ``remove_background``), then
    standardizes with the training mean/scale.  The energy model scores the
    raw mean log-mel energy against ``threshold``.
    """

    kind: str
    weights: np.ndarray | None = None
    bias: float = 0.0
    threshold: float = 0.0
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    n_features: int = 128
    background_percentile: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("energy-threshold", "linear-logistic"):
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        if self.kind == "linear-logistic":
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
            self.n_features = self.weights.size
            if self.mean is None:
                self.mean = np.zeros(self.n_features)
            if self.scale is None:
                self.scale = np.ones(self.n_features)
            self.mean = np.asarray(self.mean, dtype=float)
            self.scale = np.asarray(self.scale, dtype=float)
            if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
                raise ValueError("non-finite classifier parameters")
        elif not math.isfinite(self.threshold):
            raise ValueError("non-finite energy threshold")

    def probabilities(self, features):
        X = np.atleast_2d(np.asarray(features, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"feature dimension {X.shape[1]} does not match model dimension {self.n_features}")
        if self.kind == "energy-threshold":
            return sigmoid(X.mean(axis=1) - self.threshold)
        X = remove_background(X, self.background_percentile)
        return sigmoid(((X - self.mean) / self.scale) @ self.weights + self.bias)

    def to_dict(self):
        d = {"kind": self.kind, "n_features": self.n_features, "metadata": self.metadata}
        if self.kind == "energy-threshold":
            d["threshold"] = self.threshold
        else:
            d.update(weights=self.weights.tolist(), bias=self.bias, mean=self.mean.tolist(), scale=self.scale.tolist(),
                     background_percentile=self.background_percentile)
        return d

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "energy-threshold":
            return cls("energy-threshold", threshold=d["threshold"], n_features=d["n_features"],
                       metadata=d.get("metadata", {}))
        return cls("linear-logistic", np.asarray(d["weights"]), d["bias"], mean=d["mean"], scale=d["scale"],
                   background_percentile=d.get("background_percentile"), metadata=d.get("metadata", {}))


def fit_energy_threshold(X, y):
    """Threshold on mean log-mel energy maximizing training accuracy.

    With a single class the threshold puts every training frame on that side.
    """
    e = np.asarray(X, dtype=float).mean(axis=1)
    y = np.asarray(y)
    if e.size == 0:
        return 0.0
    if np.all(y == 0):
        return float(e.max() + 1.0)
    if np.all(y == 1):
        return float(e.min() - 1.0)
    cand = np.unique(e)
    mids = np.concatenate([[cand[0] - 1.0], 0.5 * (cand[1:] + cand[:-1]), [cand[-1] + 1.0]])
    acc = [np.mean((e > t) == (y == 1)) for t in mids]
    return float(mids[int(np.argmax(acc))])


def fit_logistic(X, y, cfg: TrainConfig = TrainConfig(), sample_weight=None):
    """Full-batch gradient descent; the step is halved whenever the loss would rise.

    Returns (weights, bias, loss history).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.zeros(X.shape[1])
    b = 0.0
    lr = cfg.learning_rate
    loss, gw, gb = loss_and_grad(w, b, X, y, cfg.l2, sample_weight)
    history = [loss]
    for _ in range(cfg.epochs):
        while True:
            w_new, b_new = w - lr * gw, b - lr * gb
            new_loss, ngw, ngb = loss_and_grad(w_new, b_new, X, y, cfg.l2, sample_weight)
            if new_loss <= loss or lr < 1e-12:
                break
            lr *= 0.5
        if new_loss > loss:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, ngw, ngb
        history.append(loss)
    return w, b, history


def train_model(X, y, cfg: TrainConfig = TrainConfig(), metadata=None, sample_weight=None, background=False):
    """Logistic model on standardized features, or a flagged energy-threshold
    fallback when ``y`` holds a single class.  Zero-weight rows are ignored.

    Set ``background`` when ``X`` was background-corrected per clip with
    ``cfg.background_percentile``; the model then applies the same
    correction at prediction time.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if sample_weight is not None:
        keep = np.asarray(sample_weight) > 0
        X, y, sample_weight = X[keep], y[keep], np.asarray(sample_weight, dtype=float)[keep]
    meta = {"seed": cfg.seed, "epochs": cfg.epochs, **(metadata or {})}
    if y.size == 0 or np.all(y == y.flat[0]):
        meta["degenerate_labels"] = True
        return ClassifierModel("energy-threshold", threshold=fit_energy_threshold(X, y), n_features=X.shape[1],
                               metadata=meta)
    if sample_weight is None:
        sample_weight = np.ones(len(y))
    if cfg.balance_classes:
        # each class carries half of the total weight
        pos = y == 1
        sample_weight = np.where(pos, 0.5 / sample_weight[pos].sum(), 0.5 / sample_weight[~pos].sum()) * sample_weight
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    w, b, hist = fit_logistic((X - mean) / scale, y, cfg, sample_weight)
    meta.update(degenerate_labels=False, final_loss=hist[-1], steps=len(hist) - 1)
    return ClassifierModel("linear-logistic", w, b, mean=mean, scale=scale,
                           background_percentile=cfg.background_percentile if background else None, metadata=meta)


def _training_matrix(clips, aug: AugmentationSpec, config, fold_id, background):
    xs, xr, ys, ws = [], [], [], []
    for ci, clip in enumerate(clips):
        w = np.ones(len(clip.labels)) if clip.weights is None else clip.weights
        xr.append(clip.get_features(config))
        xs.append(remove_background(xr[-1], background))
        ys.append(clip.labels)
        ws.append(w)
        if clip.audio is None:
            continue
        for copy in range(aug.copies):
            rng = np.random.default_rng([aug.seed, fold_id, ci, copy])
            xr.append(extract_features(aug.apply(clip.audio, rng), config))
            xs.append(remove_background(xr[-1], background))
            ys.append(clip.labels)
            ws.append(w)
    return np.concatenate(xs), np.concatenate(xr), np.concatenate(ys), np.concatenate(ws)


def train_classifier(clips, aug: AugmentationSpec = AugmentationSpec(), cfg: TrainConfig = TrainConfig(),
                     config: SpectrogramConfig = SpectrogramConfig(), fold_id=0):
    """Train one model on ``clips`` (augmented copies added when audio is present)."""
    if not clips:
        raise ValueError("no training clips")
    X, Xraw, y, w = _training_matrix(clips, aug, config, fold_id, cfg.background_percentile)
    yk = y[w > 0]
    if yk.size == 0 or np.all(yk == yk[0]):
        # single-class fold: the energy fallback is fit on raw features
        return train_model(Xraw, y, cfg, {"fold": fold_id}, w)
    return train_model(X, y, cfg, {"fold": fold_id}, w, background=cfg.background_percentile is not None)


def predict_sequence(model: ClassifierModel, features, threshold=0.5,
                     config: SpectrogramConfig = SpectrogramConfig()):
    p = model.probabilities(features)
    return PredictionSequence((p >= threshold).astype(np.int8), config.hop_len, event_origin(config))


def probabilities_to_sequence(probs, threshold=0.5, config: SpectrogramConfig = SpectrogramConfig()):
    return PredictionSequence((np.asarray(probs) >= threshold).astype(np.int8), config.hop_len,
                              event_origin(config))


def ground_truth_events(labels, config: SpectrogramConfig = SpectrogramConfig()):
    return transitions_to_events(PredictionSequence(labels, config.hop_len, event_origin(config)))


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

def kfold_split(n_clips, k, seed=0):
    """Clip-level folds of near-equal size (differing by at most one)."""
    if not 1 <= k <= n_clips:
        raise ValueError(f"need 1 <= k <= number of clips, got k={k} for {n_clips} clips")
    perm = np.random.default_rng(seed).permutation(n_clips)
    return [np.sort(f) for f in np.array_split(perm, k)]


@dataclass
class FoldOutcome:
    fold: int
    test_clips: list
    model: ClassifierModel
    predictions: dict  # clip_id -> PredictionSequence
    hard: MatchResult
    relaxed: MatchResult


@dataclass
class CrossValidationReport:
    action: str
    k: int
    j: int
    folds: list

    @property
    def hard(self):
        return DetectionMetrics.from_folds([f.hard for f in self.folds])

    @property
    def relaxed(self):
        return DetectionMetrics.from_folds([f.relaxed for f in self.folds])

    @property
    def degenerate_folds(self):
        return [f.fold for f in self.folds if f.model.metadata.get("degenerate_labels")]

    def predictions(self):
        out = {}
        for f in self.folds:
            out.update(f.predictions)
        return out

    def as_dict(self):
        return {
            "action": self.action, "k": self.k, "j": self.j,
            "hard": self.hard.as_dict(), "relaxed": self.relaxed.as_dict(),
            "degenerate_folds": self.degenerate_folds,
            "folds": [{"fold": f.fold, "test_clips": f.test_clips, "hard": f.hard.as_dict(),
                       "relaxed": f.relaxed.as_dict(), "model": f.model.metadata} for f in self.folds],
        }


def evaluate_clips(predictions, clips, j, config: SpectrogramConfig = SpectrogramConfig()):
    """Pooled (hard, relaxed) match counts over clips."""
    hard, relaxed = MatchResult(0, 0, 0), MatchResult(0, 0, 0)
    for clip in clips:
        pe = transitions_to_events(predictions[clip.clip_id])
        ge = clip.events if clip.events is not None else ground_truth_events(clip.labels, config)
        hard = hard + match_events(pe, ge, MatchConfig.hard())
        relaxed = relaxed + match_events(pe, ge, MatchConfig.relaxed(j))
    return hard, relaxed


def cross_validate(clips, k, j, aug: AugmentationSpec = AugmentationSpec(), cfg: TrainConfig = TrainConfig(),
                   config: SpectrogramConfig = SpectrogramConfig(), seed=0, jobs=1, action=""):
    """k-fold evaluation at clip level; every clip is predicted by the model that did not see it."""
    if k < 2:
        raise ValueError("cross-validation needs k >= 2")
    folds = kfold_split(len(clips), k, seed)
    for c in clips:
        c.get_features(config)

    def run(fi):
        test_idx = set(folds[fi].tolist())
        train = [c for i, c in enumerate(clips) if i not in test_idx]
        test = [clips[i] for i in folds[fi]]
        model = train_classifier(train, aug, cfg, config, fold_id=fi)
        preds = {c.clip_id: predict_sequence(model, c.features, cfg.threshold, config) for c in test}
        hard, relaxed = evaluate_clips(preds, test, j, config)
        return FoldOutcome(fi, [c.clip_id for c in test], model, preds, hard, relaxed)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            outcomes = list(ex.map(run, range(k)))
    else:
        outcomes = [run(fi) for fi in range(k)]
    return CrossValidationReport(action, k, j, outcomes)


# --------------------------------------------------------------------------
# localization triggers
# --------------------------------------------------------------------------

def trigger_schedule(events, action: ActionProfile, clip_end, interval=1.0 / VIDEO_FPS):
    """Timestamps at which localization runs.

    Impulsive actions: one per event.  Continuous actions: every
    ``interval`` seconds from each event up to (not including) the next
    event, or up to and including ``clip_end`` after the last one.
    """
    times = [e.time_s if isinstance(e, Event) else float(e) for e in events]
    if action.trigger_mode == "impulsive":
        return times
    out = []
    for i, t in enumerate(times):
        if i + 1 < len(times):
            n = math.ceil((times[i + 1] - t) / interval - 1e-9)
        else:
            n = math.floor((clip_end - t) / interval + 1e-9) + 1
        out.extend(round(t + m * interval, 9) for m in range(max(n, 0)))
    return out


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def events_to_records(clip_id, events: EventList):
    return [{"clip_id": clip_id, "time_s": e.time_s, "hop_frame": e.hop_frame, "video_frame": e.video_frame}
            for e in events]


def write_jsonl(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def read_events_jsonl(path):
    """``{clip_id: EventList}`` from an event file."""
    grouped = {}
    for r in read_jsonl(path):
        grouped.setdefault(r["clip_id"], []).append(Event(int(r["hop_frame"]), float(r["time_s"]),
                                                          int(r["video_frame"])))
    return {cid: EventList(sorted(evs, key=lambda e: e.time_s)) for cid, evs in grouped.items()}


def read_predictions_jsonl(path, threshold=0.5, config: SpectrogramConfig = SpectrogramConfig()):
    """Import per-hop-frame probabilities from an external classifier.

    Records: ``{clip_id, hop_frame, probability}``.  Missing frames count as 0.
    """
    grouped = {}
    for r in read_jsonl(path):
        p = float(r["probability"])
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
        grouped.setdefault(r["clip_id"], {})[int(r["hop_frame"])] = p
    out = {}
    for cid, frames in grouped.items():
        probs = np.zeros(max(frames) + 1)
        for k, p in frames.items():
            probs[k] = p
        out[cid] = probabilities_to_sequence(probs, threshold, config)
    return out


def model_to_json(model: ClassifierModel):
    return json.dumps(model.to_dict(), sort_keys=True)


def augmentation_to_dict(aug: AugmentationSpec):
    return asdict(aug)


def save_report(report: CrossValidationReport, path):
    Path(path).write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True))
