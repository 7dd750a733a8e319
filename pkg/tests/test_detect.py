import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sonomap import detect
from sonomap.detect import (
    ClassifierModel,
    EventList,
    MatchConfig,
    MatchResult,
    PredictionSequence,
    TrainConfig,
)
from sonomap.dsp import SpectrogramConfig, TooShortInput
from sonomap.profiles import CHISELING, DRILLING, SAWING

CFG = SpectrogramConfig()
bits = st.lists(st.integers(0, 1), max_size=200)


def events(seq):
    return detect.transitions_to_events(PredictionSequence(seq))


# ---- transitions ----------------------------------------------------------

def test_transition_examples():
    assert events([0, 0, 1, 1, 0, 1]).frames == [2, 5]
    assert events([0] * 10).frames == []
    assert events([1, 1, 1]).frames == [0]
    assert events([]).frames == []


def test_video_frame_is_floor_of_time():
    ev = EventList.from_frames([0, 1, 2, 3], hop_len=0.02, origin_time=0.0)
    assert [e.video_frame for e in ev] == [0, 0, 1, 1]
    ev = EventList.from_frames([5], hop_len=0.02, origin_time=0.135)
    assert ev.times[0] == pytest.approx(0.235)
    assert ev.events[0].video_frame == 5


def test_prediction_sequence_rejects_non_binary():
    with pytest.raises(ValueError):
        PredictionSequence([0, 2, 1])


@settings(max_examples=300, deadline=None)
@given(bits)
def test_event_count_is_number_of_rising_edges(seq):
    ev = events(seq)
    assert ev.frames == oracles.onsets_of(seq)
    for k in ev.frames:
        assert seq[k] == 1


# ---- matching -------------------------------------------------------------

def test_match_examples():
    r = detect.match_events([11], [10], MatchConfig.relaxed(1))
    assert (r.tp, r.fp, r.fn) == (1, 0, 0)
    assert r.precision == r.recall == r.f1 == 1.0
    h = detect.match_events([11], [10], MatchConfig.hard())
    assert (h.tp, h.fp, h.fn) == (0, 1, 1)
    assert h.f1 == 0.0
    r = detect.match_events([5, 10], [10], MatchConfig.relaxed(1))
    assert (r.tp, r.fp, r.fn) == (1, 1, 0)
    assert r.precision == 0.5 and r.recall == 1.0
    assert r.f1 == pytest.approx(2 / 3)


def test_empty_conventions():
    r = detect.match_events([], [], MatchConfig.relaxed(1))
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    r = detect.match_events([], [3], MatchConfig.relaxed(1))
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    r = detect.match_events([3], [], MatchConfig.relaxed(1))
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_match_config_validation():
    with pytest.raises(ValueError):
        MatchConfig("hard", 1)
    with pytest.raises(ValueError):
        MatchConfig("relaxed", -1)
    with pytest.raises(ValueError):
        MatchConfig("fuzzy", 0)


def test_unsorted_lists_rejected():
    with pytest.raises(ValueError):
        detect.match_events([3, 1], [1], MatchConfig.hard())


def test_tolerance_is_symmetric():
    for p in (9, 11):
        assert detect.match_events([p], [10], MatchConfig.relaxed(1)).tp == 1
    assert detect.match_events([8], [10], MatchConfig.relaxed(1)).tp == 0


def test_greedy_keeps_maximum_on_chain():
    # a nearest-first rule would pair 1 with 1 and strand 2 and 0
    assert detect.match_events([1, 2], [0, 1], MatchConfig.relaxed(1)).tp == 2


@settings(max_examples=300, deadline=None)
@given(bits, bits, st.integers(0, 4))
def test_matching_properties(a, b, j):
    pred, gt = events(a).frames, events(b).frames
    r = detect.match_events(pred, gt, MatchConfig.relaxed(j))
    assert r.tp == oracles.max_matching(pred, gt, j)
    assert r.tp == detect.match_events(gt, pred, MatchConfig.relaxed(j)).tp
    assert r.tp + r.fp == len(pred) and r.tp + r.fn == len(gt)
    h = detect.match_events(pred, gt, MatchConfig.hard())
    assert h.tp <= r.tp
    assert h.precision <= r.precision and h.recall <= r.recall and h.f1 <= r.f1
    pairs = detect.greedy_match(pred, gt, j)
    assert len({p for p, _ in pairs}) == len({g for _, g in pairs}) == len(pairs)
    assert all(abs(pred[p] - gt[g]) <= j for p, g in pairs)


def test_metrics_from_folds():
    m = detect.DetectionMetrics.from_folds([MatchResult(1, 0, 0), MatchResult(0, 1, 1)])
    assert m.f1 == (0.5, 0.5)
    empty = detect.DetectionMetrics.from_folds([])
    assert empty.f1 == (0.0, 0.0)


# ---- folds and triggers ---------------------------------------------------

def test_kfold_examples():
    assert [len(f) for f in detect.kfold_split(6, 3)] == [2, 2, 2]
    assert sorted(len(f) for f in detect.kfold_split(9, 2)) == [4, 5]
    one = detect.kfold_split(5, 1)
    assert len(one) == 1 and one[0].tolist() == [0, 1, 2, 3, 4]
    for bad in (0, 7):
        with pytest.raises(ValueError):
            detect.kfold_split(6, bad)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.data())
def test_kfold_partition(n, data):
    k = data.draw(st.integers(1, n))
    seed = data.draw(st.integers(0, 1000))
    folds = detect.kfold_split(n, k, seed)
    flat = np.concatenate(folds)
    assert sorted(flat.tolist()) == list(range(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert all(np.array_equal(a, b) for a, b in zip(folds, detect.kfold_split(n, k, seed)))


def test_trigger_examples():
    assert detect.trigger_schedule([1.0, 2.0], CHISELING, 5.0) == [1.0, 2.0]
    assert detect.trigger_schedule([1.0], SAWING, 1.2) == pytest.approx([1.0, 1.04, 1.08, 1.12, 1.16, 1.2])
    assert detect.trigger_schedule([], DRILLING, 3.0) == []


def test_continuous_triggers_stop_before_next_event():
    t = detect.trigger_schedule([1.0, 1.1], DRILLING, 1.1)
    assert t == pytest.approx([1.0, 1.04, 1.08, 1.1])


# ---- features and labels --------------------------------------------------

def test_feature_count_for_20s():
    X = detect.extract_features(np.zeros(20 * 16000))
    assert X.shape == (993, 128)


def test_silence_gives_constant_features():
    X = detect.extract_features(np.zeros(16000))
    assert np.all(X == X[0, 0])


def test_too_short_input():
    with pytest.raises(TooShortInput):
        detect.extract_features(np.zeros(100))


def test_impulse_peaks_in_covering_frames():
    x = np.zeros(3 * 16000)
    x[16000] = 1.0
    X = detect.extract_features(x)
    e = X.mean(axis=1)
    covering = [k for k in range(len(X)) if k * CFG.hop_len <= 1.0 < k * CFG.hop_len + CFG.window_len]
    assert int(np.argmax(e)) in covering
    far = [k for k in range(len(X)) if k * CFG.hop_len > 1.0 or k * CFG.hop_len + CFG.window_len < 1.0 - 1e-9]
    assert e[covering].min() > e[far].max()


def test_features_match_naive_reference():
    x = np.random.default_rng(0).standard_normal(8000)
    X = detect.extract_features(x)
    ref = oracles.naive_log_mel(x, 16000, 2400, 320, 4096, 128, 0.0, 8000.0, 160, 40)
    np.testing.assert_allclose(X, ref, atol=1e-8)


def test_frame_labels_follow_onset_zone():
    a, b = detect.label_zone(CFG)
    y = detect.frame_labels(50, [0.5])
    for k in range(50):
        assert y[k] == int(k * 0.02 + a <= 0.5 < k * 0.02 + b)
    # one rising edge per isolated onset, and it lands on the event frame
    ev = detect.ground_truth_events(y)
    assert len(ev) == 1
    assert ev.events[0].time_s <= 0.5 < ev.events[0].time_s + CFG.hop_len


def test_interval_labels_cover_overlaps():
    y = detect.frame_labels(100, intervals=[(0.5, 1.0)])
    assert len(events(y.tolist())) == 1
    assert y.sum() > 25


def test_tail_weights_only_after_onset():
    w = detect.tail_weights(80, [0.5], 0.05)
    y = detect.frame_labels(80, [0.5])
    assert np.all(w[y == 1] == 1.0)
    assert 0 < (w == 0).sum() < 10


# ---- classifier -----------------------------------------------------------

def test_sigmoid_is_stable():
    s = detect.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert s.tolist() == [0.0, 0.5, 1.0]


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((40, 7))
    y = (rng.random(40) < 0.4).astype(float)
    sw = rng.uniform(0.1, 2.0, 40) if seed % 2 else None
    w, b = rng.standard_normal(7), float(rng.standard_normal())
    _, gw, gb = detect.loss_and_grad(w, b, X, y, 0.01, sw)
    h = 1e-5
    num = np.zeros(8)
    for i in range(8):
        e = np.zeros(8)
        e[i] = h
        lp = detect.loss_and_grad(w + e[:7], b + e[7], X, y, 0.01, sw)[0]
        lm = detect.loss_and_grad(w - e[:7], b - e[7], X, y, 0.01, sw)[0]
        num[i] = (lp - lm) / (2 * h)
    assert np.max(np.abs(num - np.append(gw, gb))) < 1e-6


def separable(seed=0, n=200, d=5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = (X @ rng.standard_normal(d) > 0).astype(np.int8)
    X = X + 0.5 * np.where(y[:, None] == 1, 1, -1) * np.ones(d)  # a margin
    return X, y


def test_separable_reaches_full_accuracy():
    X, y = separable()
    model = detect.train_model(X, y, TrainConfig(epochs=500, l2=0.0))
    assert model.kind == "linear-logistic"
    pred = detect.predict_sequence(model, X, config=SpectrogramConfig(n_mels=5))
    assert np.array_equal(pred.labels, y)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_never_increases(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, 4))
    y = (rng.random(60) < 0.5).astype(float)
    _, _, hist = detect.fit_logistic(X, y, TrainConfig(epochs=50, learning_rate=5.0, l2=1e-3))
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_single_class_falls_back_to_energy():
    X = np.random.default_rng(0).standard_normal((30, 4))
    model = detect.train_model(X, np.zeros(30), TrainConfig())
    assert model.kind == "energy-threshold"
    assert model.metadata["degenerate_labels"] is True
    assert np.all(model.probabilities(X) < 0.5)


def test_predict_examples():
    silence = detect.extract_features(np.zeros(16000))
    energy = ClassifierModel("energy-threshold", threshold=0.0)
    assert detect.predict_sequence(energy, silence).labels.sum() == 0
    big = ClassifierModel("linear-logistic", np.ones(128), 1e5)
    assert np.all(detect.predict_sequence(big, silence).labels == 1)


def test_predict_dimension_mismatch():
    model = ClassifierModel("linear-logistic", np.ones(4), 0.0)
    with pytest.raises(ValueError):
        detect.predict_sequence(model, np.zeros((3, 5)))


def test_model_rejects_non_finite():
    with pytest.raises(ValueError):
        ClassifierModel("linear-logistic", np.array([1.0, np.nan]), 0.0)
    with pytest.raises(ValueError):
        ClassifierModel("tree")


def test_model_round_trip():
    X, y = separable(3)
    model = detect.train_model(X, y, TrainConfig(epochs=50), background=True)
    back = ClassifierModel.from_dict(json.loads(detect.model_to_json(model)))
    np.testing.assert_array_equal(back.probabilities(X), model.probabilities(X))


def test_augmentation_is_seeded_and_bounded():
    aug = detect.AugmentationSpec(clip_fraction_range=(0.5, 0.5))
    x = np.sin(np.linspace(0, 50, 4000))
    a = aug.apply(x, np.random.default_rng(1))
    b = aug.apply(x, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert np.max(np.abs(a)) < np.max(np.abs(x)) * 10 ** (3 / 20)
    with pytest.raises(ValueError):
        detect.AugmentationSpec(gain_db_range=(3.0, -3.0))


def synthetic_clips(n=6, frames=300, seed=0, shuffle=False):
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n):
        y = np.zeros(frames, dtype=np.int8)
        for k in rng.choice(np.arange(5, frames - 10, 12), 12, replace=False):
            y[k:k + 3] = 1
        X = rng.standard_normal((frames, 16)) + 2.0 * y[:, None]
        labels = rng.permutation(y) if shuffle else y
        clips.append(detect.Clip(f"s{i}", None, labels, X))
    return clips


def test_cross_validation_on_learnable_clips():
    rep = detect.cross_validate(synthetic_clips(), 3, 1, cfg=TrainConfig(background_percentile=None),
                                config=SpectrogramConfig(n_mels=16))
    assert rep.relaxed.f1[0] > 0.95
    assert rep.degenerate_folds == []
    assert set(rep.predictions()) == {f"s{i}" for i in range(6)}


def test_shuffled_labels_score_at_chance():
    cfg = TrainConfig(background_percentile=None)
    clips = synthetic_clips(shuffle=True, seed=4)
    rep = detect.cross_validate(clips, 3, 1, cfg=cfg, config=SpectrogramConfig(n_mels=16))
    preds = rep.predictions()

    def pooled_f1(shifts):
        total = MatchResult(0, 0, 0)
        for c, s in zip(clips, shifts):
            p = events(np.roll(preds[c.clip_id].labels, s).tolist())
            total = total + detect.match_events(p, detect.ground_truth_events(c.labels), MatchConfig.relaxed(1))
        return total.f1

    observed = pooled_f1([0] * len(clips))
    rng = np.random.default_rng(0)
    null = np.array([pooled_f1(rng.integers(10, 290, len(clips))) for _ in range(300)])
    assert abs(observed - null.mean()) <= 2 * null.std()


def test_cross_validate_needs_two_folds():
    with pytest.raises(ValueError):
        detect.cross_validate(synthetic_clips(), 1, 1)


def test_cross_validate_parallel_matches_serial():
    kw = dict(cfg=TrainConfig(background_percentile=None, epochs=50), config=SpectrogramConfig(n_mels=16))
    a = detect.cross_validate(synthetic_clips(), 3, 1, jobs=1, **kw).as_dict()
    b = detect.cross_validate(synthetic_clips(), 3, 1, jobs=3, **kw).as_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


# ---- files ----------------------------------------------------------------

def test_event_jsonl_round_trip(tmp_path):
    ev = EventList.from_frames([3, 9], origin_time=detect.event_origin(CFG))
    p = tmp_path / "ev.jsonl"
    detect.write_jsonl(p, detect.events_to_records("a", ev))
    back = detect.read_events_jsonl(p)["a"]
    assert back.frames == [3, 9]
    assert back.times == ev.times


def test_prediction_import(tmp_path):
    p = tmp_path / "pred.jsonl"
    recs = [{"clip_id": "a", "hop_frame": k, "probability": v} for k, v in [(0, 0.1), (2, 0.9), (3, 0.7)]]
    detect.write_jsonl(p, recs)
    seq = detect.read_predictions_jsonl(p)["a"]
    assert seq.labels.tolist() == [0, 0, 1, 1]
    assert detect.transitions_to_events(seq).frames == [2]
    detect.write_jsonl(p, [{"clip_id": "a", "hop_frame": 0, "probability": 1.5}])
    with pytest.raises(ValueError):
        detect.read_predictions_jsonl(p)
