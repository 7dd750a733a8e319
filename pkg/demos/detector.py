"""Event detection on synthetic chiseling audio.

    python demos/detector.py

Six short clips, reference microphone only.  Each clip is scored by a
model trained on the other five, under exact-frame and +-1 frame matching.
Then one clip's predicted onsets are listed next to the annotated ones.
"""

import numpy as np

from sonomap import detect
from sonomap.profiles import CHISELING
from sonomap.scene import random_scene, simulate_propagation

clips, onsets = [], {}
for i in range(6):
    scene = random_scene(CHISELING, seed=i, n_mics=2, duration=5.0)
    rec = simulate_propagation(scene, seed=i)
    src = scene.sources[0]
    lag = np.linalg.norm(src.position - scene.mic_positions()[0]) / scene.speed_of_sound
    on = [t + lag for t in src.event_times(scene.duration)]
    audio = detect.prepare_audio(rec.channels[0], rec.sample_rate)
    X = detect.extract_features(audio)
    clips.append(detect.Clip(f"clip{i}", audio, detect.frame_labels(len(X), on), X,
                             detect.tail_weights(len(X), on, 8 * src.waveform.decay)))
    onsets[f"clip{i}"] = on
    print(f"clip{i}: {len(on)} strikes, {len(X)} hop frames")

rep = detect.cross_validate(clips, k=6, j=CHISELING.j, action="chiseling")
for mode in ("hard", "relaxed"):
    m = getattr(rep, mode)
    print(f"{mode:8s} P {m.precision[0]:.3f}  R {m.recall[0]:.3f}  F1 {m.f1[0]:.3f}")

pred = detect.transitions_to_events(rep.predictions()["clip0"])
print("clip0 annotated:", [round(float(t), 3) for t in onsets["clip0"]])
print("clip0 detected :", [round(t, 3) for t in pred.times])
print("localize at    :", [round(t, 3) for t in detect.trigger_schedule(pred, CHISELING, 5.0)])
