"""Regenerate ``oracle_values.json`` from the reference implementations.

Run from the repository root:  python3 tests/golden/freeze.py
The values are committed; tests check that both the oracles and the
library still reproduce them.
"""

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

import instances  # noqa: E402
import oracles  # noqa: E402


def main():
    out = {}

    out["delay_and_sum"] = []
    for seed in range(3):
        inst = instances.beamform_instance(seed)
        g, fs = inst["grid"], inst["fs"]
        cells = oracles.grid_cells(g["distance"], g["width"], g["height"], g["nx"], g["ny"])
        s0, s1 = (int(round(t * fs)) for t in inst["window"])
        vals = oracles.naive_delay_and_sum(inst["channels"], inst["mics"], fs, cells, 343.0, s0, s1)
        out["delay_and_sum"].append({"seed": seed, "values": vals.tolist()})

    out["propagation"] = []
    for seed in range(2):
        inst = instances.propagation_instance(seed)
        ch = oracles.naive_propagation(inst["emitted"], inst["sources"], inst["mics"], inst["fs"], 343.0, inst["n"])
        out["propagation"].append({"seed": seed, "rms": np.sqrt(np.mean(ch ** 2, axis=1)).tolist(),
                                   "head": ch[:, 900:910].tolist()})

    out["dbscan"] = []
    for seed in range(3):
        pts, w, r, m = instances.cluster_instance(seed, n_max=400)
        labels, _ = oracles.brute_weighted_dbscan(pts, w, r, m)
        out["dbscan"].append({"seed": seed, "labels": labels.tolist()})

    out["rotated_iou"] = []
    for c1, h1, c2, h2, R2 in instances.rotated_box_pairs():
        out["rotated_iou"].append(oracles.exact_iou(c1, h1, np.eye(3), c2, h2, R2))

    sig = np.random.default_rng(5).standard_normal(4000)
    mel = oracles.naive_log_mel(sig, 16000, 2400, 320, 4096, 128, 0.0, 8000.0, 160, 40)
    out["log_mel_pooled"] = mel[:, ::16].tolist()

    (HERE / "oracle_values.json").write_text(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
