"""Walk a single chiseling strike through the localization chain.

    python demos/one_event.py [seed]

Builds a scene, simulates the 48-channel recording, beamforms the 40 ms
around the first strike, paints the heatmap onto the point cloud and
boxes the heaviest cluster.  Prints what each step produced.
"""

import sys
import time

import numpy as np

from sonomap import beamform as bf
from sonomap.fusion import fuse
from sonomap.localize import ClusterParams, localize_event
from sonomap.profiles import CHISELING
from sonomap.scene import ground_truth_box, random_scene, simulate_propagation, synth_point_cloud

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
scene = random_scene(CHISELING, seed=seed, duration=2.0)
src = scene.sources[0]
print("source at", np.round(src.position, 3), "strikes at", np.round(src.event_times(scene.duration), 3))

rec = simulate_propagation(scene, seed=seed)
print(f"recording: {rec.n_channels} channels, {rec.sample_rate:.0f} Hz, {rec.channels.shape[1]} samples")

cloud = synth_point_cloud(scene, seed=seed)
print(f"point cloud: {len(cloud.points)} points")

# sound reaches the array a few ms after the strike
t = src.event_times(scene.duration)[0] + np.linalg.norm(src.position - scene.mic_positions().mean(0)) / 343.0
window, frame = bf.trigger_window(t, scene.duration)
grid = bf.ScanGrid(CHISELING.grid_distance, 1.0, 1.0, 100, 100, scene.array_pose)
steering = bf.compute_steering(scene.array, grid)
t0 = time.perf_counter()
heat = bf.normalize_heatmap(bf.delay_and_sum(rec, steering, window, video_frame=frame))
print(f"beamformed {grid.ny}x{grid.nx} cells in {time.perf_counter() - t0:.2f} s")
(row, col), peak = bf.heatmap_peak(heat)
print("heatmap peak cell", (row, col), "->", np.round(peak, 3))

weighted = fuse(cloud, heat, scene.acoustic_camera)
print(f"points with weight > 0.5: {(weighted.weights > 0.5).sum()}, total weight {weighted.weights.sum():.0f}")

res = localize_event(weighted, CHISELING, ClusterParams(), ground_truth_box(src, CHISELING), t)
if res.predicted is None:
    print("no cluster reached the minimum weight")
else:
    print("predicted box", np.round(res.predicted.min, 3), np.round(res.predicted.max, 3))
    print(f"cluster weight {res.cluster_weight:.0f}, IoU with truth {res.iou:.3f}")
