"""Time-domain delay-and-sum beamforming onto a planar scan grid.

The grid plane sits ``distance`` metres in front of the array along the
array frame's +z axis.  Heatmap rows follow +y (image "down"), columns +x,
so a heatmap lines up with the acoustic camera image without flipping.

Interpolation uses the same 64-tap Kaiser windowed sinc as the simulator,
evaluated at fractional delays rounded to ``1/phases`` of a sample.  For
each analysis window the channels are pre-filtered once per phase (a
polyphase bank built with FFTs) and the per-cell work reduces to weighted
sums of shifted rows of that bank.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .dsp import SINC_HALF, fractional_kernel
from .geometry import transform_points
from .scene import SPEED_OF_SOUND, MicArray, MultichannelRecording

DEFAULT_PHASES = 32
TIME_BLOCK = 512  # accumulator stays in L1


@dataclass
class ScanGrid:
    distance: float = 1.5
    width: float = 1.0
    height: float = 1.0
    nx: int = 100
    ny: int = 100
    array_pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.distance <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("grid distance and size must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2x2 cells")
        self.array_pose = np.asarray(self.array_pose, dtype=float).reshape(4, 4)

    @property
    def cell_size(self):
        return self.width / self.nx, self.height / self.ny

    def axes(self):
        """Cell-center coordinates along x (columns) and y (rows), array frame."""
        dx, dy = self.cell_size
        xs = -0.5 * self.width + (np.arange(self.nx) + 0.5) * dx
        ys = -0.5 * self.height + (np.arange(self.ny) + 0.5) * dy
        return xs, ys

    def cell_centers(self, frame="array"):
        """(ny, nx, 3) cell centers in the array frame or in world coordinates."""
        xs, ys = self.axes()
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx, gy, np.full_like(gx, self.distance)], axis=-1)
        if frame == "world":
            pts = transform_points(self.array_pose, pts.reshape(-1, 3)).reshape(pts.shape)
        return pts

    def to_dict(self):
        d = asdict(self)
        d["array_pose"] = self.array_pose.reshape(-1).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "array_pose" in d:
            d["array_pose"] = np.asarray(d["array_pose"], dtype=float).reshape(4, 4)
        return cls(**d)


@dataclass
class SteeringTable:
    delays: np.ndarray   # (ny*nx, M) samples, per-cell minimum is 0
    weights: np.ndarray  # (ny*nx, M), per-cell mean is 1
    grid: ScanGrid
    array: MicArray
    speed_of_sound: float = SPEED_OF_SOUND

    def quantized(self, phases=DEFAULT_PHASES):
        """Split delays into integer samples and a phase index in ``[0, phases)``."""
        return quantize_delays(self.delays, phases)


def quantize_delays(delays, phases):
    q = np.rint(np.asarray(delays) * phases).astype(np.int64)
    return q // phases, q % phases


def compute_steering(array: MicArray, grid: ScanGrid, c=SPEED_OF_SOUND):
    """Per-cell, per-mic alignment delays (samples) and distance-compensation weights."""
    cells = grid.cell_centers().reshape(-1, 3)
    dist = np.linalg.norm(cells[:, None, :] - array.positions[None, :, :], axis=2)
    delays = (dist - dist.min(axis=1, keepdims=True)) / c * array.sample_rate
    weights = dist / dist.mean(axis=1, keepdims=True)
    return SteeringTable(delays, weights, grid, array, c)


@dataclass
class AcousticHeatmap:
    values: np.ndarray  # (ny, nx)
    grid: ScanGrid
    normalized: bool = False
    time_window: tuple = (0.0, 0.0)
    video_frame: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.ny, self.grid.nx):
            raise ValueError(f"heatmap shape {self.values.shape} does not match grid {self.grid.ny}x{self.grid.nx}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("heatmap values must be finite")
        if self.normalized and self.values.size and np.any(self.values):
            if self.values.min() < 0 or self.values.max() != 1.0:
                raise ValueError("a normalized heatmap must lie in [0, 1] with maximum 1")

    def save(self, path):
        """Little-endian float32, row-major (ny, nx), plus a JSON sidecar ``<path>.json``."""
        path = Path(path)
        self.values.astype("<f4").tofile(path)
        meta = {
            "shape": [self.grid.ny, self.grid.nx],
            "dtype": "float32-le",
            "grid": self.grid.to_dict(),
            "time_window": list(self.time_window),
            "video_frame": self.video_frame,
            "normalized": self.normalized,
        }
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        grid = ScanGrid.from_dict(meta["grid"])
        values = np.fromfile(path, dtype="<f4").astype(float).reshape(meta["shape"])
        return cls(values, grid, bool(meta["normalized"]), tuple(meta["time_window"]), int(meta["video_frame"]))


def _window_samples(recording, window):
    start, end = window
    fs = recording.sample_rate
    s0, s1 = int(round(start * fs)), int(round(end * fs))
    if not (0 <= s0 < s1 <= len(recording)):
        raise ValueError(f"window {window} s outside recording of {recording.duration:.4f} s")
    return s0, s1


def phase_bank(channels, s0, length, phases):
    """``bank[m, q, i] = x_m(s0 + i + q / phases)`` for ``i < length``.

    Samples outside the recording are treated as zero.
    """
    M, L = channels.shape
    lo, hi = s0 - (SINC_HALF - 1), s0 + length + SINC_HALF
    seg = np.zeros((M, hi - lo))
    a, b = max(lo, 0), min(hi, L)
    if b > a:
        seg[:, a - lo:b - lo] = channels[:, a:b]
    # x(n + f) = sum_j x[n + j] g(j - f) for j = -31 .. 32
    kern = np.stack([fractional_kernel(q / phases) for q in range(phases)])
    nfft = 1 << (seg.shape[1] + kern.shape[1] - 1).bit_length()
    S = np.fft.rfft(seg, nfft)
    # correlation with kern == convolution with reversed kern
    K = np.fft.rfft(kern[:, ::-1], nfft)
    bank = np.empty((M, phases, length))
    off = kern.shape[1] - 1
    for m in range(M):
        full = np.fft.irfft(S[m][None, :] * K, nfft)
        bank[m] = full[:, off:off + length]
    return bank


@numba.njit(nogil=True, cache=True, fastmath=True)
def _das_energy(bank, dint, phase, weights, n, block):
    """Sum over the window of the squared steered channel sum, per cell.

    Channels are consumed eight at a time so each pass over the block
    accumulator does eight multiply-adds per load/store of ``acc``.
    """
    ncell, M = dint.shape
    energy = np.zeros(ncell)
    acc = np.empty(block)
    M8 = M - M % 8
    for b0 in range(0, n, block):
        T = min(block, n - b0)
        for c in range(ncell):
            acc[:T] = 0.0
            for m in range(0, M8, 8):
                r0 = bank[m, phase[c, m]][dint[c, m] + b0:]
                r1 = bank[m + 1, phase[c, m + 1]][dint[c, m + 1] + b0:]
                r2 = bank[m + 2, phase[c, m + 2]][dint[c, m + 2] + b0:]
                r3 = bank[m + 3, phase[c, m + 3]][dint[c, m + 3] + b0:]
                r4 = bank[m + 4, phase[c, m + 4]][dint[c, m + 4] + b0:]
                r5 = bank[m + 5, phase[c, m + 5]][dint[c, m + 5] + b0:]
                r6 = bank[m + 6, phase[c, m + 6]][dint[c, m + 6] + b0:]
                r7 = bank[m + 7, phase[c, m + 7]][dint[c, m + 7] + b0:]
                w0, w1, w2, w3 = weights[c, m], weights[c, m + 1], weights[c, m + 2], weights[c, m + 3]
                w4, w5, w6, w7 = weights[c, m + 4], weights[c, m + 5], weights[c, m + 6], weights[c, m + 7]
                for t in range(T):
                    acc[t] += (w0 * r0[t] + w1 * r1[t] + w2 * r2[t] + w3 * r3[t]) + (
                        w4 * r4[t] + w5 * r5[t] + w6 * r6[t] + w7 * r7[t])
            for m in range(M8, M):
                r0 = bank[m, phase[c, m]][dint[c, m] + b0:]
                w0 = weights[c, m]
                for t in range(T):
                    acc[t] += w0 * r0[t]
            s = 0.0
            for t in range(T):
                s += acc[t] * acc[t]
            energy[c] += s
    return energy


def delay_and_sum(recording: MultichannelRecording, steering: SteeringTable, window, phases=DEFAULT_PHASES,
                  video_frame=-1):
    """RMS of the steered channel sum for every grid cell over ``window`` (seconds).

    Returns an unnormalized heatmap.
    """
    if abs(recording.sample_rate - steering.array.sample_rate) > 1e-9:
        raise ValueError(
            f"recording rate {recording.sample_rate} Hz != steering rate {steering.array.sample_rate} Hz"
        )
    if recording.n_channels != len(steering.array):
        raise ValueError("channel count does not match the array")
    s0, s1 = _window_samples(recording, window)
    n = s1 - s0
    dint, phase = steering.quantized(phases)
    bank = phase_bank(recording.channels, s0, n + int(dint.max()) + 1, phases)
    energy = _das_energy(bank, dint, phase, steering.weights, n, TIME_BLOCK)
    grid = steering.grid
    values = np.sqrt(energy / n).reshape(grid.ny, grid.nx)
    return AcousticHeatmap(values, grid, False, (s0 / recording.sample_rate, s1 / recording.sample_rate), video_frame)


def normalize_heatmap(h: AcousticHeatmap):
    """Scale to [0, 1] by the maximum; an all-zero map stays all-zero."""
    peak = float(np.max(h.values)) if h.values.size else 0.0
    values = h.values / peak if peak > 0 else np.zeros_like(h.values)
    return AcousticHeatmap(values, h.grid, True, h.time_window, h.video_frame)


def heatmap_peak(h: AcousticHeatmap):
    """((row, col), world position) of the maximum; ties go to the lowest row-major index."""
    flat = int(np.argmax(h.values))
    row, col = divmod(flat, h.grid.nx)
    return (row, col), h.grid.cell_centers("world")[row, col]


def frame_window(video_frame, fps=25):
    """Analysis window of one video frame, in seconds."""
    return (video_frame / fps, (video_frame + 1) / fps)


def trigger_window(t, duration, fps=25):
    """One video-frame period centered on a trigger time, shifted to fit in ``[0, duration]``.

    Returns ``(window, video_frame)`` with the frame index ``floor(t * fps)``.
    A frame-aligned window would miss an event landing near a frame edge.
    """
    half = 0.5 / fps
    start = min(max(t - half, 0.0), max(duration - 2 * half, 0.0))
    return (start, min(start + 2 * half, duration)), int(np.floor(t * fps + 1e-9))
