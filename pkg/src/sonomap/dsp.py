"""Signal-processing primitives: fractional delay, resampling, band-pass, log-mel.

Everything here is a pure function of its inputs.  Signals are 1-D numpy
arrays unless noted otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

SINC_TAPS = 64
SINC_HALF = SINC_TAPS // 2
KAISER_BETA = 8.0
LOG_FLOOR = 1e-10


class TooShortInput(ValueError):
    """Signal is shorter than one analysis window."""


# --------------------------------------------------------------------------
# fractional delay
# --------------------------------------------------------------------------

def windowed_sinc(u):
    """Kaiser-windowed sinc evaluated at (possibly fractional) offsets ``u``.

    Support is the open interval (-32, 32); outside it the kernel is zero.
    At integer offsets the kernel is exactly the Kronecker delta, so an
    integer delay reproduces the input samples bit for bit.
    """
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < SINC_HALF
    arg = np.where(inside, 1.0 - (u / SINC_HALF) ** 2, 0.0)
    win = np.i0(KAISER_BETA * np.sqrt(arg)) / np.i0(KAISER_BETA)
    # sinc has exact zeros at the nonzero integers; np.sinc leaves ~1e-17 there
    nodes = (u == np.round(u)) & (u != 0)
    return np.where(inside & ~nodes, np.sinc(u) * win, 0.0)


def fractional_kernel(frac):
    """64 taps ``h[j] = g(j - frac)`` for ``j = -31 .. 32`` and ``0 <= frac < 1``.

    ``sum_j x[n - j] h[j]`` evaluates ``x`` at ``n - frac``; equivalently
    ``sum_j x[n + j] h[j]`` (with ``h`` built from ``-frac``) reads ahead.
    """
    j = np.arange(-SINC_HALF + 1, SINC_HALF + 1)
    return windowed_sinc(j - frac)


def delay_signal(x, delay, length=None):
    """Delay ``x`` by ``delay`` samples (any real >= 0) with windowed-sinc interpolation.

    Output sample ``n`` is ``x(n - delay)``; samples outside ``x`` count as zero.
    """
    x = np.asarray(x, dtype=float)
    if length is None:
        length = x.size
    d_int = int(math.floor(delay))
    frac = delay - d_int
    h = fractional_kernel(frac)
    # full convolution index k corresponds to output n = k - 31 + d_int
    y_full = sps.oaconvolve(x, h) if x.size > 4096 else np.convolve(x, h)
    out = np.zeros(length)
    start = d_int - (SINC_HALF - 1)
    lo = max(0, start)
    hi = min(length, start + y_full.size)
    if hi > lo:
        out[lo:hi] = y_full[lo - start:hi - start]
    return out


# --------------------------------------------------------------------------
# resampling and filtering
# --------------------------------------------------------------------------

_STOPBAND_DB = 70.0


def _antialias_taps(up, down, rate_in, rate_out):
    """Kaiser low-pass at the upsampled rate with unity DC gain."""
    fs_up = rate_in * up
    nyq_out = 0.5 * min(rate_in, rate_out)
    pass_edge = 0.45 * min(rate_in, rate_out)
    width = (nyq_out - pass_edge) / (0.5 * fs_up)
    numtaps, beta = sps.kaiserord(_STOPBAND_DB, width)
    numtaps |= 1
    cutoff = 0.5 * (pass_edge + nyq_out)
    # resample_poly applies the factor ``up`` itself
    return sps.firwin(numtaps, cutoff, window=("kaiser", beta), fs=fs_up)


def resample(x, rate_in, rate_out):
    """Polyphase windowed-sinc resampling from ``rate_in`` to ``rate_out`` Hz.

    Passband up to 0.45 of the lower rate is flat to well under 0.5 dB and
    anything that would fold back across the new Nyquist is attenuated by
    more than 60 dB.
    """
    if rate_in <= 0 or rate_out <= 0:
        raise ValueError(f"sample rates must be positive, got {rate_in} -> {rate_out}")
    x = np.asarray(x, dtype=float)
    if rate_in == rate_out:
        return x.copy()
    ratio = Fraction(rate_out).limit_denominator(10**6) / Fraction(rate_in).limit_denominator(10**6)
    up, down = ratio.numerator, ratio.denominator
    taps = _antialias_taps(up, down, rate_in, rate_out)
    return sps.resample_poly(x, up, down, window=taps)


@dataclass(frozen=True)
class BandpassSpec:
    lo: float
    hi: float
    order: int = 4

    def check(self, sample_rate):
        if not (0 < self.lo < self.hi < sample_rate / 2):
            raise ValueError(
                f"band ({self.lo}, {self.hi}) Hz invalid for sample rate {sample_rate} Hz"
            )
        if self.order < 2 or self.order % 2:
            raise ValueError(f"band-pass order must be even and >= 2, got {self.order}")


def bandpass_sos(spec: BandpassSpec, sample_rate):
    spec.check(sample_rate)
    return sps.butter(spec.order, [spec.lo, spec.hi], btype="bandpass", fs=sample_rate, output="sos")


def bandpass(x, spec: BandpassSpec, sample_rate, axis=-1):
    """Zero-phase Butterworth band-pass (forward-backward).

    ``x`` may be multichannel; filtering runs along ``axis``.
    """
    sos = bandpass_sos(spec, sample_rate)
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        return np.zeros_like(x)
    return sps.sosfiltfilt(sos, x, axis=axis)


# --------------------------------------------------------------------------
# mel spectrogram
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrogramConfig:
    """Sliding-window log-mel settings.

    Each ``window_len`` window is summarized by the mean of the log-mel
    vectors of its short STFT frames (``stft_len`` long, every
    ``stft_hop``).  ``stft_len=None`` uses a single STFT frame spanning the
    whole window.
    """

    sample_rate: int = 16000
    window_len: float = 0.150
    hop_len: float = 0.020
    n_mels: int = 128
    mel_fmin: float = 0.0
    mel_fmax: float | None = None
    n_fft: int | None = None
    stft_len: float | None = 0.010
    stft_hop: float = 0.0025

    def __post_init__(self):
        if self.hop_len > self.window_len:
            raise ValueError("hop_len must not exceed window_len")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.n_fft is not None and self.n_fft < self.window_samples:
            raise ValueError("n_fft must cover the window")
        if not 0 <= self.mel_fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("need 0 <= mel_fmin < mel_fmax <= sample_rate / 2")
        if self.stft_len is not None:
            s, h = self.stft_samples, self.stft_hop_samples
            if not 0 < s <= self.window_samples or h <= 0:
                raise ValueError("STFT frame must be positive and fit in the window")
            if self.hop_samples % h or (self.window_samples - s) % h:
                raise ValueError("hop and window - stft_len must be multiples of stft_hop")

    @property
    def window_samples(self):
        return int(round(self.window_len * self.sample_rate))

    @property
    def hop_samples(self):
        return int(round(self.hop_len * self.sample_rate))

    @property
    def stft_samples(self):
        return self.window_samples if self.stft_len is None else int(round(self.stft_len * self.sample_rate))

    @property
    def stft_hop_samples(self):
        return self.hop_samples if self.stft_len is None else int(round(self.stft_hop * self.sample_rate))

    @property
    def fft_size(self):
        if self.n_fft is not None:
            return self.n_fft
        return 1 << (self.window_samples - 1).bit_length()

    @property
    def fmax(self):
        return self.sample_rate / 2 if self.mel_fmax is None else self.mel_fmax

    def n_frames(self, n_samples):
        if n_samples < self.window_samples:
            return 0
        return (n_samples - self.window_samples) // self.hop_samples + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(config: SpectrogramConfig):
    """Triangular HTK-scale filterbank, shape (n_mels, n_fft // 2 + 1).

    Also returns the filter center frequencies in Hz.
    """
    n_bins = config.fft_size // 2 + 1
    freqs = np.linspace(0.0, config.sample_rate / 2, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(config.mel_fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    return fb, edges[1:-1]


def frame_signal(x, window, hop):
    n = (x.size - window) // hop + 1
    return np.lib.stride_tricks.as_strided(
        x, shape=(n, window), strides=(x.strides[0] * hop, x.strides[0]), writeable=False
    )


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (n_frames, n_mels)
    hop_len: float
    origin_time: float = 0.0
    config: SpectrogramConfig | None = None

    def __len__(self):
        return self.frames.shape[0]

    def save(self, path):
        """Little-endian float32 row-major matrix plus a JSON sidecar ``<path>.json``."""
        path = Path(path)
        self.frames.astype("<f4").tofile(path)
        meta = {
            "shape": list(self.frames.shape),
            "dtype": "float32-le",
            "hop_len": self.hop_len,
            "origin_time": self.origin_time,
            "config": asdict(self.config) if self.config else None,
        }
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        frames = np.fromfile(path, dtype="<f4").astype(float).reshape(meta["shape"])
        cfg = SpectrogramConfig(**meta["config"]) if meta.get("config") else None
        return cls(frames, meta["hop_len"], meta["origin_time"], cfg)


def _stft_log_mel(x, config, fb, chunk=1024):
    """Log-mel of every STFT frame starting at multiples of the STFT hop."""
    size, hop = config.stft_samples, config.stft_hop_samples
    frames = frame_signal(x, size, hop)
    win = np.hanning(size + 2)[1:-1]
    out = np.empty((frames.shape[0], fb.shape[0]))
    for a in range(0, frames.shape[0], chunk):
        power = np.abs(np.fft.rfft(frames[a:a + chunk] * win, n=config.fft_size, axis=1)) ** 2
        out[a:a + chunk] = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    return out


def log_mel(x, config: SpectrogramConfig = SpectrogramConfig()):
    """Log-mel spectrogram, one vector per sliding window.

    Frame ``k`` covers samples ``[k * hop, k * hop + window)`` and is the mean
    over that span's Hann-windowed STFT frames of the natural-log mel
    energies (floor 1e-10).
    """
    x = np.ascontiguousarray(x, dtype=float)
    win, hop = config.window_samples, config.hop_samples
    if x.size < win:
        raise TooShortInput(f"need at least {win} samples, got {x.size}")
    n = config.n_frames(x.size)
    fb, _ = mel_filterbank(config)
    step = config.stft_hop_samples
    per_window = (win - config.stft_samples) // step + 1
    # only the STFT frames some window uses
    used = x[: (n - 1) * hop + win]
    sub = _stft_log_mel(used, config, fb)
    # a direct mean per window; running sums would drift by a few ulps
    view = np.lib.stride_tricks.sliding_window_view(sub, per_window, axis=0)[:: hop // step][:n]
    frames = view.mean(axis=-1)
    return MelSpectrogram(frames, config.hop_len, 0.0, config)
