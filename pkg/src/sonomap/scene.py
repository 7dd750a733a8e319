"""Synthetic scenes: microphone arrays, sources, free-field recordings, point clouds.

The simulator is the data source for every other module and doubles as the
oracle for the localization tests, so its forward model is deliberately
simple: point sources, free-field propagation with 1/r spreading, white
sensor noise and single-view surface sampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import dsp
from .geometry import CameraModel, OrientedBox3, PointCloud, check_rigid, invert_rigid, rigid, rot_y, transform_points
from .profiles import ActionProfile, FixedCube, get_profile

SPEED_OF_SOUND = 343.0
SAMPLE_RATE = 192000
VIDEO_FPS = 25
RING_RADIUS = 0.35
MIN_RANGE = 0.1
MIN_MIC_CLEARANCE = 1e-3


@dataclass
class MicArray:
    positions: np.ndarray
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if self.positions.shape[0] < 2:
            raise ValueError("an array needs at least 2 microphones")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("microphone positions must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")

    def __len__(self):
        return self.positions.shape[0]


def make_ring_array(n, radius=RING_RADIUS, sample_rate=SAMPLE_RATE):
    """``n`` microphones evenly spaced on a circle in the z=0 plane, first one on +x."""
    if n < 2:
        raise ValueError(f"need at least 2 microphones, got {n}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    phi = 2.0 * np.pi * np.arange(n) / n
    pos = np.stack([radius * np.cos(phi), radius * np.sin(phi), np.zeros(n)], axis=1)
    return MicArray(pos, sample_rate)


# --------------------------------------------------------------------------
# waveforms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ImpulseTrain:
    """Exponentially decaying clicks every ``period`` seconds.

    With ``decay`` shorter than one sample a click is a unit impulse.  Otherwise
    it is a noise burst (optionally band-limited to ``band``) under an
    exponential envelope.
    """

    period: float
    decay: float = 0.005
    band: tuple[float, float] | None = None
    kind = "impulse-train"


@dataclass(frozen=True)
class BandLimitedNoise:
    lo: float
    hi: float
    kind = "band-limited-noise"


@dataclass(frozen=True)
class Tone:
    freq: float
    kind = "tone"


def _check_waveform(kind, sample_rate):
    nyq = sample_rate / 2
    if isinstance(kind, ImpulseTrain):
        if kind.period <= 0:
            raise ValueError("impulse-train period must be positive")
        if kind.decay < 0:
            raise ValueError("decay must be non-negative")
        if kind.band is not None and not (0 <= kind.band[0] < kind.band[1] < nyq):
            raise ValueError(f"click band {kind.band} outside (0, {nyq}) Hz")
    elif isinstance(kind, BandLimitedNoise):
        if not (0 <= kind.lo < kind.hi < nyq):
            raise ValueError(f"noise band ({kind.lo}, {kind.hi}) outside (0, {nyq}) Hz")
    elif isinstance(kind, Tone):
        if not (0 < kind.freq < nyq):
            raise ValueError(f"tone frequency {kind.freq} outside (0, {nyq}) Hz")
    else:
        raise TypeError(f"unknown waveform {kind!r}")


def band_limited_noise(n, lo, hi, sample_rate, rng):
    """Unit-RMS Gaussian noise with every spectral bin outside [lo, hi] zeroed."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def _click(kind: ImpulseTrain, sample_rate, rng):
    tau = kind.decay * sample_rate
    if tau < 1.0:
        return np.ones(1)
    n = int(math.ceil(8.0 * tau))
    if kind.band is None:
        carrier = rng.standard_normal(n)
    else:
        carrier = band_limited_noise(n, kind.band[0], kind.band[1], sample_rate, rng)
    carrier /= np.max(np.abs(carrier))
    return carrier * np.exp(-np.arange(n) / tau)


def _place_clicks(kind, times, n, sample_rate, rng):
    out = np.zeros(n)
    for t in times:
        c = _click(kind, sample_rate, rng)
        i = int(round(t * sample_rate))
        if i >= n:
            continue
        m = min(c.size, n - i)
        out[i:i + m] += c[:m]
    return out


def synth_waveform(kind, duration, sample_rate, seed=0):
    """Mono test signal of ``round(duration * sample_rate)`` samples, deterministic in ``seed``."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    _check_waveform(kind, sample_rate)
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    if isinstance(kind, ImpulseTrain):
        times = np.arange(0.0, duration, kind.period)
        return _place_clicks(kind, times, n, sample_rate, rng)
    if isinstance(kind, BandLimitedNoise):
        return band_limited_noise(n, kind.lo, kind.hi, sample_rate, rng)
    t = np.arange(n) / sample_rate
    return np.sin(2.0 * np.pi * kind.freq * t)


@dataclass
class SourceSpec:
    position: np.ndarray
    waveform: ImpulseTrain | BandLimitedNoise | Tone
    onsets: tuple = ()
    amplitude: float = 1.0
    active_intervals: tuple = ()
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.onsets = tuple(float(t) for t in self.onsets)
        self.active_intervals = tuple((float(a), float(b)) for a, b in self.active_intervals)
        if any(b <= a for a, b in zip(self.onsets, self.onsets[1:])):
            raise ValueError("onsets must be strictly increasing")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        ivs = sorted(self.active_intervals)
        if any(b <= a for a, b in ivs):
            raise ValueError("active intervals must have end > start")
        if any(ivs[i + 1][0] < ivs[i][1] for i in range(len(ivs) - 1)):
            raise ValueError("active intervals overlap")

    def event_times(self, duration):
        """Ground-truth event times within ``[0, duration)``."""
        if self.onsets:
            times = list(self.onsets)
        elif self.active_intervals:
            times = [a for a, _ in sorted(self.active_intervals)]
        elif isinstance(self.waveform, ImpulseTrain):
            times = list(np.arange(0.0, duration, self.waveform.period))
        else:
            times = [0.0]
        return [t for t in times if 0.0 <= t < duration]

    def emitted(self, duration, sample_rate, seed=0):
        """Signal radiated by the source (before propagation)."""
        n = int(round(duration * sample_rate))
        _check_waveform(self.waveform, sample_rate)
        if isinstance(self.waveform, ImpulseTrain):
            times = self.event_times(duration)
            if self.active_intervals:
                times = [t for t in times if any(a <= t < b for a, b in self.active_intervals)]
            x = _place_clicks(self.waveform, times, n, sample_rate, np.random.default_rng(seed))
        else:
            x = synth_waveform(self.waveform, duration, sample_rate, seed)
            if self.active_intervals:
                t = np.arange(n) / sample_rate
                mask = np.zeros(n, dtype=bool)
                for a, b in self.active_intervals:
                    mask |= (t >= a) & (t < b)
                x = np.where(mask, x, 0.0)
        return self.amplitude * x


# --------------------------------------------------------------------------
# point-cloud primitives
# --------------------------------------------------------------------------

@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    density: float = 2e4

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    density: float = 2e4

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if np.any(self.half_extents <= 0):
            raise ValueError("box half extents must be positive")

    def faces(self):
        """(center, normal, u_axis, v_axis, half_u, half_v) for each of the six faces."""
        out = []
        for axis in range(3):
            u, v = [a for a in range(3) if a != axis]
            for sign in (1.0, -1.0):
                n = sign * self.rotation[:, axis]
                c = self.center + n * self.half_extents[axis]
                out.append((c, n, self.rotation[:, u], self.rotation[:, v], self.half_extents[u], self.half_extents[v]))
        return out


# --------------------------------------------------------------------------
# scene
# --------------------------------------------------------------------------

def default_acoustic_camera():
    return CameraModel(1400.0, 1400.0, 960.0, 540.0, 1920, 1080)


def default_rgbd_camera():
    return CameraModel(1070.0, 1070.0, 960.0, 540.0, 1920, 1080, rigid(translation=[-0.15, 0.10, 0.0]))


@dataclass
class SyntheticScene:
    array: MicArray
    sources: list
    primitives: list = field(default_factory=list)
    camera: CameraModel = field(default_factory=default_rgbd_camera)
    array_pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    snr_db: float | None = 20.0
    duration: float = 5.0
    speed_of_sound: float = SPEED_OF_SOUND
    acoustic_intrinsics: CameraModel = field(default_factory=default_acoustic_camera)

    def __post_init__(self):
        self.array_pose = check_rigid(self.array_pose)
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")
        for s in self.sources:
            for a, b in s.active_intervals:
                if a < 0 or b > self.duration + 1e-12:
                    raise ValueError(f"active interval ({a}, {b}) outside the clip")

    @property
    def sample_rate(self):
        return self.array.sample_rate

    def mic_positions(self):
        """Microphone positions in world coordinates."""
        return transform_points(self.array_pose, self.array.positions)

    @property
    def acoustic_camera(self):
        """Acoustic-camera model; its optical frame coincides with the array frame."""
        return self.acoustic_intrinsics.with_pose(invert_rigid(self.array_pose))

    def event_times(self):
        return sorted(t for s in self.sources for t in s.event_times(self.duration))


@dataclass
class MultichannelRecording:
    channels: np.ndarray  # (M, n_samples)
    sample_rate: float

    def __post_init__(self):
        self.channels = np.atleast_2d(self.channels)
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("recording contains non-finite samples")

    @property
    def n_channels(self):
        return self.channels.shape[0]

    def __len__(self):
        return self.channels.shape[1]

    @property
    def duration(self):
        return len(self) / self.sample_rate

    def save_wav(self, path):
        wavfile.write(path, int(round(self.sample_rate)), np.ascontiguousarray(self.channels.T, dtype=np.float32))

    @classmethod
    def load_wav(cls, path):
        rate, data = wavfile.read(path)
        if data.ndim == 1:
            data = data[:, None]
        return cls(np.ascontiguousarray(data.T), float(rate))


def propagation_delay(a, b, speed_of_sound=SPEED_OF_SOUND):
    """Travel time in seconds between two points."""
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float))) / speed_of_sound


def simulate_propagation(scene: SyntheticScene, seed=0, noise=True, dtype=np.float32):
    """Free-field multichannel recording of every source in ``scene``.

    Channel m is the sum over sources of ``s(t - r/c) / max(r, 0.1 m)`` plus
    white Gaussian noise at ``scene.snr_db`` relative to that channel's clean
    RMS.  Fractional delays use the 64-tap Kaiser windowed sinc.
    """
    fs = scene.sample_rate
    n = int(round(scene.duration * fs))
    mics = scene.mic_positions()
    emitted = [s.emitted(scene.duration, fs, seed=(seed, i)) for i, s in enumerate(scene.sources)]
    out = np.zeros((mics.shape[0], n), dtype=dtype)
    for m, mic in enumerate(mics):
        acc = np.zeros(n)
        for src, sig in zip(scene.sources, emitted):
            r = float(np.linalg.norm(src.position - mic))
            if r < MIN_MIC_CLEARANCE:
                raise ValueError(f"source at {src.position.tolist()} coincides with microphone {m}")
            acc += dsp.delay_signal(sig, r / scene.speed_of_sound * fs, n) / max(r, MIN_RANGE)
        if noise and scene.snr_db is not None:
            rms = np.sqrt(np.mean(acc * acc))
            sigma = rms * 10.0 ** (-scene.snr_db / 20.0)
            acc += sigma * np.random.default_rng((seed, 7919, m)).standard_normal(n)
        out[m] = acc
    return MultichannelRecording(out, fs)


def _surface_samples(prim, rng):
    """Surface samples of a primitive as (points, outward normals, anchors).

    Visibility is decided at the anchor: the point itself on a sphere, the
    face center on a box (whole faces are kept or culled).
    """
    if isinstance(prim, Sphere):
        count = int(round(prim.density * 4.0 * np.pi * prim.radius ** 2))
        d = rng.standard_normal((count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = prim.center + prim.radius * d
        return pts, d, pts
    pts, normals, anchors = [], [], []
    for c, nrm, u, v, hu, hv in prim.faces():
        count = int(round(prim.density * 4.0 * hu * hv))
        a = rng.uniform(-hu, hu, count)
        b = rng.uniform(-hv, hv, count)
        pts.append(c + a[:, None] * u + b[:, None] * v)
        normals.append(np.broadcast_to(nrm, (count, 3)))
        anchors.append(np.broadcast_to(c, (count, 3)))
    return np.concatenate(pts), np.concatenate(normals), np.concatenate(anchors)


def synth_point_cloud(scene: SyntheticScene, seed=0):
    """Single-view cloud: surface samples facing the camera with positive depth."""
    rng = np.random.default_rng(seed)
    eye = scene.camera.center
    kept = [np.zeros((0, 3))]
    for prim in scene.primitives:
        pts, normals, anchors = _surface_samples(prim, rng)
        facing = np.einsum("ij,ij->i", normals, eye - anchors) > 0
        depth = scene.camera.to_camera(pts)[:, 2]
        kept.append(pts[facing & (depth > 0)])
    return PointCloud(np.concatenate(kept))


def ground_truth_box(source: SourceSpec, profile: ActionProfile):
    """Box the localization is scored against."""
    if isinstance(profile.box_rule, FixedCube):
        half = np.full(3, profile.box_rule.edge / 2)
        return OrientedBox3(source.position, half)
    return OrientedBox3(source.position, 0.5 * np.asarray(profile.box_rule.extents), source.rotation)


# --------------------------------------------------------------------------
# scene files
# --------------------------------------------------------------------------

def _waveform_to_dict(w):
    d = {"kind": w.kind}
    if isinstance(w, ImpulseTrain):
        d.update(period=w.period, decay=w.decay, band=list(w.band) if w.band else None)
    elif isinstance(w, BandLimitedNoise):
        d.update(lo=w.lo, hi=w.hi)
    else:
        d.update(freq=w.freq)
    return d


def _waveform_from_dict(d):
    kind = d["kind"]
    if kind == "impulse-train":
        band = d.get("band")
        return ImpulseTrain(float(d["period"]), float(d.get("decay", 0.005)), tuple(band) if band else None)
    if kind == "band-limited-noise":
        return BandLimitedNoise(float(d["lo"]), float(d["hi"]))
    if kind == "tone":
        return Tone(float(d["freq"]))
    raise ValueError(f"unknown waveform kind {kind!r}")


def scene_to_dict(scene: SyntheticScene):
    prims = []
    for p in scene.primitives:
        if isinstance(p, Sphere):
            prims.append({"type": "sphere", "center": p.center.tolist(), "radius": p.radius, "density": p.density})
        else:
            prims.append({
                "type": "box", "center": p.center.tolist(), "half_extents": p.half_extents.tolist(),
                "rotation": p.rotation.reshape(-1).tolist(), "density": p.density,
            })
    return {
        "duration": scene.duration,
        "speed_of_sound": scene.speed_of_sound,
        "snr_db": scene.snr_db,
        "array": {"positions": scene.array.positions.tolist(), "sample_rate": scene.array.sample_rate},
        "array_pose": scene.array_pose.reshape(-1).tolist(),
        "camera": scene.camera.to_dict(),
        "acoustic_camera": scene.acoustic_intrinsics.to_dict(),
        "sources": [
            {
                "position": s.position.tolist(),
                "waveform": _waveform_to_dict(s.waveform),
                "onsets": list(s.onsets),
                "amplitude": s.amplitude,
                "active_intervals": [list(iv) for iv in s.active_intervals],
                "rotation": s.rotation.reshape(-1).tolist(),
            }
            for s in scene.sources
        ],
        "primitives": prims,
    }


def scene_from_dict(d):
    """Build a scene from the documented key set (see README, "Scene files")."""
    arr = d.get("array", {})
    if "positions" in arr:
        array = MicArray(arr["positions"], float(arr.get("sample_rate", SAMPLE_RATE)))
    else:
        array = make_ring_array(int(arr.get("n", 48)), float(arr.get("radius", RING_RADIUS)),
                                float(arr.get("sample_rate", SAMPLE_RATE)))
    sources = [
        SourceSpec(
            s["position"], _waveform_from_dict(s["waveform"]), s.get("onsets", ()),
            float(s.get("amplitude", 1.0)), [tuple(iv) for iv in s.get("active_intervals", ())],
            np.asarray(s.get("rotation", np.eye(3).reshape(-1)), dtype=float).reshape(3, 3),
        )
        for s in d.get("sources", [])
    ]
    prims = []
    for p in d.get("primitives", []):
        if p["type"] == "sphere":
            prims.append(Sphere(p["center"], float(p["radius"]), float(p.get("density", 2e4))))
        elif p["type"] == "box":
            rot = np.asarray(p.get("rotation", np.eye(3).reshape(-1)), dtype=float).reshape(3, 3)
            prims.append(Box(p["center"], p["half_extents"], rot, float(p.get("density", 2e4))))
        else:
            raise ValueError(f"unknown primitive type {p['type']!r}")
    kwargs = {}
    if "camera" in d:
        kwargs["camera"] = CameraModel.from_dict(d["camera"])
    if "acoustic_camera" in d:
        kwargs["acoustic_intrinsics"] = CameraModel.from_dict(d["acoustic_camera"])
    if "array_pose" in d:
        kwargs["array_pose"] = np.asarray(d["array_pose"], dtype=float).reshape(4, 4)
    return SyntheticScene(
        array=array, sources=sources, primitives=prims,
        snr_db=d.get("snr_db", 20.0), duration=float(d.get("duration", 5.0)),
        speed_of_sound=float(d.get("speed_of_sound", SPEED_OF_SOUND)), **kwargs,
    )


def load_scene(path):
    return scene_from_dict(json.loads(Path(path).read_text()))


def save_scene(scene, path):
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2))


# --------------------------------------------------------------------------
# randomized scenes per action
# --------------------------------------------------------------------------

BONE_CENTER = np.array([0.0, 0.0, 1.6])
BONE_HALF = np.array([0.25, 0.20, 0.10])


def _onsets(rng, duration, lo_gap, hi_gap, margin=0.3):
    times, t = [], margin + rng.uniform(0.0, hi_gap)
    while t < duration - margin:
        times.append(round(t, 6))
        t += rng.uniform(lo_gap, hi_gap)
    return times


def random_scene(profile, seed=0, n_mics=48, duration=5.0, snr_db=20.0, cloud_density=2e5,
                 sample_rate=SAMPLE_RATE, radius=RING_RADIUS):
    """One clip of a synthetic operating-table scene for the given action.

    The array sits at the world origin looking along +z.  A bone-model box
    presents its front face at z = 1.5 m; the single source sits on that
    face.  A sphere and a table slab act as distractor geometry.  For
    continuous actions the instrument itself is added as a box of the
    profile's extents around the source, so its body shows up in the cloud.
    """
    profile = get_profile(profile) if isinstance(profile, str) else profile
    rng = np.random.default_rng(seed)
    front_z = BONE_CENTER[2] - BONE_HALF[2]
    pos = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.08, 0.08), front_z])
    if profile.trigger_mode == "impulsive":
        wave = ImpulseTrain(period=0.5, decay=0.006, band=(2000.0, 12000.0))
        source = SourceSpec(pos, wave, onsets=_onsets(rng, duration, 0.35, 0.7))
    else:
        band = (1500.0, 4500.0) if profile.name == "sawing" else (1500.0, 9000.0)
        start = round(float(rng.uniform(0.4, 0.4 + 0.3 * duration)), 6)
        yaw = rng.uniform(-np.pi / 4, np.pi / 4)
        source = SourceSpec(pos, BandLimitedNoise(*band), onsets=[start],
                            active_intervals=[(start, duration)], rotation=rot_y(yaw))
    prims = [
        Box(BONE_CENTER, BONE_HALF, density=cloud_density),
        Sphere([0.45, -0.35, 1.3], 0.1, density=cloud_density / 4),
        Box([0.0, 0.32, 1.8], [0.6, 0.02, 0.6], density=cloud_density / 20),
    ]
    if profile.trigger_mode == "continuous":
        half = 0.5 * np.asarray(profile.box_rule.extents)
        prims.append(Box(pos, half, source.rotation, density=cloud_density))
    return SyntheticScene(
        array=make_ring_array(n_mics, radius, sample_rate), sources=[source], primitives=prims,
        snr_db=snr_db, duration=duration,
    )
