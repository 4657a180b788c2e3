"""Shoebox acoustic scenes: image-source RIRs, moving sources, diffuse noise
and ground-truth time-frequency masks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .linalg import eigh_jacobi
from .stft import ComplexSpectrogram, StftConfig, istft, stft

SINC_TAPS = 64
SEGMENT_SECONDS = 0.032
SOURCE_RMS = 0.05
SCENARIOS = {
    1: ("R", []),
    2: ("S1", []),
    3: ("S1", ["S2"]),
    4: ("D1", []),
    5: ("D1", ["D2"]),
}


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple = (6.0, 5.0, 2.5)
    beta: float = 0.85
    max_image_order: int = 3
    speed_of_sound: float = 343.0

    def __post_init__(self):
        if len(self.dimensions) != 3 or min(self.dimensions) <= 0:
            raise ValueError("room dimensions must be three positive lengths")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("reflection coefficient must satisfy 0 <= beta < 1")
        if self.max_image_order < 0:
            raise ValueError("max_image_order must be >= 0")

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.dimensions)))


@dataclass
class ArrayGeometry:
    mic_positions: np.ndarray
    center: np.ndarray = None

    def __post_init__(self):
        self.mic_positions = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        if self.center is None:
            self.center = self.mic_positions.mean(axis=0)
        self.center = np.asarray(self.center, dtype=float)
        d = self.distances()
        if len(d) > 1 and np.any(d[~np.eye(len(d), dtype=bool)] == 0):
            raise ValueError("microphone positions must be distinct")

    @classmethod
    def circular(cls, center=(3.0, 2.5, 1.2), diameter=0.086, num_mics=6):
        ang = 2 * np.pi * np.arange(num_mics) / num_mics
        c = np.asarray(center, dtype=float)
        pos = c + 0.5 * diameter * np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], 1)
        return cls(pos, c)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    def distances(self) -> np.ndarray:
        diff = self.mic_positions[:, None, :] - self.mic_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)


@dataclass
class SourceTrajectory:
    times: np.ndarray
    positions: np.ndarray
    kind: str = "static"

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if len(self.times) != len(self.positions):
            raise ValueError("one position per waypoint time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("waypoint times must be strictly increasing")

    @classmethod
    def static(cls, position):
        return cls([0.0], [position], "static")

    @property
    def is_static(self) -> bool:
        return len(self.times) == 1 or bool(np.all(self.positions == self.positions[0]))

    def position_at(self, t):
        t = np.atleast_1d(t)
        return np.stack([np.interp(t, self.times, self.positions[:, i]) for i in range(3)], -1)

    def covers(self, t_end: float) -> bool:
        if len(self.times) == 1:
            return True
        return self.times[0] <= 1e-12 and self.times[-1] >= t_end - 1e-12


@dataclass
class MaskTriple:
    """(K, T, 3) class probabilities: speech, interference, weak components."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError("mask tensor must be (K, T, 3)")

    @property
    def speech(self):
        return self.values[..., 0]

    @property
    def interference(self):
        return self.values[..., 1]

    @property
    def weak(self):
        return self.values[..., 2]


# ---------------------------------------------------------------------------
# Image source method
# ---------------------------------------------------------------------------

def image_sources(room: RoomSpec, source):
    """All image positions with total reflection count <= max_image_order.

    Returns ``(positions (I, 3), reflections (I,))``; the direct path comes first.
    """
    N = room.max_image_order
    src = np.asarray(source, dtype=float)
    n = np.arange(-N, N + 1)
    per_axis = []
    for axis in range(3):
        L = room.dimensions[axis]
        nn, qq = np.meshgrid(n, [0, 1], indexing="ij")
        nn, qq = nn.ravel(), qq.ravel()
        pos = (1 - 2 * qq) * src[axis] + 2 * nn * L
        refl = np.abs(nn - qq) + np.abs(nn)
        keep = refl <= N
        per_axis.append((pos[keep], refl[keep]))
    (px, rx), (py, ry), (pz, rz) = per_axis
    P = np.stack(np.meshgrid(px, py, pz, indexing="ij"), -1).reshape(-1, 3)
    R = (rx[:, None, None] + ry[None, :, None] + rz[None, None, :]).ravel()
    keep = R <= N
    P, R = P[keep], R[keep]
    order = np.lexsort((P[:, 2], P[:, 1], P[:, 0], R))
    return P[order], R[order]


def simulate_rir(room: RoomSpec, source, array: ArrayGeometry, sample_rate: int = 16000,
                 length: int | None = None) -> np.ndarray:
    """(M, L) impulse responses; each image contributes beta^n / (4 pi d) at delay d/c.

    Fractional delays use a 64-tap Hann-windowed sinc.
    """
    if not room.contains(source):
        raise ValueError("source position outside room")
    if not all(room.contains(m) for m in array.mic_positions):
        raise ValueError("microphone position outside room")
    pos, refl = image_sources(room, source)
    d = np.linalg.norm(array.mic_positions[:, None, :] - pos[None, :, :], axis=-1)
    delay = d / room.speed_of_sound * sample_rate
    amp = room.beta ** refl / (4 * np.pi * d)
    half = SINC_TAPS // 2
    idx = np.floor(delay).astype(np.int64)[..., None] + np.arange(-half + 1, half + 1)
    x = idx - delay[..., None]
    taps = amp[..., None] * np.sinc(x) * 0.5 * (1 + np.cos(np.pi * x / half))
    if length is None:
        length = int(idx.max()) + 1
    M = array.num_mics
    valid = (idx >= 0) & (idx < length)
    flat = (np.arange(M)[:, None, None] * length + idx)[valid]
    rir = np.bincount(flat, weights=taps[valid], minlength=M * length)
    return rir.reshape(M, length)


def _crossfade_windows(n, seg, fade):
    """Trapezoid windows, one per segment, summing to one over [0, n)."""
    J = -(-n // seg)
    t = np.arange(n) + 0.5
    rise = [np.ones(n)]
    for j in range(1, J):
        rise.append(np.clip((t - j * seg + fade / 2) / fade, 0.0, 1.0))
    rise.append(np.zeros(n))
    return [rise[j] * (1.0 - rise[j + 1]) for j in range(J)]


def render_source(mono, traj: SourceTrajectory, room: RoomSpec, array: ArrayGeometry,
                  sample_rate: int = 16000, crossfade: int = 256) -> np.ndarray:
    """Convolve a mono signal with position-dependent RIRs, one per 32 ms segment.

    Segments are blended with linear ramps of ``crossfade`` samples. Output is
    truncated to the input length: (M, len(mono)).
    """
    x = np.asarray(mono, dtype=np.float64)
    n = len(x)
    if not traj.covers((n - 1) / sample_rate):
        raise ValueError("trajectory shorter than signal")
    M = array.num_mics
    if traj.is_static:
        rir = simulate_rir(room, traj.positions[0], array, sample_rate)
        return fftconvolve(x[None, :], rir, axes=1)[:, :n]

    seg = int(round(SEGMENT_SECONDS * sample_rate))
    J = -(-n // seg)
    centers = (np.arange(J) * seg + 0.5 * seg) / sample_rate
    positions = traj.position_at(np.minimum(centers, (n - 1) / sample_rate))
    windows = _crossfade_windows(n, seg, min(crossfade, seg))
    out = np.zeros((M, n))
    for j in range(J):
        w = windows[j]
        nz = np.flatnonzero(w)
        a, b = nz[0], nz[-1] + 1
        rir = simulate_rir(room, positions[j], array, sample_rate)
        y = fftconvolve((x[a:b] * w[a:b])[None, :], rir, axes=1)
        end = min(n, a + y.shape[1])
        out[:, a:end] += y[:, :end - a]
    return out


# ---------------------------------------------------------------------------
# Diffuse noise
# ---------------------------------------------------------------------------

def spatial_coherence(array: ArrayGeometry, k, cfg: StftConfig, speed_of_sound: float = 343.0):
    """Spherically isotropic coherence sin(2 pi f d / c) / (2 pi f d / c) for bin k."""
    if np.any(np.asarray(k) >= cfg.num_bins) or np.any(np.asarray(k) < 0):
        raise ValueError("bin index out of range")
    f = cfg.bin_frequency(k)
    d = array.distances()
    return np.sinc(2.0 * np.asarray(f)[..., None, None] * d / speed_of_sound)


def gen_isotropic_noise(mono_spec: ComplexSpectrogram, array: ArrayGeometry, rng=None,
                        speed_of_sound: float = 343.0) -> ComplexSpectrogram:
    """Spread a single-channel noise spectrogram into a diffuse M-channel field.

    X(k,t) = E(k) Lambda(k)^(1/2) exp(i phi(k,t)) X_mono(k,t) with i.i.d. phases.
    """
    rng = np.random.default_rng(rng)
    cfg = mono_spec.config
    K, T = mono_spec.num_bins, mono_spec.num_frames
    gamma = spatial_coherence(array, np.arange(K), cfg, speed_of_sound)
    lam, E = eigh_jacobi(gamma)
    mix = E * np.sqrt(np.clip(lam, 0.0, None))[:, None, :]          # (K, M, M)
    phi = np.pi - 2 * np.pi * rng.random((K, T, array.num_mics))     # (-pi, pi]
    U = np.einsum("kij,ktj->ikt", mix, np.exp(1j * phi))
    return ComplexSpectrogram(U * mono_spec.data[0][None], cfg)


# ---------------------------------------------------------------------------
# Ground truth masks
# ---------------------------------------------------------------------------

def default_epsilon(S, N, rel: float = 0.01):
    """Per-bin threshold 40 dB below the per-bin peak norm of either signal."""
    s = np.linalg.norm(_data(S), axis=0)
    n = np.linalg.norm(_data(N), axis=0)
    return rel * np.maximum(s.max(axis=1), n.max(axis=1))


def _data(X):
    return X.data if isinstance(X, ComplexSpectrogram) else np.asarray(X)


def ground_truth_masks(S, N, eps=None) -> MaskTriple:
    s_data, n_data = _data(S), _data(N)
    if s_data.shape != n_data.shape:
        raise ValueError("S and N must have the same shape")
    if eps is None:
        eps = default_epsilon(s_data, n_data)
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps < 0):
        raise ValueError("epsilon must be non-negative")
    eps = np.broadcast_to(eps.reshape(-1, 1) if eps.ndim else eps, s_data.shape[1:])
    s = np.linalg.norm(s_data, axis=0)
    n = np.linalg.norm(n_data, axis=0)
    p1 = s > np.maximum(n, eps)
    p2 = n > np.maximum(s, eps)
    p = np.stack([p1, p2, ~(p1 | p2)], axis=-1).astype(np.float64)
    return MaskTriple(p)


# ---------------------------------------------------------------------------
# Synthetic sources
# ---------------------------------------------------------------------------

def synth_speech(n: int, sample_rate: int, rng) -> np.ndarray:
    """Speech-like babble: voiced harmonic syllables with formants, separated by pauses."""
    out = np.zeros(n)
    t = 0
    while t < n:
        t += int(rng.uniform(0.05, 0.35) * sample_rate)
        length = int(rng.uniform(0.12, 0.35) * sample_rate)
        if t >= n:
            break
        length = min(length, n - t)
        tt = np.arange(length) / sample_rate
        f0 = rng.uniform(100, 220) * (1 + rng.uniform(-0.15, 0.15) * tt / max(tt[-1], 1e-9))
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        formants = [rng.uniform(300, 900), rng.uniform(900, 2500), rng.uniform(2500, 3500)]
        syl = np.zeros(length)
        for h in range(1, int(4000 / f0.max()) + 1):
            fh = h * f0.mean()
            gain = sum(np.exp(-0.5 * ((fh - F) / 120.0) ** 2) for F in formants) + 0.05
            syl += gain / np.sqrt(h) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
        syl *= np.hanning(length)
        out[t:t + length] += syl
        t += length
    rms = np.sqrt(np.mean(out ** 2))
    return out / rms if rms > 0 else out


def synth_noise(n: int, sample_rate: int, rng) -> np.ndarray:
    """Pink-ish noise (1/sqrt(f) amplitude slope above 50 Hz)."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec /= np.sqrt(np.maximum(f, 50.0) / 50.0)
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x ** 2))


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    scenario: int = 2
    seed: int = 0
    duration: float = 4.0
    num_mics: int = 6
    array_diameter: float = 0.086
    array_center: tuple = (3.0, 2.5, 1.2)
    room: RoomSpec = field(default_factory=RoomSpec)
    stft: StftConfig = field(default_factory=StftConfig)
    noise_gain: float = 1.0
    interferer_gain: float = 1.0
    head_jitter: float = 0.2
    speed: float = 0.5

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario id {self.scenario}; expected 1..5")


@dataclass
class Scenario:
    config: ScenarioConfig
    mixture: ComplexSpectrogram
    clean: ComplexSpectrogram
    interference: ComplexSpectrogram
    masks: MaskTriple
    signals: dict
    trajectories: dict


STATIC_POSITIONS = {"S1": (4.3, 3.6, 1.6), "S2": (1.6, 1.3, 1.6)}
# regions for moving talkers: (x range, y range), on opposite sides of the array
DYNAMIC_REGIONS = {"D1": ((0.4, 2.4), (0.5, 4.5)), "D2": ((3.6, 5.6), (0.5, 4.5))}
TALKER_HEIGHT = 1.6


def moving_trajectory(region, duration, speed, rng, height=TALKER_HEIGHT):
    """Random piecewise-linear walk inside a region at constant speed."""
    (x0, x1), (y0, y1) = region

    def draw():
        return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), height])

    pts = [draw()]
    times = [0.0]
    while times[-1] < duration:
        nxt = draw()
        dist = np.linalg.norm(nxt - pts[-1])
        if dist < 1e-3:
            continue
        pts.append(nxt)
        times.append(times[-1] + dist / speed)
    return SourceTrajectory(times, pts, "moving")


def _trajectory(name, cfg, rng, duration):
    room = cfg.room
    if name in STATIC_POSITIONS:
        base = np.asarray(STATIC_POSITIONS[name])
        offset = rng.uniform(-cfg.head_jitter / 2, cfg.head_jitter / 2, 3)
        return SourceTrajectory.static(base + offset)
    if name == "R":
        lo = np.array([0.5, 0.5, 1.0])
        hi = np.asarray(room.dimensions) - np.array([0.5, 0.5, room.dimensions[2] - 1.9])
        while True:
            p = rng.uniform(lo, hi)
            if np.linalg.norm(p[:2] - np.asarray(cfg.array_center)[:2]) > 0.5:
                break
        return SourceTrajectory.static(p + rng.uniform(-cfg.head_jitter / 2, cfg.head_jitter / 2, 3))
    return moving_trajectory(DYNAMIC_REGIONS[name], duration, cfg.speed, rng)


def _scale_to(x, ref_rms):
    rms = np.sqrt(np.mean(x[0] ** 2))
    return x * (ref_rms / rms) if rms > 0 else x


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Render one utterance of a scenario: desired source, interferers and diffuse noise.

    Every component is scaled to the same RMS at the reference microphone before
    the noise / interferer gains are applied. Deterministic in (seed, scenario).
    """
    desired, others = SCENARIOS[cfg.scenario]
    fs = cfg.stft.sample_rate
    n = int(round(cfg.duration * fs))
    if n < cfg.stft.fft_size:
        raise ValueError("duration shorter than one STFT frame")
    ss = np.random.SeedSequence([int(cfg.seed), int(cfg.scenario)])
    r_pos, r_src, r_noise, r_phase = (np.random.default_rng(s) for s in ss.spawn(4))
    array = ArrayGeometry.circular(cfg.array_center, cfg.array_diameter, cfg.num_mics)
    dur = (n - 1) / fs

    trajs = {desired: _trajectory(desired, cfg, r_pos, dur)}
    for name in others:
        trajs[name] = _trajectory(name, cfg, r_pos, dur)

    s = _scale_to(render_source(synth_speech(n, fs, r_src), trajs[desired], cfg.room, array, fs),
                  SOURCE_RMS)
    interf = np.zeros_like(s)
    for name in others:
        x = render_source(synth_speech(n, fs, r_src), trajs[name], cfg.room, array, fs)
        interf += cfg.interferer_gain * _scale_to(x, SOURCE_RMS)

    pad = cfg.stft.fft_size
    mono = synth_noise(n + 2 * pad, fs, r_noise)
    iso = istft(gen_isotropic_noise(stft(mono, cfg.stft), array, r_phase,
                                    cfg.room.speed_of_sound))[:, pad:pad + n]
    interf += cfg.noise_gain * _scale_to(iso, SOURCE_RMS)

    z = s + interf
    S, N, Z = stft(s, cfg.stft), stft(interf, cfg.stft), stft(z, cfg.stft)
    return Scenario(cfg, Z, S, N, ground_truth_masks(S, N),
                    {"mixture": z, "clean": s, "interference": interf}, trajs)
