"""Multi-channel STFT / ISTFT with a periodic Hann window.

Frames are not centered: frame ``t`` covers samples ``[t*hop, t*hop + fft_size)``.
Synthesis divides the Hann window by the overlapped sum of squared analysis
windows, so ``istft(stft(x))`` reproduces ``x`` wherever a sample is covered by
a full set of frames.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    hop: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size % 2:
            raise ValueError("fft_size must be a positive even number")
        if self.hop <= 0 or self.fft_size % self.hop:
            raise ValueError("hop must divide fft_size")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def bin_frequency(self, k):
        return np.asarray(k) * self.sample_rate / self.fft_size

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.fft_size:
            return 0
        return (num_samples - self.fft_size) // self.hop + 1


@dataclass
class ComplexSpectrogram:
    """STFT tensor of shape (M channels, K bins, T frames)."""

    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ValueError("spectrogram data must be (M, K, T)")
        if self.data.shape[0] < 1:
            raise ValueError("need at least one channel")
        if self.data.shape[1] != self.config.num_bins:
            raise ValueError(
                f"expected {self.config.num_bins} bins, got {self.data.shape[1]}")

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_frames(self) -> int:
        return self.data.shape[2]

    def channel(self, m: int) -> "ComplexSpectrogram":
        return ComplexSpectrogram(self.data[m:m + 1], self.config)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def synthesis_window(cfg: StftConfig) -> np.ndarray:
    w = hann(cfg.fft_size)
    # overlapped sum of w^2, periodic in hop
    norm = (w ** 2).reshape(-1, cfg.hop).sum(axis=0)
    if np.any(norm <= 0):
        raise ValueError("window overlap does not cover every sample")
    return w / np.tile(norm, cfg.fft_size // cfg.hop)


def _as_channels(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("signal must be (M, N) or (N,)")
    return x


def stft(signal, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Analyse an (M, N) sample matrix into an (M, K, T) spectrogram."""
    x = _as_channels(signal)
    T = cfg.num_frames(x.shape[1])
    if T == 0:
        raise ValueError("insufficient samples: signal shorter than one frame")
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop * np.arange(T)[:, None]
    frames = x[:, idx] * hann(cfg.fft_size)  # (M, T, N)
    spec = np.fft.rfft(frames, axis=-1)
    return ComplexSpectrogram(np.transpose(spec, (0, 2, 1)), cfg)


def istft(spec: ComplexSpectrogram) -> np.ndarray:
    """Weighted overlap-add synthesis; returns (M, (T-1)*hop + fft_size)."""
    cfg = spec.config
    M, _, T = spec.data.shape
    if T == 0:
        raise ValueError("cannot invert a spectrogram with zero frames")
    frames = np.fft.irfft(np.transpose(spec.data, (0, 2, 1)), n=cfg.fft_size, axis=-1)
    frames *= synthesis_window(cfg)
    out = np.zeros((M, (T - 1) * cfg.hop + cfg.fft_size))
    # hop divides fft_size: add frames in fft_size/hop interleaved groups
    R = cfg.fft_size // cfg.hop
    for r in range(R):
        sel = frames[:, r::R, :]
        if sel.shape[1] == 0:
            continue
        start = r * cfg.hop
        block = sel.reshape(M, -1)
        out[:, start:start + block.shape[1]] += block
    return out


def interior_slice(num_samples: int, cfg: StftConfig) -> slice:
    """Samples covered by a full set of overlapping frames."""
    T = cfg.num_frames(num_samples)
    return slice(cfg.fft_size - cfg.hop, (T - 1) * cfg.hop + cfg.hop)
