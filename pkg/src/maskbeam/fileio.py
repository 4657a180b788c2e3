"""File formats: 16-bit PCM WAV, MBMK mask files and flat key=value configs."""
from __future__ import annotations

import struct
import wave
from pathlib import Path

import numpy as np

MASK_MAGIC = b"MBMK"


class ConfigError(ValueError):
    """Invalid or missing configuration values."""


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return (M, N) float samples in [-1, 1) and the sample rate."""
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2:
            raise ValueError("only 16-bit PCM WAV is supported")
        M = f.getnchannels()
        fs = f.getframerate()
        raw = f.readframes(f.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, M).T
    return pcm.astype(np.float64) / 32768.0, fs


def write_wav(path, samples, sample_rate: int = 16000) -> None:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(x.shape[0])
        f.setsampwidth(2)
        f.setframerate(int(sample_rate))
        f.writeframes(np.ascontiguousarray(pcm.T).tobytes())


def write_masks(path, masks) -> None:
    """Write a (K, T, 3) mask tensor as MBMK: magic, u32 K, u32 T, f32 LE data."""
    v = np.asarray(getattr(masks, "values", masks), dtype="<f4")
    if v.ndim != 3 or v.shape[2] != 3:
        raise ValueError("mask tensor must be (K, T, 3)")
    K, T, _ = v.shape
    with open(path, "wb") as f:
        f.write(MASK_MAGIC)
        f.write(struct.pack("<II", K, T))
        f.write(np.ascontiguousarray(v).tobytes())


def read_masks(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MASK_MAGIC:
        raise ValueError(f"{path}: not an MBMK mask file")
    K, T = struct.unpack_from("<II", data, 4)
    v = np.frombuffer(data, dtype="<f4", offset=12)
    if v.size != K * T * 3:
        raise ValueError(f"{path}: truncated mask payload")
    return v.reshape(K, T, 3).astype(np.float64)


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file. ``#`` starts a comment."""
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def write_config(path, cfg: dict) -> None:
    lines = [f"{k} = {v}" for k, v in cfg.items()]
    Path(path).write_text("\n".join(lines) + "\n")
