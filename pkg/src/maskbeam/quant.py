"""Precision formats, fixed-point quantizers, binarization and bit packing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binkernel import PackedBitMatrix


@dataclass(frozen=True)
class PrecisionSpec:
    kind: str
    bits: int
    tag: int
    step: float = 0.0

    @property
    def is_fixed(self) -> bool:
        return self.kind in ("q2_6", "q2_2")

    @property
    def lo(self) -> float:
        return -2.0 if self.is_fixed else -np.inf

    @property
    def hi(self) -> float:
        # largest representable value
        return 2.0 - self.step if self.is_fixed else np.inf

    @property
    def code_min(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def code_max(self) -> int:
        return (1 << (self.bits - 1)) - 1

    def __str__(self):
        return {"q2_6": "q2.6", "q2_2": "q2.2"}.get(self.kind, self.kind)


F32 = PrecisionSpec("f32", 32, 0)
Q2_6 = PrecisionSpec("q2_6", 8, 1, 2.0 ** -6)
Q2_2 = PrecisionSpec("q2_2", 4, 2, 2.0 ** -2)
BIN1 = PrecisionSpec("bin1", 1, 3)

PRECISIONS = {"f32": F32, "q2_6": Q2_6, "q2.6": Q2_6, "q2_2": Q2_2, "q2.2": Q2_2, "bin1": BIN1}
BY_TAG = {p.tag: p for p in (F32, Q2_6, Q2_2, BIN1)}


def precision(name) -> PrecisionSpec:
    if isinstance(name, PrecisionSpec):
        return name
    try:
        return PRECISIONS[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}") from None


@dataclass
class QuantTensor:
    shape: tuple
    precision: PrecisionSpec
    payload: object            # int codes, PackedBitMatrix or float32 array
    scale: np.ndarray | None = field(default=None)


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def sign(x):
    """Binarization with sign(0) = +1; the only sign convention used anywhere."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def fixed_codes(x, spec: PrecisionSpec):
    codes = round_half_away(np.asarray(x, dtype=np.float64) / spec.step)
    return np.clip(codes, spec.code_min, spec.code_max).astype(np.int64)


def fake_quantize(x, spec: PrecisionSpec):
    """Quantize and immediately decode: the value the forward pass computes with."""
    spec = precision(spec)
    if spec.kind == "f32":
        return np.asarray(x, dtype=np.float64)
    if spec.kind == "bin1":
        return sign(x)
    return fixed_codes(x, spec) * spec.step


def saturation_mask(x, spec: PrecisionSpec):
    """True where the fixed-point clamp did not saturate (STE pass-through)."""
    codes = round_half_away(np.asarray(x, dtype=np.float64) / spec.step)
    return (codes >= spec.code_min) & (codes <= spec.code_max)


def quantize(x, spec) -> QuantTensor:
    spec = precision(spec)
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "f32":
        return QuantTensor(x.shape, spec, x.astype(np.float32))
    if spec.kind == "bin1":
        return QuantTensor(x.shape, spec, pack_bits(sign(x).reshape(1, -1) if x.ndim < 2
                                                    else sign(x).reshape(-1, x.shape[-1])))
    return QuantTensor(x.shape, spec, fixed_codes(x, spec))


def dequantize(q: QuantTensor) -> np.ndarray:
    spec = q.precision
    if spec.kind == "f32":
        return np.asarray(q.payload, dtype=np.float64).reshape(q.shape)
    if spec.kind == "bin1":
        return unpack_bits(q.payload).reshape(q.shape)
    return np.asarray(q.payload, dtype=np.float64).reshape(q.shape) * spec.step


def pack_bits(signs, words_per_row: int | None = None) -> PackedBitMatrix:
    """Pack a +/-1 matrix row-major, LSB-first in 64-bit words; pads with 1 bits."""
    s = np.asarray(signs)
    if s.ndim == 1:
        s = s[None, :]
    rows, cols = s.shape
    need = -(-cols // 64)
    wpr = need if words_per_row is None else int(words_per_row)
    if wpr < need:
        raise ValueError("words_per_row too small")
    bits = np.ones((rows, wpr * 64), dtype=np.uint8)
    bits[:, :cols] = s >= 0
    packed = np.packbits(bits, axis=1, bitorder="little")
    words = packed.view("<u8").astype(np.uint64).reshape(rows, wpr)
    return PackedBitMatrix(rows, cols, wpr, words)


def unpack_bits(p: PackedBitMatrix) -> np.ndarray:
    raw = np.ascontiguousarray(p.payload.astype("<u8")).view(np.uint8).reshape(p.rows, -1)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :p.cols]
    return np.where(bits == 1, 1.0, -1.0)
