"""Binary weight file for the mask network.

Layout (little-endian): magic ``MBNW``, u16 version, u16 record count, then per
record: u8 name length, name, u8 precision tag, u8 rank, u32 dims, payload,
u8 aux count and aux vectors (u8 name length, name, u32 length, f32 data).

Payloads: f32 values; Q2.6 as int8 codes; Q2.2 as 4-bit codes two per byte,
low nibble first; bin1 as the flattened tensor packed LSB-first into u64 words.
Per-gate scales and batch-norm state travel as f32 aux vectors.
"""
from __future__ import annotations

import struct

import numpy as np

from .network import BN_LAYERS, LSTM_LAYERS, MaskNetParams, init_params, is_quantized_param
from .quant import BIN1, BY_TAG, Q2_6, fixed_codes, pack_bits, unpack_bits

MAGIC = b"MBNW"
VERSION = 1

# batch-norm state rides on the last record of the layer it follows
_BN_HOST = {"bn1": "l1.bwd.b", "bn2": "l2.b", "bn3": "l3.b", "bn4": "l4.bwd.b"}
_BN_FIELDS = ("gamma", "beta", "mean", "var")


class WeightFileError(ValueError):
    pass


def record_names(params: MaskNetParams) -> list:
    return [k for k in params.arrays if is_quantized_param(k)]


def encode_payload(x: np.ndarray, spec) -> bytes:
    if spec.kind == "f32":
        return np.asarray(x, dtype="<f4").tobytes()
    if spec.kind == "bin1":
        return pack_bits(np.asarray(x).reshape(1, -1)).payload.astype("<u8").tobytes()
    codes = fixed_codes(x, spec).reshape(-1)
    if spec == Q2_6:
        return codes.astype("<i1").tobytes()
    nib = (codes & 0xF).astype(np.uint8)
    if nib.size % 2:
        nib = np.append(nib, 0)
    return (nib[0::2] | (nib[1::2] << 4)).astype(np.uint8).tobytes()


def payload_size(n: int, spec) -> int:
    if spec.kind == "f32":
        return 4 * n
    if spec.kind == "bin1":
        return 8 * (-(-n // 64))
    return n if spec == Q2_6 else (n + 1) // 2


def decode_payload(buf: bytes, shape, spec) -> np.ndarray:
    n = int(np.prod(shape))
    if spec.kind == "f32":
        return np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)
    if spec.kind == "bin1":
        from .binkernel import PackedBitMatrix

        words = np.frombuffer(buf, dtype="<u8").astype(np.uint64).reshape(1, -1)
        return unpack_bits(PackedBitMatrix(1, n, words.shape[1], words)).reshape(shape)
    if spec == Q2_6:
        return np.frombuffer(buf, dtype="<i1").astype(np.float64).reshape(shape) * spec.step
    raw = np.frombuffer(buf, dtype=np.uint8)
    nib = np.empty(raw.size * 2, dtype=np.int64)
    nib[0::2] = raw & 0xF
    nib[1::2] = raw >> 4
    nib = nib[:n]
    nib = np.where(nib >= 8, nib - 16, nib)
    return nib.astype(np.float64).reshape(shape) * spec.step


def _aux_for(name: str, params: MaskNetParams) -> list:
    aux = []
    binary = params.precision == BIN1
    if binary and name.endswith(".W_h"):
        aux.append(("s", params.arrays[name[:-len("W_h")] + "s"]))
    if binary and name == "head.W":
        aux.append(("s", params.arrays["head.s"]))
    for bn, host in _BN_HOST.items():
        if host == name:
            aux.append(("gamma", params.arrays[f"{bn}.gamma"]))
            aux.append(("beta", params.arrays[f"{bn}.beta"]))
            aux.append(("mean", params.bn_state[f"{bn}.mean"]))
            aux.append(("var", params.bn_state[f"{bn}.var"]))
    return aux


def _name_bytes(name: str) -> bytes:
    b = name.encode("utf-8")
    return struct.pack("<B", len(b)) + b


def to_bytes(params: MaskNetParams) -> bytes:
    spec = params.precision
    names = record_names(params)
    out = [MAGIC, struct.pack("<HH", VERSION, len(names))]
    for name in names:
        x = params.arrays[name]
        out.append(_name_bytes(name))
        out.append(struct.pack("<BB", spec.tag, x.ndim))
        out.append(struct.pack(f"<{x.ndim}I", *x.shape))
        out.append(encode_payload(x, spec))
        aux = _aux_for(name, params)
        out.append(struct.pack("<B", len(aux)))
        for aname, vec in aux:
            vec = np.asarray(vec, dtype="<f4").reshape(-1)
            out.append(_name_bytes(aname) + struct.pack("<I", vec.size) + vec.tobytes())
    return b"".join(out)


def payload_bytes(params: MaskNetParams) -> int:
    """Bytes taken by the weight and bias payloads alone (no headers or aux)."""
    return sum(payload_size(params.arrays[n].size, params.precision) for n in record_names(params))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFileError("truncated weight file")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<B")
        return self.take(n).decode("utf-8")


def from_bytes(buf: bytes) -> MaskNetParams:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise WeightFileError("bad magic")
    version, count = r.unpack("<HH")
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    tensors, aux_of, tags = {}, {}, set()
    for _ in range(count):
        name = r.name()
        tag, rank = r.unpack("<BB")
        if tag not in BY_TAG:
            raise WeightFileError(f"unknown precision tag {tag}")
        spec = BY_TAG[tag]
        shape = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(shape))
        tensors[name] = decode_payload(r.take(payload_size(n, spec)), shape, spec)
        tags.add(tag)
        (naux,) = r.unpack("<B")
        aux = {}
        for _ in range(naux):
            aname = r.name()
            (length,) = r.unpack("<I")
            aux[aname] = np.frombuffer(r.take(4 * length), dtype="<f4").astype(np.float64)
        aux_of[name] = aux
    if r.pos != len(buf):
        raise WeightFileError("trailing bytes in weight file")
    if len(tags) != 1:
        raise WeightFileError("mixed precision tags")
    spec = BY_TAG[tags.pop()]
    try:
        K, _, M, _ = tensors["l1.fwd.W_x"].shape
    except KeyError:
        raise WeightFileError("missing l1.fwd.W_x record") from None
    params = init_params(K, M, prec=spec)
    for name in record_names(params):
        if name not in tensors:
            raise WeightFileError(f"missing record {name}")
        if tensors[name].shape != params.arrays[name].shape:
            raise WeightFileError(f"shape mismatch for {name}")
        params.arrays[name] = tensors[name]
    for layer in LSTM_LAYERS:
        s = aux_of[f"{layer}.W_h"].get("s")
        params.arrays[f"{layer}.s"] = (s.reshape(params.arrays[f"{layer}.s"].shape)
                                       if s is not None else np.ones_like(params.arrays[f"{layer}.s"]))
    s = aux_of["head.W"].get("s")
    params.arrays["head.s"] = s if s is not None else np.ones(3)
    for bn in BN_LAYERS:
        aux = aux_of[_BN_HOST[bn]]
        if any(f not in aux for f in _BN_FIELDS):
            raise WeightFileError(f"missing batch-norm state for {bn}")
        params.arrays[f"{bn}.gamma"] = aux["gamma"]
        params.arrays[f"{bn}.beta"] = aux["beta"]
        params.bn_state[f"{bn}.mean"] = aux["mean"]
        params.bn_state[f"{bn}.var"] = aux["var"]
    return params


def save_weights(path, params: MaskNetParams) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(params))


def load_weights(path) -> MaskNetParams:
    with open(path, "rb") as f:
        return from_bytes(f.read())

