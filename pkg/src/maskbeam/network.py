"""Mask-estimation network: per-bin BLSTM -> dense -> dense -> full-band BLSTM
-> three softmax heads, evaluated at f32, Q2.6, Q2.2 or binary precision.

Tensor layout inside the network is time-major per utterance batch:
features ``(B, T, K, 2M)``; the final masks are returned as ``(B, K, T, 3)``.

Every layer except the heads is followed by tanh and batch normalization.
In fixed-point modes each intermediate is rounded and clipped to the format
(accumulation stays in float64). In binary mode weights and biases are signs,
gates are step functions and the cell output uses sign; recurrent products
are rescaled by a per-gate factor ``s``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .quant import BIN1, F32, PrecisionSpec, fake_quantize, precision, saturation_mask, sign
from .stft import ComplexSpectrogram

BN_EPS = 1e-5
CELL_CLIP = 8.0
FEATURE_EPS = 1e-12
GATES = 4  # input, forget, output, candidate
LSTM_LAYERS = ("l1.fwd", "l1.bwd", "l4.fwd", "l4.bwd")
BN_LAYERS = ("bn1", "bn2", "bn3", "bn4")


class PrecisionMismatchError(ValueError):
    pass


@dataclass
class MaskNetParams:
    arrays: dict
    bn_state: dict
    precision: PrecisionSpec = F32
    num_bins: int = 0
    num_mics: int = 0

    def copy(self):
        return copy.deepcopy(self)


def is_quantized_param(name: str) -> bool:
    """Weights and biases are quantized; scales and batch-norm affine stay f32."""
    return not (name.endswith(".s") or name.startswith("bn"))


def init_params(num_bins: int, num_mics: int, seed=0, prec=F32) -> MaskNetParams:
    K, M = num_bins, num_mics
    rng = np.random.default_rng(seed)

    def uni(shape, fan):
        lim = 1.0 / np.sqrt(fan)
        return rng.uniform(-lim, lim, shape)

    a = {}
    for d in ("fwd", "bwd"):
        a[f"l1.{d}.W_x"] = uni((K, GATES, M, 2 * M), M)
        a[f"l1.{d}.W_h"] = uni((K, GATES, M, M), M)
        a[f"l1.{d}.b"] = uni((K, GATES, M), M)
        a[f"l1.{d}.s"] = np.full((K, GATES), 1.0 / np.sqrt(M))
    a["l2.W"] = uni((K, 2, M), M)
    a["l2.b"] = uni((K, 2), M)
    a["l3.W"] = uni((K, 2 * K), 2 * K)
    a["l3.b"] = uni((K,), 2 * K)
    for d in ("fwd", "bwd"):
        a[f"l4.{d}.W_x"] = uni((1, GATES, K, K), K)
        a[f"l4.{d}.W_h"] = uni((1, GATES, K, K), K)
        a[f"l4.{d}.b"] = uni((1, GATES, K), K)
        a[f"l4.{d}.s"] = np.full((1, GATES), 1.0 / np.sqrt(K))
    a["head.W"] = uni((3, K, 2 * K), 2 * K)
    a["head.b"] = uni((3, K), 2 * K)
    a["head.s"] = np.full(3, 1.0 / np.sqrt(2 * K))
    bn = {}
    for name, n in zip(BN_LAYERS, (2 * M * K, 2 * K, K, 2 * K)):
        a[f"{name}.gamma"] = np.ones(n)
        a[f"{name}.beta"] = np.zeros(n)
        bn[f"{name}.mean"] = np.zeros(n)
        bn[f"{name}.var"] = np.ones(n)
    return MaskNetParams(a, bn, precision(prec), K, M)


def quantized_arrays(arrays: dict, spec: PrecisionSpec) -> dict:
    return {k: (fake_quantize(v, spec) if is_quantized_param(k) else np.array(v, dtype=np.float64))
            for k, v in arrays.items()}


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def extract_features(Z) -> np.ndarray:
    """Norm- and reference-phase-normalized observations, (T, K, 2M).

    Per bin: Zbar = Z / max(|Z|, eps) * exp(-j arg Z_1); features are
    [Re Zbar_1..M, Im Zbar_1..M].
    """
    z = Z.data if isinstance(Z, ComplexSpectrogram) else np.asarray(Z)
    norm = np.linalg.norm(z, axis=0)
    zbar = z / np.maximum(norm, FEATURE_EPS)[None] * np.exp(-1j * np.angle(z[0]))[None]
    feat = np.concatenate([zbar.real, zbar.imag], axis=0)   # (2M, K, T)
    feat[z.shape[0]] = 0.0                                  # Im of the reference is exactly 0
    return np.ascontiguousarray(np.transpose(feat, (2, 1, 0)))


# ---------------------------------------------------------------------------
# Precision helpers
# ---------------------------------------------------------------------------

class _Act:
    """Activation rounding for one precision mode, with STE pass-through masks."""

    def __init__(self, spec: PrecisionSpec):
        self.spec = spec
        self.fixed = spec.is_fixed

    def __call__(self, x):
        if self.fixed:
            return fake_quantize(x, self.spec), saturation_mask(x, self.spec)
        return x, None

    def bn_out(self, x):
        if self.fixed:
            return self(x)
        if self.spec.kind == "bin1":
            m = np.abs(x) <= 2.0
            return np.clip(x, -2.0, 2.0), m
        return x, None


def _mul(g, m):
    return g if m is None else g * m


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# LSTM layer (grouped: G independent cells sharing nothing)
# ---------------------------------------------------------------------------

def lstm_forward(p, x, spec, reverse=False, binkernel=False, state=None):
    """Run a grouped LSTM over time.

    p: dict with W_x (G,4,H,D), W_h (G,4,H,H), b (G,4,H), s (G,4);
    x: (B, T, G, D). Returns h (B, T, G, H) and a cache for backward.
    """
    act = _Act(spec)
    Wx, Wh, b, s = p["W_x"], p["W_h"], p["b"], p["s"]
    binary = spec.kind == "bin1"
    if binary:
        Wx, Wh, b = sign(Wx), sign(Wh), sign(b)
    B, T, G, D = x.shape
    H = Wh.shape[-1]
    zx, m_zx = act(np.einsum("gahd,btgd->btgah", Wx, x))
    packed = None
    if binkernel and binary and G == 1:
        from .quant import pack_bits
        packed = pack_bits(Wh[0].reshape(GATES * H, H))

    if state is None:
        h, c = np.zeros((B, G, H)), np.zeros((B, G, H))
    else:
        h, c = (np.broadcast_to(np.asarray(v, dtype=np.float64), (B, G, H)) for v in state)
    out = np.empty((B, T, G, H))
    steps = []
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        if binary:
            zh_raw = _binary_recurrent(packed, h) if packed is not None else \
                np.einsum("gahj,bgj->bgah", Wh, h)
            zh, m_zh = zh_raw * s[None, :, :, None], None
        else:
            zh_raw = None
            zh, m_zh = act(np.einsum("gahj,bgj->bgah", Wh, h))
        pre, m_pre = act(zx[:, t] + zh + b[None])
        st = {"h_prev": h, "c_prev": c, "pre": pre, "zh_raw": zh_raw, "m_zh": m_zh, "m_pre": m_pre}
        if binary:
            gi, gf, go = ((pre[:, :, k] >= 0).astype(np.float64) for k in range(3))
            gg = sign(pre[:, :, 3])
            c_raw = gf * c + gi * gg
            c_new = np.clip(c_raw, -CELL_CLIP, CELL_CLIP)
            tc = sign(c_new)
            h_new = go * tc
            st.update(i=gi, f=gf, o=go, g=gg, c=c_new, tc=tc, m_c=np.abs(c_raw) <= CELL_CLIP)
        else:
            gi, m_i = act(_sigmoid(pre[:, :, 0]))
            gf, m_f = act(_sigmoid(pre[:, :, 1]))
            go, m_o = act(_sigmoid(pre[:, :, 2]))
            gg, m_g = act(np.tanh(pre[:, :, 3]))
            fc, m_fc = act(gf * c)
            ig, m_ig = act(gi * gg)
            c_raw, m_c = act(fc + ig)
            m_clip = np.abs(c_raw) <= CELL_CLIP
            c_new = np.clip(c_raw, -CELL_CLIP, CELL_CLIP)
            tc, m_tc = act(np.tanh(c_new))
            h_new, m_h = act(go * tc)
            st.update(i=gi, f=gf, o=go, g=gg, c=c_new, tc=tc, m_i=m_i, m_f=m_f, m_o=m_o, m_g=m_g,
                      m_fc=m_fc, m_ig=m_ig, m_c=m_clip if m_c is None else m_c & m_clip,
                      m_tc=m_tc, m_h=m_h)
        h, c = h_new, c_new
        out[:, t] = h
        steps.append(st)
    cache = {"x": x, "Wx": Wx, "Wh": Wh, "s": s, "m_zx": m_zx, "steps": steps,
             "reverse": reverse, "binary": binary, "T": T, "c_last": c}
    return out, cache


def _binary_recurrent(packed, h):
    """W_h h for ternary h in {-1, 0, 1} via two xnor-popcount products.

    h = (u + v) / 2 with u, v in {-1, +1}: u = v = h where h != 0, u = 1, v = -1 where h = 0.
    """
    from .binkernel import binary_matmul
    from .quant import pack_bits

    B, G, H = h.shape
    hb = h[:, 0]
    u = np.where(hb == 0, 1.0, hb)
    v = np.where(hb == 0, -1.0, hb)
    acc = binary_matmul(pack_bits(u), packed) + binary_matmul(pack_bits(v), packed)
    return (acc / 2.0).reshape(B, 1, GATES, H)


def lstm_backward(cache, dout):
    """BPTT through a grouped LSTM. Returns (dx, grads for W_x, W_h, b, s)."""
    x, Wx, Wh, s = cache["x"], cache["Wx"], cache["Wh"], cache["s"]
    binary = cache["binary"]
    steps = cache["steps"]
    B, T, G, D = x.shape
    H = Wh.shape[-1]
    dWh = np.zeros_like(Wh)
    db = np.zeros((G, GATES, H))
    ds = np.zeros_like(s)
    dzx = np.zeros((B, T, G, GATES, H))
    dh_next = np.zeros((B, G, H))
    dc_next = np.zeros((B, G, H))
    order = list(range(T - 1, -1, -1)) if cache["reverse"] else list(range(T))
    for idx in range(len(steps) - 1, -1, -1):
        t = order[idx]
        st = steps[idx]
        dh = dout[:, t] + dh_next
        dpre = np.empty((B, G, GATES, H))
        pre = st["pre"]
        if binary:
            do = dh * st["tc"]
            dtc = dh * st["o"]
            dc = (dc_next + dtc * (np.abs(st["c"]) <= 1.0)) * st["m_c"]
            df = dc * st["c_prev"]
            dc_prev = dc * st["f"]
            di = dc * st["g"]
            dg = dc * st["i"]
            gate = 0.5 * (np.abs(pre[:, :, :3]) <= 1.0)
            dpre[:, :, 0] = di * gate[:, :, 0]
            dpre[:, :, 1] = df * gate[:, :, 1]
            dpre[:, :, 2] = do * gate[:, :, 2]
            dpre[:, :, 3] = dg * (np.abs(pre[:, :, 3]) <= 1.0)
            ds += np.einsum("bgah,bgah->ga", dpre, st["zh_raw"])
            dzh = dpre * s[None, :, :, None]
        else:
            dh = _mul(dh, st["m_h"])
            do = dh * st["tc"]
            dtc = _mul(dh * st["o"], st["m_tc"])
            dc = (dc_next + dtc * (1.0 - np.tanh(st["c"]) ** 2)) * st["m_c"]
            dfc = _mul(dc, st["m_fc"])
            dig = _mul(dc, st["m_ig"])
            df = dfc * st["c_prev"]
            dc_prev = dfc * st["f"]
            di = dig * st["g"]
            dg = dig * st["i"]
            sg = _sigmoid(pre[:, :, :3])
            dpre[:, :, 0] = _mul(di, st["m_i"]) * sg[:, :, 0] * (1 - sg[:, :, 0])
            dpre[:, :, 1] = _mul(df, st["m_f"]) * sg[:, :, 1] * (1 - sg[:, :, 1])
            dpre[:, :, 2] = _mul(do, st["m_o"]) * sg[:, :, 2] * (1 - sg[:, :, 2])
            dpre[:, :, 3] = _mul(dg, st["m_g"]) * (1 - np.tanh(pre[:, :, 3]) ** 2)
            dpre = _mul(dpre, st["m_pre"])
            dzh = _mul(dpre, st["m_zh"])
        dzx[:, t] = dpre
        db += dpre.sum(axis=0)
        dWh += np.einsum("bgah,bgj->gahj", dzh, st["h_prev"])
        dh_next = np.einsum("gahj,bgah->bgj", Wh, dzh)
        dc_next = dc_prev
    dzx = _mul(dzx, cache["m_zx"])
    dWx = np.einsum("btgah,btgd->gahd", dzx, x)
    dx = np.einsum("gahd,btgah->btgd", Wx, dzx)
    return dx, {"W_x": dWx, "W_h": dWh, "b": db, "s": ds}


def lstm_cell_forward(p, x, state, spec=F32):
    """One time step of a single LSTM cell.

    p holds W_x (4,H,D), W_h (4,H,H), b (4,H), s (4,); x is (D,) and state
    is (h, c). Returns (h, (h, c)).
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)):
        raise ValueError("NaN in LSTM input")
    pp = {k: np.asarray(v, dtype=np.float64)[None] for k, v in p.items()}
    h, c = (np.asarray(v, dtype=np.float64) for v in state)
    out, cache = lstm_forward(pp, x[None, None, None], precision(spec), state=(h, c))
    return out[0, 0, 0], (out[0, 0, 0], cache["c_last"][0, 0])


# ---------------------------------------------------------------------------
# Batch norm, dense and head layers
# ---------------------------------------------------------------------------

def bn_forward(x, gamma, beta, state, name, training, momentum):
    """Batch norm over all axes but the last."""
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        state[f"{name}.mean"] = momentum * state[f"{name}.mean"] + (1 - momentum) * mu
        state[f"{name}.var"] = momentum * state[f"{name}.var"] + (1 - momentum) * var
    else:
        mu, var = state[f"{name}.mean"], state[f"{name}.var"]
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv, gamma, training)


def bn_backward(cache, dy):
    xhat, inv, gamma, training = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = np.sum(dy * xhat, axis=axes)
    dbeta = np.sum(dy, axis=axes)
    dxhat = dy * gamma
    if not training:
        return dxhat * inv, dgamma, dbeta
    N = np.prod([dy.shape[a] for a in axes])
    dx = inv / N * (N * dxhat - dxhat.sum(axis=axes) - xhat * np.sum(dxhat * xhat, axis=axes))
    return dx, dgamma, dbeta


def _post(a, params, name, act, bn_state, training, momentum, caches):
    """tanh -> batch norm -> activation clip, caching what backward needs."""
    th = np.tanh(a)
    t, m_t = act(th)
    shape = t.shape
    flat = t.reshape(shape[0], shape[1], -1)
    y, c_bn = bn_forward(flat, params[f"{name}.gamma"], params[f"{name}.beta"], bn_state, name,
                         training, momentum)
    y, m_y = act.bn_out(y)
    caches[name] = (th, m_t, c_bn, m_y, shape)
    return y.reshape(shape)


def _post_backward(cache, dy):
    th, m_t, c_bn, m_y, shape = cache
    dy = _mul(dy.reshape(shape[0], shape[1], -1), m_y)
    dflat, dgamma, dbeta = bn_backward(c_bn, dy)
    dt = _mul(dflat.reshape(shape), m_t)
    return dt * (1 - th ** 2), dgamma, dbeta


def _layer_params(arr, prefix):
    return {k: arr[f"{prefix}.{k}"] for k in ("W_x", "W_h", "b", "s")}


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def forward(params: MaskNetParams, X, training=False, momentum=0.99, binkernel=False):
    """Full network on features X (B, T, K, 2M). Returns probs (B, K, T, 3), cache."""
    spec = params.precision
    arr = params.arrays
    act = _Act(spec)
    binary = spec.kind == "bin1"
    if binary:
        W = {k: (sign(v) if is_quantized_param(k) else v) for k, v in arr.items()}
    elif spec.is_fixed:
        W = quantized_arrays(arr, spec)
    else:
        W = arr
    X = np.asarray(X, dtype=np.float64)
    B, T, K, D2 = X.shape
    M = D2 // 2
    caches = {}
    x0, m_x0 = act(X)

    # layer 1: K independent bidirectional cells, hidden M per direction
    hf, caches["l1.fwd"] = lstm_forward(_layer_params(W, "l1.fwd"), x0, spec)
    hb, caches["l1.bwd"] = lstm_forward(_layer_params(W, "l1.bwd"), x0, spec, reverse=True)
    o1 = _post(np.concatenate([hf, hb], axis=-1), W, "bn1", act, params.bn_state, training,
               momentum, caches)                                          # (B,T,K,2M)

    # layer 2: per-bin, per-direction dense M -> 1
    o1r = o1.reshape(B, T, K, 2, M)
    y2, m_y2 = act(np.einsum("kdh,btkdh->btkd", W["l2.W"], o1r) + W["l2.b"])
    o2 = _post(y2.reshape(B, T, 2 * K), W, "bn2", act, params.bn_state, training, momentum,
               caches)

    # layer 3: dense 2K -> K
    y3, m_y3 = act(o2 @ W["l3.W"].T + W["l3.b"])
    o3 = _post(y3, W, "bn3", act, params.bn_state, training, momentum, caches)

    # layer 4: full-band bidirectional LSTM, hidden K per direction
    x4 = o3[:, :, None, :]
    gf, caches["l4.fwd"] = lstm_forward(_layer_params(W, "l4.fwd"), x4, spec, binkernel=binkernel)
    gb, caches["l4.bwd"] = lstm_forward(_layer_params(W, "l4.bwd"), x4, spec, reverse=True,
                                        binkernel=binkernel)
    o4 = _post(np.concatenate([gf[:, :, 0], gb[:, :, 0]], axis=-1), W, "bn4", act,
               params.bn_state, training, momentum, caches)               # (B,T,2K)

    # heads
    raw = np.einsum("ckj,btj->btkc", W["head.W"], o4) + W["head.b"].T
    if binary:
        logits, m_lg = raw * W["head.s"], None
    else:
        logits, m_lg = act(raw)
    probs = softmax(logits, axis=-1)
    cache = {"W": W, "spec": spec, "X": X, "m_x0": m_x0, "o1": o1, "o2": o2, "o3": o3, "o4": o4,
             "m_y2": m_y2, "m_y3": m_y3, "raw": raw, "m_lg": m_lg, "probs": probs,
             "layers": caches, "shape": (B, T, K, M)}
    return np.transpose(probs, (0, 2, 1, 3)), cache


def backward(cache, dprobs):
    """Gradients w.r.t. the effective (quantized) parameters.

    ``dprobs`` is dL/dprobs in the (B, K, T, 3) output layout.
    """
    W, spec = cache["W"], cache["spec"]
    B, T, K, M = cache["shape"]
    L = cache["layers"]
    binary = spec.kind == "bin1"
    g = {}
    p = cache["probs"]
    dp = np.transpose(dprobs, (0, 2, 1, 3))
    dlogits = p * (dp - np.sum(p * dp, axis=-1, keepdims=True))
    if binary:
        g["head.s"] = np.einsum("btkc,btkc->c", dlogits, cache["raw"])
        draw = dlogits * W["head.s"]
    else:
        draw = _mul(dlogits, cache["m_lg"])
    g["head.W"] = np.einsum("btkc,btj->ckj", draw, cache["o4"])
    g["head.b"] = draw.sum(axis=(0, 1)).T
    do4 = np.einsum("ckj,btkc->btj", W["head.W"], draw)

    da4, g["bn4.gamma"], g["bn4.beta"] = _post_backward(L["bn4"], do4)
    dx4 = np.zeros((B, T, 1, K))
    for d, sl in (("fwd", slice(0, K)), ("bwd", slice(K, 2 * K))):
        dxx, gl = lstm_backward(L[f"l4.{d}"], da4[:, :, None, sl])
        dx4 += dxx
        for k, v in gl.items():
            g[f"l4.{d}.{k}"] = v
    do3 = dx4[:, :, 0]

    dy3, g["bn3.gamma"], g["bn3.beta"] = _post_backward(L["bn3"], do3)
    dy3 = _mul(dy3, cache["m_y3"])
    g["l3.W"] = np.einsum("btk,btj->kj", dy3, cache["o2"])
    g["l3.b"] = dy3.sum(axis=(0, 1))
    do2 = dy3 @ W["l3.W"]

    dy2, g["bn2.gamma"], g["bn2.beta"] = _post_backward(L["bn2"], do2)
    dy2 = _mul(dy2.reshape(B, T, K, 2), cache["m_y2"])
    o1r = cache["o1"].reshape(B, T, K, 2, M)
    g["l2.W"] = np.einsum("btkd,btkdh->kdh", dy2, o1r)
    g["l2.b"] = dy2.sum(axis=(0, 1))
    do1 = np.einsum("kdh,btkd->btkdh", W["l2.W"], dy2).reshape(B, T, K, 2 * M)

    da1, g["bn1.gamma"], g["bn1.beta"] = _post_backward(L["bn1"], do1)
    for d, sl in (("fwd", slice(0, M)), ("bwd", slice(M, 2 * M))):
        _, gl = lstm_backward(L[f"l1.{d}"], da1[..., sl])
        for k, v in gl.items():
            g[f"l1.{d}.{k}"] = v
    if not binary:
        # the scales only act in binary mode
        for name in LSTM_LAYERS + ("head",):
            g[f"{name}.s"] = np.zeros_like(W[f"{name}.s"])
    return g


def mask_net_forward(params: MaskNetParams, features, prec=None, binkernel=None):
    """Inference: features (T, K, 2M) or (B, T, K, 2M) -> masks (K, T, 3) / (B, K, T, 3).

    ``prec`` is the precision the caller expects; a parameter set stored at a
    different precision is rejected.
    """
    if prec is not None and precision(prec) != params.precision:
        raise PrecisionMismatchError(
            f"precision mismatch: parameters are {params.precision}, requested {precision(prec)}")
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 3
    if single:
        X = X[None]
    if X.shape[2] != params.num_bins or X.shape[3] != 2 * params.num_mics:
        raise ValueError("feature shape does not match the network")
    if binkernel is None:
        binkernel = params.precision == BIN1
    probs, _ = forward(params, X, training=False, binkernel=binkernel)
    return probs[0] if single else probs


# ---------------------------------------------------------------------------
# Complexity
# ---------------------------------------------------------------------------

def _printed(mac):
    """Round like the published tables: whole 1e6 units, 0.1e6 below one million."""
    return round(mac / 1e6) * 1e6 if mac >= 1e6 else round(mac / 1e5) * 1e5


@dataclass
class ComplexityReport:
    M: int
    K: int
    T: int
    layers: list = field(default_factory=list)
    beamformer: dict = field(default_factory=dict)

    @property
    def total_weights(self) -> int:
        return sum(r["weights"] for r in self.layers)

    @property
    def total_mac(self) -> int:
        return sum(r["mac"] for r in self.layers)

    @property
    def total_mac_printed(self) -> float:
        return sum(r["mac_printed"] for r in self.layers)

    def format(self) -> str:
        lines = [f"Mask estimator (M={self.M}, K={self.K}, T={self.T})",
                 f"{'layer':<12}{'shape':<18}{'weights':>12}{'MAC':>16}{'printed':>12}"]
        for r in self.layers:
            lines.append(f"{r['layer']:<12}{r['shape']:<18}{r['weights']:>12d}{r['mac']:>16d}"
                         f"{r['mac_printed'] / 1e6:>10.4g}e6")
        lines.append(f"{'Total':<30}{self.total_weights:>12d}{self.total_mac:>16d}"
                     f"{self.total_mac_printed / 1e6:>10.4g}e6")
        lines.append("GEV beamformer")
        for mode, rows in self.beamformer.items():
            for r in rows["rows"]:
                lines.append(f"{mode:<8}{r['stage']:<8}{r['complexity']:<16}{r['mac']:>14d}"
                             f"{r['mac_printed'] / 1e6:>10.4g}e6")
            lines.append(f"{mode:<8}{'Total':<24}{rows['mac']:>14d}"
                         f"{rows['mac_printed'] / 1e6:>10.4g}e6")
        return "\n".join(lines)


def complexity_report(M: int, K: int, T: int) -> ComplexityReport:
    """Per-layer weight and multiply-accumulate counts of the mask network and
    of static / dynamic GEV beamforming, from the symbolic layer shapes."""
    if min(M, K, T) <= 0:
        raise ValueError("dimensions must be positive")
    shapes = [("BLSTM", "16xKx2MxM", 16 * K * 2 * M * M),
              ("Dense", "KxMx2", K * M * 2),
              ("Dense", "2KxK", 2 * K * K),
              ("BLSTM", "16xKx2K", 16 * K * 2 * K),
              ("Dense", "3x2KxK", 3 * 2 * K * K)]
    rep = ComplexityReport(M, K, T)
    for name, shape, w in shapes:
        rep.layers.append({"layer": name, "shape": shape, "weights": w, "mac": w * T,
                           "mac_printed": _printed(w * T)})
    psd = T * 2 * K * M * M
    for mode, evd in (("static", K * M ** 3), ("dynamic", T * K * M ** 3)):
        rows = [{"stage": "psd", "complexity": "T*2*K*M^2", "mac": psd, "mac_printed": _printed(psd)},
                {"stage": "gevd", "complexity": "K*M^3" if mode == "static" else "T*K*M^3",
                 "mac": evd, "mac_printed": _printed(evd)}]
        rep.beamformer[mode] = {"rows": rows, "mac": psd + evd,
                                "mac_printed": sum(r["mac_printed"] for r in rows)}
    return rep
