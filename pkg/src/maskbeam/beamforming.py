"""Mask-driven spatial PSD estimation, MVDR / GEV beamformers and postfilters.

Array conventions: PSD stacks are ``(..., M, M)``, weight stacks ``(..., M)``.
A spectrogram tensor ``Z`` is ``(M, K, T)``; per-bin masks are ``(K, T)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .linalg import (SingularMatrixError, cho_solve, cholesky, eigh_jacobi, fix_phase,
                     generalized_eigh_max)
from .stft import ComplexSpectrogram

log = logging.getLogger(__name__)

DEFAULT_LOADING = 1e-6
DEFAULT_BLOCK = 32
BEAMFORMERS = ("mvdr", "gev-ban", "gev-pan")
PSD_MODES = ("block", "recursive", "oja")


class DegeneratePSDError(ValueError):
    pass


@dataclass
class PsdPair:
    phi_ss: np.ndarray
    phi_nn: np.ndarray
    frame: int = -1


@dataclass
class BeamformerWeights:
    w: np.ndarray
    kind: str
    postfilter_gain: np.ndarray | None = None


@dataclass
class OjaState:
    """Unnormalized tracked vector ``w_prime`` and its normalized copy ``w``.

    ``alpha=None`` selects the default per-bin step size (see ``oja_step``).
    """

    w_prime: np.ndarray
    w: np.ndarray
    alpha: float | np.ndarray | None = None

    @classmethod
    def initial(cls, shape, num_mics, alpha=None):
        w = np.full(tuple(shape) + (num_mics,), 1.0 / np.sqrt(num_mics), dtype=np.complex128)
        return cls(w.copy(), w, alpha)


def _zdata(Z):
    return Z.data if isinstance(Z, ComplexSpectrogram) else np.asarray(Z)


def _herm(v):
    return np.conj(np.swapaxes(v, -1, -2))


# ---------------------------------------------------------------------------
# PSD estimation
# ---------------------------------------------------------------------------

def _window(t, L, T):
    if L < 1:
        raise ValueError("window length L must be >= 1")
    lo = t - L // 2
    return max(lo, 0), min(lo + L, T)


def psd_block(Z, mask, t: int, L: int = DEFAULT_BLOCK):
    """Masked PSD per bin from the L frames around t (clipped to the utterance).

    The sum is always divided by L, also where the window is clipped.
    """
    z = _zdata(Z)
    mask = np.asarray(mask, dtype=np.float64)
    lo, hi = _window(t, L, z.shape[2])
    zs = z[:, :, lo:hi]
    return np.einsum("ikt,jkt,kt->kij", zs, np.conj(zs), mask[:, lo:hi]) / L


def psd_block_all(Z, mask, L: int = DEFAULT_BLOCK):
    """``psd_block`` for every frame at once: returns (K, T, M, M)."""
    z = _zdata(Z)
    mask = np.asarray(mask, dtype=np.float64)
    M, K, T = z.shape
    if L < 1:
        raise ValueError("window length L must be >= 1")
    outer = np.einsum("ikt,jkt,kt->ktij", z, np.conj(z), mask)
    csum = np.zeros((K, T + 1, M, M), dtype=np.complex128)
    np.cumsum(outer, axis=1, out=csum[:, 1:])
    t = np.arange(T)
    lo = np.clip(t - L // 2, 0, T)
    hi = np.clip(t - L // 2 + L, 0, T)
    phi = (csum[:, hi] - csum[:, lo]) / L
    return 0.5 * (phi + _herm(phi))


def psd_recursive(phi_prev, z_t, p_t):
    """One recursive update: phi_prev * (1 - p) + z z^H * p (batched over bins)."""
    z_t = np.asarray(z_t)
    p = np.asarray(p_t, dtype=np.float64)[..., None, None]
    return np.asarray(phi_prev) * (1.0 - p) + np.einsum("...i,...j->...ij", z_t, np.conj(z_t)) * p


def psd_recursive_all(Z, mask, L: int = DEFAULT_BLOCK):
    """Run the recursion over all frames, initialized by a block estimate at t=0."""
    z = _zdata(Z)
    mask = np.asarray(mask, dtype=np.float64)
    M, K, T = z.shape
    out = np.empty((K, T, M, M), dtype=np.complex128)
    phi = psd_block(z, mask, 0, L)
    for t in range(T):
        phi = psd_recursive(phi, z[:, :, t].T, mask[:, t])
        out[:, t] = phi
    return out


def diagonal_loading(phi, delta: float = DEFAULT_LOADING, floor: float = 0.0):
    phi = np.asarray(phi)
    M = phi.shape[-1]
    tr = np.real(np.trace(phi, axis1=-2, axis2=-1))
    return phi + ((delta * tr / M + floor)[..., None, None]) * np.eye(M)


# ---------------------------------------------------------------------------
# Beamformers
# ---------------------------------------------------------------------------

def steering_vector(phi_ss):
    """Dominant eigenvector of phi_ss with unit norm and fixed phase."""
    phi_ss = np.asarray(phi_ss)
    if np.any(np.max(np.abs(phi_ss), axis=(-1, -2)) == 0):
        raise DegeneratePSDError("degenerate PSD: zero matrix has no steering vector")
    _, V = eigh_jacobi(phi_ss)
    return fix_phase(V[..., :, -1])


def _factor(phi_nn, loading):
    try:
        return cholesky(diagonal_loading(phi_nn, loading))
    except SingularMatrixError as exc:
        raise SingularMatrixError("singular noise PSD after diagonal loading") from exc


def mvdr_weights(phi_nn, v_s, loading: float = DEFAULT_LOADING):
    """W = phi_nn^-1 v / (v^H phi_nn^-1 v)."""
    v = np.asarray(v_s, dtype=np.complex128)
    x = cho_solve(_factor(phi_nn, loading), v)
    denom = np.einsum("...i,...i->...", np.conj(v), x)
    return x / denom[..., None]


def gev_weights(phi_ss, phi_nn, loading: float = DEFAULT_LOADING):
    """Maximum-SNR weights: returns (W, xi) with unit-norm W and its SNR xi."""
    phi_nn_l = diagonal_loading(phi_nn, loading)
    try:
        xi, w = generalized_eigh_max(np.asarray(phi_ss, dtype=np.complex128), phi_nn_l)
    except SingularMatrixError as exc:
        raise SingularMatrixError("singular noise PSD after diagonal loading") from exc
    return fix_phase(w), xi


def rayleigh_quotient(w, phi_ss, phi_nn):
    num = np.einsum("...i,...ij,...j->...", np.conj(w), phi_ss, w).real
    den = np.einsum("...i,...ij,...j->...", np.conj(w), phi_nn, w).real
    return num / den


def default_oja_rate(phi_nn):
    tr = np.real(np.trace(phi_nn, axis1=-2, axis2=-1))
    return np.where(tr > 0, 1.0 / np.where(tr > 0, tr, 1.0), 0.0)


def _renormalize(state, w_prime, tiny=1e-300):
    norm = np.linalg.norm(w_prime, axis=-1, keepdims=True)
    bad = norm[..., 0] <= tiny
    if np.any(bad):
        log.warning("Oja update underflowed in %d bins; keeping previous weights", int(bad.sum()))
        w_prime = np.where(bad[..., None], state.w_prime, w_prime)
        norm = np.linalg.norm(w_prime, axis=-1, keepdims=True)
    return OjaState(w_prime, w_prime / norm, state.alpha)


def oja_step(state: OjaState, phi_ss, phi_nn) -> OjaState:
    """Generalized eigenvector tracking step.

    W' <- W' - a * phi_nn W' + a * phi_ss W, then W = W' / |W'|, where W is
    the previous normalized vector. Default rate: a = 1 / tr(phi_nn) per bin.
    """
    alpha = default_oja_rate(phi_nn) if state.alpha is None else state.alpha
    if np.any(np.asarray(alpha) < 0):
        raise ValueError("Oja step size must be non-negative")
    a = np.asarray(alpha, dtype=np.float64)[..., None] if np.ndim(alpha) else alpha
    wp = (state.w_prime
          - a * np.einsum("...ij,...j->...i", phi_nn, state.w_prime)
          + a * np.einsum("...ij,...j->...i", phi_ss, state.w))
    return _renormalize(state, wp)


def oja_step_ev(state: OjaState, phi_ss) -> OjaState:
    """Dominant-eigenvector tracking: W' <- W' + a (phi_ss W - W'). Default a = 0.5."""
    alpha = 0.5 if state.alpha is None else state.alpha
    a = np.asarray(alpha, dtype=np.float64)[..., None] if np.ndim(alpha) else alpha
    wp = state.w_prime + a * (np.einsum("...ij,...j->...i", phi_ss, state.w) - state.w_prime)
    return _renormalize(state, wp)


# ---------------------------------------------------------------------------
# Postfilters and filter-and-sum
# ---------------------------------------------------------------------------

def postfilter_ban(w, phi_nn):
    """Blind analytic normalization gain sqrt(W^H P P W / M) / (W^H P W)."""
    w = np.asarray(w)
    M = w.shape[-1]
    pw = np.einsum("...ij,...j->...i", phi_nn, w)
    num = np.sqrt(np.abs(np.einsum("...i,...i->...", np.conj(pw), pw)) / M)
    den = np.einsum("...i,...i->...", np.conj(w), pw).real
    return num / np.where(den > 0, den, np.inf)


def postfilter_pan(w, Z):
    """Power-average normalization: matches the mean per-mic input power per bin.

    ``w`` is (K, M) or (K, T, M); the averages run over frames.
    """
    z = _zdata(Z)
    M = z.shape[0]
    zin = np.mean(np.sum(np.abs(z) ** 2, axis=0), axis=-1)       # (K,)
    y = _apply(w, z)
    yout = np.mean(np.abs(y) ** 2, axis=-1)                      # (K,)
    ratio = zin / (M * np.where(yout > 0, yout, np.inf))
    return np.sqrt(ratio)


def _apply(w, z):
    w = np.asarray(w)
    if w.ndim == 2:
        return np.einsum("ki,ikt->kt", np.conj(w), z)
    return np.einsum("kti,ikt->kt", np.conj(w), z)


def filter_and_sum(w, Z, gain=None):
    """Y(k,t) = W^H Z(k,t), optionally times a (K,) or (K,T) postfilter gain."""
    z = _zdata(Z)
    y = _apply(w, z)
    if gain is not None:
        g = np.asarray(gain)
        y = y * (g[:, None] if g.ndim == 1 else g)
    if isinstance(Z, ComplexSpectrogram):
        return ComplexSpectrogram(y[None], Z.config)
    return y[None]


# ---------------------------------------------------------------------------
# Mask-to-output pipeline
# ---------------------------------------------------------------------------

def estimate_psds(Z, speech_mask, noise_mask, mode="block", L=DEFAULT_BLOCK):
    if mode in ("block", "oja"):
        return psd_block_all(Z, speech_mask, L), psd_block_all(Z, noise_mask, L)
    if mode == "recursive":
        return psd_recursive_all(Z, speech_mask, L), psd_recursive_all(Z, noise_mask, L)
    raise ValueError(f"unknown psd mode {mode!r}")


def beamform(Z, masks, beamformer="gev-ban", psd="block", L=DEFAULT_BLOCK, alpha=None):
    """Run the full mask -> PSD -> weights -> output chain.

    ``masks`` is a (K, T, 3) tensor (speech, interference, weak). Weights are
    recomputed for every frame. Returns ``(Y, BeamformerWeights)``.
    """
    if beamformer not in BEAMFORMERS:
        raise ValueError(f"unknown beamformer {beamformer!r}")
    z = _zdata(Z)
    m = np.asarray(getattr(masks, "values", masks))
    phi_ss, phi_nn = estimate_psds(z, m[..., 0], m[..., 1], psd, L)
    M, K, T = z.shape
    # absolute floor keeps bins without any interference frames invertible
    floor = 1e-10 * np.mean(np.real(np.trace(phi_nn, axis1=-2, axis2=-1))) / M + 1e-300
    phi_nn = diagonal_loading(phi_nn, 0.0, floor)

    if psd == "oja":
        w = np.empty((K, T, M), dtype=np.complex128)
        if beamformer == "mvdr":
            st = OjaState.initial((K,), M, alpha)
            for t in range(T):
                st = oja_step_ev(st, phi_ss[:, t])
                w[:, t] = mvdr_weights(phi_nn[:, t], fix_phase(st.w))
        else:
            st = OjaState.initial((K,), M, alpha)
            for t in range(T):
                st = oja_step(st, phi_ss[:, t], phi_nn[:, t])
                w[:, t] = fix_phase(st.w)
    elif beamformer == "mvdr":
        v = steering_vector(diagonal_loading(phi_ss, 0.0, floor))
        w = mvdr_weights(phi_nn, v)
    else:
        w, _ = gev_weights(phi_ss, phi_nn)

    gain = None
    if beamformer == "gev-ban":
        gain = postfilter_ban(w, phi_nn)
    elif beamformer == "gev-pan":
        gain = postfilter_pan(w, z)
    y = filter_and_sum(w, Z, gain)
    return y, BeamformerWeights(w, beamformer, gain)
