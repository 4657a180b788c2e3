"""Quantization-aware training of the mask network.

Full-precision shadow parameters are updated by ADAM; the forward pass only
ever sees their quantized view. Gradients cross the quantizers with the
straight-through estimator: identity inside the representable range (|w| <= 1
for signs), zero where the quantizer saturates.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .network import MaskNetParams, backward, extract_features, forward, init_params, \
    is_quantized_param, quantized_arrays
from .quant import precision, saturation_mask
from .roomsim import ScenarioConfig, build_scenario
from .stft import StftConfig

log = logging.getLogger(__name__)

LOG_EPS = 1e-12


def cross_entropy(p_est, p_opt) -> float:
    """Mean over bins and frames of -sum_i p_opt log(p_est + 1e-12)."""
    pe = np.asarray(getattr(p_est, "values", p_est), dtype=np.float64)
    po = np.asarray(getattr(p_opt, "values", p_opt), dtype=np.float64)
    if pe.shape != po.shape:
        raise ValueError(f"shape mismatch: {pe.shape} vs {po.shape}")
    n = pe.size // pe.shape[-1]
    return float(-np.sum(po * np.log(pe + LOG_EPS)) / n)


def cross_entropy_grad(p_est, p_opt):
    n = p_est.size // p_est.shape[-1]
    return -p_opt / (p_est + LOG_EPS) / n


class ShadowParams:
    """Full-precision parameters plus the quantized view the network runs on."""

    def __init__(self, params: MaskNetParams):
        self.shadow = params.copy()
        self.refresh()

    @property
    def precision(self):
        return self.shadow.precision

    def refresh(self):
        view = self.shadow.copy()
        view.arrays = quantized_arrays(self.shadow.arrays, self.precision)
        view.bn_state = self.shadow.bn_state     # running stats are shared, never quantized
        self.view = view

    def ste_mask(self, name):
        """Where gradients of the quantized tensor pass through to the shadow."""
        spec = self.precision
        w = self.shadow.arrays[name]
        if not is_quantized_param(name) or spec.kind == "f32":
            return None
        if spec.kind == "bin1":
            return np.abs(w) <= 1.0
        return saturation_mask(w, spec)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: ShadowParams, grads: dict) -> None:
    """One ADAM update of the shadow weights; refreshes the quantized view."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m.get(name, 0.0)
        v = state.v.get(name, 0.0)
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        params.shadow.arrays[name] = params.shadow.arrays[name] - state.lr * mhat / (
            np.sqrt(vhat) + state.eps)
    params.refresh()


def loss_and_grads(params: ShadowParams, X, P, momentum=0.99):
    """Training-mode loss and STE gradients with respect to the shadow weights."""
    probs, cache = forward(params.view, X, training=True, momentum=momentum)
    loss = cross_entropy(probs, P)
    g = backward(cache, cross_entropy_grad(probs, P))
    for name in g:
        mask = params.ste_mask(name)
        if mask is not None:
            g[name] = g[name] * mask
    return loss, g


def evaluate_loss(params: MaskNetParams, X, P, batch=8) -> float:
    total = 0.0
    for i in range(0, len(X), batch):
        probs, _ = forward(params, X[i:i + batch], training=False)
        total += cross_entropy(probs, P[i:i + batch]) * len(X[i:i + batch])
    return total / len(X)


@dataclass
class Dataset:
    """Features (N, T, K, 2M) and target masks (N, K, T, 3), split train/val."""
    x_train: np.ndarray
    p_train: np.ndarray
    x_val: np.ndarray
    p_val: np.ndarray

    @property
    def num_bins(self):
        return self.x_train.shape[2]

    @property
    def num_mics(self):
        return self.x_train.shape[3] // 2


@dataclass
class TrainConfig:
    precision: str = "f32"
    epochs: int = 200
    batch_size: int = 4
    learn_rate: float = 1e-3
    validation_period: int = 20
    patience: int = 3
    bn_momentum: float = 0.99
    seed: int = 0


@dataclass
class TrainResult:
    params: MaskNetParams
    curves: list
    best_epoch: int
    best_val: float
    stopped_early: bool
    shadow: MaskNetParams | None = None     # full-precision weights behind ``params``


def train(cfg: TrainConfig, data: Dataset, init: MaskNetParams | None = None,
          curves_path=None, weights_path=None) -> TrainResult:
    """Minibatch ADAM with periodic validation, early stopping and best snapshot.

    Validation runs every ``validation_period`` epochs and after the last one.
    Training stops once ``max(patience, 1)`` consecutive evaluations fail to
    improve on the best validation loss; the returned parameters are the
    quantized view at the best evaluation.
    """
    if cfg.epochs < 1 or cfg.batch_size < 1 or cfg.validation_period < 1:
        raise ValueError("epochs, batch_size and validation_period must be positive")
    if len(data.x_train) == 0 or len(data.x_val) == 0:
        raise ValueError("empty training or validation set")
    spec = precision(cfg.precision)
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        init = init_params(data.num_bins, data.num_mics, seed=cfg.seed, prec=spec)
    elif init.precision != spec:
        init = init.copy()
        init.precision = spec
    params = ShadowParams(init)
    adam = AdamState(lr=cfg.learn_rate)
    n = len(data.x_train)
    curves, best, best_shadow = [], None, None
    best_val, best_epoch, bad, stopped = np.inf, 0, 0, False
    first = True
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            # running statistics start from the first batch
            mom = 0.0 if first else cfg.bn_momentum
            first = False
            loss, g = loss_and_grads(params, data.x_train[idx], data.p_train[idx], mom)
            adam_step(adam, params, g)
            losses.append(loss * len(idx))
        row = {"epoch": epoch, "train_loss": sum(losses) / n, "val_loss": ""}
        if epoch % cfg.validation_period == 0 or epoch == cfg.epochs:
            val = evaluate_loss(params.view, data.x_val, data.p_val)
            row["val_loss"] = val
            if val < best_val:
                best_val, best_epoch, bad = val, epoch, 0
                best, best_shadow = params.view.copy(), params.shadow.copy()
            else:
                bad += 1
            log.info("epoch %d train %.4f val %.4f", epoch, row["train_loss"], val)
        curves.append(row)
        if bad >= max(cfg.patience, 1):
            stopped = True
            break
    result = TrainResult(best, curves, best_epoch, best_val, stopped, best_shadow)
    if curves_path is not None:
        write_curves(curves_path, curves)
    if weights_path is not None:
        from .weightfile import save_weights

        save_weights(weights_path, best)
    return result


def write_curves(path, curves) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "val_loss"])
        w.writeheader()
        w.writerows(curves)


def toy_dataset(num_train=16, num_val=4, frames=64, seed=0, num_mics=2, fft_size=64, hop=16,
                noise_gain=0.3, scenario=2) -> Dataset:
    """Small learnable task: short multichannel chunks cut from simulated scenes.

    Each scene is rendered once and split into ``frames``-long chunks; oracle
    masks come from the scene's separate speech and noise images.
    """
    cfg_stft = StftConfig(fft_size=fft_size, hop=hop)
    need = num_train + num_val
    xs, ps = [], []
    scene = 0
    while len(xs) < need:
        duration = 1.0
        sc = build_scenario(ScenarioConfig(scenario=scenario, seed=seed * 1000 + scene,
                                           duration=duration, num_mics=num_mics,
                                           stft=cfg_stft, noise_gain=noise_gain))
        scene += 1
        feats = extract_features(sc.mixture)
        masks = sc.masks.values
        T = feats.shape[0]
        for start in range(0, T - frames + 1, frames):
            xs.append(feats[start:start + frames])
            ps.append(masks[:, start:start + frames])
            if len(xs) == need:
                break
    X = np.stack(xs)
    P = np.stack(ps)
    perm = np.random.default_rng(seed).permutation(need)
    X, P = X[perm], P[perm]
    return Dataset(X[:num_train], P[:num_train], X[num_train:], P[num_train:])
