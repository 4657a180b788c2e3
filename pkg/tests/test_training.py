import math

import numpy as np
import pytest

from maskbeam.network import backward, forward, init_params, quantized_arrays
from maskbeam.quant import fake_quantize
from maskbeam.training import AdamState, Dataset, ShadowParams, TrainConfig, adam_step, \
    cross_entropy, cross_entropy_grad, evaluate_loss, loss_and_grads, toy_dataset, train
from maskbeam.weightfile import load_weights


def one_hot(rng, shape):
    idx = rng.integers(0, 3, shape)
    return np.eye(3)[idx]


def test_cross_entropy_values():
    rng = np.random.default_rng(0)
    p = one_hot(rng, (4, 5))
    assert cross_entropy(p, p) == pytest.approx(0.0, abs=1e-10)
    assert cross_entropy(np.full_like(p, 1 / 3), p) == pytest.approx(math.log(3), rel=1e-10)
    with pytest.raises(ValueError):
        cross_entropy(p, p[:2])


def test_cross_entropy_scalar_reference():
    rng = np.random.default_rng(1)
    pe = rng.dirichlet(np.ones(3), size=(3, 4))
    po = rng.dirichlet(np.ones(3), size=(3, 4))
    total = 0.0
    for k in range(3):
        for t in range(4):
            for i in range(3):
                total -= po[k, t, i] * math.log(pe[k, t, i] + 1e-12)
    assert cross_entropy(pe, po) == pytest.approx(total / 12, abs=1e-10)


def tiny_problem(prec="f32", seed=0):
    rng = np.random.default_rng(seed)
    params = init_params(2, 1, seed=seed, prec=prec)
    X = rng.uniform(-1, 1, (2, 3, 2, 2))
    P = rng.dirichlet(np.ones(3), size=(2, 2, 3))
    return params, X, P


def test_gradients_match_finite_differences():
    params, X, P = tiny_problem()

    def loss():
        probs, _ = forward(params, X, training=True, momentum=0.0)
        return cross_entropy(probs, P)

    probs, cache = forward(params, X, training=True, momentum=0.0)
    grads = backward(cache, cross_entropy_grad(probs, P))
    for name, arr in params.arrays.items():
        if name.endswith(".s"):
            assert np.all(grads[name] == 0)     # scales only act in binary mode
            continue
        flat = arr.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + 1e-6
            lp = loss()
            flat[i] = orig - 1e-6
            lm = loss()
            flat[i] = orig
            num[i] = (lp - lm) / 2e-6
        an = grads[name].reshape(-1)
        err = np.linalg.norm(num - an) / max(np.linalg.norm(num) + np.linalg.norm(an), 1e-12)
        assert err < 1e-4, name


def test_head_gradients_vanish_at_optimum():
    params, X, _ = tiny_problem(seed=1)
    probs, _ = forward(params, X, training=True, momentum=0.0)
    probs2, cache = forward(params, X, training=True, momentum=0.0)
    g = backward(cache, cross_entropy_grad(probs2, probs))
    assert np.max(np.abs(g["head.W"])) < 1e-8 and np.max(np.abs(g["head.b"])) < 1e-8


def test_binary_ste_zero_in_saturation():
    params, X, P = tiny_problem("bin1", seed=2)
    params.arrays["l3.W"][0, 0] = 5.0
    params.arrays["l3.W"][0, 1] = 0.3
    _, g = loss_and_grads(ShadowParams(params), X, P, momentum=0.0)
    assert g["l3.W"][0, 0] == 0.0
    assert g["l3.W"][0, 1] != 0.0


def test_fixed_ste_zero_when_saturated():
    params, X, P = tiny_problem("q2_6", seed=3)
    params.arrays["head.W"][0, 0, 0] = 3.0
    _, g = loss_and_grads(ShadowParams(params), X, P, momentum=0.0)
    assert g["head.W"][0, 0, 0] == 0.0


def test_forward_reads_only_quantized_view():
    params, X, P = tiny_problem("q2_2", seed=4)
    sp = ShadowParams(params)
    a, _ = forward(sp.view, X)
    # perturb the shadow inside one quantization cell: forward output unchanged
    for k, v in sp.shadow.arrays.items():
        if k in sp.view.arrays and not (k.endswith(".s") or k.startswith("bn")):
            q = fake_quantize(v, sp.precision)
            sp.shadow.arrays[k] = q + 0.1 * sp.precision.step * np.sign(v - q)
    sp.refresh()
    b, _ = forward(sp.view, X)
    assert np.array_equal(a, b)


def test_adam_zero_gradient():
    params, _, _ = tiny_problem()
    sp = ShadowParams(params)
    before = {k: v.copy() for k, v in sp.shadow.arrays.items()}
    adam_step(AdamState(), sp, {k: np.zeros_like(v) for k, v in before.items()})
    assert all(np.array_equal(before[k], sp.shadow.arrays[k]) for k in before)


def test_adam_constant_gradient_step_size():
    params, _, _ = tiny_problem()
    sp = ShadowParams(params)
    st_ = AdamState(lr=1e-3)
    g = {"l3.b": np.array([0.37, -5.0])}
    # independent scalar ADAM
    m = v = 0.0
    x = sp.shadow.arrays["l3.b"][0]
    for t in range(1, 201):
        prev = sp.shadow.arrays["l3.b"].copy()
        adam_step(st_, sp, g)
        m = 0.9 * m + 0.1 * 0.37
        v = 0.999 * v + 0.001 * 0.37 ** 2
        x -= 1e-3 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert sp.shadow.arrays["l3.b"][0] == pytest.approx(x, abs=1e-12)
    step = np.abs(sp.shadow.arrays["l3.b"] - prev)
    assert np.allclose(step, 1e-3, rtol=1e-4)


@pytest.mark.parametrize("prec", ["q2_6", "q2_2", "bin1"])
def test_view_is_quantized_shadow_after_step(prec):
    params, X, P = tiny_problem(prec, seed=5)
    sp = ShadowParams(params)
    st_ = AdamState(lr=0.05)
    for _ in range(3):
        _, g = loss_and_grads(sp, X, P)
        adam_step(st_, sp, g)
        ref = quantized_arrays(sp.shadow.arrays, sp.precision)
        assert all(np.array_equal(ref[k], sp.view.arrays[k]) for k in ref)


@pytest.fixture(scope="module")
def small_data():
    return toy_dataset(num_train=6, num_val=3, frames=12, fft_size=16, hop=4, seed=3)


def test_toy_dataset_shapes(small_data):
    assert small_data.x_train.shape == (6, 12, 9, 4)
    assert small_data.p_train.shape == (6, 9, 12, 3)
    assert np.all(small_data.p_val.sum(-1) == 1)


def test_patience_zero_stops_at_first_non_improvement(small_data):
    cfg = TrainConfig(epochs=60, validation_period=1, patience=0, learn_rate=0.05, seed=1)
    res = train(cfg, small_data)
    vals = [r["val_loss"] for r in res.curves]
    assert res.stopped_early
    assert vals[-1] >= min(vals[:-1])
    assert all(b < a for a, b in zip(vals[:-2], vals[1:-1]))


def test_deterministic_curves(small_data, tmp_path):
    cfg = TrainConfig(epochs=4, validation_period=2, seed=7)
    a = train(cfg, small_data, curves_path=tmp_path / "a.csv")
    b = train(cfg, small_data, curves_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.curves == b.curves


def test_snapshot_is_best_validation(small_data, tmp_path):
    cfg = TrainConfig(epochs=12, validation_period=3, patience=10, learn_rate=0.01, seed=2)
    res = train(cfg, small_data, weights_path=tmp_path / "w.mbnw")
    vals = [r["val_loss"] for r in res.curves if r["val_loss"] != ""]
    assert res.best_val == min(vals)
    loaded = load_weights(tmp_path / "w.mbnw")
    assert evaluate_loss(loaded, small_data.x_val, small_data.p_val) == pytest.approx(
        res.best_val, rel=1e-5)


def test_empty_dataset_rejected():
    empty = Dataset(np.zeros((0, 4, 3, 2)), np.zeros((0, 3, 4, 3)),
                    np.zeros((1, 4, 3, 2)), np.full((1, 3, 4, 3), 1 / 3))
    with pytest.raises(ValueError, match="empty"):
        train(TrainConfig(epochs=1), empty)
