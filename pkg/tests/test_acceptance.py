"""Acceptance criteria, one test each, every test printing a PASS/FAIL line."""
import time

import numpy as np
import pytest
import scipy.linalg

from conftest import ACCEPTANCE_LINES
from maskbeam.beamforming import OjaState, beamform, filter_and_sum, gev_weights, \
    mvdr_weights, oja_step, postfilter_ban, postfilter_pan, steering_vector
from maskbeam.binkernel import bench_matmul, binary_matmul
from maskbeam.metrics import delta_snr, mask_scores
from maskbeam.network import backward, complexity_report, forward, init_params
from maskbeam.quant import F32, Q2_2, Q2_6, fake_quantize, pack_bits
from maskbeam.roomsim import ScenarioConfig, build_scenario
from maskbeam.stft import StftConfig, interior_slice, istft, stft
from maskbeam.training import TrainConfig, cross_entropy, cross_entropy_grad, \
    evaluate_loss, toy_dataset, train


def verdict(num, title, ok, detail):
    line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def rand_psd(rng, M):
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    return A @ A.conj().T


def angle(a, b):
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    c = np.vdot(a, b)
    return float(np.arctan2(np.linalg.norm(b - c * a), abs(c)))


# 1 ---------------------------------------------------------------------------

def test_criterion_01_complexity_report():
    t0 = time.perf_counter()
    rep = complexity_report(6, 513, 500)
    text = rep.format()
    dt = time.perf_counter() - t0
    weights = [r["weights"] for r in rep.layers]
    ok = (weights == [590976, 6156, 526338, 8421408, 1579014]
          and rep.total_weights == 11123892
          and rep.total_mac_printed == 5562e6
          and abs(rep.beamformer["static"]["mac_printed"] - 18.1e6) < 1
          and abs(rep.beamformer["dynamic"]["mac_printed"] - 73e6) < 1
          and "11123892" in text and dt < 1.0)
    verdict(1, "complexity table", ok,
            f"weights {weights} total {rep.total_weights}, MAC {rep.total_mac_printed:.4g}, "
            f"static {rep.beamformer['static']['mac_printed']:.3g}, "
            f"dynamic {rep.beamformer['dynamic']['mac_printed']:.3g}, {dt * 1e3:.1f} ms")


# 2 ---------------------------------------------------------------------------

def test_criterion_02_binary_matmul_exact():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    bad = 0
    for i in range(1000):
        if i < 10:
            r = n = c = 512
        else:
            r, n, c = rng.integers(1, 513, 3)
        a = rng.choice([-1.0, 1.0], size=(r, n))
        b = rng.choice([-1.0, 1.0], size=(n, c))
        got = binary_matmul(pack_bits(a), pack_bits(np.ascontiguousarray(b.T)))
        bad += not np.array_equal(got, (a @ b).astype(np.int64))
    dt = time.perf_counter() - t0
    verdict(2, "binary matmul exact", bad == 0 and dt < 30,
            f"{1000 - bad}/1000 products equal to real arithmetic, {dt:.1f} s")


# 3 ---------------------------------------------------------------------------

def test_criterion_03_binary_speedup():
    rows = bench_matmul([256, 512, 1024], reps=3, seed=3)
    su = {r["size"]: r["speedup"] for r in rows}
    verdict(3, "binary matmul speedup", su[1024] >= 2.0,
            ", ".join(f"{n}: {s:.1f}x" for n, s in su.items()) + " (asserted at 1024 only)")


# 4 ---------------------------------------------------------------------------

def test_criterion_04_beamformer_math():
    rng = np.random.default_rng(4)
    M = 4
    nn = np.stack([rand_psd(rng, M) for _ in range(1000)])
    ss = np.stack([rand_psd(rng, M) for _ in range(1000)])
    v = steering_vector(ss)
    w = mvdr_weights(nn, v)
    dist = np.max(np.abs(np.einsum("bi,bi->b", w.conj(), v) - 1))
    _, xi = gev_weights(ss, nn, loading=0)
    ref = np.array([scipy.linalg.eigh(s, n, eigvals_only=True)[-1] for s, n in zip(ss, nn)])
    gev_err = np.max(np.abs(xi - ref) / np.abs(ref))
    worst = 0.0
    for _ in range(20):
        u = rng.standard_normal(M) + 1j * rng.standard_normal(M)
        s1 = 2 * np.outer(u, u.conj()) + 0.1 * np.eye(M)
        n1 = rand_psd(rng, M) + M * np.eye(M)
        target, _ = gev_weights(s1, n1, loading=0)
        st = OjaState.initial((), M)
        for _ in range(500):
            st = oja_step(st, s1, n1)
        worst = max(worst, angle(st.w, target))
    ok = dist < 1e-10 and gev_err < 1e-8 and worst < 1e-3
    verdict(4, "beamformer math", ok,
            f"MVDR |w^H v - 1| max {dist:.2e}, GEV xi rel err {gev_err:.2e}, "
            f"Oja angle after 500 steps {worst:.2e} rad")


# 5 ---------------------------------------------------------------------------

def test_criterion_05_postfilter_scale_invariance():
    rng = np.random.default_rng(5)
    M, K, T = 4, 16, 50
    Z = rng.standard_normal((M, K, T)) + 1j * rng.standard_normal((M, K, T))
    nn = np.stack([rand_psd(rng, M) for _ in range(K)])
    w = rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M))
    worst = 0.0
    for c in (0.1, 10.0):
        for gain in (lambda x: postfilter_ban(x, nn), lambda x: postfilter_pan(x, Z)):
            y0 = filter_and_sum(w, Z, gain(w))
            y1 = filter_and_sum(c * w, Z, gain(c * w))
            worst = max(worst, np.max(np.abs(y1 - y0)) / np.max(np.abs(y0)))
    verdict(5, "postfilter scale invariance", worst < 1e-9,
            f"max relative output change under w -> c w, c in {{0.1, 10}}: {worst:.2e}")


# 6 ---------------------------------------------------------------------------

def test_criterion_06_stft_roundtrip():
    rng = np.random.default_rng(6)
    cfg = StftConfig(sample_rate=16000)
    x = rng.standard_normal(10 * 16000)
    y = istft(stft(x, cfg))[0]
    sl = interior_slice(x.size, cfg)
    err = np.max(np.abs(y[sl] - x[sl]))
    verdict(6, "STFT round trip", err < 1e-10, f"max error {err:.2e} on 10 s of white noise")


# 7 ---------------------------------------------------------------------------

def test_criterion_07_end_to_end_oracle_masks():
    t0 = time.perf_counter()
    sc = build_scenario(ScenarioConfig(scenario=2, seed=7))
    Z = sc.mixture
    Y, _ = beamform(Z, sc.masks, "gev-ban", "block")
    d_oracle = delta_snr(Y, Z, sc.masks)
    Yu, _ = beamform(Z, np.full(sc.masks.values.shape, 1 / 3), "gev-ban", "block")
    d_uniform = delta_snr(Yu, Z, sc.masks)
    dt = time.perf_counter() - t0
    ok = d_oracle >= 5 and d_oracle - d_uniform >= 3 and dt < 120
    verdict(7, "end-to-end oracle GEV-BAN", ok,
            f"oracle {d_oracle:.2f} dB, uniform {d_uniform:.2f} dB, {dt:.1f} s")


# 8 ---------------------------------------------------------------------------

def test_criterion_08_quantization_error():
    rng = np.random.default_rng(8)
    details, ok = [], True
    for spec in (Q2_6, Q2_2):
        x = rng.uniform(spec.lo, spec.hi, 10 ** 6)
        err = np.max(np.abs(fake_quantize(x, spec) - x))
        sat = fake_quantize(np.array([-2.0, -7.0, spec.hi, 2.0, 9.0]), spec)
        sat_ok = np.array_equal(sat, [-2.0, -2.0, spec.hi, spec.hi, spec.hi])
        ok &= err <= spec.step / 2 and sat_ok
        details.append(f"{spec} max err {err:.4g} (step/2 {spec.step / 2:g}), saturation "
                       f"{'exact' if sat_ok else 'wrong'}")
    verdict(8, "fixed-point quantization", ok, "; ".join(details))


# 9 and 10 ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_runs():
    t0 = time.perf_counter()
    data = toy_dataset(noise_gain=0.1)
    runs = {p: train(TrainConfig(precision=p, epochs=200, seed=1), data)
            for p in ("f32", "q2_6", "bin1")}
    return data, runs, time.perf_counter() - t0


def tiny_gradient_error():
    rng = np.random.default_rng(9)
    params = init_params(2, 1, seed=9)
    X = rng.uniform(-1, 1, (2, 3, 2, 2))
    P = rng.dirichlet(np.ones(3), size=(2, 2, 3))

    def loss():
        return cross_entropy(forward(params, X, training=True, momentum=0.0)[0], P)

    probs, cache = forward(params, X, training=True, momentum=0.0)
    grads = backward(cache, cross_entropy_grad(probs, P))
    worst = 0.0
    for name, arr in params.arrays.items():
        if name.endswith(".s"):
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
        worst = max(worst, np.linalg.norm(num - an)
                    / max(np.linalg.norm(num) + np.linalg.norm(an), 1e-12))
    return worst


@pytest.mark.slow
def test_criterion_09_training(toy_runs):
    t0 = time.perf_counter()
    grad_err = tiny_gradient_error()
    data, runs, train_time = toy_runs
    f32 = runs["f32"]
    first, last = f32.curves[0]["train_loss"], f32.curves[-1]["train_loss"]
    q = runs["q2_6"]
    twin = q.shadow.copy()
    twin.precision = F32
    pq, _ = forward(q.params, data.x_val)
    pt, _ = forward(twin, data.x_val)
    dev = float(np.mean(np.abs(pq - pt)))
    pb, _ = forward(runs["bin1"].params, data.x_val)
    acc = mask_scores(pb, data.p_val)["accuracy"]
    labels = np.argmax(data.p_val, axis=-1).ravel()
    plurality = np.bincount(labels, minlength=3).max() / labels.size
    total = train_time + time.perf_counter() - t0
    ok = (grad_err < 1e-4 and last <= 0.5 * first and dev < 0.1 and acc > plurality
          and total < 600)
    verdict(9, "training", ok,
            f"grad rel err {grad_err:.1e}; f32 train loss {first:.3f} -> {last:.3f}; "
            f"q2_6 vs f32 twin mean |dp| {dev:.4f}; bin1 accuracy {acc:.3f} vs plurality "
            f"{plurality:.3f}; {total:.0f} s")


@pytest.mark.slow
def test_criterion_10_precision_ordering(toy_runs):
    data, runs, _ = toy_runs
    ce = {p: evaluate_loss(r.params, data.x_val, data.p_val) for p, r in runs.items()}
    ok = ce["f32"] <= ce["q2_6"] + 0.05 and ce["q2_6"] <= ce["bin1"] + 0.5
    verdict(10, "precision ordering", ok,
            ", ".join(f"{p} val CE {v:.3f}" for p, v in ce.items()))
