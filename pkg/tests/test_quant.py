import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from maskbeam.quant import BIN1, F32, Q2_2, Q2_6, dequantize, fake_quantize, fixed_codes, \
    pack_bits, precision, quantize, round_half_away, saturation_mask, sign, unpack_bits


def test_precision_lookup():
    assert precision("q2.6") is Q2_6 and precision("q2_2") is Q2_2
    assert precision(BIN1) is BIN1
    with pytest.raises(ValueError):
        precision("q3.5")


def test_q26_examples():
    assert fake_quantize(0.5, Q2_6) == 0.5
    assert fixed_codes(0.5, Q2_6) == 32
    assert fixed_codes(1.23, Q2_6) == 79
    assert fake_quantize(1.23, Q2_6) == 1.234375
    assert fake_quantize(3.0, Q2_6) == 127 / 64
    assert fake_quantize(-3.0, Q2_6) == -2.0


def test_q22_examples():
    assert fake_quantize(0.6, Q2_2) == 0.5
    assert fake_quantize(5.0, Q2_2) == 1.75
    assert fake_quantize(-5.0, Q2_2) == -2.0


def test_round_half_away():
    assert list(round_half_away(np.array([0.5, 1.5, -0.5, -1.5, 2.4]))) == [1, 2, -1, -2, 2]
    # a half step rounds away from zero
    assert fake_quantize(1 / 128, Q2_6) == 1 / 64
    assert fake_quantize(-1 / 128, Q2_6) == -1 / 64


def test_sign_zero_is_positive():
    assert sign(0.0) == 1.0 and sign(-0.0) == 1.0
    assert fake_quantize(0.0, BIN1) == 1.0


def test_dequantize_conventions():
    q = quantize(np.zeros(3), Q2_6)
    assert np.all(dequantize(q) == 0.0)
    q = quantize(np.array([[1.0, -2.0, 0.0]]), BIN1)
    assert q.payload.payload[0, 0] & 0b111 == 0b101
    assert list(dequantize(q)[0]) == [1.0, -1.0, 1.0]
    x = np.array([1.5, -0.25])
    assert np.array_equal(dequantize(quantize(x, F32)), x)


def test_saturation_mask():
    x = np.array([-3.0, -2.0, 0.0, 1.984375, 1.99, 2.5])
    assert list(saturation_mask(x, Q2_6)) == [False, True, True, True, True, False]


def test_pack_bits_layout():
    assert pack_bits(np.ones(64)).payload[0, 0] == np.uint64(0xFFFFFFFFFFFFFFFF)
    alt = np.where(np.arange(64) % 2 == 0, 1.0, -1.0)
    assert pack_bits(alt).payload[0, 0] == np.uint64(0x5555555555555555)
    p = pack_bits(-np.ones((2, 3)), words_per_row=2)
    assert p.payload.shape == (2, 2)
    with pytest.raises(ValueError):
        pack_bits(np.ones(130), words_per_row=2)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 200), st.integers(0, 2 ** 32 - 1))
def test_pack_roundtrip(rows, cols, seed):
    x = np.random.default_rng(seed).choice([-1.0, 1.0], size=(rows, cols))
    assert np.array_equal(unpack_bits(pack_bits(x)), x)


@pytest.mark.parametrize("spec", [Q2_6, Q2_2])
@settings(max_examples=100, deadline=None)
@given(x=arrays(np.float64, 50, elements=st.floats(-2.0, 2.0)))
def test_error_bound_in_range(spec, x):
    x = x[x <= spec.hi]
    assert np.all(np.abs(fake_quantize(x, spec) - x) <= spec.step / 2 + 1e-15)


@pytest.mark.parametrize("spec", [Q2_6, Q2_2, BIN1])
@settings(max_examples=100, deadline=None)
@given(x=st.floats(-10, 10), y=st.floats(-10, 10))
def test_monotone_and_idempotent(spec, x, y):
    lo, hi = min(x, y), max(x, y)
    assert fake_quantize(lo, spec) <= fake_quantize(hi, spec)
    q = fake_quantize(x, spec)
    assert fake_quantize(q, spec) == q


@pytest.mark.parametrize("spec", [Q2_6, Q2_2])
def test_codes_in_range(spec):
    x = np.linspace(-5, 5, 1001)
    c = fixed_codes(x, spec)
    assert c.min() == spec.code_min and c.max() == spec.code_max
