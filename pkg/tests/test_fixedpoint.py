import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnsim.fixedpoint import (
    ContractViolation,
    QFormat,
    QValue,
    ceil_log2,
    make_schedule,
    q_add,
    q_div,
    q_mul,
    quantize,
    quantize_array,
    to_real,
)


def test_schedule_largest_setting():
    s = make_schedule(320, 64, 4, 4)
    assert s.dot_product == QFormat(14, 8)
    assert s.output == QFormat(13, 12)
    assert s.temp == QFormat(8, 8)
    assert s.dot_product_shifted == QFormat(15, 8)
    assert s.score == QFormat(0, 8)
    assert s.expsum == QFormat(9, 8)
    assert s.weight == QFormat(0, 8)


def test_schedule_degenerate():
    s = make_schedule(1, 1, 1, 1)
    assert s.temp == QFormat(2, 2)
    assert s.dot_product == QFormat(2, 2)
    assert s.expsum == QFormat(0, 2)


def test_schedule_small():
    s = make_schedule(16, 8, 2, 3)
    assert s.dot_product == QFormat(7, 6)
    assert s.output == QFormat(6, 9)


@pytest.mark.parametrize("bad", [(0, 4, 4, 4), (4, 0, 4, 4), (4, 4, 0, 4), (4, 4, 4, 0), (-1, 2, 2, 2)])
def test_schedule_rejects_nonpositive(bad):
    with pytest.raises(ValueError):
        make_schedule(*bad)


def test_ceil_log2():
    assert ceil_log2(1) == 0
    assert ceil_log2(2) == 1
    assert ceil_log2(3) == 2
    assert ceil_log2(320) == 9
    with pytest.raises(ValueError):
        ceil_log2(0)


def test_quantize_exact():
    assert quantize(1.5, QFormat(4, 4)).raw == 24


def test_quantize_saturates():
    v = quantize(100.0, QFormat(4, 4))
    assert v.raw == 255
    assert v.to_real() == 15.9375
    assert quantize(-100.0, QFormat(4, 4)).raw == -255


def test_quantize_ties_to_even():
    # 0.03125 * 16 = 0.5 exactly; half-even rounds down to 0
    assert quantize(0.03125, QFormat(4, 4)).raw == 0
    # 0.09375 * 16 = 1.5 rounds up to 2
    assert quantize(0.09375, QFormat(4, 4)).raw == 2


def test_quantize_rejects_nonfinite():
    with pytest.raises(ValueError):
        quantize(float("nan"), QFormat(4, 4))
    with pytest.raises(ValueError):
        quantize(float("inf"), QFormat(4, 4))


def test_quantize_array_matches_scalar():
    fmt = QFormat(4, 4)
    xs = np.array([1.5, 100.0, -100.0, 0.03125, -0.03125, 0.09375, 3.14159])
    arr = quantize_array(xs, fmt)
    assert arr.fmt == fmt
    for x, raw in zip(xs, arr.raw):
        assert int(raw) == quantize(float(x), fmt).raw


def test_q_mul_exact():
    out = QFormat(8, 8)
    a = quantize(1.5, QFormat(4, 4))
    b = quantize(2.0, QFormat(4, 4))
    assert q_mul(a, b, out).to_real() == 3.0


def test_q_add_widened():
    a = quantize(15.9375, QFormat(4, 4))
    assert q_add(a, a, QFormat(5, 4)).to_real() == 31.875


def test_q_add_saturates_on_narrow_out():
    a = quantize(15.9375, QFormat(4, 4))
    assert q_add(a, a, QFormat(4, 4)).raw == 255


def test_q_div_exact():
    a = quantize(0.75, QFormat(0, 8))
    b = quantize(2.0, QFormat(4, 8))
    assert q_div(a, b, QFormat(0, 8)).to_real() == 0.375


def test_q_div_rejects_small_divisor():
    a = quantize(0.75, QFormat(0, 8))
    b = quantize(0.5, QFormat(4, 8))
    with pytest.raises(ContractViolation):
        q_div(a, b, QFormat(0, 8))


def test_to_real():
    assert to_real(QValue(24, QFormat(4, 4))) == 1.5
    assert to_real(QValue(0, QFormat(7, 2))) == 0.0
    assert to_real(QValue(-255, QFormat(4, 4))) == -15.9375


def test_qvalue_range_checked():
    with pytest.raises(ValueError):
        QValue(256, QFormat(4, 4))


def test_qformat_invalid():
    with pytest.raises(ValueError):
        QFormat(-1, 4)
    with pytest.raises(ValueError):
        QFormat(0, 0)


@settings(max_examples=300)
@given(
    t=st.floats(min_value=-1.0, max_value=1.0, allow_nan=False),
    f=st.integers(min_value=1, max_value=12),
)
def test_round_trip_error_bound(t, f):
    fmt = QFormat(4, f)
    x = t * fmt.max_value  # stay inside the representable range
    err = abs(to_real(quantize(x, fmt)) - x)
    assert err <= 2.0 ** -(f + 1)


@settings(max_examples=200)
@given(
    a=st.floats(min_value=-15.9375, max_value=15.9375),
    b=st.floats(min_value=-15.9375, max_value=15.9375),
)
def test_temp_format_never_saturates(a, b):
    # products of in-range inputs always fit the doubled-width temp format
    sched = make_schedule(8, 8, 4, 4)
    qa = quantize(a, sched.input)
    qb = quantize(b, sched.input)
    prod_raw = qa.raw * qb.raw  # frac 2f already, temp has frac 2f
    assert abs(prod_raw) <= sched.temp.max_raw
    assert q_mul(qa, qb, sched.temp).to_real() == qa.to_real() * qb.to_real()


@settings(max_examples=100)
@given(st.integers(min_value=0, max_value=2**31))
def test_dot_format_never_saturates(seed):
    # worst case: d sign-aligned maximal products still fit dot_product
    rng = np.random.default_rng(seed)
    n, d, i, f = 4, int(rng.integers(1, 17)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    sched = make_schedule(n, d, i, f)
    worst = d * (sched.input.max_raw ** 2)
    assert worst <= sched.dot_product.max_raw


@pytest.mark.parametrize("f", [2, 4, 6])
def test_exponent_shrinks_quantization_error(f):
    # for x <= 0 and x + eps <= 0, |e^(x+eps) - e^x| <= |eps|
    eps = 2.0 ** -(2 * f + 1)
    for x in np.linspace(-8.0, 0.0, 200):
        for e in (eps, -eps):
            if x + e > 0 or x > 0:
                continue
            assert abs(math.exp(x + e) - math.exp(x)) <= abs(e)
