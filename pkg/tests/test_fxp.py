from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgp import fxp
from fgp.errors import DivideByZeroError
from fgp.fxp import FixedComplex, FxFormat, Overflow, Rounding, fx_abs2, fx_div_radix2, fx_mac

from oracles import exact_complex_div, exact_complex_mac, quantize_exact

Q824 = fxp.DEFAULT_FORMAT
Q412 = FxFormat(4, 12)
Q816 = FxFormat(8, 16)


def c(z, fmt=Q824):
    return FixedComplex.from_complex(z, fmt)


def raw_pair(v):
    return v.re, v.im


def test_format_parse_and_limits():
    f = FxFormat.parse("Q8.24")
    assert f == Q824
    assert f.width == 32 and f.max_raw == 2**31 - 1 and f.min_raw == -(2**31)
    assert str(FxFormat(4, 12)) == "Q4.12"
    with pytest.raises(ValueError):
        FxFormat(0, 8)
    with pytest.raises(ValueError):
        FxFormat(16, 17)
    with pytest.raises(ValueError):
        FxFormat.parse("8.24")


def test_mac_identity_and_i_squared():
    assert fx_mac(c(0), c(1), c(1)).to_complex() == 1
    assert fx_mac(c(0), c(1j), c(1j)).to_complex() == -1


def test_mac_q4_12_exact_rational():
    acc, a, b = c(0.5, Q412), c(0.25 + 0.5j, Q412), c(0.5 - 0.25j, Q412)
    got = fx_mac(acc, a, b)
    ex = exact_complex_mac(acc.to_fractions(), a.to_fractions(), b.to_fractions())
    assert raw_pair(got) == (quantize_exact(ex[0], 12, 16), quantize_exact(ex[1], 12, 16))
    # 0.5 + (0.125 + 0.125) + (0.25 - 0.0625)j
    assert got.to_complex() == pytest.approx(0.75 + 0.1875j)


@settings(max_examples=300, deadline=None)
@given(
    st.tuples(*[st.integers(-(2**20), 2**20)] * 6),
    st.booleans(),
)
def test_mac_matches_exact_rational(raws, subtract):
    acc = FixedComplex(raws[0], raws[1], Q824)
    a = FixedComplex(raws[2], raws[3], Q824)
    b = FixedComplex(raws[4], raws[5], Q824)
    got = fx_mac(acc, a, b, subtract)
    ex = exact_complex_mac(acc.to_fractions(), a.to_fractions(), b.to_fractions(), subtract)
    assert raw_pair(got) == (quantize_exact(ex[0], 24, 32), quantize_exact(ex[1], 24, 32))


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.integers(-(2**10), 2**10)] * 6))
def test_mac_subtract_then_add_restores(raws):
    # small integers times 2^-12 multiply exactly in Q8.24
    acc = FixedComplex(raws[0] << 12, raws[1] << 12, Q824)
    a = FixedComplex(raws[2] << 12, raws[3] << 12, Q824)
    b = FixedComplex(raws[4], raws[5], Q824)
    back = fx_mac(fx_mac(acc, a, b, subtract=True), a, b)
    assert raw_pair(back) == raw_pair(acc)


def test_round_half_even_ties():
    f = FxFormat(8, 0)
    assert f.quantize(Fraction(1, 2))[0] == 0
    assert f.quantize(Fraction(3, 2))[0] == 2
    assert f.quantize(Fraction(-1, 2))[0] == 0
    assert f.quantize(Fraction(-3, 2))[0] == -2
    t = FxFormat(8, 0, rounding=Rounding.TRUNCATE)
    assert t.quantize(Fraction(-3, 2))[0] == -2  # floor
    assert t.quantize(Fraction(3, 2))[0] == 1


def test_saturate_and_wrap_set_sticky_flag():
    big = c(127.0)
    s = fx_mac(big, big, c(1.0))
    assert s.ovf and s.re == Q824.max_raw
    wrap = FxFormat(8, 24, overflow=Overflow.WRAP)
    w = fx_mac(c(127.0, wrap), c(127.0, wrap), c(1.0, wrap))
    assert w.ovf and w.re == quantize_exact(254, 24, 32, saturate=False)
    # the flag propagates through later clean operations
    later = fx_mac(c(0), s, c(0))
    assert later.ovf and later.to_complex() == 0


def test_division_examples_and_cycles():
    q, cycles = fx_div_radix2(c(1), c(1))
    assert q.to_complex() == 1 and cycles == 2 * fxp.DIV_CYCLES == 8
    assert fxp.DIV_CYCLES == 4
    assert fx_div_radix2(c(2j), c(1j))[0].to_complex() == 2
    with pytest.raises(DivideByZeroError):
        fx_div_radix2(c(1), c(0))


@settings(max_examples=300, deadline=None)
@given(st.tuples(*[st.integers(-(2**22), 2**22)] * 4))
def test_division_matches_exact_rational_q8_16(raws):
    num = FixedComplex(raws[0] >> 6, raws[1] >> 6, Q816)
    den = FixedComplex(raws[2] >> 6, raws[3] >> 6, Q816)
    if den.is_zero():
        return
    got, _ = fx_div_radix2(num, den)
    ex = exact_complex_div(num.to_fractions(), den.to_fractions())
    assert raw_pair(got) == (quantize_exact(ex[0], 16, 24), quantize_exact(ex[1], 16, 24))


def test_radix2_divider_is_long_division():
    for n, d in [(0, 1), (7, 2), (1000, 7), (2**40 + 3, 12345)]:
        assert fxp.radix2_divide(n, d) == divmod(n, d)


def test_abs2_examples_and_exact():
    assert fx_abs2(c(3 + 4j)).to_float() == 25
    assert fx_abs2(c(0)).raw == 0
    rng = np.random.default_rng(5)
    for _ in range(100):
        v = FixedComplex(*map(int, rng.integers(-(2**23), 2**23, size=2)), Q816)
        re, im = v.to_fractions()
        assert fx_abs2(v).raw == quantize_exact(re * re + im * im, 16, 24)


@settings(max_examples=200, deadline=None)
@given(st.complex_numbers(max_magnitude=1.0, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=1.0, allow_nan=False, allow_infinity=False))
def test_error_bound_for_unit_inputs(x, y):
    a, b = c(x), c(y)
    ex = complex(a.to_complex() * b.to_complex())
    err = abs(fx_mac(c(0), a, b).to_complex() - ex)
    assert err <= 2.0 ** (1 - 24) * (1 + abs(ex))


def test_bit_exact_stream_is_reproducible():
    def stream(seed):
        rng = np.random.default_rng(seed)
        acc = c(0)
        out = []
        for _ in range(200):
            a = c(complex(*rng.uniform(-1, 1, 2)))
            b = c(complex(*rng.uniform(-1, 1, 2)))
            acc = fx_mac(acc, a, b, subtract=bool(rng.integers(2)))
            out.append(acc.hex())
        return out

    s = stream(11)
    assert s == stream(11)
    assert s[-1] == "f75ff55507160e83"  # frozen


def test_matrix_helpers_round_trip():
    m = np.array([[1 + 2j, 0.5], [-0.25j, 3]])
    fx = fxp.to_fixed(m)
    np.testing.assert_array_equal(fxp.to_float(fx), m)
    np.testing.assert_array_equal(fxp.to_float(fxp.conj_transpose(fx)), m.conj().T)
    np.testing.assert_array_equal(fxp.to_float(fxp.negate(fx)), -m)
    np.testing.assert_array_equal(fxp.to_float(fxp.identity(3)), np.eye(3))
