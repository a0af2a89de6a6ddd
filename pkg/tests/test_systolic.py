import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgp import fxp, seqfx
from fgp.errors import BusyError, SingularError, SizeError
from fgp.fxp import FxMessage
from fgp.gmp import GaussianMessage, compound_mult_eq_update, hermitize
from fgp.systolic import CycleModel, PEMode, SystolicArray


def rand_c(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def fx(a):
    return fxp.to_fixed(a)


def raw(m):
    return [[(v.re, v.im) for v in row] for row in m]


def test_cycle_model_closed_forms():
    cm = CycleModel()
    assert cm.matmul(4, 4, 4) == 16 + 3 + 3 + 3 == 25
    assert cm.matmul(4, 4, 5) == 27  # augmented mean column
    assert cm.matmul(1, 1, 1) == 4
    assert cm.faddeev(4, 5) == 2 * 3 + 4 * (1 + 8 + 4 * 9) == 186  # [a | b] is 4 + 5 wide
    assert cm.store(4) == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_matmul_matches_sequential_and_cycle_form(r, k, c, seed):
    rng = np.random.default_rng(seed)
    p, q = fx(rand_c(rng, r, k) / 2), fx(rand_c(rng, k, c) / 2)
    arr = SystolicArray(4)
    cycles = arr.array_matmul(p, q)
    assert cycles == CycleModel().matmul(r, k, c)
    assert raw(arr.state_matrix()) == raw(seqfx.matmul(p, q))
    assert arr.state.cycle == cycles


def test_matmul_flags_route_operands():
    rng = np.random.default_rng(1)
    p, q = rand_c(rng, 3, 2) / 2, rand_c(rng, 3, 2) / 2
    arr = SystolicArray(4)
    arr.array_matmul(fx(p), fx(q), herm=(False, True), neg=(True, False))
    np.testing.assert_allclose(fxp.to_float(arr.state_matrix()), -p @ q.conj().T, atol=1e-6)


def test_matmul_shift_adds_to_state():
    rng = np.random.default_rng(2)
    s, p, y = rand_c(rng, 3, 3) / 2, rand_c(rng, 2, 3) / 2, rand_c(rng, 2, 3) / 2
    arr = SystolicArray(4)
    arr.array_matmul(fx(s), fx(np.eye(3)))
    cycles = arr.array_matmul_shift(fx(y), fx(p))
    assert cycles == CycleModel().matmul(2, 3, 3)
    assert raw(arr.acc_matrix()) == raw(seqfx.matmul_add(fx(y), fx(p), arr.state_matrix()))
    np.testing.assert_allclose(fxp.to_float(arr.acc_matrix()), y + p @ s, atol=1e-6)


def test_stepping_one_cycle_at_a_time():
    rng = np.random.default_rng(3)
    p, q = fx(rand_c(rng, 4, 4) / 2), fx(rand_c(rng, 4, 4) / 2)
    arr = SystolicArray(4)
    arr.begin_matmul(p, q)
    seen = []
    while arr.busy:
        st_ = arr.step()
        seen.append(len(st_.active))
    assert len(seen) == 25
    assert max(seen) == 16 and seen[0] == 1  # wavefront starts at PE(0,0)
    assert raw(arr.state_matrix()) == raw(seqfx.matmul(p, q))
    arr.step()  # idle step advances the clock only
    assert arr.state.cycle == 26 and not arr.state.active


def test_busy_and_size_errors():
    arr = SystolicArray(2)
    with pytest.raises(SizeError):
        arr.array_matmul(fx(np.ones((3, 3))), fx(np.ones((3, 3))))
    with pytest.raises(SizeError):
        arr.array_matmul(fx(np.ones((2, 2))), fx(np.ones((1, 2))))
    arr.begin_matmul(fx(np.eye(2)), fx(np.eye(2)))
    with pytest.raises(BusyError):
        arr.begin_matmul(fx(np.eye(2)), fx(np.eye(2)))
    with pytest.raises(SizeError):
        SystolicArray(9)


def _compound_on_array(x, y, a, arr):
    fxx = FxMessage.from_float(x.cov, x.mean)
    fxy = FxMessage.from_float(y.cov, y.mean)
    fa = fx(a)
    c1 = arr.array_matmul(fxx.cov, fa, herm=(False, True), mean=fxx.mean)
    neg_mean = [fxp.fx_neg(v) for v in fxy.mean]
    c2 = arr.array_matmul_shift(fxy.cov, fa, y_mean=neg_mean)
    (cov, mean), c3 = arr.array_faddeev(fxx.cov, fxx.mean)
    return FxMessage(cov, mean), (c1, c2, c3), (fxx, fxy, fa)


def test_compound_chain_bit_exact_and_cycles():
    rng = np.random.default_rng(4)
    b = rand_c(rng, 4, 4) / 3
    x = GaussianMessage(rand_c(rng, 4) / 2, hermitize(b @ b.conj().T + 0.5 * np.eye(4)))
    y = GaussianMessage(rand_c(rng, 4) / 2, np.eye(4))
    a = rand_c(rng, 4, 4) / 2
    arr = SystolicArray(4)
    got, cycles, (fxx, fxy, fa) = _compound_on_array(x, y, a, arr)
    assert cycles == (25, 27, 186)
    assert got == seqfx.compound_mult_eq(fxx, fxy, fa)
    ref = compound_mult_eq_update(x, y, a)
    np.testing.assert_allclose(fxp.to_float(got.cov), ref.cov, atol=1e-5)
    np.testing.assert_allclose(fxp.to_float(got.mean), ref.mean, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_faddeev_pivots_like_sequential(p, n, seed):
    rng = np.random.default_rng(seed)
    s = fx(rand_c(rng, n, p) / 2)
    acc_p = fx(rand_c(rng, p, p) / 2 + np.eye(p))
    d = fx(rand_c(rng, n, n) / 2)
    arr = SystolicArray(5)
    # leave acc_p in the accumulator: Y + I * 0
    arr.array_matmul(fx(np.zeros((p, p))), fx(np.zeros((p, p))))
    arr.array_matmul_shift(acc_p, fx(np.eye(p)))
    arr.array_matmul(s, fx(np.eye(p)))
    (cov, _), cycles = arr.array_faddeev(d)
    ref, swaps = seqfx.faddeev(acc_p, fxp.conj_transpose(s), s, d)
    assert raw(cov) == raw(ref)
    assert arr.swaps == swaps
    assert cycles == CycleModel().faddeev(p, n)


def test_faddeev_singular_pivot():
    arr = SystolicArray(2)
    arr.array_matmul(fx(np.zeros((2, 2))), fx(np.zeros((2, 2))))
    arr.array_matmul_shift(fx(np.zeros((2, 2))), fx(np.eye(2)))
    arr.array_matmul(fx(np.eye(2)), fx(np.eye(2)))
    with pytest.raises(SingularError):
        arr.array_faddeev(fx(np.eye(2)))
    assert not arr.busy


def test_trace_lines():
    lines = []
    arr = SystolicArray(2, trace=lines.append)
    arr.array_matmul(fx(np.eye(2)), fx(np.eye(2)))
    assert lines[0].startswith("cycle=0 pe=0,0 mode=accum acc=")
    assert any(line.startswith("cycle=") and "pe=1,1" in line for line in lines)
    assert PEMode.ACCUM.value == "accum"
