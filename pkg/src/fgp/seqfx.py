"""Sequential fixed-point oracle.

Straight-line loops over the :mod:`fgp.fxp` primitives, performing every
rounding in the same order as the systolic array but without any notion of
cycles, wavefronts or registers.  Node functions mirror the instruction
sequences the compiler emits for each node kind, so machine memory can be
compared bit-for-bit against them.
"""

from __future__ import annotations

from .errors import SingularError
from .fxp import (
    FixedComplex,
    FxMessage,
    conj_transpose,
    fx_abs2,
    fx_div_radix2,
    fx_mac,
    fx_neg,
    identity,
    zeros,
)


def matmul(p, q):
    """``p @ q``, each entry accumulated from zero in index order."""
    rows, inner, cols = len(p), len(q), len(q[0])
    zero = FixedComplex.zero(p[0][0].fmt)
    out = []
    for i in range(rows):
        row = []
        for j in range(cols):
            acc = zero
            for s in range(inner):
                acc = fx_mac(acc, p[i][s], q[s][j])
            row.append(acc)
        out.append(row)
    return out


def matmul_add(y, p, s):
    """``y + p @ s`` with the addend preloaded into each accumulator."""
    out = []
    for i in range(len(p)):
        row = []
        for j in range(len(s[0])):
            acc = y[i][j]
            for t in range(len(s)):
                acc = fx_mac(acc, p[i][t], s[t][j])
            row.append(acc)
        out.append(row)
    return out


def matvec_add(y, p, v):
    out = []
    for i in range(len(p)):
        acc = y[i]
        for t in range(len(v)):
            acc = fx_mac(acc, p[i][t], v[t])
        out.append(acc)
    return out


def faddeev(a, b, c, d):
    """``d - c a^-1 b`` by pivoted elimination; returns ``(result, swaps)``."""
    p = len(a)
    rows = [list(a[i]) + list(b[i]) for i in range(p)]
    rows += [list(c[i]) + list(d[i]) for i in range(len(c))]
    width = len(rows[0])
    zero = FixedComplex.zero(a[0][0].fmt)
    swaps = []
    for k in range(p):
        best, best_key = k, None
        for i in range(k, p):
            key = (fx_abs2(rows[i][k]).raw, not rows[i][k].is_zero())
            if best_key is None or key > best_key:
                best, best_key = i, key
        if rows[best][k].is_zero():
            raise SingularError(f"zero pivot column {k}")
        if best != k:
            rows[k], rows[best] = rows[best], rows[k]
            swaps.append((k, best))
        pivot_row = rows[k]
        for i in range(k + 1, len(rows)):
            mult, _ = fx_div_radix2(rows[i][k], pivot_row[k])
            for j in range(k + 1, width):
                rows[i][j] = fx_mac(rows[i][j], mult, pivot_row[j], subtract=True)
            rows[i][k] = zero
    return [row[p:] for row in rows[p:]], swaps


# -- node updates, in the operation order of the emitted programs ------------


def _neg_vec(v):
    return [fx_neg(x) for x in v]


def adder(x: FxMessage, y: FxMessage, negate_y: bool = False) -> FxMessage:
    """z = x ± y: StateReg = V_x I, then Acc = V_y + I StateReg."""
    fmt = x.cov[0][0].fmt
    n = len(x.cov)
    eye = identity(n, fmt)
    s = matmul(x.cov, eye)
    y_mean = _neg_vec(y.mean) if negate_y else y.mean
    return FxMessage(matmul_add(y.cov, eye, s), matvec_add(y_mean, eye, x.mean))


def equality(x: FxMessage, y: FxMessage) -> FxMessage:
    """Weighted-mean form: same datapath as the forward adder."""
    return adder(x, y)


def matmult_forward(x: FxMessage, a) -> FxMessage:
    fmt = x.cov[0][0].fmt
    s = matmul(x.cov, conj_transpose(a))
    m = len(a)
    return FxMessage(
        matmul_add(zeros(m, m, fmt), a, s),
        matvec_add([FixedComplex.zero(fmt)] * m, a, x.mean),
    )


def matmult_backward(y: FxMessage, a) -> FxMessage:
    fmt = y.cov[0][0].fmt
    s = matmul(y.cov, a)
    ah = conj_transpose(a)
    n = len(ah)
    return FxMessage(
        matmul_add(zeros(n, n, fmt), ah, s),
        matvec_add([FixedComplex.zero(fmt)] * n, ah, y.mean),
    )


def compound_add(x: FxMessage, y: FxMessage, a) -> FxMessage:
    s = matmul(x.cov, conj_transpose(a))
    return FxMessage(matmul_add(y.cov, a, s), matvec_add(y.mean, a, x.mean))


def compound_mult_eq(x: FxMessage, y: FxMessage, a) -> FxMessage:
    """Kalman update through one Faddeev reduction of ``[G^-1 b; c d]``."""
    s = matmul(x.cov, conj_transpose(a))
    top = matmul_add(y.cov, a, s)
    top_mean = matvec_add(_neg_vec(y.mean), a, x.mean)
    b = [row + [top_mean[i]] for i, row in enumerate(conj_transpose(s))]
    d = [list(row) + [x.mean[i]] for i, row in enumerate(x.cov)]
    out, _ = faddeev(top, b, s, d)
    n = len(x.cov)
    return FxMessage([row[:n] for row in out], [row[n] for row in out])
