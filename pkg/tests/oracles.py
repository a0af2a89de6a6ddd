"""Independent reference implementations used only by the tests.

Nothing here imports the package's numerical code: inverses are done by
Gauss-Jordan elimination in plain Python, fixed-point expectations come from
exact rational arithmetic, and Gaussian identities are checked by sampling or
by fitting log-densities.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def triple_loop_matmul(a, b):
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=complex)
    for i in range(n):
        for j in range(m):
            s = 0j
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def gauss_jordan_inverse(a):
    """Inverse by Gauss-Jordan elimination with partial pivoting, pure Python."""
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    aug = [[complex(a[i, j]) for j in range(n)] + [1.0 + 0j if i == j else 0j for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(aug[r][col]))
        if abs(aug[piv][col]) == 0:
            raise ZeroDivisionError("singular")
        aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        aug[col] = [v / p for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [vr - f * vc for vr, vc in zip(aug[r], aug[col])]
    return np.array([row[n:] for row in aug], dtype=complex)


def schur_direct(a, b, c, d):
    return np.asarray(d) - triple_loop_matmul(triple_loop_matmul(c, gauss_jordan_inverse(a)), b)


def kalman_update(m_x, v_x, m_y, v_y, a):
    """Textbook measurement update with an explicit Gauss-Jordan inverse."""
    a = np.atleast_2d(a)
    ah = a.conj().T
    s = v_y + a @ v_x @ ah
    k = v_x @ ah @ gauss_jordan_inverse(s)
    return m_x + k @ (m_y - a @ m_x), v_x - k @ a @ v_x


def batch_lmmse(rows, y, noise_var, prior_mean, prior_cov):
    """Closed-form posterior of h given y = rows h + n, n ~ CN(0, noise_var I)."""
    rows = np.atleast_2d(rows)
    w0 = gauss_jordan_inverse(prior_cov)
    w = w0 + rows.conj().T @ rows / noise_var
    cov = gauss_jordan_inverse(w)
    mean = cov @ (rows.conj().T @ y / noise_var + w0 @ prior_mean)
    return mean, cov


# -- sampling / density oracles ---------------------------------------------


def sample_complex_gaussian(rng, mean, cov, size):
    """Circular complex Gaussian samples via a Cholesky factor."""
    l = np.linalg.cholesky(cov)
    n = len(mean)
    z = (rng.normal(size=(size, n)) + 1j * rng.normal(size=(size, n))) / math.sqrt(2)
    return mean + z @ l.T


def fit_real_log_density(points, logp):
    """Least-squares fit of ``-x'Wx/2 + x'b + c``; returns (W, b)."""
    n = points.shape[1]
    iu = [(i, j) for i in range(n) for j in range(i, n)]
    cols = []
    for i, j in iu:
        cols.append(-0.5 * points[:, i] * points[:, j] * (1 if i == j else 2))
    cols += [points[:, i] for i in range(n)]
    cols.append(np.ones(len(points)))
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), logp, rcond=None)
    w = np.zeros((n, n))
    for (i, j), v in zip(iu, coef):
        w[i, j] = w[j, i] = v
    return w, coef[len(iu) : len(iu) + n]


def real_log_density(x, mean, cov):
    d = x - mean
    w = np.linalg.inv(cov)
    return -0.5 * np.einsum("ki,ij,kj->k", d, w, d)


# -- exact rational fixed point ----------------------------------------------


def round_half_even(fr: Fraction) -> int:
    fl = math.floor(fr)
    rem = fr - fl
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and fl % 2 == 1):
        return fl + 1
    return fl


def quantize_exact(value, frac_bits: int, width: int, saturate: bool = True) -> int:
    raw = round_half_even(Fraction(value) * (1 << frac_bits))
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    if saturate:
        return min(hi, max(lo, raw))
    return ((raw - lo) % (1 << width)) + lo


def exact_complex_mac(acc, a, b, subtract=False):
    """Exact (Fraction) value of acc ± a*b for (re, im) Fraction pairs."""
    pr = a[0] * b[0] - a[1] * b[1]
    pi = a[0] * b[1] + a[1] * b[0]
    sign = -1 if subtract else 1
    return acc[0] + sign * pr, acc[1] + sign * pi


def exact_complex_div(num, den):
    a, b = num
    c, d = den
    m = c * c + d * d
    return (a * c + b * d) / m, (b * c - a * d) / m
