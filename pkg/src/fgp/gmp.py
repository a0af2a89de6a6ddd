"""Floating-point Gaussian message passing: node update rules and Faddeev kernel.

This module is the numerical ground truth for the fixed-point machine and can
be used on its own as a small estimation library.  Messages carry either
``(m, V)`` (mean/covariance) or ``(Wm, W)`` (weighted mean/weight matrix).
A vacuous message is ``W = 0`` in weighted-mean form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, SingularError

HERMITIAN_RTOL = 1e-12
PSD_RTOL = 1e-9


class Param(enum.Enum):
    MEAN_COV = "MeanCov"
    WEIGHTED_MEAN = "WeightedMean"


class NodeKind(enum.Enum):
    EQUALITY = "Equality"
    ADDER = "Adder"
    MATRIX_MULT = "MatrixMult"
    COMPOUND_MULT_EQ = "CompoundMultEq"
    COMPOUND_ADD_OBS = "CompoundAddObs"

    @property
    def needs_matrix(self) -> bool:
        return self in (NodeKind.MATRIX_MULT, NodeKind.COMPOUND_MULT_EQ, NodeKind.COMPOUND_ADD_OBS)


class Direction(enum.Enum):
    FORWARD = "Forward"
    BACKWARD = "Backward"


@dataclass(frozen=True, eq=False)
class GaussianMessage:
    """A Gaussian message; in weighted-mean form ``mean`` is Wm and ``cov`` is W."""

    mean: np.ndarray
    cov: np.ndarray
    param: Param = Param.MEAN_COV

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=complex))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=complex))
        if mean.ndim != 1 or cov.ndim != 2 or cov.shape != (mean.size, mean.size):
            raise DimensionError(f"mean {mean.shape} and matrix {cov.shape} do not agree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def vacuous(cls, n: int) -> "GaussianMessage":
        return cls(np.zeros(n), np.zeros((n, n)), Param.WEIGHTED_MEAN)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_hermitian(self, rtol: float = HERMITIAN_RTOL) -> bool:
        scale = np.max(np.abs(self.cov), initial=0.0)
        return bool(np.max(np.abs(self.cov - self.cov.conj().T), initial=0.0) <= rtol * scale)

    def is_psd(self, rtol: float = 1e-10) -> bool:
        ev = np.linalg.eigvalsh(hermitize(self.cov))
        return bool(ev.min() >= -rtol * max(ev.max(), 0.0))

    def allclose(self, other: "GaussianMessage", atol: float = 1e-9) -> bool:
        return (
            self.param is other.param
            and np.allclose(self.mean, other.mean, rtol=0, atol=atol)
            and np.allclose(self.cov, other.cov, rtol=0, atol=atol)
        )


def hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def is_psd(m: np.ndarray, tol: float = PSD_RTOL) -> bool:
    """Eigenvalues of the Hermitian part all >= -tol * trace."""
    h = hermitize(np.asarray(m, dtype=complex))
    ev = np.linalg.eigvalsh(h)
    return bool(ev.min() >= -tol * max(abs(np.trace(h).real), 1e-300))


def _solve(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    try:
        cond = np.linalg.cond(a)
    except np.linalg.LinAlgError as exc:
        raise SingularError(f"{what} is singular") from exc
    if not np.isfinite(cond) or cond > 1e15:
        raise SingularError(f"{what} is singular (cond={cond:.3g})")
    return np.linalg.solve(a, b)


def convert(msg: GaussianMessage, target: Param) -> GaussianMessage:
    """Switch between (m, V) and (Wm, W); both directions invert the matrix."""
    if msg.param is target:
        return msg
    what = "covariance" if msg.param is Param.MEAN_COV else "weight matrix"
    inv = _solve(msg.cov, np.eye(msg.dim, dtype=complex), what)
    inv = hermitize(inv)
    return GaussianMessage(inv @ msg.mean, inv, target)


def _same_dim(*msgs: GaussianMessage):
    dims = {m.dim for m in msgs}
    if len(dims) != 1:
        raise DimensionError(f"message dimensions differ: {sorted(dims)}")


def equality_update(x: GaussianMessage, y: GaussianMessage) -> GaussianMessage:
    """Equality node: weights and weighted means add."""
    _same_dim(x, y)
    x = convert(x, Param.WEIGHTED_MEAN)
    y = convert(y, Param.WEIGHTED_MEAN)
    return GaussianMessage(x.mean + y.mean, hermitize(x.cov + y.cov), Param.WEIGHTED_MEAN)


def adder_update(x: GaussianMessage, y: GaussianMessage, negate_y: bool = False) -> GaussianMessage:
    """Adder node ``z = x ± y``; covariances always add.

    With ``negate_y`` this is the backward adder message used for observation
    models ``ytilde = y + noise``.
    """
    _same_dim(x, y)
    if x.param is not Param.MEAN_COV or y.param is not Param.MEAN_COV:
        raise DimensionError("adder_update expects mean/covariance messages")
    mean = x.mean - y.mean if negate_y else x.mean + y.mean
    return GaussianMessage(mean, hermitize(x.cov + y.cov))


def _as_matrix(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    if a.ndim != 2:
        raise DimensionError(f"state matrix must be 2-D, got shape {a.shape}")
    return a


def matmult_update(x: GaussianMessage, a, direction: Direction = Direction.FORWARD) -> GaussianMessage:
    """Matrix node ``y = A x``.

    Forward maps (m, V) through A; backward maps (Wm, W) of y back to x.
    """
    a = _as_matrix(a)
    if direction is Direction.FORWARD:
        if a.shape[1] != x.dim:
            raise DimensionError(f"A is {a.shape}, message has dimension {x.dim}")
        x = convert(x, Param.MEAN_COV)
        return GaussianMessage(a @ x.mean, hermitize(a @ x.cov @ a.conj().T))
    if a.shape[0] != x.dim:
        raise DimensionError(f"A is {a.shape}, message has dimension {x.dim}")
    x = convert(x, Param.WEIGHTED_MEAN)
    ah = a.conj().T
    return GaussianMessage(ah @ x.mean, hermitize(ah @ x.cov @ a), Param.WEIGHTED_MEAN)


def _compound_check(x: GaussianMessage, y: GaussianMessage, a: np.ndarray):
    if x.param is not Param.MEAN_COV or y.param is not Param.MEAN_COV:
        raise DimensionError("compound node expects mean/covariance messages")
    if a.shape != (y.dim, x.dim):
        raise DimensionError(f"A is {a.shape}, expected {(y.dim, x.dim)}")


def compound_mult_eq_update(x: GaussianMessage, y: GaussianMessage, a) -> GaussianMessage:
    """Matrix-multiply + equality compound node (a Kalman measurement update).

    ``G = (V_y + A V_x A^H)^-1``; ``m_z = m_x + V_x A^H G (m_y - A m_x)``;
    ``V_z = V_x - V_x A^H G A V_x``.
    """
    a = _as_matrix(a)
    _compound_check(x, y, a)
    vxah = x.cov @ a.conj().T
    g_inv = y.cov + a @ vxah
    gain = _solve(g_inv, vxah.conj().T, "V_y + A V_x A^H").conj().T  # V_x A^H G
    mean = x.mean + gain @ (y.mean - a @ x.mean)
    cov = x.cov - gain @ (a @ x.cov)
    return GaussianMessage(mean, hermitize(cov))


def compound_mult_eq_blocks(x: GaussianMessage, y: GaussianMessage, a):
    """Faddeev blocks ``(a, b, c, d)`` whose Schur complement is the compound update.

    The mean rides along as one augmented column of ``b`` and ``d``.
    """
    a = _as_matrix(a)
    _compound_check(x, y, a)
    c = x.cov @ a.conj().T
    top = y.cov + a @ c
    b = np.column_stack([c.conj().T, a @ x.mean - y.mean])
    d = np.column_stack([x.cov, x.mean])
    return top, b, c, d


def compound_mult_eq_faddeev(x: GaussianMessage, y: GaussianMessage, a) -> GaussianMessage:
    """Same update as :func:`compound_mult_eq_update`, via one Faddeev reduction."""
    out = faddeev(*compound_mult_eq_blocks(x, y, a))
    return GaussianMessage(out[:, -1], hermitize(out[:, :-1]))


def compound_add_update(x: GaussianMessage, y: GaussianMessage, a) -> GaussianMessage:
    """Matrix-multiply + adder compound node ``z = A x + y`` (prediction step)."""
    a = _as_matrix(a)
    if x.param is not Param.MEAN_COV or y.param is not Param.MEAN_COV:
        raise DimensionError("compound node expects mean/covariance messages")
    if a.shape != (y.dim, x.dim):
        raise DimensionError(f"A is {a.shape}, expected {(y.dim, x.dim)}")
    return GaussianMessage(a @ x.mean + y.mean, hermitize(y.cov + a @ x.cov @ a.conj().T))


def faddeev(a, b, c, d, pivot_tol: float = 0.0) -> np.ndarray:
    """Schur complement ``d - c a^-1 b`` by Faddeev elimination.

    The block array ``[a b; c d]`` is triangularized with partial pivoting on
    the rows of ``[a b]`` (largest ``|x|^2`` wins), then every row of
    ``[c d]`` is eliminated against the pivot rows.  ``a^-1`` is never formed.
    """
    a = _as_matrix(a)
    b = np.asarray(b, dtype=complex)
    d = np.asarray(d, dtype=complex)
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
        d = d[:, None]
    c = np.atleast_2d(np.asarray(c, dtype=complex))
    p = a.shape[0]
    if a.shape != (p, p):
        raise DimensionError(f"pivot block must be square, got {a.shape}")
    if b.shape[0] != p or c.shape[1] != p or d.shape != (c.shape[0], b.shape[1]):
        raise DimensionError(
            f"blocks do not conform: a{a.shape} b{b.shape} c{c.shape} d{d.shape}"
        )
    block = np.block([[a, b], [c, d]])
    scale = np.max(np.abs(a), initial=0.0)
    for k in range(p):
        mags = np.abs(block[k:p, k]) ** 2
        piv = k + int(np.argmax(mags))
        if mags[piv - k] <= (pivot_tol * scale) ** 2 or mags[piv - k] == 0.0:
            raise SingularError(f"zero pivot in column {k}")
        if piv != k:
            block[[k, piv]] = block[[piv, k]]
        rows = np.r_[k + 1 : block.shape[0]]
        mult = block[rows, k] / block[k, k]
        block[rows, k:] -= np.outer(mult, block[k, k:])
    out = block[p:, p:]
    return out[:, 0] if vector_rhs else out


def run_rls_reference(
    a_rows: Sequence,
    observations: Sequence[GaussianMessage],
    prior: GaussianMessage,
    noise: GaussianMessage,
) -> list[GaussianMessage]:
    """Chain of RLS sections; returns the state posterior after each section.

    Each section forms ``msg_Y = ytilde - noise`` with a backward adder and
    then applies the compound multiply/equality update to the state.
    """
    if len(a_rows) != len(observations):
        raise DimensionError("need one state matrix per observation")
    state = prior
    out = []
    for a, obs in zip(a_rows, observations):
        msg_y = adder_update(obs, noise, negate_y=True)
        state = compound_mult_eq_update(state, msg_y, a)
        out.append(state)
    return out
