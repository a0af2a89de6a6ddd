"""Cycle-level model of the FGP systolic array.

The array is an ``N x N`` grid of PEmult cells plus one augmented column that
carries mean vectors, and a triangular border of PEborder cells used by the
Faddeev reduction.  Three macro-operations are supported:

* ``array_matmul``        StateReg <- P Q                     (accum mode)
* ``array_matmul_shift``  Acc      <- Y + P StateReg          (shift mode)
* ``array_faddeev``       Acc      <- d - c a^-1 b            (Faddeev)

where, for the Faddeev step, ``a`` is the accumulator block left by the shift
operation, ``c`` is the StateReg block, ``b`` is its Hermitian transpose
(produced by the Transpose unit), and ``d`` streams in from memory.

Every macro-op is a generator that does one cycle of work per ``next()``;
``step()`` advances the whole array by exactly one cycle and the one-shot
methods simply step until the array is idle again.  Arithmetic is done with
:mod:`fgp.fxp` primitives in a fixed order that :mod:`fgp.seqfx` reproduces.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import fxp
from .errors import BusyError, SingularError, SizeError
from .fxp import FixedComplex, FxFormat, fx_abs2, fx_div_radix2, fx_mac

MAX_ARRAY_SIZE = 8


@dataclass(frozen=True)
class CycleModel:
    """Per-primitive costs and the closed forms built from them.

    ``mac_cycles`` and ``div_cycles`` are the costs of one complex
    multiply-accumulate and one real radix-2 division.  The closed forms are a
    calibrated schedule, not a transcription of a known microarchitecture.
    """

    mac_cycles: int = 4
    div_cycles: int = 4
    swap_cycles: int = 1
    store_row_cycles: int = 1

    @staticmethod
    def skew(n: int) -> int:
        return n - 1

    @staticmethod
    def drain(n: int) -> int:
        return n - 1

    def matmul(self, rows: int, inner: int, cols: int) -> int:
        return (
            self.mac_cycles * inner
            + self.skew(rows)
            + self.skew(cols)
            + self.drain(max(rows, cols))
        )

    def faddeev_step(self, pivots: int, width: int) -> int:
        return self.swap_cycles + 2 * self.div_cycles + self.mac_cycles * (pivots + width)

    def faddeev(self, pivots: int, width: int) -> int:
        return 2 * self.skew(pivots) + pivots * self.faddeev_step(pivots, width)

    def store(self, rows: int) -> int:
        return self.store_row_cycles * rows


class PEMode(enum.Enum):
    IDLE = "idle"
    MULT = "mult"
    ACCUM = "accum"
    SHIFT = "shift"
    ELIMINATE = "eliminate"
    SWAP_ROWS = "swap"


class BorderMode(enum.Enum):
    IDLE = "idle"
    PIVOT = "pivot"
    DIVIDE = "divide"


@dataclass
class PEMultState:
    state_reg: FixedComplex
    accumulator: FixedComplex
    mode: PEMode = PEMode.IDLE
    north: Optional[FixedComplex] = None
    south: Optional[FixedComplex] = None
    east: Optional[FixedComplex] = None
    west: Optional[FixedComplex] = None


@dataclass
class PEBorderState:
    pivot_mag2: Optional[fxp.Fixed] = None
    multiplier: Optional[FixedComplex] = None
    divider_busy: int = 0
    mode: BorderMode = BorderMode.IDLE


@dataclass
class ArrayState:
    grid: list
    border: list
    cycle: int = 0
    active: frozenset = frozenset()
    feeders: dict = field(default_factory=lambda: {"north": [], "west": []})
    drain: list = field(default_factory=list)


class SystolicArray:
    """One FGP array instance; not thread-safe (lockstep, single owner)."""

    def __init__(
        self,
        size: int = 4,
        fmt: FxFormat = fxp.DEFAULT_FORMAT,
        cycle_model: CycleModel = CycleModel(),
        trace: Optional[Callable[[str], None]] = None,
    ):
        if not 1 <= size <= MAX_ARRAY_SIZE:
            raise SizeError(f"array size must be 1..{MAX_ARRAY_SIZE}, got {size}")
        self.size = size
        self.fmt = fmt
        self.cycle_model = cycle_model
        self.trace = trace
        zero = FixedComplex.zero(fmt)
        grid = [[PEMultState(zero, zero) for _ in range(size + 1)] for _ in range(size)]
        border = [PEBorderState() for _ in range(2 * size)]
        self.state = ArrayState(grid, border)
        self._op = None
        self._op_cycles = 0
        # shapes of what the registers currently hold
        self.state_shape = (0, 0)
        self.state_has_mean = False
        self.acc_shape = (0, 0)
        self.acc_has_mean = False
        self.swaps: list[tuple[int, int]] = []

    # -- register views ---------------------------------------------------

    @property
    def busy(self) -> bool:
        return self._op is not None

    def _read(self, reg: str, rows: int, cols: int):
        g = self.state.grid
        return [[getattr(g[i][j], reg) for j in range(cols)] for i in range(rows)]

    def _read_mean(self, reg: str, rows: int):
        g = self.state.grid
        return [getattr(g[i][self.size], reg) for i in range(rows)]

    def state_matrix(self):
        return self._read("state_reg", *self.state_shape)

    def state_mean(self):
        return self._read_mean("state_reg", self.state_shape[0]) if self.state_has_mean else None

    def acc_matrix(self):
        return self._read("accumulator", *self.acc_shape)

    def acc_mean(self):
        return self._read_mean("accumulator", self.acc_shape[0]) if self.acc_has_mean else None

    # -- stepping ---------------------------------------------------------

    def step(self) -> ArrayState:
        """Advance exactly one cycle."""
        st = self.state
        if self._op is None:
            st.active = frozenset()
            st.cycle += 1
            return st
        try:
            next(self._op)
        except Exception:
            self._op = None
            self._idle_all()
            raise
        finally:
            st.cycle += 1
        self._op_cycles += 1
        if self._op_done:
            self._finish()
        return st

    def run(self) -> int:
        """Step until the in-flight macro-op completes; returns its cycle count."""
        while self._op is not None:
            self.step()
        return self._op_cycles

    def _start(self, gen):
        self._op_done = False
        self._op_cycles = 0
        self._op = gen

    def _finish(self):
        self._op = None
        self._idle_all()

    def _idle_all(self):
        for row in self.state.grid:
            for pe in row:
                pe.mode = PEMode.IDLE
                pe.north = pe.south = pe.east = pe.west = None
        for b in self.state.border:
            b.mode = BorderMode.IDLE
            b.divider_busy = 0
        self.state.active = frozenset()

    def _check_start(self, *dims):
        if self.busy:
            raise BusyError("array is executing another macro-operation")
        for d in dims:
            if not 1 <= d <= self.size:
                raise SizeError(f"operand dimension {d} outside 1..{self.size}")

    def _emit(self, cycle, active, mode, value_of):
        if self.trace is None:
            return
        for (i, j) in sorted(active):
            self.trace(f"cycle={cycle} pe={i},{j} mode={mode.value} acc={value_of(i, j).hex()}")

    # -- operand preparation ----------------------------------------------

    @staticmethod
    def _route(m, herm: bool, neg: bool):
        if herm:
            m = fxp.conj_transpose(m)
        if neg:
            m = fxp.negate(m)
        return m

    @staticmethod
    def _shape(m):
        return len(m), (len(m[0]) if m else 0)

    # -- accum mode -------------------------------------------------------

    def begin_matmul(self, p, q, herm=(False, False), neg=(False, False), mean=None):
        """Start ``StateReg <- op(p) op(q)``; ``mean`` rides along in the augmented column."""
        p = self._route(p, herm[0], neg[0])
        q = self._route(q, herm[1], neg[1])
        r, k = self._shape(p)
        k2, c = self._shape(q)
        if k != k2:
            raise SizeError(f"inner dimensions differ: {k} vs {k2}")
        self._check_start(r, k, c)
        if mean is not None and len(mean) != r:
            raise SizeError(f"mean length {len(mean)} does not match {r} rows")
        self.swaps = []
        self._start(self._matmul_gen(p, q, None, r, k, c, "state_reg", PEMode.ACCUM, False, mean))

    def array_matmul(self, p, q, herm=(False, False), neg=(False, False), mean=None) -> int:
        self.begin_matmul(p, q, herm, neg, mean)
        return self.run()

    # -- shift mode -------------------------------------------------------

    def begin_matmul_shift(self, y, p, herm=(False, False), neg=(False, False), y_mean=None):
        """Start ``Acc <- op(y) + op(p) StateReg``.

        ``herm``/``neg`` apply to ``(p, y)``.  With ``y_mean`` the augmented
        column computes ``y_mean + op(p) StateMean`` on the same wavefronts.
        """
        p = self._route(p, herm[0], neg[0])
        y = self._route(y, herm[1], neg[1])
        s = self.state_matrix()
        r, k = self._shape(p)
        k2, c = self.state_shape
        if k != k2:
            raise SizeError(f"operand has {k} columns but StateReg holds {k2} rows")
        if self._shape(y) != (r, c):
            raise SizeError(f"addend is {self._shape(y)}, expected {(r, c)}")
        self._check_start(r, k, c)
        init = [row[:] for row in y]
        with_mean = y_mean is not None
        if with_mean:
            if not self.state_has_mean:
                raise SizeError("mean column requested but StateReg holds no mean")
            if len(y_mean) != r:
                raise SizeError(f"addend mean length {len(y_mean)} does not match {r}")
            sm = self.state_mean()
            s = [s[i] + [sm[i]] for i in range(k)]
            init = [init[i] + [y_mean[i]] for i in range(r)]
        self.swaps = []
        self._start(
            self._matmul_gen(p, s, init, r, k, c + with_mean, "accumulator", PEMode.SHIFT, with_mean, None)
        )

    def array_matmul_shift(self, y, p, herm=(False, False), neg=(False, False), y_mean=None) -> int:
        self.begin_matmul_shift(y, p, herm, neg, y_mean)
        return self.run()

    def _matmul_gen(self, p, q, init, r, k, c, target, mode, mean_col, ride_mean):
        """Output-stationary wavefront: operand ``s`` meets PE(i,j) at cycle ``i+j+mac*s``."""
        cm = self.cycle_model
        mac = cm.mac_cycles
        grid = self.state.grid
        n = self.size
        zero = FixedComplex.zero(self.fmt)
        # logical column j lives in grid column j, except the augmented column
        logical_cols = c
        col_slot = list(range(logical_cols))
        if mean_col:
            col_slot[-1] = n
        acc = [[(init[i][j] if init is not None else zero) for j in range(logical_cols)] for i in range(r)]
        total = cm.matmul(r, k, logical_cols)
        self.state.feeders = {
            "west": [[None] * i + [p[i][s] for s in range(k)] for i in range(r)],
            "north": [[None] * j + [q[s][j] for s in range(k)] for j in range(logical_cols)],
        }
        for t in range(total):
            active = set()
            for i in range(r):
                for j in range(logical_cols):
                    pe = grid[i][col_slot[j]]
                    rel = t - (i + j)
                    if 0 <= rel < mac * k:
                        s, phase = divmod(rel, mac)
                        pe.mode = mode
                        active.add((i, col_slot[j]))
                        if phase == 0:
                            pe.west, pe.north = p[i][s], q[s][j]
                        if phase == mac - 1:
                            acc[i][j] = fx_mac(acc[i][j], p[i][s], q[s][j])
                            pe.east, pe.south = pe.west, pe.north
                            setattr(pe, target, acc[i][j])
                    elif rel >= mac * k:
                        pe.mode = PEMode.IDLE
            self.state.active = frozenset(active)
            self._emit(self.state.cycle, active, mode, lambda i, j: getattr(grid[i][j], target))
            if t == total - 1:
                self._commit_matmul(acc, r, logical_cols, target, mean_col, ride_mean)
                self._op_done = True
            yield

    def _commit_matmul(self, acc, r, c, target, mean_col, ride_mean):
        grid = self.state.grid
        n = self.size
        cols = c - 1 if mean_col else c
        for i in range(r):
            for j in range(cols):
                setattr(grid[i][j], target, acc[i][j])
            if mean_col:
                setattr(grid[i][n], target, acc[i][c - 1])
        if target == "state_reg":
            self.state_shape = (r, cols)
            self.state_has_mean = ride_mean is not None
            if ride_mean is not None:
                for i in range(r):
                    grid[i][n].state_reg = ride_mean[i]
        else:
            self.acc_shape = (r, cols)
            self.acc_has_mean = mean_col
        self.state.drain = [list(row) for row in acc]

    # -- Faddeev ----------------------------------------------------------

    def begin_faddeev(self, d_block, d_mean=None, herm=False):
        """Start ``Acc <- d - c a^-1 b`` with a = Acc, c = StateReg, b = StateReg^H.

        When the accumulator carries a mean column (and ``d_mean`` is given)
        both ``b`` and ``d`` gain that column, so the mean is updated too.
        """
        if herm:
            d_block = fxp.conj_transpose(d_block)
        p, p2 = self.acc_shape
        n, p3 = self.state_shape
        if p == 0 or p != p2 or p3 != p:
            raise SizeError(
                f"Faddeev needs a square accumulator block matching StateReg, "
                f"have acc {self.acc_shape} and StateReg {self.state_shape}"
            )
        if self._shape(d_block) != (n, n):
            raise SizeError(f"d block is {self._shape(d_block)}, expected {(n, n)}")
        self._check_start(p, n)
        with_mean = d_mean is not None
        if with_mean and not self.acc_has_mean:
            raise SizeError("d mean given but the accumulator holds no mean column")
        if with_mean and len(d_mean) != n:
            raise SizeError(f"d mean length {len(d_mean)} does not match {n}")
        a = self.acc_matrix()
        s = self.state_matrix()
        b = fxp.conj_transpose(s)
        if with_mean:
            am = self.acc_mean()
            b = [b[i] + [am[i]] for i in range(p)]
            d_block = [list(d_block[i]) + [d_mean[i]] for i in range(n)]
        rows = [a[i] + b[i] for i in range(p)] + [s[i] + list(d_block[i]) for i in range(n)]
        self.swaps = []
        self._start(self._faddeev_gen(rows, p, n, with_mean))

    def array_faddeev(self, d_block, d_mean=None, herm=False):
        """Run the Faddeev reduction; returns ``((cov, mean), cycles)``."""
        self.begin_faddeev(d_block, d_mean, herm)
        cycles = self.run()
        return (self.acc_matrix(), self.acc_mean()), cycles

    def _faddeev_gen(self, rows, p, n, with_mean):
        cm = self.cycle_model
        mac = cm.mac_cycles
        width = len(rows[0])
        nrows = len(rows)
        border = self.state.border
        grid = self.state.grid
        zero = FixedComplex.zero(self.fmt)
        fill = 2 * cm.skew(p)
        for _ in range(fill):
            self.state.active = frozenset()
            yield
        for k in range(p):
            # pivot search and row swap
            for t in range(cm.swap_cycles):
                if t == 0:
                    best = k
                    best_key = None
                    for i in range(k, p):
                        mag = fx_abs2(rows[i][k])
                        border[i].pivot_mag2 = mag
                        border[i].mode = BorderMode.PIVOT
                        key = (mag.raw, not rows[i][k].is_zero())
                        if best_key is None or key > best_key:
                            best, best_key = i, key
                    if rows[best][k].is_zero():
                        raise SingularError(f"zero pivot column {k}")
                    if best != k:
                        rows[k], rows[best] = rows[best], rows[k]
                        self.swaps.append((k, best))
                    for j in range(min(self.size, width)):
                        grid[min(k, self.size - 1)][j].mode = PEMode.SWAP_ROWS
                self.state.active = frozenset((k, j) for j in range(min(self.size, width)))
                self._emit(self.state.cycle, set(), PEMode.SWAP_ROWS, None)
                yield
            # PEborder divisions, all eliminated rows in parallel
            targets = list(range(k + 1, nrows))
            mults = {}
            div_total = 2 * cm.div_cycles
            for t in range(div_total):
                for i in targets:
                    bcell = border[min(i, len(border) - 1)]
                    bcell.mode = BorderMode.DIVIDE
                    bcell.divider_busy = cm.div_cycles - (t % cm.div_cycles)
                if t == div_total - 1:
                    for i in targets:
                        q, _ = fx_div_radix2(rows[i][k], rows[k][k])
                        mults[i] = q
                        border[min(i, len(border) - 1)].multiplier = q
                self.state.active = frozenset()
                yield
            for b in border:
                b.mode = BorderMode.IDLE
                b.divider_busy = 0
            # row-parallel, column-sequential elimination
            # every column of the block row is visited, including eliminated ones
            span = width
            for t in range(mac * span):
                j, phase = divmod(t, mac)
                active = set()
                if phase == mac - 1 and j < width:
                    for i in targets:
                        if j == k:
                            rows[i][j] = zero
                        elif j > k:
                            rows[i][j] = fx_mac(rows[i][j], mults[i], rows[k][j], subtract=True)
                        active.add((i, j))
                if j < width:
                    col = min(j, self.size)
                    for i in range(min(len(targets), self.size)):
                        grid[i][col].mode = PEMode.ELIMINATE
                self.state.active = frozenset(active)
                self._emit(
                    self.state.cycle, active, PEMode.ELIMINATE, lambda i, jj: rows[i][jj]
                )
                last = k == p - 1 and t == mac * span - 1
                if last:
                    self._commit_faddeev(rows, p, n, with_mean)
                    self._op_done = True
                yield

    def _commit_faddeev(self, rows, p, n, with_mean):
        grid = self.state.grid
        for i in range(n):
            out = rows[p + i][p:]
            for j in range(n):
                grid[i][j].accumulator = out[j]
            if with_mean:
                grid[i][self.size].accumulator = out[n]
        self.acc_shape = (n, n)
        self.acc_has_mean = with_mean
        self.state.drain = [rows[p + i][p:] for i in range(n)]
