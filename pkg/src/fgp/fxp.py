"""Bit-exact complex fixed-point arithmetic of the FGP datapath.

Values are two's-complement integers ("raw") scaled by ``2**-frac_bits``.
Every primitive computes its result at full precision with Python integers
and rounds exactly once, so results are reproducible on any platform.
Overflow never raises; it is resolved by the format's policy and recorded in
a sticky ``ovf`` flag that propagates through every operation.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DivideByZeroError

DIV_CYCLES = 4
"""Cycles taken by the sequential radix-2 divider for one real division."""


class Rounding(enum.Enum):
    TRUNCATE = "truncate"
    NEAREST_EVEN = "nearest_even"


class Overflow(enum.Enum):
    SATURATE = "saturate"
    WRAP = "wrap"


_QFORMAT = re.compile(r"^[Qq](\d+)\.(\d+)$")


@dataclass(frozen=True)
class FxFormat:
    """Q(int_bits, frac_bits) format; ``int_bits`` includes the sign bit."""

    int_bits: int = 8
    frac_bits: int = 24
    rounding: Rounding = Rounding.NEAREST_EVEN
    overflow: Overflow = Overflow.SATURATE

    def __post_init__(self):
        if self.int_bits < 1:
            raise ValueError("int_bits must be >= 1 (it includes the sign bit)")
        if self.frac_bits < 0:
            raise ValueError("frac_bits must be >= 0")
        if self.int_bits + self.frac_bits > 32:
            raise ValueError("word length int_bits + frac_bits must not exceed 32")

    @classmethod
    def parse(cls, text: str, **kwargs) -> "FxFormat":
        """Parse ``"Q8.24"`` style strings."""
        m = _QFORMAT.match(text.strip())
        if not m:
            raise ValueError(f"bad fixed-point format {text!r}, expected Qi.f")
        return cls(int(m.group(1)), int(m.group(2)), **kwargs)

    def __str__(self):
        return f"Q{self.int_bits}.{self.frac_bits}"

    @property
    def width(self) -> int:
        return self.int_bits + self.frac_bits

    @property
    def max_raw(self) -> int:
        return (1 << (self.width - 1)) - 1

    @property
    def min_raw(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    def fit(self, raw: int) -> tuple[int, bool]:
        """Apply the overflow policy; returns (raw, overflowed)."""
        if self.min_raw <= raw <= self.max_raw:
            return raw, False
        if self.overflow is Overflow.SATURATE:
            return (self.max_raw if raw > 0 else self.min_raw), True
        span = 1 << self.width
        return ((raw - self.min_raw) % span) + self.min_raw, True

    def round_div(self, num: int, den: int) -> int:
        """Round ``num / den`` (den > 0) to an integer under this format's mode."""
        q, r = divmod(num, den)
        if self.rounding is Rounding.TRUNCATE or r == 0:
            return q
        twice = 2 * r
        if twice > den or (twice == den and q & 1):
            return q + 1
        return q

    def quantize(self, value) -> tuple[int, bool]:
        """Exact rational value -> (raw, overflowed)."""
        frac = Fraction(value)
        raw = self.round_div(frac.numerator << self.frac_bits, frac.denominator)
        return self.fit(raw)


DEFAULT_FORMAT = FxFormat()


@dataclass(frozen=True)
class Fixed:
    """Real fixed-point scalar (pivot magnitudes and similar)."""

    raw: int
    fmt: FxFormat = DEFAULT_FORMAT
    ovf: bool = False

    def to_float(self) -> float:
        return self.raw / (1 << self.fmt.frac_bits)

    def to_fraction(self) -> Fraction:
        return Fraction(self.raw, 1 << self.fmt.frac_bits)


@dataclass(frozen=True)
class FixedComplex:
    re: int
    im: int
    fmt: FxFormat = DEFAULT_FORMAT
    ovf: bool = False

    @classmethod
    def from_complex(cls, z, fmt: FxFormat = DEFAULT_FORMAT) -> "FixedComplex":
        z = complex(z)
        re_raw, o1 = fmt.quantize(z.real)
        im_raw, o2 = fmt.quantize(z.imag)
        return cls(re_raw, im_raw, fmt, o1 or o2)

    @classmethod
    def zero(cls, fmt: FxFormat = DEFAULT_FORMAT) -> "FixedComplex":
        return cls(0, 0, fmt)

    @classmethod
    def one(cls, fmt: FxFormat = DEFAULT_FORMAT) -> "FixedComplex":
        return cls(1 << fmt.frac_bits, 0, fmt)

    def to_complex(self) -> complex:
        s = 1 << self.fmt.frac_bits
        return complex(self.re / s, self.im / s)

    def to_fractions(self) -> tuple[Fraction, Fraction]:
        s = 1 << self.fmt.frac_bits
        return Fraction(self.re, s), Fraction(self.im, s)

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def hex(self) -> str:
        return f"{self.re & 0xFFFFFFFF:08x}{self.im & 0xFFFFFFFF:08x}"

    def __repr__(self):
        return f"FixedComplex({self.to_complex()!r}, {self.fmt})"


def _make(re_raw: int, im_raw: int, fmt: FxFormat, ovf: bool) -> FixedComplex:
    re_raw, o1 = fmt.fit(re_raw)
    im_raw, o2 = fmt.fit(im_raw)
    return FixedComplex(re_raw, im_raw, fmt, ovf or o1 or o2)


def _check_formats(*vals):
    fmt = vals[0].fmt
    for v in vals[1:]:
        if v.fmt != fmt:
            raise ValueError(f"mixed fixed-point formats {fmt} and {v.fmt}")
    return fmt


def fx_neg(a: FixedComplex) -> FixedComplex:
    return _make(-a.re, -a.im, a.fmt, a.ovf)


def fx_conj(a: FixedComplex) -> FixedComplex:
    return _make(a.re, -a.im, a.fmt, a.ovf)


def fx_mac(acc: FixedComplex, a: FixedComplex, b: FixedComplex, subtract: bool = False) -> FixedComplex:
    """``acc + a*b`` (or ``acc - a*b``) with one rounding after the exact product."""
    fmt = _check_formats(acc, a, b)
    f = fmt.frac_bits
    pr = a.re * b.re - a.im * b.im
    pi = a.re * b.im + a.im * b.re
    if subtract:
        pr, pi = -pr, -pi
    one = 1 << f
    re_raw = fmt.round_div((acc.re << f) + pr, one)
    im_raw = fmt.round_div((acc.im << f) + pi, one)
    return _make(re_raw, im_raw, fmt, acc.ovf or a.ovf or b.ovf)


def fx_abs2(a: FixedComplex) -> Fixed:
    """Squared magnitude ``re**2 + im**2``; no square root is ever needed for pivoting."""
    fmt = a.fmt
    raw = fmt.round_div(a.re * a.re + a.im * a.im, 1 << fmt.frac_bits)
    raw, ovf = fmt.fit(raw)
    return Fixed(raw, fmt, a.ovf or ovf)


def radix2_divide(dividend: int, divisor: int) -> tuple[int, int]:
    """Restoring binary long division of non-negative integers.

    Produces one quotient bit per iteration, exactly as a sequential radix-2
    divider does; returns ``(quotient, remainder)``.
    """
    if divisor <= 0 or dividend < 0:
        raise ValueError("radix2_divide expects dividend >= 0 and divisor > 0")
    q = 0
    r = 0
    for bit in range(dividend.bit_length() - 1, -1, -1):
        r = (r << 1) | ((dividend >> bit) & 1)
        q <<= 1
        if r >= divisor:
            r -= divisor
            q |= 1
    return q, r


def _divider(num: int, den: int, fmt: FxFormat) -> int:
    # signed num / den (den > 0) in raw units, rounded per fmt
    mag_q, rem = radix2_divide(abs(num) << fmt.frac_bits, den)
    neg = num < 0
    if fmt.rounding is Rounding.TRUNCATE:
        # two's-complement truncation is floor
        return -(mag_q + (rem != 0)) if neg else mag_q
    twice = 2 * rem
    if twice > den or (twice == den and mag_q & 1):
        mag_q += 1
    return -mag_q if neg else mag_q


def fx_div_radix2(num: FixedComplex, den: FixedComplex) -> tuple[FixedComplex, int]:
    """Complex division via ``(ac+bd)/(c²+d²) + i(bc-ad)/(c²+d²)``.

    The two real quotients run back to back on one sequential divider, so the
    returned cycle count is ``2 * DIV_CYCLES``.
    """
    fmt = _check_formats(num, den)
    a, b, c, d = num.re, num.im, den.re, den.im
    mag2 = c * c + d * d
    if mag2 == 0:
        raise DivideByZeroError("complex division by zero")
    re_raw = _divider(a * c + b * d, mag2, fmt)
    im_raw = _divider(b * c - a * d, mag2, fmt)
    return _make(re_raw, im_raw, fmt, num.ovf or den.ovf), 2 * DIV_CYCLES


# -- matrix helpers ---------------------------------------------------------

FxMatrix = list  # list[list[FixedComplex]]
FxVector = list  # list[FixedComplex]


def to_fixed(values, fmt: FxFormat = DEFAULT_FORMAT):
    """numpy scalar/vector/matrix -> nested lists of FixedComplex."""
    arr = np.asarray(values, dtype=complex)
    if arr.ndim == 0:
        return FixedComplex.from_complex(arr.item(), fmt)
    return [to_fixed(row, fmt) for row in arr]


def to_float(values) -> np.ndarray:
    """Nested lists of FixedComplex -> complex ndarray."""
    if isinstance(values, FixedComplex):
        return np.asarray(values.to_complex())
    return np.array([to_float(v) for v in values], dtype=complex)


def zeros(rows: int, cols: int, fmt: FxFormat = DEFAULT_FORMAT) -> FxMatrix:
    z = FixedComplex.zero(fmt)
    return [[z] * cols for _ in range(rows)]


def identity(n: int, fmt: FxFormat = DEFAULT_FORMAT) -> FxMatrix:
    m = zeros(n, n, fmt)
    for i in range(n):
        m[i][i] = FixedComplex.one(fmt)
    return m


def conj_transpose(m: FxMatrix) -> FxMatrix:
    if not m:
        return []
    return [[fx_conj(m[i][j]) for i in range(len(m))] for j in range(len(m[0]))]


def negate(m: FxMatrix) -> FxMatrix:
    return [[fx_neg(v) for v in row] for row in m]


def any_overflow(values) -> bool:
    if isinstance(values, (FixedComplex, Fixed)):
        return values.ovf
    return any(any_overflow(v) for v in values)


class FxMessage:
    """A fixed-point message slot: matrix (V or W) plus mean column (m or Wm)."""

    __slots__ = ("cov", "mean")

    def __init__(self, cov, mean=None):
        self.cov = [list(row) for row in cov]
        self.mean = list(mean) if mean is not None else None

    @classmethod
    def from_float(cls, cov, mean=None, fmt: FxFormat = DEFAULT_FORMAT) -> "FxMessage":
        return cls(to_fixed(np.atleast_2d(cov), fmt), None if mean is None else to_fixed(np.atleast_1d(mean), fmt))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.cov), (len(self.cov[0]) if self.cov else 0)

    def raw(self) -> tuple:
        """Hashable raw-bit view used for bit-exact comparisons."""
        cov = tuple((v.re, v.im) for row in self.cov for v in row)
        mean = None if self.mean is None else tuple((v.re, v.im) for v in self.mean)
        return self.shape, cov, mean

    def __eq__(self, other):
        return isinstance(other, FxMessage) and self.raw() == other.raw()

    def __repr__(self):
        return f"FxMessage(shape={self.shape}, mean={'yes' if self.mean is not None else 'no'})"
