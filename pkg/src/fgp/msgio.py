"""Plain-text message/matrix files and 32-bit hex memory dumps.

Message file::

    msg 2 MeanCov
    1.0+0.0j 2.0+0.0j          # mean (or Wm)
    1.0+0.0j 0.0+0.0j          # matrix rows (V or W)
    0.0+0.0j 1.0+0.0j

Matrix file (state matrices)::

    mat 1 4
    0.5+0.0j -0.5+0.0j 0.5+0.0j 0.5+0.0j

Tokens are ``re+imj`` complex literals; ``#`` starts a comment.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import AsmError
from .fxp import FixedComplex, FxFormat
from .gmp import GaussianMessage, Param


def format_complex(z: complex) -> str:
    z = complex(z)
    return f"{z.real!r}{z.imag:+}j"


def _rows(text: str):
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].split()
        if body:
            yield lineno, body


def _parse_tokens(tokens, lineno):
    try:
        return [complex(t) for t in tokens]
    except ValueError as exc:
        raise AsmError(f"bad complex literal: {exc}", lineno) from None


def parse_message(text: str) -> GaussianMessage:
    rows = list(_rows(text))
    if not rows or rows[0][1][0] != "msg" or len(rows[0][1]) != 3:
        raise AsmError("expected header 'msg <n> <MeanCov|WeightedMean>'", rows[0][0] if rows else 1)
    lineno, (_, n_text, param_text) = rows[0]
    try:
        n = int(n_text)
        param = Param(param_text)
    except ValueError:
        raise AsmError(f"bad message header {' '.join(rows[0][1])!r}", lineno) from None
    body = rows[1:]
    if len(body) != n + 1:
        raise AsmError(f"expected {n + 1} data rows, found {len(body)}", lineno)
    values = []
    for ln, tokens in body:
        if len(tokens) != n:
            raise AsmError(f"expected {n} entries, found {len(tokens)}", ln)
        values.append(_parse_tokens(tokens, ln))
    return GaussianMessage(np.array(values[0]), np.array(values[1:]), param)


def format_message(msg: GaussianMessage) -> str:
    lines = [f"msg {msg.dim} {msg.param.value}"]
    lines.append(" ".join(format_complex(v) for v in msg.mean))
    lines.extend(" ".join(format_complex(v) for v in row) for row in msg.cov)
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    rows = list(_rows(text))
    if not rows or rows[0][1][0] != "mat" or len(rows[0][1]) != 3:
        raise AsmError("expected header 'mat <rows> <cols>'", rows[0][0] if rows else 1)
    lineno, (_, r_text, c_text) = rows[0]
    try:
        r, c = int(r_text), int(c_text)
    except ValueError:
        raise AsmError("bad matrix header", lineno) from None
    body = rows[1:]
    if len(body) != r:
        raise AsmError(f"expected {r} rows, found {len(body)}", lineno)
    values = []
    for ln, tokens in body:
        if len(tokens) != c:
            raise AsmError(f"expected {c} entries, found {len(tokens)}", ln)
        values.append(_parse_tokens(tokens, ln))
    return np.array(values, dtype=complex).reshape(r, c)


def format_matrix(a) -> str:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    lines = [f"mat {a.shape[0]} {a.shape[1]}"]
    lines.extend(" ".join(format_complex(v) for v in row) for row in a)
    return "\n".join(lines) + "\n"


def load(path) -> GaussianMessage | np.ndarray:
    """Read either a ``msg`` or a ``mat`` file, dispatching on the header."""
    text = Path(path).read_text()
    for _, tokens in _rows(text):
        return parse_matrix(text) if tokens[0] == "mat" else parse_message(text)
    raise AsmError(f"{path}: empty file")


# -- hex words ---------------------------------------------------------------


def to_words(values) -> list[int]:
    """Flatten FixedComplex values into (re, im) 32-bit words."""
    words = []
    for v in values:
        words.append(v.re & 0xFFFFFFFF)
        words.append(v.im & 0xFFFFFFFF)
    return words


def from_words(words, fmt: FxFormat) -> list[FixedComplex]:
    if len(words) % 2:
        raise ValueError("odd number of words in complex dump")

    def signed(w):
        w &= 0xFFFFFFFF
        return w - (1 << 32) if w & 0x80000000 else w

    out = []
    for i in range(0, len(words), 2):
        re, im = signed(words[i]), signed(words[i + 1])
        for raw in (re, im):
            if not fmt.min_raw <= raw <= fmt.max_raw:
                raise ValueError(f"word {raw:#x} does not fit {fmt}")
        out.append(FixedComplex(re, im, fmt))
    return out


def format_hex(words) -> str:
    return "".join(f"{w & 0xFFFFFFFF:08x}\n" for w in words)


def parse_hex(text: str) -> list[int]:
    return [int(tok, 16) for _, tokens in _rows(text) for tok in tokens]
