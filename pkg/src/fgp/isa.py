"""FGP instruction set: six instructions, 32-bit encoding, assembler/disassembler.

Assembly syntax (one instruction per line, ``#`` comments, hex addresses)::

    prg  <index>
    loop <count> <extent>
    mma  <hA> <bankA> <addrA> <nA> <bankB> <addrB> <hB> <nB> <part>
    mms  <hA> <bankA> <addrA> <nA> <bankB> <addrB> <hB> <nB> <part>
    fad  <h> <bank> <addr> <part>
    smm  <h> <bank> <addr> <part>

Word layout (bit 31 is the MSB)::

    [31:28] opcode   1 mma, 2 mms, 3 fad, 4 smm, 5 loop, 6 prg
    mma/mms  [27] part [26] hA [25:23] bankA [22:17] addrA [16] nA
             [15:13] bankB [12:7] addrB [6] hB [5] nB [4:0] zero
    fad/smm  [27] part [26] h [25:23] bank [22:17] addr [16:0] zero
    loop     [27:12] count [11:0] extent (>= 1)
    prg      [27:8] zero [7:0] index

Binary image: little-endian words, magic ``0x46475030`` ("FGP0"), word count,
then the instruction words.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Optional

from .errors import AsmError, DecodeError

MAGIC = 0x46475030

BANK_AMEM = 0
BANK_MMEM = 1
BANK_AMEM_SECTION = 2
BANK_MMEM_SECTION = 3
BANK_NAMES = {
    BANK_AMEM: "state-matrix memory",
    BANK_MMEM: "message memory",
    BANK_AMEM_SECTION: "state-matrix memory, section-indexed",
    BANK_MMEM_SECTION: "message memory, section-indexed",
}

MAX_BANK = 7
MAX_ADDR = 0x3F
MAX_LOOP_COUNT = 0xFFFF
MAX_LOOP_EXTENT = 0xFFF
MAX_PRG_INDEX = 0xFF


class Opcode(enum.IntEnum):
    MMA = 1
    MMS = 2
    FAD = 3
    SMM = 4
    LOOP = 5
    PRG = 6

    @property
    def mnemonic(self) -> str:
        return self.name.lower()


MNEMONICS = {op.mnemonic: op for op in Opcode}


@dataclass(frozen=True)
class Operand:
    bank: int
    addr: int
    herm: bool = False
    neg: bool = False

    def validate(self):
        if not 0 <= self.bank <= MAX_BANK:
            raise ValueError(f"bank {self.bank} outside 0..{MAX_BANK}")
        if not 0 <= self.addr <= MAX_ADDR:
            raise ValueError(f"address {self.addr:#x} outside 0..{MAX_ADDR:#x}")


@dataclass(frozen=True)
class Instruction:
    """Decoded instruction.

    ``a``/``b`` are the two multiplicand operands of mma/mms; fad keeps its
    streamed operand in ``a``; smm keeps its destination in ``dest``.
    """

    opcode: Opcode
    a: Optional[Operand] = None
    b: Optional[Operand] = None
    dest: Optional[Operand] = None
    part: bool = False
    count: int = 0
    extent: int = 0
    index: int = 0

    def validate(self):
        op = self.opcode
        if op in (Opcode.MMA, Opcode.MMS):
            if self.a is None or self.b is None:
                raise ValueError(f"{op.mnemonic} needs two operands")
            self.a.validate()
            self.b.validate()
        elif op is Opcode.FAD:
            if self.a is None or self.a.neg:
                raise ValueError("fad needs one operand without negation")
            self.a.validate()
        elif op is Opcode.SMM:
            if self.dest is None or self.dest.neg:
                raise ValueError("smm needs a destination without negation")
            self.dest.validate()
        elif op is Opcode.LOOP:
            if not 0 <= self.count <= MAX_LOOP_COUNT:
                raise ValueError(f"loop count {self.count} outside 0..{MAX_LOOP_COUNT}")
            if not 1 <= self.extent <= MAX_LOOP_EXTENT:
                raise ValueError(f"loop extent {self.extent} outside 1..{MAX_LOOP_EXTENT}")
        elif op is Opcode.PRG:
            if not 0 <= self.index <= MAX_PRG_INDEX:
                raise ValueError(f"program index {self.index} outside 0..{MAX_PRG_INDEX}")

    def text(self) -> str:
        """Canonical assembly: lowercase, single spaces, hex addresses."""
        op = self.opcode
        if op in (Opcode.MMA, Opcode.MMS):
            a, b = self.a, self.b
            fields = [
                int(a.herm), a.bank, f"{a.addr:x}", int(a.neg),
                b.bank, f"{b.addr:x}", int(b.herm), int(b.neg), int(self.part),
            ]
        elif op in (Opcode.FAD, Opcode.SMM):
            o = self.a if op is Opcode.FAD else self.dest
            fields = [int(o.herm), o.bank, f"{o.addr:x}", int(self.part)]
        elif op is Opcode.LOOP:
            fields = [self.count, self.extent]
        else:
            fields = [self.index]
        return " ".join([op.mnemonic] + [str(f) for f in fields])

    def __str__(self):
        return self.text()


# -- encoding ----------------------------------------------------------------


def encode(instr: Instruction) -> int:
    instr.validate()
    op = instr.opcode
    word = int(op) << 28
    if op in (Opcode.MMA, Opcode.MMS):
        a, b = instr.a, instr.b
        word |= (
            (int(instr.part) << 27) | (int(a.herm) << 26) | (a.bank << 23) | (a.addr << 17)
            | (int(a.neg) << 16) | (b.bank << 13) | (b.addr << 7) | (int(b.herm) << 6)
            | (int(b.neg) << 5)
        )
    elif op in (Opcode.FAD, Opcode.SMM):
        o = instr.a if op is Opcode.FAD else instr.dest
        word |= (int(instr.part) << 27) | (int(o.herm) << 26) | (o.bank << 23) | (o.addr << 17)
    elif op is Opcode.LOOP:
        word |= (instr.count << 12) | instr.extent
    else:
        word |= instr.index
    return word


def decode(word: int, offset: Optional[int] = None) -> Instruction:
    if not 0 <= word <= 0xFFFFFFFF:
        raise DecodeError(f"{word!r} is not a 32-bit word", offset)
    code = word >> 28
    try:
        op = Opcode(code)
    except ValueError:
        raise DecodeError(f"invalid opcode {code} in {word:#010x}", offset) from None
    bit = lambda n: bool((word >> n) & 1)  # noqa: E731
    if op in (Opcode.MMA, Opcode.MMS):
        if word & 0x1F:
            raise DecodeError(f"reserved bits set in {word:#010x}", offset)
        a = Operand((word >> 23) & 7, (word >> 17) & 0x3F, bit(26), bit(16))
        b = Operand((word >> 13) & 7, (word >> 7) & 0x3F, bit(6), bit(5))
        return Instruction(op, a=a, b=b, part=bit(27))
    if op in (Opcode.FAD, Opcode.SMM):
        if word & 0x1FFFF:
            raise DecodeError(f"reserved bits set in {word:#010x}", offset)
        o = Operand((word >> 23) & 7, (word >> 17) & 0x3F, bit(26))
        if op is Opcode.FAD:
            return Instruction(op, a=o, part=bit(27))
        return Instruction(op, dest=o, part=bit(27))
    if op is Opcode.LOOP:
        extent = word & 0xFFF
        if extent == 0:
            raise DecodeError("loop extent must be >= 1", offset)
        return Instruction(op, count=(word >> 12) & 0xFFFF, extent=extent)
    if word & 0x0FFFFF00:
        raise DecodeError(f"reserved bits set in {word:#010x}", offset)
    return Instruction(op, index=word & 0xFF)


# -- program images ----------------------------------------------------------


@dataclass
class ProgramImage:
    words: list[int]
    program_table: dict[int, int] = field(default_factory=dict)

    @classmethod
    def from_words(cls, words) -> "ProgramImage":
        words = list(words)
        table = {}
        for offset, w in enumerate(words):
            instr = decode(w, offset)
            if instr.opcode is Opcode.PRG:
                if instr.index in table:
                    raise DecodeError(f"duplicate program index {instr.index}", offset)
                table[instr.index] = offset
        return cls(words, table)

    def instructions(self) -> list[Instruction]:
        return [decode(w, i) for i, w in enumerate(self.words)]

    def to_bytes(self) -> bytes:
        return struct.pack(f"<II{len(self.words)}I", MAGIC, len(self.words), *self.words)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProgramImage":
        if len(data) < 8:
            raise DecodeError("image shorter than its header")
        magic, count = struct.unpack_from("<II", data)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic:#010x}")
        if len(data) != 8 + 4 * count:
            raise DecodeError(f"header announces {count} words, file holds {(len(data) - 8) / 4:g}")
        return cls.from_words(struct.unpack_from(f"<{count}I", data, 8))

    def __len__(self):
        return len(self.words)


# -- assembler ---------------------------------------------------------------

_ARITY = {
    Opcode.MMA: 9,
    Opcode.MMS: 9,
    Opcode.FAD: 4,
    Opcode.SMM: 4,
    Opcode.LOOP: 2,
    Opcode.PRG: 1,
}


def _tokens(line: str):
    """(column, token) pairs with comments stripped; columns are 1-based."""
    body = line.split("#", 1)[0]
    col = 0
    out = []
    for tok in body.split():
        col = body.index(tok, col)
        out.append((col + 1, tok))
        col += len(tok)
    return out


def _field(tok, col, lineno, kind, lo, hi):
    text = tok.lower()
    try:
        if kind == "hex":
            if text.startswith("0x"):
                text = text[2:]
            value = int(text, 16)
        else:
            value = int(text, 10)
    except ValueError:
        raise AsmError(f"expected {'hex address' if kind == 'hex' else 'number'}, got {tok!r}", lineno, col) from None
    if not lo <= value <= hi:
        raise AsmError(f"value {tok} out of range {lo}..{hi if kind != 'hex' else hex(hi)}", lineno, col)
    return value


def _parse_line(tokens, lineno) -> Instruction:
    col, mnem = tokens[0]
    op = MNEMONICS.get(mnem.lower())
    if op is None:
        raise AsmError(f"unknown opcode {mnem!r}", lineno, col)
    args = tokens[1:]
    if len(args) != _ARITY[op]:
        raise AsmError(f"{op.mnemonic} takes {_ARITY[op]} fields, got {len(args)}", lineno, col)

    def f(i, kind="dec", lo=0, hi=1):
        c, t = args[i]
        return _field(t, c, lineno, kind, lo, hi)

    if op in (Opcode.MMA, Opcode.MMS):
        a = Operand(f(1, hi=MAX_BANK), f(2, "hex", hi=MAX_ADDR), bool(f(0)), bool(f(3)))
        b = Operand(f(4, hi=MAX_BANK), f(5, "hex", hi=MAX_ADDR), bool(f(6)), bool(f(7)))
        return Instruction(op, a=a, b=b, part=bool(f(8)))
    if op in (Opcode.FAD, Opcode.SMM):
        o = Operand(f(1, hi=MAX_BANK), f(2, "hex", hi=MAX_ADDR), bool(f(0)))
        if op is Opcode.FAD:
            return Instruction(op, a=o, part=bool(f(3)))
        return Instruction(op, dest=o, part=bool(f(3)))
    if op is Opcode.LOOP:
        return Instruction(op, count=f(0, hi=MAX_LOOP_COUNT), extent=f(1, lo=1, hi=MAX_LOOP_EXTENT))
    return Instruction(op, index=f(0, hi=MAX_PRG_INDEX))


def parse(text: str) -> list[Instruction]:
    instrs = []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        tokens = _tokens(line)
        if not tokens:
            continue
        instr = _parse_line(tokens, lineno)
        if instr.opcode is Opcode.PRG:
            if instr.index in seen:
                raise AsmError(
                    f"duplicate program index {instr.index} (first defined on line {seen[instr.index]})",
                    lineno,
                    tokens[1][0],
                )
            seen[instr.index] = lineno
        instrs.append(instr)
    return instrs


def assemble(text: str) -> ProgramImage:
    """Assemble source text into a program image; raises AsmError with location."""
    return ProgramImage.from_words(encode(i) for i in parse(text))


def disassemble(image: ProgramImage) -> str:
    return "".join(decode(w, i).text() + "\n" for i, w in enumerate(image.words))
