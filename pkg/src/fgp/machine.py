"""The FGP machine: memories, control FSM, operand routing and command port.

Operand routing conventions (the Transpose/Select/Mask units):

* A message-memory operand contributes its matrix (V or W) to the array.  Its
  ``neg`` flag negates only the mean, i.e. it selects the message of the
  negated variable, whose covariance is unchanged.
* A state-matrix-memory operand has no mean (it reads as zero); ``neg``
  negates the matrix itself.
* ``herm`` always applies the Hermitian transpose to the matrix.
* Banks 2 and 3 address state-matrix and message memory relative to the
  current loop iteration (``addr + i``), so one loop body can walk the
  per-section data of a chain factor graph.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import fxp, isa, msgio
from .errors import (
    AddressFault,
    BusyError,
    CapacityError,
    FGPError,
    ProgramError,
    SizeError,
)
from .fxp import FixedComplex, FxFormat, FxMessage
from .gmp import GaussianMessage
from .isa import Instruction, Opcode, ProgramImage
from .systolic import CycleModel, SystolicArray

MEMORY_BITS = 64 * 1024


@dataclass(frozen=True)
class MachineConfig:
    array_size: int = 4
    fmt: FxFormat = fxp.DEFAULT_FORMAT
    cycle_model: CycleModel = CycleModel()
    instr_overhead: int = 2
    memory_bits: int = MEMORY_BITS
    pm_words: int = 256

    @property
    def entry_bits(self) -> int:
        return 2 * self.fmt.width

    @property
    def message_slot_bits(self) -> int:
        n = self.array_size
        return (n * n + n) * self.entry_bits

    @property
    def matrix_slot_bits(self) -> int:
        return self.array_size ** 2 * self.entry_bits

    @property
    def amem_slots(self) -> int:
        # a quarter of the data memory holds state matrices
        return min(isa.MAX_ADDR + 1, (self.memory_bits // 4) // self.matrix_slot_bits)

    @property
    def mmem_slots(self) -> int:
        left = self.memory_bits - self.amem_slots * self.matrix_slot_bits
        return min(isa.MAX_ADDR + 1, left // self.message_slot_bits)

    @property
    def footprint_bits(self) -> int:
        return self.amem_slots * self.matrix_slot_bits + self.mmem_slots * self.message_slot_bits


class FSM(enum.Enum):
    IDLE = "idle"
    FETCH = "fetch"
    DECODE = "decode"
    EXECUTE = "execute"
    REPLY = "reply"


class CommandKind(enum.Enum):
    LOAD_PROGRAM = "LOAD"
    START_PROGRAM = "START"
    WRITE_MEMORY = "WRITE"
    READ_MEMORY = "READ"
    STATUS = "STATUS"


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    payload: tuple = ()


@dataclass(frozen=True)
class Status:
    ok: bool
    detail: str = ""
    code: str = ""
    data: object = None

    @classmethod
    def error(cls, exc: Exception) -> "Status":
        code = exc.code if isinstance(exc, FGPError) else "INTERNAL"
        return cls(False, str(exc), code)

    def __str__(self):
        if self.ok:
            return f"OK {self.detail}".rstrip()
        return f"ERR {self.code} {self.detail}".rstrip()


@dataclass
class ExecRecord:
    pc: int
    iteration: int
    text: str
    cycles: int


@dataclass
class RunResult:
    program: int
    sections: int
    total_cycles: int
    records: list = field(default_factory=list)

    def cycles_by_opcode(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            op = r.text.split()[0]
            out[op] = out.get(op, 0) + r.cycles
        return out


class Machine:
    """Sequential model of one FGP; commands are serialized by a lock."""

    def __init__(self, config: MachineConfig = MachineConfig(), trace: Optional[Callable[[str], None]] = None):
        self.config = config
        self.fmt = config.fmt
        self.array = SystolicArray(config.array_size, config.fmt, config.cycle_model, trace)
        self.pm: list[Instruction] = []
        self.image: Optional[ProgramImage] = None
        self.program_table: dict[int, int] = {}
        self.mmem: dict[int, FxMessage] = {}
        self.amem: dict[int, FxMessage] = {}
        self.fsm = FSM.IDLE
        self.pc = 0
        self.loop_counter = 0
        self.iteration = 0
        self.status = Status(True, "reset")
        self.last_run: Optional[RunResult] = None
        self._result_reg = None  # "state" or "acc": what smm drains
        # test hook: rewrites every slot stored by smm (fault injection)
        self.fault_hook: Optional[Callable[[FxMessage], FxMessage]] = None
        self._lock = threading.Lock()
        self._busy = False

    # -- memories ---------------------------------------------------------

    def _memory(self, bank: int, addr: int):
        if bank in (isa.BANK_AMEM, isa.BANK_AMEM_SECTION):
            mem, slots, name = self.amem, self.config.amem_slots, "state-matrix"
        elif bank in (isa.BANK_MMEM, isa.BANK_MMEM_SECTION):
            mem, slots, name = self.mmem, self.config.mmem_slots, "message"
        else:
            raise AddressFault(f"bank {bank} is not mapped")
        if bank in (isa.BANK_AMEM_SECTION, isa.BANK_MMEM_SECTION):
            addr += self.iteration
        if not 0 <= addr < slots:
            raise AddressFault(f"{name} memory address {addr:#x} beyond {slots} slots")
        return mem, addr

    def _coerce(self, bank: int, data) -> FxMessage:
        n = self.config.array_size
        if isinstance(data, GaussianMessage):
            slot = FxMessage.from_float(data.cov, data.mean, self.fmt)
        elif isinstance(data, FxMessage):
            slot = FxMessage(data.cov, data.mean)
            for v in [v for row in slot.cov for v in row] + (slot.mean or []):
                if v.fmt != self.fmt:
                    raise ValueError(f"data is in {v.fmt}, machine uses {self.fmt}")
        else:
            slot = FxMessage.from_float(np.atleast_2d(np.asarray(data, dtype=complex)), None, self.fmt)
        rows, cols = slot.shape
        if not (1 <= rows <= n and 1 <= cols <= n):
            raise SizeError(f"{rows}x{cols} block does not fit a {n}x{n} slot")
        if bank in (isa.BANK_AMEM, isa.BANK_AMEM_SECTION):
            slot.mean = None
        elif slot.mean is not None and len(slot.mean) != rows:
            raise SizeError(f"mean length {len(slot.mean)} does not match {rows} rows")
        return slot

    def write_memory(self, bank: int, addr: int, data) -> None:
        """Data-in port: store a message (or state matrix) in one slot."""
        mem, addr = self._memory(bank, addr)
        mem[addr] = self._coerce(bank, data)

    def read_memory(self, bank: int, addr: int) -> FxMessage:
        """Data-out port; never-written slots read as zeros of full slot size."""
        mem, addr = self._memory(bank, addr)
        if addr in mem:
            s = mem[addr]
            return FxMessage(s.cov, s.mean)
        n = self.config.array_size
        is_amem = mem is self.amem
        return FxMessage(fxp.zeros(n, n, self.fmt), None if is_amem else [FixedComplex.zero(self.fmt)] * n)

    def dump(self, bank: int, addr: int) -> list[int]:
        s = self.read_memory(bank, addr)
        return msgio.to_words([v for row in s.cov for v in row] + (s.mean or []))

    # -- program memory ---------------------------------------------------

    def load_program(self, image: ProgramImage) -> Status:
        """Replace the whole program memory (last write wins)."""
        if self._busy or self.fsm is not FSM.IDLE:
            raise BusyError("machine is executing a program")
        if len(image.words) > self.config.pm_words:
            raise CapacityError(f"image has {len(image.words)} words, PM holds {self.config.pm_words}")
        self.pm = image.instructions()
        self.image = image
        self.program_table = dict(image.program_table)
        progs = ",".join(str(k) for k in sorted(self.program_table)) or "-"
        return Status(True, f"words={len(image.words)} programs={progs}")

    def _program_bounds(self, index: int) -> tuple[int, int]:
        if index not in self.program_table:
            raise ProgramError(f"no program {index} loaded")
        start = self.program_table[index] + 1
        end = start
        while end < len(self.pm) and self.pm[end].opcode is not Opcode.PRG:
            end += 1
        return start, end

    # -- execution --------------------------------------------------------

    def _idle_cycles(self, n: int):
        for _ in range(n):
            self.array.step()

    def _operand(self, op: isa.Operand, want_mean: bool):
        """Select/Mask: returns (matrix, matrix_negated_flag, mean or None)."""
        mem, _ = self._memory(op.bank, op.addr)
        slot = self.read_memory(op.bank, op.addr)
        is_message = mem is self.mmem
        mean = None
        if want_mean:
            rows = len(slot.cov[0]) if op.herm else len(slot.cov)
            if is_message and slot.mean is not None:
                mean = slot.mean[:rows]
                if op.neg:
                    mean = [fxp.fx_neg(v) for v in mean]
            else:
                mean = [FixedComplex.zero(self.fmt)] * rows
        return slot.cov, (op.neg and not is_message), mean

    def execute_instruction(self, instr: Instruction) -> int:
        """Run one datapath or store instruction; returns its cycles (overhead included)."""
        overhead = self.config.instr_overhead
        self.fsm = FSM.FETCH
        self._idle_cycles(min(1, overhead))
        self.fsm = FSM.DECODE
        self._idle_cycles(overhead - min(1, overhead))
        self.fsm = FSM.EXECUTE
        arr = self.array
        op = instr.opcode
        if op is Opcode.MMA:
            p, neg_p, mean = self._operand(instr.a, instr.part)
            q, neg_q, _ = self._operand(instr.b, False)
            cycles = arr.array_matmul(p, q, (instr.a.herm, instr.b.herm), (neg_p, neg_q), mean)
            self._result_reg = "state"
        elif op is Opcode.MMS:
            p, neg_p, _ = self._operand(instr.a, False)
            y, neg_y, y_mean = self._operand(instr.b, instr.part)
            cycles = arr.array_matmul_shift(y, p, (instr.a.herm, instr.b.herm), (neg_p, neg_y), y_mean)
            self._result_reg = "acc"
        elif op is Opcode.FAD:
            d, _, d_mean = self._operand(instr.a, instr.part)
            _, cycles = arr.array_faddeev(d, d_mean, instr.a.herm)
            self._result_reg = "acc"
        elif op is Opcode.SMM:
            cycles = self._store(instr)
        else:
            cycles = 0
        self.fsm = FSM.IDLE
        return overhead + cycles

    def _store(self, instr: Instruction) -> int:
        arr = self.array
        if self._result_reg is None:
            raise ProgramError("smm before any array result")
        if self._result_reg == "state":
            cov, mean = arr.state_matrix(), arr.state_mean()
        else:
            cov, mean = arr.acc_matrix(), arr.acc_mean()
        rows = len(cov)
        if instr.dest.herm:
            cov = fxp.conj_transpose(cov)
        if instr.part:
            if mean is None or len(mean) != len(cov):
                mean = [FixedComplex.zero(self.fmt)] * len(cov)
        else:
            mean = None
        bank = instr.dest.bank
        mem, addr = self._memory(bank, instr.dest.addr)
        if mem is self.mmem and mean is None:
            mean = [FixedComplex.zero(self.fmt)] * len(cov)
        slot = FxMessage(cov, None if mem is self.amem else mean)
        if self.fault_hook is not None:
            slot = self.fault_hook(slot)
        mem[addr] = slot
        cycles = self.config.cycle_model.store(rows)
        self._idle_cycles(cycles)
        return cycles

    def _exec_at(self, pc: int, result: RunResult) -> int:
        self.pc = pc
        instr = self.pm[pc]
        try:
            cycles = self.execute_instruction(instr)
        except FGPError as exc:
            exc.pc = pc
            exc.args = (f"pc={pc} ({instr.text()}): {exc}",)
            raise
        result.records.append(ExecRecord(pc, self.iteration, instr.text(), cycles))
        return cycles

    def start_program(self, index: int, sections: int = 0) -> RunResult:
        """Execute program ``index``; ``loop 0 n`` repeats ``sections`` times."""
        if self._busy:
            raise BusyError("machine is executing a program")
        start, end = self._program_bounds(index)
        self._busy = True
        result = RunResult(index, sections, 0)
        clock0 = self.array.state.cycle
        try:
            pc = start
            while pc < end:
                instr = self.pm[pc]
                if instr.opcode is Opcode.LOOP:
                    body_end = pc + 1 + instr.extent
                    if body_end > end:
                        raise ProgramError(f"pc={pc}: loop body runs past the end of program {index}")
                    body = range(pc + 1, body_end)
                    if any(self.pm[q].opcode in (Opcode.LOOP, Opcode.PRG) for q in body):
                        raise ProgramError(f"pc={pc}: nested loops are not supported")
                    self.pc = pc
                    self._idle_cycles(self.config.instr_overhead)
                    result.records.append(ExecRecord(pc, 0, instr.text(), self.config.instr_overhead))
                    count = instr.count or sections
                    for it in range(count):
                        self.iteration = it
                        self.loop_counter = count - it
                        for q in body:
                            self._exec_at(q, result)
                    self.iteration = 0
                    self.loop_counter = 0
                    pc = body_end
                else:
                    self._exec_at(pc, result)
                    pc += 1
        finally:
            self._busy = False
            self.fsm = FSM.IDLE
            self.iteration = 0
        result.total_cycles = self.array.state.cycle - clock0
        self.last_run = result
        return result

    # -- command port -----------------------------------------------------

    def submit(self, cmd: Command) -> Status:
        """Process one command; always yields exactly one status reply."""
        with self._lock:
            try:
                status = self._dispatch(cmd)
            except Exception as exc:  # every failure becomes an ERR reply
                status = Status.error(exc)
            self.fsm = FSM.REPLY
            self.status = status
            self.fsm = FSM.IDLE
            return status

    def _dispatch(self, cmd: Command) -> Status:
        kind, args = cmd.kind, cmd.payload
        if kind is CommandKind.LOAD_PROGRAM:
            (image,) = args
            return self.load_program(image)
        if kind is CommandKind.START_PROGRAM:
            index, sections = args
            run = self.start_program(index, sections)
            return Status(True, f"cycles={run.total_cycles}", data=run)
        if kind is CommandKind.WRITE_MEMORY:
            bank, addr, data = args
            self.write_memory(bank, addr, data)
            return Status(True, f"bank={bank} addr={addr:x}")
        if kind is CommandKind.READ_MEMORY:
            bank, addr = args
            slot = self.read_memory(bank, addr)
            rows, cols = slot.shape
            words = msgio.to_words([v for row in slot.cov for v in row] + (slot.mean or []))
            hexwords = " ".join(f"{w:08x}" for w in words)
            return Status(True, f"{rows} {cols} {int(slot.mean is not None)} {hexwords}", data=slot)
        if kind is CommandKind.STATUS:
            progs = ",".join(str(k) for k in sorted(self.program_table)) or "-"
            last = self.last_run.total_cycles if self.last_run else 0
            return Status(True, f"state={self.fsm.value} programs={progs} last_cycles={last}")
        raise ProgramError(f"unknown command {kind}")

    def handle_line(self, line: str, base: Path = Path(".")) -> str:
        """Line protocol: LOAD/START/WRITE/READ/STATUS -> ``OK ...`` or ``ERR ...``."""
        parts = line.split()
        try:
            cmd = parse_command(parts, base, self.fmt)
        except Exception as exc:
            with self._lock:
                self.status = Status.error(exc)
                return str(self.status)
        return str(self.submit(cmd))


def flip_lsb(slot: FxMessage) -> FxMessage:
    """Fault model for negative controls: flip the LSB of the first real part."""
    cov = [list(row) for row in slot.cov]
    v = cov[0][0]
    cov[0][0] = FixedComplex(v.re ^ 1, v.im, v.fmt, v.ovf)
    return FxMessage(cov, slot.mean)


def load_image(path: Path) -> ProgramImage:
    data = Path(path).read_bytes()
    if data[:4] == isa.MAGIC.to_bytes(4, "little"):
        return ProgramImage.from_bytes(data)
    return isa.assemble(data.decode())


def parse_command(parts: list[str], base: Path = Path("."), fmt: FxFormat = fxp.DEFAULT_FORMAT) -> Command:
    if not parts:
        raise ProgramError("empty command")
    try:
        kind = CommandKind(parts[0].upper())
    except ValueError:
        raise ProgramError(f"unknown command {parts[0]!r}") from None
    args = parts[1:]
    expected = {
        CommandKind.LOAD_PROGRAM: 1,
        CommandKind.START_PROGRAM: 2,
        CommandKind.WRITE_MEMORY: 3,
        CommandKind.READ_MEMORY: 2,
        CommandKind.STATUS: 0,
    }[kind]
    if len(args) != expected:
        raise ProgramError(f"{kind.value} takes {expected} arguments")
    if kind is CommandKind.LOAD_PROGRAM:
        return Command(kind, (load_image(base / args[0]),))
    if kind is CommandKind.START_PROGRAM:
        return Command(kind, (int(args[0]), int(args[1])))
    if kind is CommandKind.WRITE_MEMORY:
        return Command(kind, (int(args[0]), int(args[1], 16), msgio.load(base / args[2])))
    if kind is CommandKind.READ_MEMORY:
        return Command(kind, (int(args[0]), int(args[1], 16)))
    return Command(kind)
