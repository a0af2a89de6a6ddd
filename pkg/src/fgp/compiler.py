"""Graph-program compiler: ``.fgg`` text -> schedule -> optimized FGP assembly.

Graph-program grammar (one statement per line, ``#`` comments)::

    input  NAME DIM [wm]            # message written by the host
    stream NAME DIM COUNT [wm]      # per-section messages NAME[0..COUNT-1]
    matrix NAME ROWSxCOLS           # state matrix
    smatrix NAME ROWSxCOLS COUNT    # per-section state matrices
    loop COUNT                      # body statements may index with i, i+k
      OUT = NODE(ARG, ...)
    end
    OUT = NODE(ARG, ...)
    output NAME

Nodes and their arguments::

    add_f(x, y)   add_b(x, y)   eq(x, y)
    mult_f(x, A)  mult_b(y, A)  mult_eq_f(x, y, A)  add_mult_f(x, y, A)

Every assignment creates a fresh message id (``x``, ``x.1``, ``x.2``, ...),
so the schedule is in single-assignment form before memory optimization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import fxp, gmp, isa, seqfx
from .errors import AsmError, CapacityError, DimensionError, SizeError
from .fxp import FxFormat, FxMessage
from .gmp import Direction, GaussianMessage, Param
from .isa import Instruction, Opcode, Operand


@dataclass(frozen=True)
class NodeSpec:
    messages: int  # number of message arguments
    has_matrix: bool
    in_forms: tuple  # required Param of each message argument
    out_form: Param


_MC, _WM = Param.MEAN_COV, Param.WEIGHTED_MEAN

NODES = {
    "add_f": NodeSpec(2, False, (_MC, _MC), _MC),
    "add_b": NodeSpec(2, False, (_MC, _MC), _MC),
    "eq": NodeSpec(2, False, (_WM, _WM), _WM),
    "mult_f": NodeSpec(1, True, (_MC,), _MC),
    "mult_b": NodeSpec(1, True, (_WM,), _WM),
    "mult_eq_f": NodeSpec(2, True, (_MC, _MC), _MC),
    "add_mult_f": NodeSpec(2, True, (_MC, _MC), _MC),
}


# -- front end ---------------------------------------------------------------


@dataclass(frozen=True)
class MessageDecl:
    name: str
    dim: int
    form: Param = Param.MEAN_COV
    count: Optional[int] = None  # None for a single message, else stream length


@dataclass(frozen=True)
class MatrixDecl:
    name: str
    rows: int
    cols: int
    count: Optional[int] = None


@dataclass(frozen=True)
class Assign:
    target: str
    node: str
    args: tuple  # raw argument tokens
    line: int


@dataclass(frozen=True)
class LoopBlock:
    count: int
    body: tuple
    line: int


@dataclass
class GraphProgram:
    messages: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)
    body: list = field(default_factory=list)  # Assign | LoopBlock
    outputs: list = field(default_factory=list)


_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_ASSIGN = re.compile(rf"^({_IDENT})\s*=\s*({_IDENT})\s*\((.*)\)$")
_REF = re.compile(rf"^({_IDENT})(?:\[\s*(i\s*(?:\+\s*\d+)?|\d+)\s*\])?$")
_SHAPE = re.compile(r"^(\d+)x(\d+)$")


def _int(tok: str, lineno: int, what: str, lo: int = 1) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise AsmError(f"{what} must be an integer, got {tok!r}", lineno) from None
    if v < lo:
        raise AsmError(f"{what} must be >= {lo}, got {v}", lineno)
    return v


def _form(tokens, lineno) -> Param:
    if not tokens:
        return Param.MEAN_COV
    if tokens == ["wm"]:
        return Param.WEIGHTED_MEAN
    raise AsmError(f"unexpected trailing tokens {' '.join(tokens)!r}", lineno)


def parse_fgg(text: str) -> GraphProgram:
    """Parse graph-program text; syntax errors carry line numbers."""
    prog = GraphProgram()
    loop: Optional[tuple[int, int, list]] = None
    declared = set()

    def declare(name, lineno):
        if name in declared:
            raise AsmError(f"{name!r} declared twice", lineno)
        declared.add(name)

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kw = tokens[0]
        if kw == "input" and len(tokens) >= 3:
            declare(tokens[1], lineno)
            prog.messages[tokens[1]] = MessageDecl(tokens[1], _int(tokens[2], lineno, "dimension"), _form(tokens[3:], lineno))
        elif kw == "stream" and len(tokens) >= 4:
            declare(tokens[1], lineno)
            prog.messages[tokens[1]] = MessageDecl(
                tokens[1], _int(tokens[2], lineno, "dimension"), _form(tokens[4:], lineno), _int(tokens[3], lineno, "count")
            )
        elif kw in ("matrix", "smatrix") and len(tokens) == (3 if kw == "matrix" else 4):
            declare(tokens[1], lineno)
            m = _SHAPE.match(tokens[2])
            if not m:
                raise AsmError(f"matrix shape must look like 2x4, got {tokens[2]!r}", lineno)
            count = _int(tokens[3], lineno, "count") if kw == "smatrix" else None
            prog.matrices[tokens[1]] = MatrixDecl(tokens[1], int(m.group(1)), int(m.group(2)), count)
        elif kw == "loop" and len(tokens) == 2:
            if loop is not None:
                raise AsmError("nested loops are not supported", lineno)
            loop = (_int(tokens[1], lineno, "loop count", lo=0), lineno, [])
        elif kw == "end" and len(tokens) == 1:
            if loop is None:
                raise AsmError("'end' without 'loop'", lineno)
            prog.body.append(LoopBlock(loop[0], tuple(loop[2]), loop[1]))
            loop = None
        elif kw == "output" and len(tokens) == 2:
            prog.outputs.append((tokens[1], lineno))
        else:
            m = _ASSIGN.match(line)
            if not m:
                raise AsmError(f"cannot parse statement {line!r}", lineno)
            target, node, argtext = m.groups()
            if node not in NODES:
                raise AsmError(f"unknown node kind {node!r}", lineno)
            args = tuple(a.strip() for a in argtext.split(",")) if argtext.strip() else ()
            stmt = Assign(target, node, args, lineno)
            (loop[2] if loop is not None else prog.body).append(stmt)
    if loop is not None:
        raise AsmError("loop without 'end'", loop[1])
    return prog


# -- schedule IR -------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    node: str
    inputs: tuple
    output: str
    matrix: Optional[str] = None
    section: Optional[int] = None
    dim: int = 0  # dimension of the output message


@dataclass
class Schedule:
    """Ordered node updates over message ids.

    ``externals`` maps host-written ids to (dim, form) in declaration order;
    ``outputs`` maps user-visible names to the id holding their final value.
    """

    steps: list
    externals: dict
    outputs: dict
    dims: dict
    forms: dict
    matrices: dict  # matrix id -> (rows, cols), declaration order
    streams: dict  # stream name -> list of element ids (messages and matrices)

    def ids(self) -> list[str]:
        seen = dict.fromkeys(self.externals)
        for st in self.steps:
            seen.setdefault(st.output)
        return list(seen)

    def replace_steps(self, steps, outputs=None) -> "Schedule":
        return Schedule(
            list(steps), dict(self.externals), dict(outputs if outputs is not None else self.outputs),
            dict(self.dims), dict(self.forms), dict(self.matrices), dict(self.streams),
        )


def _elem(name: str, j: int) -> str:
    return f"{name}[{j}]"


def build_schedule(prog: GraphProgram | str) -> Schedule:
    """Unroll loops, rename to single assignment and check dimensions symbolically."""
    if isinstance(prog, str):
        prog = parse_fgg(prog)
    externals, dims, forms, streams, matrices = {}, {}, {}, {}, {}
    for d in prog.messages.values():
        elems = [d.name] if d.count is None else [_elem(d.name, j) for j in range(d.count)]
        if d.count is not None:
            streams[d.name] = elems
        for e in elems:
            externals[e] = (d.dim, d.form)
            dims[e], forms[e] = d.dim, d.form
    for d in prog.matrices.values():
        elems = [d.name] if d.count is None else [_elem(d.name, j) for j in range(d.count)]
        if d.count is not None:
            streams[d.name] = elems
        for e in elems:
            matrices[e] = (d.rows, d.cols)

    current = {name: name for name in prog.messages if prog.messages[name].count is None}
    versions: dict[str, int] = {}
    steps: list[Step] = []

    def resolve(tok: str, it: Optional[int], lineno: int, want_matrix: bool) -> str:
        m = _REF.match(tok)
        if not m:
            raise AsmError(f"bad argument {tok!r}", lineno)
        name, index = m.groups()
        table = prog.matrices if want_matrix else prog.messages
        if index is None:
            if want_matrix:
                if name not in prog.matrices or prog.matrices[name].count is not None:
                    raise AsmError(f"{name!r} is not a state matrix", lineno)
                return name
            if name not in current:
                raise AsmError(f"message {name!r} used before definition", lineno)
            return current[name]
        if name not in table or table[name].count is None:
            raise AsmError(f"{name!r} is not a {'matrix' if want_matrix else 'message'} stream", lineno)
        if index.startswith("i"):
            if it is None:
                raise AsmError("index 'i' used outside a loop", lineno)
            off = index.replace(" ", "")[2:]
            j = it + (int(off) if off else 0)
        else:
            j = int(index)
        if not 0 <= j < table[name].count:
            raise AsmError(f"{name}[{j}] outside stream of length {table[name].count}", lineno)
        return _elem(name, j)

    def lower(stmt: Assign, it: Optional[int]):
        spec = NODES[stmt.node]
        want = spec.messages + spec.has_matrix
        if len(stmt.args) != want:
            raise AsmError(f"{stmt.node} takes {want} arguments, got {len(stmt.args)}", stmt.line)
        ins = tuple(resolve(a, it, stmt.line, False) for a in stmt.args[: spec.messages])
        mat = resolve(stmt.args[-1], it, stmt.line, True) if spec.has_matrix else None
        out_dim = _check_node(stmt, ins, mat, dims, forms, matrices)
        k = versions.get(stmt.target)
        if k is None and stmt.target not in prog.messages and stmt.target not in prog.matrices:
            out = stmt.target
            versions[stmt.target] = 0
        else:
            k = (k or 0) + 1
            versions[stmt.target] = k
            out = f"{stmt.target}.{k}"
        dims[out], forms[out] = out_dim, spec.out_form
        current[stmt.target] = out
        steps.append(Step(stmt.node, ins, out, mat, it, out_dim))

    for item in prog.body:
        if isinstance(item, LoopBlock):
            for it in range(item.count):
                for stmt in item.body:
                    lower(stmt, it)
        else:
            lower(item, None)
    outputs = {}
    for name, lineno in prog.outputs:
        if name not in current:
            raise AsmError(f"output {name!r} is never defined", lineno)
        outputs[name] = current[name]
    return Schedule(steps, externals, outputs, dims, forms, matrices, streams)


def _check_node(stmt, ins, mat, dims, forms, matrices) -> int:
    spec = NODES[stmt.node]
    for arg, want in zip(ins, spec.in_forms):
        if forms[arg] is not want:
            raise DimensionError(f"line {stmt.line}: {stmt.node} needs {want.value} input, {arg} is {forms[arg].value}")
    d = [dims[a] for a in ins]
    node = stmt.node
    if not spec.has_matrix:
        if d[0] != d[1]:
            raise DimensionError(f"line {stmt.line}: {node} inputs have dimensions {d[0]} and {d[1]}")
        return d[0]
    rows, cols = matrices[mat]
    expect = {
        "mult_f": ((cols,), rows),
        "mult_b": ((rows,), cols),
        "mult_eq_f": ((cols, rows), cols),
        "add_mult_f": ((cols, rows), rows),
    }[node]
    if tuple(d) != expect[0]:
        raise DimensionError(
            f"line {stmt.line}: {node} with {rows}x{cols} matrix needs input dimensions {expect[0]}, got {tuple(d)}"
        )
    return expect[1]


# -- liveness and remapping --------------------------------------------------


@dataclass
class LivenessInfo:
    last_use: dict  # id -> index of the last reading step, -1 if never read
    dead: list  # per step: ids whose last read is this step
    live_out: frozenset

    def dies_at(self, ident: str, s: int) -> bool:
        return self.last_use.get(ident, -1) == s and ident not in self.live_out


def liveness(s: Schedule) -> LivenessInfo:
    last = {i: -1 for i in s.ids()}
    for k, st in enumerate(s.steps):
        for i in st.inputs:
            last[i] = k
    live_out = frozenset(s.outputs.values())
    dead = [set() for _ in s.steps]
    for i, k in last.items():
        if k >= 0 and i not in live_out:
            dead[k].add(i)
    return LivenessInfo(last, dead, live_out)


def optimize_memory(s: Schedule) -> Schedule:
    """Remap each step's output onto a dead id.

    Candidates are ids whose value is no longer read.  The score of a
    candidate is the step at which it died (most recently dead wins); ties go
    to the id allocated first.  An input dying at the current step is a
    candidate for that step's own output, since every operand is read before
    the final store.
    """
    info = liveness(s)
    storage: dict[str, str] = {}
    order: dict[str, int] = {}
    free: dict[str, int] = {}  # storage id -> death step

    for e in s.externals:
        storage[e] = e
        order[e] = len(order)
        if info.last_use[e] < 0 and e not in info.live_out:
            free[e] = -1
    steps = []
    for k, st in enumerate(s.steps):
        for i in dict.fromkeys(st.inputs):
            if info.dies_at(i, k):
                free[storage[i]] = k
        if free:
            slot = max(free, key=lambda sid: (free[sid], -order[sid]))
            del free[slot]
        else:
            slot = st.output
            order[slot] = len(order)
        storage[st.output] = slot
        if info.last_use[st.output] < 0 and st.output not in info.live_out:
            free[slot] = k
        steps.append(replace(st, inputs=tuple(storage[i] for i in st.inputs), output=slot))
    return s.replace_steps(steps, {n: storage[i] for n, i in s.outputs.items()})


def interference_ok(original: Schedule, optimized: Schedule) -> bool:
    """True if no two simultaneously live values of ``original`` share storage."""
    info = liveness(original)
    n = len(original.steps)
    where: dict[str, str] = {e: e for e in original.externals}
    for a, b in zip(original.steps, optimized.steps):
        where[a.output] = b.output
    birth = {e: -1 for e in original.externals}
    for k, st in enumerate(original.steps):
        birth[st.output] = k
    end = {i: (n if i in info.live_out else max(info.last_use[i], birth[i])) for i in birth}
    ids = list(birth)
    for x in range(len(ids)):
        for y in range(x + 1, len(ids)):
            i, j = ids[x], ids[y]
            if where[i] != where[j]:
                continue
            # a value may be overwritten by the step that reads it last
            if not (end[i] <= birth[j] or end[j] <= birth[i]):
                return False
    return True


def distinct_ids(s: Schedule) -> int:
    return len(s.ids())


# -- loop compression --------------------------------------------------------


@dataclass(frozen=True)
class Ref:
    """Operand of a loop-body step: a fixed id, or a stream element relative to the iteration."""

    ident: str
    stream: Optional[str] = None  # set for section-relative references
    offset: int = 0  # element index at iteration 0

    def at(self, it: int, streams) -> str:
        return self.ident if self.stream is None else streams[self.stream][self.offset + it]


@dataclass
class CompressedSchedule:
    prefix: list
    body: list  # list of Step whose inputs/output/matrix are Ref
    count: int
    suffix: list
    schedule: Schedule

    @property
    def looped(self) -> bool:
        return self.count >= 2

    def expand(self) -> Schedule:
        steps = list(self.prefix)
        st_map = self.schedule.streams
        for it in range(self.count):
            for b in self.body:
                steps.append(
                    Step(
                        b.node,
                        tuple(r.at(it, st_map) for r in b.inputs),
                        b.output.at(it, st_map),
                        b.matrix.at(it, st_map) if b.matrix else None,
                        it,
                        b.dim,
                    )
                )
        steps.extend(self.suffix)
        return self.schedule.replace_steps(steps)


def _stream_index(streams) -> dict:
    return {e: (name, j) for name, elems in streams.items() for j, e in enumerate(elems)}


def _match_ref(ids: list, index: dict) -> Optional[Ref]:
    first = ids[0]
    if all(i == first for i in ids):
        return Ref(first)
    if first not in index:
        return None
    name, j0 = index[first]
    for t, i in enumerate(ids):
        if index.get(i) != (name, j0 + t):
            return None
    return Ref(first, name, j0)


def _fold(steps, s0, p, k, index):
    body = []
    for q in range(p):
        group = [steps[s0 + t * p + q] for t in range(k)]
        st0 = group[0]
        if any(g.node != st0.node or len(g.inputs) != len(st0.inputs) for g in group):
            return None
        if len({g.matrix is None for g in group}) != 1:
            return None
        refs = []
        for pos in range(len(st0.inputs)):
            r = _match_ref([g.inputs[pos] for g in group], index)
            if r is None:
                return None
            refs.append(r)
        out = _match_ref([g.output for g in group], index)
        mat = _match_ref([g.matrix for g in group], index) if st0.matrix is not None else None
        if out is None or (st0.matrix is not None and mat is None):
            return None
        body.append(Step(st0.node, tuple(refs), out, mat, None, st0.dim))
    return body


def compress_loops(s: Schedule) -> CompressedSchedule:
    """Fold the longest contiguous run of alpha-equivalent sections into one loop body.

    Steps of different iterations are equivalent when they use the same node
    kind and each operand is either the same id or the element of the same
    stream advanced by the iteration number.  Among runs covering equally many
    steps the shortest body, then the earliest start, wins.
    """
    steps = s.steps
    n = len(steps)
    index = _stream_index(s.streams)
    best = None  # (covered, -p, -start, start, p, k, body)
    for p in range(1, n // 2 + 1):
        for s0 in range(0, n - 2 * p + 1):
            k = (n - s0) // p
            while k >= 2:
                body = _fold(steps, s0, p, k, index)
                if body is not None:
                    key = (k * p, -p, -s0)
                    if best is None or key > best[0]:
                        best = (key, s0, p, k, body)
                    break
                k -= 1
    if best is None:
        return CompressedSchedule(list(steps), [], 0, [], s)
    _, s0, p, k, body = best
    return CompressedSchedule(list(steps[:s0]), body, k, list(steps[s0 + k * p :]), s)


# -- layout and emission -----------------------------------------------------


@dataclass
class Layout:
    """Slot assignment; ``constants`` are state matrices the host must preload."""

    mmem: dict
    amem: dict
    constants: dict

    def mmem_addr(self, ident: str) -> int:
        return self.mmem[ident]

    def amem_addr(self, ident: str) -> int:
        return self.amem[ident]


def identity_name(n: int) -> str:
    return f"I{n}"


def zero_name(n: int) -> str:
    return f"Z{n}"


def _constants_for(steps_iter, s: Schedule) -> dict:
    consts = {}
    for st in steps_iter:
        node = st.node
        if node in ("add_f", "add_b", "eq"):
            n = st.dim
            consts.setdefault(identity_name(n), np.eye(n, dtype=complex))
        elif node == "mult_f":
            m = s.matrices[_plain(st.matrix)][0]
            consts.setdefault(zero_name(m), np.zeros((m, m), dtype=complex))
        elif node == "mult_b":
            n = s.matrices[_plain(st.matrix)][1]
            consts.setdefault(zero_name(n), np.zeros((n, n), dtype=complex))
    return consts


def _plain(x) -> str:
    return x.ident if isinstance(x, Ref) else x


def plan_layout(s: Schedule, mmem_slots: int = 64, amem_slots: int = 64, array_size: int = 8) -> Layout:
    """Assign slots: host-written ids in declaration order, then temporaries, then constants."""
    used = s.ids()
    for i, d in s.dims.items():
        if d > array_size:
            raise SizeError(f"message {i} has dimension {d} > array size {array_size}")
    for m, (r, c) in s.matrices.items():
        if max(r, c) > array_size:
            raise SizeError(f"matrix {m} is {r}x{c}, larger than the {array_size}x{array_size} array")
    mmem = {i: a for a, i in enumerate(used)}
    if len(mmem) > mmem_slots:
        worst, live = _pressure(s)
        raise CapacityError(
            f"{len(mmem)} message ids need slots but memory holds {mmem_slots}; "
            f"pressure peaks at step {worst} with {live} live messages"
        )
    consts = _constants_for(s.steps, s)
    names = list(s.matrices) + sorted(consts)
    if len(names) > amem_slots:
        raise CapacityError(f"{len(names)} state matrices need slots but memory holds {amem_slots}")
    return Layout(mmem, {m: a for a, m in enumerate(names)}, consts)


def _pressure(s: Schedule) -> tuple[int, int]:
    """(step, count) where the most values are simultaneously live."""
    info = liveness(s)
    birth = {e: -1 for e in s.externals}
    for k, st in enumerate(s.steps):
        birth.setdefault(st.output, k)
    best = (0, 0)
    for k in range(len(s.steps)):
        live = sum(1 for i, b in birth.items() if b <= k and (info.last_use[i] >= k or i in info.live_out))
        best = max(best, (live, -k))
    return -best[1], best[0]


def _msg(ref, layout: Layout, relative: bool, herm=False, neg=False) -> Operand:
    if isinstance(ref, Ref) and ref.stream is not None and relative:
        return Operand(isa.BANK_MMEM_SECTION, layout.mmem[ref.ident], herm, neg)
    return Operand(isa.BANK_MMEM, layout.mmem[_plain(ref)], herm, neg)


def _mat(ref, layout: Layout, relative: bool, herm=False, neg=False) -> Operand:
    if isinstance(ref, Ref) and ref.stream is not None and relative:
        return Operand(isa.BANK_AMEM_SECTION, layout.amem[ref.ident], herm, neg)
    return Operand(isa.BANK_AMEM, layout.amem[_plain(ref)], herm, neg)


def _const(name: str, layout: Layout) -> Operand:
    return Operand(isa.BANK_AMEM, layout.amem[name])


def lower_step(st: Step, s: Schedule, layout: Layout, relative: bool = False) -> list[Instruction]:
    """Fixed instruction pattern of one node update."""
    mma, mms, fad, smm = Opcode.MMA, Opcode.MMS, Opcode.FAD, Opcode.SMM
    ins = st.inputs
    dest = _msg(st.output, layout, relative)
    store = Instruction(smm, dest=dest, part=True)
    node = st.node
    if node in ("add_f", "add_b", "eq"):
        eye = _const(identity_name(st.dim), layout)
        return [
            Instruction(mma, a=_msg(ins[0], layout, relative), b=eye, part=True),
            Instruction(mms, a=eye, b=_msg(ins[1], layout, relative, neg=node == "add_b"), part=True),
            store,
        ]
    a = st.matrix
    if node == "mult_f":
        zero = _const(zero_name(s.matrices[_plain(a)][0]), layout)
        return [
            Instruction(mma, a=_msg(ins[0], layout, relative), b=_mat(a, layout, relative, herm=True), part=True),
            Instruction(mms, a=_mat(a, layout, relative), b=zero, part=True),
            store,
        ]
    if node == "mult_b":
        zero = _const(zero_name(s.matrices[_plain(a)][1]), layout)
        return [
            Instruction(mma, a=_msg(ins[0], layout, relative), b=_mat(a, layout, relative), part=True),
            Instruction(mms, a=_mat(a, layout, relative, herm=True), b=zero, part=True),
            store,
        ]
    first = Instruction(mma, a=_msg(ins[0], layout, relative), b=_mat(a, layout, relative, herm=True), part=True)
    if node == "add_mult_f":
        return [first, Instruction(mms, a=_mat(a, layout, relative), b=_msg(ins[1], layout, relative), part=True), store]
    # mult_eq_f: Schur complement of [V_y + A V_x A^H, A V_x | ...; V_x A^H, V_x]
    return [
        first,
        Instruction(mms, a=_mat(a, layout, relative), b=_msg(ins[1], layout, relative, neg=True), part=True),
        Instruction(fad, a=_msg(ins[0], layout, relative), part=True),
        store,
    ]


def emit(c: CompressedSchedule, layout: Layout, program: int = 1, runtime_count: bool = False) -> list[Instruction]:
    """prg, then the prefix, then ``loop`` + body, then the suffix."""
    s = c.schedule
    out = [Instruction(Opcode.PRG, index=program)]
    for st in c.prefix:
        out += lower_step(st, s, layout)
    if c.looped:
        body = [i for st in c.body for i in lower_step(st, s, layout, relative=True)]
        out.append(Instruction(Opcode.LOOP, count=0 if runtime_count else c.count, extent=len(body)))
        out += body
    for st in c.suffix:
        out += lower_step(st, s, layout)
    for ins in out:
        ins.validate()
    return out


def to_assembly(instrs: list[Instruction]) -> str:
    return "".join(i.text() + "\n" for i in instrs)


# -- driver ------------------------------------------------------------------


@dataclass
class Compiled:
    source: Schedule
    schedule: Schedule  # after optimization (or the source when disabled)
    compressed: CompressedSchedule
    layout: Layout
    instructions: list

    @property
    def assembly(self) -> str:
        return to_assembly(self.instructions)

    def image(self) -> isa.ProgramImage:
        return isa.assemble(self.assembly)

    def dump_schedule(self) -> str:
        return format_schedule(self.source, "schedule") + format_schedule(self.schedule, "remapped")


def compile_program(
    text: str,
    optimize: bool = True,
    compress: bool = True,
    mmem_slots: int = 64,
    amem_slots: int = 64,
    array_size: int = 8,
    program: int = 1,
    runtime_count: bool = False,
) -> Compiled:
    src = build_schedule(text)
    sched = optimize_memory(src) if optimize else src
    comp = compress_loops(sched) if compress else CompressedSchedule(list(sched.steps), [], 0, [], sched)
    layout = plan_layout(sched, mmem_slots, amem_slots, array_size)
    return Compiled(src, sched, comp, layout, emit(comp, layout, program, runtime_count))


def format_schedule(s: Schedule, title: str) -> str:
    lines = [f"# {title}: {len(s.steps)} steps, {distinct_ids(s)} ids"]
    for k, st in enumerate(s.steps):
        args = ", ".join(st.inputs + ((st.matrix,) if st.matrix else ()))
        sec = "" if st.section is None else f"  [section {st.section}]"
        lines.append(f"{k:3d}  {st.node:<10} {args} -> {st.output}{sec}")
    for name, ident in s.outputs.items():
        lines.append(f"     output {name} = {ident}")
    return "\n".join(lines) + "\n"


# -- evaluation --------------------------------------------------------------


def flatten_inputs(s: Schedule, messages: dict, matrices: dict) -> tuple[dict, dict]:
    """Expand per-name inputs (lists for streams) into per-id dictionaries."""
    msgs, mats = {}, {}
    for name, value in messages.items():
        if name in s.streams:
            for e, v in zip(s.streams[name], value, strict=True):
                msgs[e] = v
        else:
            msgs[name] = value
    for name, value in matrices.items():
        if name in s.streams:
            for e, v in zip(s.streams[name], value, strict=True):
                mats[e] = np.atleast_2d(np.asarray(v, dtype=complex))
        else:
            mats[name] = np.atleast_2d(np.asarray(value, dtype=complex))
    missing = [e for e in s.externals if e not in msgs] + [m for m in s.matrices if m not in mats]
    if missing:
        raise DimensionError(f"missing inputs: {', '.join(missing)}")
    return msgs, mats


def _gmp_step(node, ins, a):
    if node == "add_f":
        return gmp.adder_update(*ins)
    if node == "add_b":
        return gmp.adder_update(*ins, negate_y=True)
    if node == "eq":
        return gmp.equality_update(*ins)
    if node == "mult_f":
        return gmp.matmult_update(ins[0], a, Direction.FORWARD)
    if node == "mult_b":
        return gmp.matmult_update(ins[0], a, Direction.BACKWARD)
    if node == "mult_eq_f":
        return gmp.compound_mult_eq_update(*ins, a)
    return gmp.compound_add_update(*ins, a)


def _fx_step(node, ins, a):
    if node in ("add_f", "add_b"):
        return seqfx.adder(*ins, negate_y=node == "add_b")
    if node == "eq":
        return seqfx.equality(*ins)
    if node == "mult_f":
        return seqfx.matmult_forward(ins[0], a)
    if node == "mult_b":
        return seqfx.matmult_backward(ins[0], a)
    if node == "mult_eq_f":
        return seqfx.compound_mult_eq(*ins, a)
    return seqfx.compound_add(*ins, a)


def evaluate_float(s: Schedule, messages: dict, matrices: dict) -> dict:
    """Run the schedule on the floating-point node rules; returns name -> message."""
    env, mats = flatten_inputs(s, messages, matrices)
    for st in s.steps:
        env[st.output] = _gmp_step(st.node, [env[i] for i in st.inputs], mats.get(st.matrix))
    return {name: env[i] for name, i in s.outputs.items()}


def evaluate_fixed(s: Schedule, messages: dict, matrices: dict, fmt: FxFormat = fxp.DEFAULT_FORMAT) -> dict:
    """Run the schedule on the sequential fixed-point reference; returns name -> FxMessage."""
    msgs, mats = flatten_inputs(s, messages, matrices)
    env = {i: FxMessage.from_float(m.cov, m.mean, fmt) for i, m in msgs.items()}
    fmats = {k: fxp.to_fixed(v, fmt) for k, v in mats.items()}
    for st in s.steps:
        env[st.output] = _fx_step(st.node, [env[i] for i in st.inputs], fmats.get(st.matrix))
    return {name: env[i] for name, i in s.outputs.items()}


def bind_inputs(machine, compiled: Compiled, messages: dict, matrices: dict) -> None:
    """Write every host-provided message, matrix and constant into machine memory."""
    s = compiled.schedule
    msgs, mats = flatten_inputs(s, messages, matrices)
    lay = compiled.layout
    for i, m in msgs.items():
        machine.write_memory(isa.BANK_MMEM, lay.mmem[i], m)
    for k, a in mats.items():
        machine.write_memory(isa.BANK_AMEM, lay.amem[k], a)
    for k, a in lay.constants.items():
        machine.write_memory(isa.BANK_AMEM, lay.amem[k], a)


def read_outputs(machine, compiled: Compiled) -> dict:
    s = compiled.schedule
    return {name: machine.read_memory(isa.BANK_MMEM, compiled.layout.mmem[i]) for name, i in s.outputs.items()}


def output_form(compiled: Compiled, name: str) -> Param:
    return compiled.schedule.forms.get(compiled.source.outputs[name], Param.MEAN_COV)


def fx_to_message(slot: FxMessage, form: Param = Param.MEAN_COV) -> GaussianMessage:
    return GaussianMessage(fxp.to_float(slot.mean), fxp.to_float(slot.cov), form)
