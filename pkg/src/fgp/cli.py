"""``fgp`` command-line tool.

Exit codes: 0 success, 1 user error (bad input, failed verification),
2 internal error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import compiler, demo, fxp, gmp, isa, msgio, verify
from .errors import FGPError
from .fxp import FxFormat, Overflow, Rounding
from .machine import Machine, MachineConfig, load_image
from .report import RunReport, plot_breakdown, plot_convergence

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


@dataclass
class Settings:
    fmt: FxFormat
    array_size: int
    seed: int
    clock_hz: float
    overhead: int
    trace: object  # callable or None

    def machine(self) -> Machine:
        cfg = MachineConfig(array_size=self.array_size, fmt=self.fmt, instr_overhead=self.overhead)
        return Machine(cfg, self.trace)


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UserError(f"{path}:{lineno}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def settings_from(args) -> Settings:
    cfg = read_config(args.config) if args.config else {}
    known = {"fxformat", "array_size", "seed", "clock_hz", "instr_overhead", "rounding", "overflow"}
    unknown = set(cfg) - known
    if unknown:
        raise UserError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        fmt = FxFormat.parse(
            args.fxformat or cfg.get("fxformat", "Q8.24"),
            rounding=Rounding(cfg.get("rounding", "nearest_even")),
            overflow=Overflow(cfg.get("overflow", "saturate")),
        )
        size = args.array_size if args.array_size is not None else int(cfg.get("array_size", 4))
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        clock = float(cfg.get("clock_hz", demo.DEFAULT_CLOCK_HZ))
        overhead = int(cfg.get("instr_overhead", 2))
    except ValueError as exc:
        raise UserError(str(exc)) from None
    trace = None
    if args.trace:
        stream = sys.stderr if args.trace == "-" else open(args.trace, "w", buffering=1)
        trace = lambda line: print(line, file=stream)  # noqa: E731
    return Settings(fmt, size, seed, clock, overhead, trace)


# -- subcommands -------------------------------------------------------------


def cmd_compile(args, st: Settings) -> int:
    text = Path(args.input).read_text()
    mach_cfg = MachineConfig(array_size=st.array_size, fmt=st.fmt)
    comp = compiler.compile_program(
        text,
        optimize=not args.no_optimize,
        compress=not args.no_compress,
        mmem_slots=mach_cfg.mmem_slots,
        amem_slots=mach_cfg.amem_slots,
        array_size=st.array_size,
        runtime_count=args.runtime_count,
    )
    out = Path(args.output) if args.output else Path(args.input).with_suffix(".fga")
    if out.suffix == ".fgb":
        out.write_bytes(comp.image().to_bytes())
    else:
        out.write_text(comp.assembly)
    if args.dump_schedule:
        sys.stdout.write(comp.dump_schedule())
    print(f"instructions={len(comp.instructions)}")
    print(f"ids_before={compiler.distinct_ids(comp.source)}")
    print(f"ids_after={compiler.distinct_ids(comp.schedule)}")
    print(f"loop_count={comp.compressed.count}")
    print(f"output={out}")
    return EXIT_OK


def cmd_asm(args, st: Settings) -> int:
    img = isa.assemble(Path(args.input).read_text())
    out = Path(args.output) if args.output else Path(args.input).with_suffix(".fgb")
    out.write_bytes(img.to_bytes())
    print(f"words={len(img.words)}")
    print(f"output={out}")
    return EXIT_OK


def cmd_disasm(args, st: Settings) -> int:
    img = isa.ProgramImage.from_bytes(Path(args.input).read_bytes())
    text = isa.disassemble(img)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_slot(text: str) -> tuple[int, int]:
    bank, sep, addr = text.partition(":")
    if not sep:
        raise UserError(f"expected bank:addr, got {text!r}")
    try:
        return int(bank), int(addr, 16)
    except ValueError:
        raise UserError(f"bad slot {text!r}") from None


def _named_inputs(specs, base: Path = Path(".")) -> tuple[dict, dict]:
    messages, matrices = {}, {}
    for spec in specs:
        name, sep, files = spec.partition("=")
        if not sep:
            raise UserError(f"expected name=file[,file...], got {spec!r}")
        values = [msgio.load(base / f) for f in files.split(",")]
        target = matrices if isinstance(values[0], np.ndarray) else messages
        target[name] = values if len(values) > 1 or "," in files else values[0]
    return messages, matrices


def _dump_slot(slot, path_stem: Path):
    words = msgio.to_words([v for row in slot.cov for v in row] + (slot.mean or []))
    path_stem.with_suffix(".hex").write_text(msgio.format_hex(words))


def _make_report(run, st: Settings, error) -> RunReport:
    fads = sum(1 for r in run.records if r.text.startswith("fad"))
    return RunReport(
        total_cycles=run.total_cycles,
        compound_nodes=fads,
        clock_hz=st.clock_hz,
        max_abs_error_vs_oracle=error,
        breakdown=run.cycles_by_opcode(),
        instructions=len(run.records),
    )


def _emit_report(report: RunReport, args, footer=False):
    sys.stdout.write(report.to_keyvalue(footer))
    if args.report:
        report.write(args.report, footer)
    if args.plot_dir:
        d = Path(args.plot_dir)
        d.mkdir(parents=True, exist_ok=True)
        plot_breakdown(report, d / "cycles.png")


def _message_error(slot, ref) -> float:
    got = compiler.fx_to_message(slot, ref.param)
    return float(max(np.abs(got.cov - ref.cov).max(), np.abs(got.mean - ref.mean).max()))


def cmd_run(args, st: Settings) -> int:
    mach = st.machine()
    path = Path(args.program)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    error = None
    if path.suffix == ".fgg":
        if args.write:
            raise UserError("--write applies to assembled programs; use --input with .fgg")
        comp = compiler.compile_program(
            path.read_text(), mmem_slots=mach.config.mmem_slots, amem_slots=mach.config.amem_slots,
            array_size=st.array_size,
        )
        messages, matrices = _named_inputs(args.input or [])
        mach.load_program(comp.image())
        compiler.bind_inputs(mach, comp, messages, matrices)
        run = mach.start_program(1, args.sections)
        outputs = compiler.read_outputs(mach, comp)
        oracle = compiler.evaluate_float(comp.source, messages, matrices)
        error = max((_message_error(outputs[n], oracle[n]) for n in outputs), default=0.0)
        if out_dir:
            for n, slot in outputs.items():
                msg = compiler.fx_to_message(slot, compiler.output_form(comp, n))
                (out_dir / f"{n}.msg").write_text(msgio.format_message(msg))
                _dump_slot(slot, out_dir / n)
    else:
        if args.input:
            raise UserError("--input applies to .fgg graph programs; use --write bank:addr=file")
        mach.load_program(load_image(path))
        for spec in args.write or []:
            slot, _, f = spec.partition("=")
            mach.write_memory(*_parse_slot(slot), msgio.load(f))
        run = mach.start_program(args.prg, args.sections)
        for spec in args.read or []:
            bank, addr = _parse_slot(spec)
            slot = mach.read_memory(bank, addr)
            if out_dir:
                _dump_slot(slot, out_dir / f"slot_{bank}_{addr:02x}")
            else:
                words = msgio.to_words([v for row in slot.cov for v in row] + (slot.mean or []))
                print(f"slot={bank}:{addr:x} words=" + " ".join(f"{w:08x}" for w in words))
    report = _make_report(run, st, error)
    if args.breakdown:
        for r in run.records:
            print(f"pc={r.pc} iter={r.iteration} cycles={r.cycles} instr={r.text}")
    _emit_report(report, args)
    return EXIT_OK


def cmd_verify(args, st: Settings) -> int:
    results = verify.verify(
        st.seed, args.trials, st.fmt, args.inject_fault, args.suite or None, args.workers
    )
    ok = True
    for r in results:
        print(r.line())
        if not r.passed:
            ok = False
            print(f"counterexample {r.counterexample}")
    print(f"verify={'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_USER


def cmd_demo_rls(args, st: Settings) -> int:
    k = args.sections
    prob = demo.rls_problem(k, noise_var=args.noise_var, seed=st.seed)
    mach = st.machine()
    comp = compiler.compile_program(
        demo.rls_program(k), mmem_slots=mach.config.mmem_slots, amem_slots=mach.config.amem_slots,
        array_size=st.array_size,
    )
    mach.load_program(comp.image())
    compiler.bind_inputs(mach, comp, prob.messages(), prob.matrices())
    run = mach.start_program(1)
    slot = compiler.read_outputs(mach, comp)["x_in"]
    history = gmp.run_rls_reference([r[None, :] for r in prob.rows], prob.observations(), prob.prior, prob.noise)
    error = _message_error(slot, history[-1])
    fixed = compiler.evaluate_fixed(comp.source, prob.messages(), prob.matrices(), st.fmt)["x_in"]
    report = _make_report(run, st, error)
    print(f"sections={k}")
    print(f"bit_exact_vs_fixed_reference={int(slot == fixed)}")
    est = compiler.fx_to_message(slot)
    print(f"channel_sq_error={float(np.sum(np.abs(est.mean - prob.h) ** 2)):.6g}")
    _emit_report(report, args, footer=True)
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "rls.fgg").write_text(demo.rls_program(k))
        (d / "rls.fga").write_text(comp.assembly)
        (d / "posterior.msg").write_text(msgio.format_message(est))
        _dump_slot(slot, d / "posterior")
    if args.plot_dir:
        plot_convergence(
            prob.h, [m.mean for m in history], [np.trace(m.cov) for m in history],
            Path(args.plot_dir) / "rls_convergence.png", est.mean,
        )
    return EXIT_OK


def cmd_session(args, st: Settings) -> int:
    mach = st.machine()
    stream = sys.stdin if args.script == "-" else open(args.script)
    base = Path(".") if args.script == "-" else Path(args.script).parent
    errors = 0
    with stream:
        for line in stream:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            reply = mach.handle_line(line, base)
            errors += reply.startswith("ERR")
            print(reply, flush=True)
    return EXIT_OK if errors == 0 or not args.strict else EXIT_USER


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fgp", description="Factor Graph Processor toolchain and simulator.")
    p.add_argument("--fxformat", help="fixed-point format, e.g. Q8.24")
    p.add_argument("--array-size", type=int, help="systolic array dimension N (1..8)")
    p.add_argument("--trace", nargs="?", const="-", help="per-cycle PE trace to FILE (stderr if omitted)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--config", help="key=value configuration file")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compile", help="graph program (.fgg) to assembly (.fga) or binary (.fgb)")
    c.add_argument("input")
    c.add_argument("-o", "--output")
    c.add_argument("--no-optimize", action="store_true", help="keep one slot per message id")
    c.add_argument("--no-compress", action="store_true", help="do not fold repeated sections into a loop")
    c.add_argument("--runtime-count", action="store_true", help="emit 'loop 0', count given at start time")
    c.add_argument("--dump-schedule", action="store_true")
    c.set_defaults(func=cmd_compile)

    a = sub.add_parser("asm", help="assemble .fga to .fgb")
    a.add_argument("input")
    a.add_argument("-o", "--output")
    a.set_defaults(func=cmd_asm)

    d = sub.add_parser("disasm", help="disassemble .fgb")
    d.add_argument("input")
    d.add_argument("-o", "--output")
    d.set_defaults(func=cmd_disasm)

    r = sub.add_parser("run", help="execute a program on the simulator")
    r.add_argument("program", help=".fgg graph program, .fga or .fgb")
    r.add_argument("--input", action="append", help="NAME=FILE[,FILE...] for .fgg programs")
    r.add_argument("--write", action="append", help="BANK:ADDR=FILE for assembled programs")
    r.add_argument("--read", action="append", help="BANK:ADDR slot to dump after the run")
    r.add_argument("--prg", type=int, default=1, help="program index to start")
    r.add_argument("--sections", type=int, default=0, help="loop count for 'loop 0'")
    r.add_argument("--out-dir")
    r.add_argument("--report", help="write the key=value report to FILE")
    r.add_argument("--plot-dir", help="write figures (PNG) to DIR")
    r.add_argument("--breakdown", action="store_true", help="print per-instruction cycles")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="randomized oracle-equivalence suites")
    v.add_argument("--trials", type=int, default=500)
    v.add_argument("--suite", action="append", choices=list(verify.SUITES))
    v.add_argument("--workers", type=int, default=4)
    v.add_argument("--inject-fault", action="store_true", help="test hook: corrupt every stored slot")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("demo-rls", help="RLS channel-estimation demo with cycle report")
    e.add_argument("--sections", type=int, default=2)
    e.add_argument("--noise-var", type=float, default=0.1)
    e.add_argument("--out-dir")
    e.add_argument("--report")
    e.add_argument("--plot-dir")
    e.set_defaults(func=cmd_demo_rls)

    s = sub.add_parser("session", help="run command-protocol lines (LOAD/START/WRITE/READ/STATUS)")
    s.add_argument("script", help="command file, or - for stdin")
    s.add_argument("--strict", action="store_true", help="exit 1 if any reply is ERR")
    s.set_defaults(func=cmd_session)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        st = settings_from(args)
        return args.func(args, st)
    except (FGPError, UserError, OSError, ValueError) as exc:
        print(f"fgp: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # pragma: no cover - reported as internal error
        print(f"fgp: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
