from pathlib import Path

import numpy as np
import pytest

from fgp import demo, msgio
from fgp.cli import main
from fgp.report import parse_keyvalue
from fgp.systolic import CycleModel
from fgp.verify import COMPOUND_ASM, random_complex, random_message

PROGRAMS = Path(__file__).resolve().parent.parent / "programs"


def kv(out: str) -> dict:
    return parse_keyvalue("\n".join(line for line in out.splitlines() if "=" in line and " " not in line))


@pytest.fixture
def compound_inputs(tmp_path):
    rng = np.random.default_rng(0)
    (tmp_path / "x.msg").write_text(msgio.format_message(random_message(rng, 4)))
    (tmp_path / "y.msg").write_text(msgio.format_message(random_message(rng, 4)))
    (tmp_path / "a.mat").write_text(msgio.format_matrix(random_complex(rng, 4, 4) / 2))
    return tmp_path


def test_compile_asm_disasm_round_trip(tmp_path, capsys):
    fgg = tmp_path / "rls.fgg"
    fgg.write_text(demo.rls_program(2))
    assert main(["compile", str(fgg)]) == 0
    info = kv(capsys.readouterr().out)
    assert info["instructions"] == "9" and info["ids_before"] == "8" and info["ids_after"] == "4"
    assert info["loop_count"] == "2"
    fga = tmp_path / "rls.fga"
    assert main(["asm", str(fga)]) == 0
    capsys.readouterr()
    assert main(["disasm", str(tmp_path / "rls.fgb")]) == 0
    assert capsys.readouterr().out == fga.read_text()


def test_compile_without_optimization_uses_more_ids(tmp_path, capsys):
    fgg = tmp_path / "rls.fgg"
    fgg.write_text(demo.rls_program(3))
    main(["compile", str(fgg), "--no-optimize", "--no-compress", "-o", str(tmp_path / "p.fgb")])
    plain = kv(capsys.readouterr().out)
    main(["compile", str(fgg), "--dump-schedule"])
    out = capsys.readouterr().out
    opt = kv(out)
    assert int(plain["ids_after"]) > int(opt["ids_after"])
    assert int(plain["instructions"]) > int(opt["instructions"])
    assert "# remapped:" in out
    assert (tmp_path / "p.fgb").read_bytes()[:4] == b"0PGF"


def test_run_graph_program_with_report_and_plot(compound_inputs, capsys):
    d = compound_inputs
    rc = main([
        "run", str(PROGRAMS / "compound4.fgg"),
        "--input", f"x={d / 'x.msg'}", "--input", f"y={d / 'y.msg'}", "--input", f"A={d / 'a.mat'}",
        "--out-dir", str(d / "out"), "--report", str(d / "r.txt"), "--plot-dir", str(d / "plots"),
    ])
    assert rc == 0
    out = kv(capsys.readouterr().out)
    assert out["total_cycles"] == "250" and out["compound_nodes"] == "1"
    assert float(out["max_abs_error_vs_oracle"]) < 1e-4
    assert parse_keyvalue((d / "r.txt").read_text())["total_cycles"] == "250"
    assert (d / "plots" / "cycles.png").exists()
    assert msgio.load(d / "out" / "z.msg").mean.shape == (4,)
    assert len((d / "out" / "z.hex").read_text().split()) == 40


def test_run_image_with_slots(compound_inputs, capsys):
    d = compound_inputs
    (d / "c.fga").write_text(COMPOUND_ASM)
    rc = main([
        "run", str(d / "c.fga"), "--write", f"1:0={d / 'x.msg'}", "--write", f"1:1={d / 'y.msg'}",
        "--write", f"0:0={d / 'a.mat'}", "--read", "1:2", "--breakdown",
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "pc=3 iter=0 cycles=188 instr=fad 0 1 0 1" in out
    assert any(line.startswith("slot=1:2 words=") and len(line.split()) == 41 for line in out.splitlines())
    assert kv(out)["max_abs_error_vs_oracle"] == "na"


def test_user_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.fga"
    bad.write_text("prg 1\nmma 0 1 zz 0 1 0 0 0 0\n")
    assert main(["asm", str(bad)]) == 1
    assert "line 2, col 9" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.fgb")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    cfg = tmp_path / "c.cfg"
    cfg.write_text("colour=blue\n")
    assert main(["--config", str(cfg), "verify", "--trials", "1"]) == 1


def test_verify_pass_and_injected_fault(capsys):
    assert main(["--seed", "3", "verify", "--trials", "4", "--suite", "machine", "--suite", "faddeev"]) == 0
    out = capsys.readouterr().out
    assert "suite=machine trials=4 failures=0" in out and out.strip().endswith("verify=pass")
    assert main(["verify", "--trials", "3", "--suite", "machine", "--inject-fault"]) == 1
    out = capsys.readouterr().out
    assert "counterexample suite=machine trial=0" in out and "bit_exact=False" in out


def test_demo_rls_writes_artifacts(tmp_path, capsys):
    rc = main(["demo-rls", "--sections", "3", "--out-dir", str(tmp_path), "--plot-dir", str(tmp_path / "fig"),
               "--report", str(tmp_path / "report.txt")])
    assert rc == 0
    out = kv(capsys.readouterr().out)
    assert out["bit_exact_vs_fixed_reference"] == "1"
    assert out["compound_nodes"] == "3" and out["reference_dsp_cycles_external"] == "1076"
    assert float(out["max_abs_error_vs_oracle"]) < 1e-4
    for name in ("rls.fgg", "rls.fga", "posterior.msg", "posterior.hex", "fig/cycles.png", "fig/rls_convergence.png"):
        assert (tmp_path / name).exists(), name


def test_session_script(compound_inputs, capsys):
    d = compound_inputs
    (d / "c.fga").write_text(COMPOUND_ASM)
    (d / "s.txt").write_text(
        "LOAD c.fga\nWRITE 1 0 x.msg\nWRITE 1 1 y.msg\nWRITE 0 0 a.mat\nSTART 1 0\n# done\nSTATUS\nREAD 9 0\n"
    )
    assert main(["session", str(d / "s.txt")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[4] == "OK cycles=250" and lines[-1].startswith("ERR ADDRESS") and len(lines) == 7
    assert main(["session", "--strict", str(d / "s.txt")]) == 1


def test_trace_to_file(tmp_path, capsys):
    (tmp_path / "p.fga").write_text("prg 1\nmma 0 0 0 0 0 0 0 0 0\n")
    assert main(["--array-size", "2", "--trace", str(tmp_path / "t.log"), "run", str(tmp_path / "p.fga")]) == 0
    assert kv(capsys.readouterr().out)["total_cycles"] == str(2 + CycleModel().matmul(2, 2, 2))  # unwritten slots read as 2x2 zeros
    assert (tmp_path / "t.log").read_text().startswith("cycle=")
