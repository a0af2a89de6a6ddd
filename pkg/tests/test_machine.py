import threading

import numpy as np
import pytest

from fgp import fxp, isa, msgio, seqfx
from fgp.errors import AddressFault, CapacityError, ProgramError, SingularError
from fgp.fxp import FxMessage
from fgp.gmp import GaussianMessage, compound_mult_eq_update
from fgp.machine import Command, CommandKind, Machine, MachineConfig
from fgp.verify import COMPOUND_ASM, random_complex, random_message


def test_memory_split():
    cfg = MachineConfig()
    assert cfg.amem_slots == 16 and cfg.mmem_slots == 38
    assert cfg.footprint_bits <= 64 * 1024


def test_write_read_bit_identical_and_zero_fill():
    m = Machine()
    rng = np.random.default_rng(0)
    msg = random_message(rng, 3)
    m.write_memory(isa.BANK_MMEM, 5, msg)
    got = m.read_memory(isa.BANK_MMEM, 5)
    assert got == FxMessage.from_float(msg.cov, msg.mean)
    empty = m.read_memory(isa.BANK_MMEM, 6)
    assert empty.shape == (4, 4) and all(v.is_zero() for v in empty.mean)
    assert m.read_memory(isa.BANK_AMEM, 3).mean is None


def test_address_faults():
    m = Machine()
    with pytest.raises(AddressFault):
        m.write_memory(isa.BANK_MMEM, 38, np.eye(2))
    with pytest.raises(AddressFault):
        m.read_memory(isa.BANK_AMEM, 16)
    with pytest.raises(AddressFault):
        m.read_memory(4, 0)


def test_program_memory_capacity_and_replacement():
    m = Machine()
    big = isa.assemble("prg 1\n" + "smm 0 1 0 0\n" * 256)
    with pytest.raises(CapacityError):
        m.load_program(big)
    m.load_program(isa.assemble("prg 1\nprg 2"))
    st = m.load_program(isa.assemble("prg 3"))
    assert st.detail == "words=1 programs=3"
    with pytest.raises(ProgramError):
        m.start_program(1)


def test_smm_copies_identity_product():
    m = Machine()
    m.write_memory(isa.BANK_AMEM, 0, np.eye(4))
    m.load_program(isa.assemble("prg 1\nmma 0 0 0 0 0 0 0 0 0\nsmm 0 0 1 0"))
    run = m.start_program(1)
    np.testing.assert_array_equal(fxp.to_float(m.read_memory(isa.BANK_AMEM, 1).cov), np.eye(4))
    assert run.total_cycles == (2 + 25) + (2 + 4)


def _compound_machine(seed=0):
    rng = np.random.default_rng(seed)
    x, y = random_message(rng, 4), random_message(rng, 4)
    a = random_complex(rng, 4, 4) / 2
    m = Machine()
    m.write_memory(isa.BANK_MMEM, 0, x)
    m.write_memory(isa.BANK_MMEM, 1, y)
    m.write_memory(isa.BANK_AMEM, 0, a)
    m.load_program(isa.assemble(COMPOUND_ASM))
    return m, (x, y, a)


def test_compound_cycles_and_breakdown():
    m, (x, y, a) = _compound_machine()
    clock0 = m.array.state.cycle
    run = m.start_program(1)
    assert run.total_cycles == 250
    assert m.array.state.cycle - clock0 == 250
    assert run.cycles_by_opcode() == {"mma": 27, "mms": 29, "fad": 188, "smm": 6}
    got = m.read_memory(isa.BANK_MMEM, 2)
    fx = lambda g: FxMessage.from_float(g.cov, g.mean)  # noqa: E731
    assert got == seqfx.compound_mult_eq(fx(x), fx(y), fxp.to_fixed(a))
    ref = compound_mult_eq_update(x, y, a)
    np.testing.assert_allclose(fxp.to_float(got.cov), ref.cov, atol=1e-4)


def test_runs_are_repeatable():
    m1, _ = _compound_machine(3)
    m2, _ = _compound_machine(3)
    r1, r2 = m1.start_program(1), m2.start_program(1)
    assert r1.total_cycles == r2.total_cycles
    assert m1.dump(1, 2) == m2.dump(1, 2)
    # a second start on the same machine rereads the unchanged inputs
    m1.start_program(1)
    assert m1.dump(1, 2) == m2.dump(1, 2)


def test_loop_zero_takes_section_count():
    m = Machine()
    for k in range(3):
        m.write_memory(isa.BANK_MMEM, k, GaussianMessage(np.full(2, k + 1.0), np.eye(2)))
    m.write_memory(isa.BANK_AMEM, 0, np.eye(2))
    # copy section k from slot k to slot 10 + k
    m.load_program(isa.assemble("prg 1\nloop 0 3\nmma 0 3 0 0 0 0 0 0 1\nsmm 0 3 a 1\nmms 0 0 0 0 0 0 0 0 0"))
    run = m.start_program(1, sections=3)
    for k in range(3):
        np.testing.assert_array_equal(fxp.to_float(m.read_memory(1, 10 + k).mean), [k + 1, k + 1])
    assert [r.iteration for r in run.records if r.text.startswith("smm")] == [0, 1, 2]
    assert run.records[0].text == "loop 0 3" and run.records[0].cycles == 2


def test_nested_loop_rejected():
    m = Machine()
    m.load_program(isa.assemble("prg 1\nloop 2 2\nloop 2 1\nsmm 0 1 0 0"))
    with pytest.raises(ProgramError, match="nested"):
        m.start_program(1)


def test_singular_reports_pc():
    m = Machine()
    m.load_program(isa.assemble(COMPOUND_ASM))
    with pytest.raises(SingularError) as exc:
        m.start_program(1)  # all-zero memories
    assert exc.value.pc == 3 and "pc=3 (fad 0 1 0 1)" in str(exc.value)
    assert not m._busy


def test_line_protocol(tmp_path):
    (tmp_path / "p.fga").write_text(COMPOUND_ASM)
    rng = np.random.default_rng(1)
    for name, msg in [("x.msg", random_message(rng, 4)), ("y.msg", random_message(rng, 4))]:
        (tmp_path / name).write_text(msgio.format_message(msg))
    (tmp_path / "a.mat").write_text(msgio.format_matrix(random_complex(rng, 4, 4) / 2))
    m = Machine()
    replies = [m.handle_line(line, tmp_path) for line in [
        "LOAD p.fga", "WRITE 1 0 x.msg", "WRITE 1 1 y.msg", "WRITE 0 0 a.mat",
        "START 1 0", "READ 1 2", "STATUS", "START 7 0", "READ 5 0", "FROB",
    ]]
    assert replies[0] == "OK words=5 programs=1"
    assert replies[4] == "OK cycles=250"
    assert replies[5].startswith("OK 4 4 1 ") and len(replies[5].split()) == 4 + 2 * 20
    assert replies[6] == "OK state=idle programs=1 last_cycles=250"
    assert replies[7].startswith("ERR PROGRAM")
    assert replies[8].startswith("ERR ADDRESS")
    assert replies[9].startswith("ERR PROGRAM unknown command")


def test_submit_is_serialized():
    m, _ = _compound_machine()
    replies = []
    cmds = [Command(CommandKind.START_PROGRAM, (1, 0)), Command(CommandKind.STATUS)] * 8

    def go(c):
        replies.append(m.submit(c))

    threads = [threading.Thread(target=go, args=(c,)) for c in cmds]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(replies) == len(cmds) and all(r.ok for r in replies)
    assert sum(r.detail == "cycles=250" for r in replies) == 8
