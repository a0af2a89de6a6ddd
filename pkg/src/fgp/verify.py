"""Randomized oracle-equivalence suites behind ``fgp verify``.

Every trial draws from its own generator seeded by ``(seed, suite, trial)``,
so results do not depend on how trials are spread over worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import compiler, demo, fxp, gmp, isa, seqfx
from .errors import FGPError
from .fxp import FxFormat, FxMessage
from .gmp import GaussianMessage
from .machine import Machine, MachineConfig, flip_lsb

FADDEEV_RTOL = 1e-9
COMPOUND_ATOL = 1e-9
MACHINE_ATOL = 1e-4

COMPOUND_ASM = """prg 1
mma 0 1 0 0 0 0 1 0 1
mms 0 0 0 0 1 1 0 1 1
fad 0 1 0 1
smm 0 1 2 1
"""


def random_complex(rng, *shape) -> np.ndarray:
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def random_spd(rng, n: int, floor: float = 0.5) -> np.ndarray:
    """Hermitian positive definite with eigenvalues >= ``floor``, unit scale."""
    b = random_complex(rng, n, n) / np.sqrt(2 * n)
    return gmp.hermitize(b @ b.conj().T + floor * np.eye(n))


def random_message(rng, n: int) -> GaussianMessage:
    return GaussianMessage(random_complex(rng, n) / 2, random_spd(rng, n))


def well_conditioned(rng, p: int) -> np.ndarray:
    return random_complex(rng, p, p) / np.sqrt(2 * p) + 2 * np.eye(p)


@dataclass
class TrialOutcome:
    error: float
    ok: bool
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    trials: int
    failures: int
    worst: float
    counterexample: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        return (
            f"suite={self.name} trials={self.trials} failures={self.failures} "
            f"worst={self.worst:.3g} result={'pass' if self.passed else 'FAIL'}"
        )


def _rel_fro(x, ref) -> float:
    return float(np.linalg.norm(x - ref) / max(np.linalg.norm(ref), 1e-300))


def trial_faddeev(rng, fmt, fault) -> TrialOutcome:
    p = int(rng.integers(1, 9))
    n = int(rng.integers(1, 9))
    w = int(rng.integers(1, 9))
    a = well_conditioned(rng, p)
    b, c, d = random_complex(rng, p, w), random_complex(rng, n, p), random_complex(rng, n, w)
    got = gmp.faddeev(a, b, c, d)
    ref = d - c @ np.linalg.solve(a, b)
    err = _rel_fro(got, ref)
    return TrialOutcome(err, err <= FADDEEV_RTOL, f"p={p} n={n} w={w}")


def trial_compound(rng, fmt, fault) -> TrialOutcome:
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, n + 1))
    x, y, a = random_message(rng, n), random_message(rng, m), random_complex(rng, m, n) / 2
    direct = gmp.compound_mult_eq_update(x, y, a)
    via = gmp.compound_mult_eq_faddeev(x, y, a)
    err = max(np.abs(direct.cov - via.cov).max(), np.abs(direct.mean - via.mean).max())
    psd = gmp.is_psd(x.cov - direct.cov)
    return TrialOutcome(float(err), err <= COMPOUND_ATOL and psd, f"n={n} m={m} psd={psd}")


def _run_compound(x, y, a, fmt, fault) -> tuple[FxMessage, int]:
    mach = Machine(MachineConfig(fmt=fmt))
    if fault:
        mach.fault_hook = flip_lsb
    mach.write_memory(isa.BANK_MMEM, 0, x)
    mach.write_memory(isa.BANK_MMEM, 1, y)
    mach.write_memory(isa.BANK_AMEM, 0, a)
    mach.load_program(isa.assemble(COMPOUND_ASM))
    run = mach.start_program(1)
    return mach.read_memory(isa.BANK_MMEM, 2), run.total_cycles


def trial_machine(rng, fmt, fault) -> TrialOutcome:
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, n + 1))
    x, y, a = random_message(rng, n), random_message(rng, m), random_complex(rng, m, n) / 2
    got, _ = _run_compound(x, y, a, fmt, fault)
    ref = seqfx.compound_mult_eq(
        FxMessage.from_float(x.cov, x.mean, fmt), FxMessage.from_float(y.cov, y.mean, fmt), fxp.to_fixed(a, fmt)
    )
    flt = gmp.compound_mult_eq_update(x, y, a)
    err = float(max(np.abs(fxp.to_float(got.cov) - flt.cov).max(), np.abs(fxp.to_float(got.mean) - flt.mean).max()))
    exact = got == ref
    detail = f"n={n} m={m} bit_exact={exact}"
    if not exact:
        bad = [
            (i, j, got.cov[i][j].hex(), ref.cov[i][j].hex())
            for i in range(n)
            for j in range(n)
            if got.cov[i][j] != ref.cov[i][j]
        ]
        detail += " first_mismatch=" + (f"V[{bad[0][0]}][{bad[0][1]}] got={bad[0][2]} want={bad[0][3]}" if bad else "mean")
    return TrialOutcome(err, exact and err <= MACHINE_ATOL, detail)


def trial_rls(rng, fmt, fault) -> TrialOutcome:
    k = int(rng.integers(1, 5))
    prob = demo.rls_problem(k, seed=int(rng.integers(2**31)))
    comp = compiler.compile_program(demo.rls_program(k))
    mach = Machine(MachineConfig(fmt=fmt))
    if fault:
        mach.fault_hook = flip_lsb
    mach.load_program(comp.image())
    compiler.bind_inputs(mach, comp, prob.messages(), prob.matrices())
    mach.start_program(1)
    got = compiler.read_outputs(mach, comp)["x_in"]
    ref = compiler.evaluate_fixed(comp.source, prob.messages(), prob.matrices(), fmt)["x_in"]
    flt = compiler.evaluate_float(comp.source, prob.messages(), prob.matrices())["x_in"]
    g = compiler.fx_to_message(got)
    err = float(max(np.abs(g.cov - flt.cov).max(), np.abs(g.mean - flt.mean).max()))
    exact = got == ref
    return TrialOutcome(err, exact and err <= MACHINE_ATOL, f"sections={k} bit_exact={exact}")


SUITES: dict[str, Callable] = {
    "faddeev": trial_faddeev,
    "compound": trial_compound,
    "machine": trial_machine,
    "rls": trial_rls,
}


def run_suite(name: str, seed: int, trials: int, fmt: FxFormat = fxp.DEFAULT_FORMAT,
              inject_fault: bool = False, workers: int = 4) -> SuiteResult:
    fn = SUITES[name]
    suite_id = list(SUITES).index(name)

    def one(t):
        rng = np.random.default_rng([seed, suite_id, t])
        try:
            return fn(rng, fmt, inject_fault)
        except FGPError as exc:
            return TrialOutcome(float("inf"), False, f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(one, range(trials)))
    failures = [(t, o) for t, o in enumerate(outcomes) if not o.ok]
    worst = max((o.error for o in outcomes), default=0.0)
    counter = None
    if failures:
        t, o = failures[0]
        counter = f"suite={name} trial={t} seed={seed} error={o.error:.3g} {o.detail}"
    return SuiteResult(name, trials, len(failures), worst, counter)


def verify(seed: int = 0, trials: int = 500, fmt: FxFormat = fxp.DEFAULT_FORMAT, inject_fault: bool = False,
           suites=None, workers: int = 4) -> list[SuiteResult]:
    names = list(SUITES) if suites is None else list(suites)
    return [run_suite(n, seed, trials, fmt, inject_fault, workers) for n in names]
