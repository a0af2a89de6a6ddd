"""RLS channel-estimation demo: graph program text and synthetic training data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmp import GaussianMessage

DSP_REFERENCE_CYCLES = 1076
"""Published cycle count of a TI C66x DSP for one compound-node update (external data)."""

DEFAULT_CLOCK_HZ = 130e6


def rls_program(sections: int, taps: int = 4) -> str:
    """Graph program for a ``sections``-long RLS chain estimating ``taps`` channel taps."""
    return (
        f"# RLS channel estimation, {sections} sections, {taps} taps\n"
        f"input x_in {taps}\n"
        f"stream ytilde 1 {sections}\n"
        "input n 1\n"
        f"smatrix A 1x{taps} {sections}\n"
        "\n"
        f"loop {sections}\n"
        "  y = add_b(ytilde[i], n)\n"
        "  x_in = mult_eq_f(x_in, y, A[i])\n"
        "end\n"
        "\n"
        "output x_in\n"
    )


@dataclass
class RlsProblem:
    h: np.ndarray  # true channel taps
    rows: np.ndarray  # (sections, taps) training rows
    y: np.ndarray  # received samples
    prior: GaussianMessage
    noise: GaussianMessage

    @property
    def sections(self) -> int:
        return len(self.y)

    def observations(self) -> list[GaussianMessage]:
        return [GaussianMessage(np.array([v]), np.zeros((1, 1))) for v in self.y]

    def messages(self) -> dict:
        return {"x_in": self.prior, "ytilde": self.observations(), "n": self.noise}

    def matrices(self) -> dict:
        return {"A": [r[None, :] for r in self.rows]}


def rls_problem(sections: int, taps: int = 4, noise_var: float = 0.1, prior_var: float = 1.0, seed: int = 0) -> RlsProblem:
    """Random complex channel, QPSK training symbols, circular Gaussian noise."""
    rng = np.random.default_rng(seed)
    h = (rng.normal(size=taps) + 1j * rng.normal(size=taps)) * np.sqrt(prior_var / 2)
    qpsk = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    rows = qpsk[rng.integers(0, 4, size=(sections, taps))]
    noise = (rng.normal(size=sections) + 1j * rng.normal(size=sections)) * np.sqrt(noise_var / 2)
    y = rows @ h + noise
    prior = GaussianMessage(np.zeros(taps, dtype=complex), prior_var * np.eye(taps, dtype=complex))
    noise_msg = GaussianMessage(np.zeros(1, dtype=complex), np.array([[noise_var]], dtype=complex))
    return RlsProblem(h, rows, y, prior, noise_msg)
