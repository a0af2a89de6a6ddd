"""Run reports: cycle/throughput accounting, key=value output and figures."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .demo import DEFAULT_CLOCK_HZ, DSP_REFERENCE_CYCLES


@dataclass
class RunReport:
    total_cycles: int
    compound_nodes: int
    clock_hz: float = DEFAULT_CLOCK_HZ
    max_abs_error_vs_oracle: Optional[float] = None  # None when no oracle applies
    breakdown: dict = field(default_factory=dict)  # opcode -> cycles
    instructions: int = 0

    def __post_init__(self):
        if self.max_abs_error_vs_oracle is not None and self.max_abs_error_vs_oracle < 0:
            raise ValueError("error must be nonnegative")

    @property
    def cycles_per_compound_node(self) -> float:
        return self.total_cycles / max(1, self.compound_nodes)

    def throughput_at_clock(self, f: Optional[float] = None) -> float:
        """Compound-node updates per second at clock ``f`` (Hz)."""
        f = self.clock_hz if f is None else f
        return f / self.cycles_per_compound_node

    def items(self) -> list[tuple[str, object]]:
        out = [
            ("total_cycles", self.total_cycles),
            ("instructions", self.instructions),
            ("compound_nodes", self.compound_nodes),
            ("cycles_per_compound_node", f"{self.cycles_per_compound_node:.6g}"),
            ("clock_hz", f"{self.clock_hz:.6g}"),
            ("throughput_cn_per_s", f"{self.throughput_at_clock():.6g}"),
            ("max_abs_error_vs_oracle", "na" if self.max_abs_error_vs_oracle is None else f"{self.max_abs_error_vs_oracle:.6g}"),
        ]
        out += [(f"cycles_{op}", c) for op, c in sorted(self.breakdown.items())]
        return out

    def to_keyvalue(self, footer: bool = False) -> str:
        lines = [f"{k}={v}" for k, v in self.items()]
        if footer:
            # published DSP figure, stored as an external comparison constant only
            lines.append(f"reference_dsp_cycles_external={DSP_REFERENCE_CYCLES}")
        return "\n".join(lines) + "\n"

    def write(self, path, footer: bool = False) -> None:
        Path(path).write_text(self.to_keyvalue(footer))


def parse_keyvalue(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_breakdown(report: RunReport, path) -> Path:
    """Bar chart of cycles spent per opcode."""
    plt = _pyplot()
    ops = sorted(report.breakdown)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(ops, [report.breakdown[o] for o in ops], color="tab:blue")
    ax.set_ylabel("cycles")
    ax.set_title(f"{report.total_cycles} cycles, {report.cycles_per_compound_node:.0f} per compound node")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_convergence(h: np.ndarray, means: list, traces: list, path, machine_mean=None) -> Path:
    """Squared estimation error and posterior variance trace per section."""
    plt = _pyplot()
    k = np.arange(1, len(means) + 1)
    err = [float(np.sum(np.abs(m - h) ** 2)) for m in means]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy(k, err, "o-", label="|m - h|^2 (float)")
    ax.semilogy(k, np.real(traces), "s--", label="trace V (float)")
    if machine_mean is not None:
        ax.semilogy([k[-1]], [float(np.sum(np.abs(machine_mean - h) ** 2))], "k*", ms=10, label="machine")
    ax.set_xlabel("section")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
