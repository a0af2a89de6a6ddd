"""Software model of the Factor Graph Processor (FGP).

Floating-point Gaussian message passing reference, bit-exact fixed-point
arithmetic, a cycle-level systolic-array simulator, the six-instruction ISA,
the machine model with its command port, and a graph-program compiler.
"""

from .errors import (
    AddressFault,
    AsmError,
    BusyError,
    CapacityError,
    DecodeError,
    DimensionError,
    DivideByZeroError,
    FGPError,
    ProgramError,
    SingularError,
    SizeError,
)
from .fxp import FixedComplex, FxFormat, FxMessage
from .gmp import GaussianMessage, Param
from .machine import Machine, MachineConfig
from .systolic import CycleModel, SystolicArray

__version__ = "0.1.0"

__all__ = [
    "AddressFault",
    "AsmError",
    "BusyError",
    "CapacityError",
    "CycleModel",
    "DecodeError",
    "DimensionError",
    "DivideByZeroError",
    "FGPError",
    "FixedComplex",
    "FxFormat",
    "FxMessage",
    "GaussianMessage",
    "Machine",
    "MachineConfig",
    "Param",
    "ProgramError",
    "SingularError",
    "SizeError",
    "SystolicArray",
]
