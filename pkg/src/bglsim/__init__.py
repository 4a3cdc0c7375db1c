"""Balanced gain and loss in a controlled four-mode Bose-Hubbard lattice.

A two-mode condensate with balanced particle gain and loss is emulated inside
a Hermitian four-well lattice whose outer wells act as reservoirs; their
tunneling rates and on-site energies are driven by state feedback.  Three
levels of theory share one integrator and observable pipeline: the discrete
Gross-Pitaevskii equation, exact many-body dynamics on the Fock basis, and a
second-order moment expansion with a back-reaction closure.
"""

__version__ = "0.1.0"

from .control import BreakdownSignal, ControlOutput, ControlPolicy
from .engine import ConfigError, RunConfig, RunStatus, Trajectory, evolve
from .fock import FockBasis, dimension

__all__ = [
    "__version__",
    "BreakdownSignal",
    "ConfigError",
    "ControlOutput",
    "ControlPolicy",
    "FockBasis",
    "RunConfig",
    "RunStatus",
    "Trajectory",
    "dimension",
    "evolve",
]
