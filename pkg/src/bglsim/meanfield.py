"""Discrete Gross-Pitaevskii dynamics and closed-form four-mode results.

Covers the open two-mode model with gain/loss rate gamma, the Hermitian
four-mode lattice that embeds it, the stationary initial conditions with
their antisymmetric reservoir phases, and the analytic schedules for the
controlled reservoir parameters.  Wave-function components carry raw
populations, ``psi_m = sqrt(n_m) exp(i phi_m)``; normalized-unit runs are
expressed by choosing n = 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exact import LatticeParams

__all__ = [
    "TwoModeParams",
    "ReservoirDepleted",
    "gpe_rhs",
    "two_mode_rhs",
    "stationary_init",
    "analytic_params",
    "chemical_potential",
    "breakdown_time",
]


class ReservoirDepleted(RuntimeError):
    """Raised when the analytic schedule is evaluated at or past t = tau."""


@dataclass
class TwoModeParams:
    """Open two-mode model parameters: gain/loss rate, macroscopic
    interaction strength, and inner tunneling rate."""

    gamma: float
    g: float
    j12: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gain/loss rate must be >= 0")
        if self.j12 <= 0:
            raise ValueError("inner tunneling rate must be > 0")


def gpe_rhs(psi: np.ndarray, params: LatticeParams) -> np.ndarray:
    """Right-hand side of the discrete GPE, d psi / dt.

    ``params.interaction`` plays the role of the effective per-population
    interaction strength (g rescaled by the embedded particle count).
    Out-of-range hop terms vanish (open chain).
    """
    psi = np.asarray(psi, dtype=complex)
    wells = len(psi)
    if len(params.onsite) != wells or len(params.hop) != wells - 1:
        raise ValueError("parameter arrays do not match the well count")
    h_psi = (params.interaction * np.abs(psi) ** 2 + params.onsite) * psi
    if wells > 1:
        h_psi[:-1] -= params.hop * psi[1:]
        h_psi[1:] -= params.hop * psi[:-1]
    return -1j * h_psi


def two_mode_rhs(psi: np.ndarray, p: TwoModeParams) -> np.ndarray:
    """Open PT-symmetric two-mode model: gain +i*gamma on well 1, loss
    -i*gamma on well 2, tunneling -J12 between them."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (2,):
        raise ValueError("two-mode state needs exactly 2 components")
    h00 = p.g * abs(psi[0]) ** 2 + 1j * p.gamma
    h11 = p.g * abs(psi[1]) ** 2 - 1j * p.gamma
    return -1j * np.array(
        [h00 * psi[0] - p.j12 * psi[1], h11 * psi[1] - p.j12 * psi[0]]
    )


def stationary_phase(p: TwoModeParams) -> float:
    """Inner-well phase phi = -arcsin(gamma / J12) / 2 of the stationary state."""
    if p.gamma > p.j12:
        raise ValueError(
            f"no stationary state for gamma={p.gamma} > J12={p.j12}"
        )
    return -0.5 * math.asin(p.gamma / p.j12)


def stationary_init(n: float, n0: float, n3: float, p: TwoModeParams) -> np.ndarray:
    """Four-mode initial state with balanced currents j = 2*gamma*n.

    The reservoir wells sit at +-pi/2 relative to their neighbors, which
    zeroes the system-reservoir coherences and fixes equal currents through
    all three junctions.
    """
    if n <= 0 or n0 <= 0 or n3 <= 0:
        raise ValueError("all initial populations must be positive")
    phi = stationary_phase(p)
    return np.array(
        [
            math.sqrt(n0) * np.exp(1j * (phi - math.pi / 2)),
            math.sqrt(n) * np.exp(1j * phi),
            math.sqrt(n) * np.exp(-1j * phi),
            math.sqrt(n3) * np.exp(-1j * (phi - math.pi / 2)),
        ]
    )


def chemical_potential(n: float, p: TwoModeParams) -> float:
    """Real eigenvalue of the stationary two-mode state, g*n - sqrt(J12^2 - gamma^2)."""
    if p.gamma > p.j12:
        raise ValueError("stationary eigenvalue requires gamma <= J12")
    return p.g * n - math.sqrt(p.j12**2 - p.gamma**2)


def breakdown_time(n0_0: float, gamma: float, n: float) -> float:
    """Time at which the draining reservoir is empty, tau = n0(0) / (2*gamma*n)."""
    if gamma <= 0 or n <= 0:
        raise ValueError("gamma and n must be positive")
    return n0_0 / (2.0 * gamma * n)


def analytic_params(
    t: float,
    n: float,
    n0_0: float,
    n3_0: float,
    p: TwoModeParams,
    g_eff: float,
) -> tuple[float, float, float, float]:
    """Closed-form reservoir parameters (J01, J23, mu0, mu3) at time t.

    Valid while the draining reservoir still holds particles; raises
    ReservoirDepleted at t >= tau.
    """
    tau = breakdown_time(n0_0, p.gamma, n)
    if t >= tau:
        raise ReservoirDepleted(
            f"left reservoir empty at tau={tau:.6g}, requested t={t:.6g}"
        )
    drain = 2.0 * p.gamma * n * t
    n0_t = n0_0 - drain
    n3_t = n3_0 + drain
    mu = g_eff * n - math.sqrt(p.j12**2 - p.gamma**2)
    j01 = p.gamma * math.sqrt(n / n0_t)
    j23 = p.gamma * math.sqrt(n / n3_t)
    mu0 = mu - g_eff * n0_t
    mu3 = mu - g_eff * n3_t
    return j01, j23, mu0, mu3
