"""Observable extraction shared by all back-ends.

Everything is a function of the single-particle density matrix, plus
two-particle entries where fluctuations are defined.  Mean-field runs carry
no fluctuations, so their variance fields stay unset.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "reduced_current",
    "coherence",
    "purity",
    "purity_embedded",
    "covariance",
    "variance_number",
    "variance_current",
    "variance_coherence",
    "ObservableRecord",
    "CSV_COLUMNS",
]


def reduced_current(sigma: np.ndarray, i: int, j: int) -> float:
    """Reduced current jt_ij = 2 Im sigma_ij; the physical current between
    the wells is J_ij * jt_ij."""
    return 2.0 * float(np.imag(sigma[i, j]))


def coherence(sigma: np.ndarray, i: int, j: int) -> float:
    """Coherence c_ij = 2 Re sigma_ij."""
    return 2.0 * float(np.real(sigma[i, j]))


def purity(sigma: np.ndarray) -> float:
    """Condensate purity of a reduced SPDM: (M tr(rho^2) - 1) / (M - 1).

    The input is trace-normalized internally; 1 marks a fully condensed
    block, 0 a maximally fragmented one.
    """
    wells = sigma.shape[0]
    if wells < 2:
        raise ValueError("purity needs at least a 2x2 block")
    trace = np.trace(sigma).real
    if trace <= 0.0:
        raise ValueError("purity of a zero-trace block is undefined")
    reduced = sigma / trace
    val = (wells * np.trace(reduced @ reduced).real - 1.0) / (wells - 1.0)
    return float(val)


def purity_embedded(sigma: np.ndarray) -> tuple[float, float]:
    """(P4, P2): purity of the full four-well SPDM and of the inner block."""
    if sigma.shape != (4, 4):
        raise ValueError("embedded purity is defined for the four-well SPDM")
    return purity(sigma), purity(sigma[1:3, 1:3])


def covariance(sigma: np.ndarray, delta_entry, i: int, j: int, k: int, l: int) -> complex:
    """cov_ijkl = Delta_ijkl - sigma_ij sigma_kl."""
    return complex(delta_entry(i, j, k, l) - sigma[i, j] * sigma[k, l])


def variance_number(sigma: np.ndarray, delta_entry, i: int) -> float:
    """var(n_i) = cov_iiii."""
    return float(np.real(covariance(sigma, delta_entry, i, i, i, i)))


def variance_current(sigma: np.ndarray, delta_entry, i: int, j: int) -> float:
    """var(jt_ij) = cov_ijji + cov_jiij - cov_ijij - cov_jiji."""
    val = (
        covariance(sigma, delta_entry, i, j, j, i)
        + covariance(sigma, delta_entry, j, i, i, j)
        - covariance(sigma, delta_entry, i, j, i, j)
        - covariance(sigma, delta_entry, j, i, j, i)
    )
    return float(np.real(val))


def variance_coherence(sigma: np.ndarray, delta_entry, i: int, j: int) -> float:
    """var(c_ij) = cov_ijji + cov_jiij + cov_ijij + cov_jiji."""
    val = (
        covariance(sigma, delta_entry, i, j, j, i)
        + covariance(sigma, delta_entry, j, i, i, j)
        + covariance(sigma, delta_entry, i, j, i, j)
        + covariance(sigma, delta_entry, j, i, j, i)
    )
    return float(np.real(val))


CSV_COLUMNS = [
    "t",
    "n0",
    "n1",
    "n2",
    "n3",
    "jt01",
    "jt12",
    "jt23",
    "c01",
    "c12",
    "c23",
    "J01",
    "J23",
    "mu0",
    "mu3",
    "P4",
    "P2",
    "var_n1",
    "var_n2",
    "var_jt12",
    "conservation",
]


@dataclass
class ObservableRecord:
    """One sampled row of a trajectory; None marks observables the back-end
    does not define (written as empty CSV cells, never as zeros)."""

    t: float
    n0: float | None = None
    n1: float | None = None
    n2: float | None = None
    n3: float | None = None
    jt01: float | None = None
    jt12: float | None = None
    jt23: float | None = None
    c01: float | None = None
    c12: float | None = None
    c23: float | None = None
    J01: float | None = None
    J23: float | None = None
    mu0: float | None = None
    mu3: float | None = None
    P4: float | None = None
    P2: float | None = None
    var_n1: float | None = None
    var_n2: float | None = None
    var_jt12: float | None = None
    conservation: float | None = None

    def as_row(self) -> list[float | None]:
        return [getattr(self, f.name) for f in fields(self)]
