"""Second-order moment dynamics with the back-reaction closure.

The first two orders of the coupled moment hierarchy propagate the
single-particle density matrix sigma_ij = <a^dag_i a_j> and the (non-normal-
ordered) two-particle density matrix Delta_ijkl = <a^dag_i a_j a^dag_k a_l>.
Three-particle moments are factorized into products of lower orders, closing
the system.  Complex conjugation reverses index order at every level,
conj(Delta_ijkl) = Delta_lkji; the integrator re-symmetrizes after each
accepted step to remove numerical drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import LatticeParams

__all__ = [
    "MomentState",
    "hop_matrix",
    "zeta1",
    "zeta2",
    "triple_factorize",
    "bbr_rhs",
    "pure_moments",
]


@dataclass
class MomentState:
    """SPDM and TPDM of an M-well system, particle-normalized (tr sigma = N)."""

    sigma: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=complex)
        self.delta = np.asarray(self.delta, dtype=complex)
        wells = self.sigma.shape[0]
        if self.sigma.shape != (wells, wells):
            raise ValueError("sigma must be a square matrix")
        if self.delta.shape != (wells,) * 4:
            raise ValueError("delta must be an M^4 tensor")

    @property
    def n_wells(self) -> int:
        return self.sigma.shape[0]

    def delta_entry(self, i: int, j: int, k: int, l: int) -> complex:
        return complex(self.delta[i, j, k, l])

    def symmetrize(self) -> None:
        """Enforce Hermiticity of sigma and index-reversal symmetry of delta."""
        self.sigma = 0.5 * (self.sigma + self.sigma.conj().T)
        self.delta = 0.5 * (self.delta + self.delta.conj().transpose(3, 2, 1, 0))

    def asymmetry(self) -> float:
        """Largest violation of the conjugation symmetry (diagnostic)."""
        herm = np.abs(self.sigma - self.sigma.conj().T).max()
        rev = np.abs(self.delta - self.delta.conj().transpose(3, 2, 1, 0)).max()
        return float(max(herm, rev))

    def copy(self) -> "MomentState":
        return MomentState(self.sigma.copy(), self.delta.copy())


def hop_matrix(params: LatticeParams, n_wells: int) -> np.ndarray:
    """Symmetric nearest-neighbor coupling matrix; open-chain boundaries."""
    mat = np.zeros((n_wells, n_wells))
    for m in range(n_wells - 1):
        mat[m, m + 1] = params.hop[m]
        mat[m + 1, m] = params.hop[m]
    return mat


def zeta1(sigma: np.ndarray, delta_entry, params: LatticeParams, i: int, j: int) -> complex:
    """Coherent part of the sigma_ij equation of motion (hop and interaction
    terms; on-site phases enter separately)."""
    wells = sigma.shape[0]
    val = 0.0 + 0.0j
    for m in (i - 1, i + 1):
        if 0 <= m < wells:
            val += params.hop[min(i, m)] * sigma[m, j]
    for m in (j - 1, j + 1):
        if 0 <= m < wells:
            val -= params.hop[min(j, m)] * sigma[i, m]
    val -= params.interaction * (delta_entry(i, i, i, j) - delta_entry(i, j, j, j))
    return complex(val)


def zeta2(delta_entry, chi3_entry, params: LatticeParams, i: int, j: int, k: int, l: int) -> complex:
    """Coherent part of the Delta_ijkl equation of motion.

    ``chi3_entry`` supplies three-particle moments: the factorized closure on
    the moment back-end, exact expectations on the many-body back-end.
    """
    wells = len(params.onsite)
    val = 0.0 + 0.0j
    for m in (i - 1, i + 1):
        if 0 <= m < wells:
            val += params.hop[min(i, m)] * delta_entry(m, j, k, l)
    for m in (j - 1, j + 1):
        if 0 <= m < wells:
            val -= params.hop[min(j, m)] * delta_entry(i, m, k, l)
    for m in (k - 1, k + 1):
        if 0 <= m < wells:
            val += params.hop[min(k, m)] * delta_entry(i, j, m, l)
    for m in (l - 1, l + 1):
        if 0 <= m < wells:
            val -= params.hop[min(l, m)] * delta_entry(i, j, k, m)
    val -= params.interaction * (
        chi3_entry(i, i, i, j, k, l)
        - chi3_entry(i, j, j, j, k, l)
        + chi3_entry(i, j, k, k, k, l)
        - chi3_entry(i, j, k, l, l, l)
    )
    return complex(val)


def triple_factorize(sigma: np.ndarray, delta: np.ndarray, i: int, j: int, k: int, l: int, m: int, n: int) -> complex:
    """Closure for <a^dag_i a_j a^dag_k a_l a^dag_m a_n> from lower moments."""
    return complex(
        sigma[i, j] * delta[k, l, m, n]
        + sigma[m, n] * delta[i, j, k, l]
        + sigma[k, l] * delta[i, j, m, n]
        - 2.0 * sigma[i, j] * sigma[k, l] * sigma[m, n]
    )


def _chi3_pattern_tensors(sigma: np.ndarray, delta: np.ndarray):
    """The four factorized three-particle tensors entering the interaction
    bracket of the Delta equation, indexed (i, j, k, l)."""
    diag = np.einsum("ii->i", sigma)
    d_iiij = np.einsum("iiij->ij", delta)
    d_ijjj = np.einsum("ijjj->ij", delta)
    d_iikl = np.einsum("iikl->ikl", delta)
    d_jjkl = np.einsum("jjkl->jkl", delta)
    d_kkkl = np.einsum("kkkl->kl", delta)
    d_ijkk = np.einsum("ijkk->ijk", delta)
    d_klll = np.einsum("klll->kl", delta)
    d_ijll = np.einsum("ijll->ijl", delta)

    s_ij = sigma[:, :, None, None]
    s_kl = sigma[None, None, :, :]

    # pairs (i,i)(i,j)(k,l)
    t_a = (
        diag[:, None, None, None] * delta
        + s_kl * d_iiij[:, :, None, None]
        + s_ij * d_iikl[:, None, :, :]
        - 2.0 * diag[:, None, None, None] * s_ij * s_kl
    )
    # pairs (i,j)(j,j)(k,l)
    t_b = (
        s_ij * d_jjkl[None, :, :, :]
        + s_kl * d_ijjj[:, :, None, None]
        + diag[None, :, None, None] * delta
        - 2.0 * s_ij * diag[None, :, None, None] * s_kl
    )
    # pairs (i,j)(k,k)(k,l)
    t_c = (
        s_ij * d_kkkl[None, None, :, :]
        + s_kl * d_ijkk[:, :, :, None]
        + diag[None, None, :, None] * delta
        - 2.0 * s_ij * diag[None, None, :, None] * s_kl
    )
    # pairs (i,j)(k,l)(l,l)
    t_d = (
        s_ij * d_klll[None, None, :, :]
        + diag[None, None, None, :] * delta
        + s_kl * d_ijll[:, :, None, :]
        - 2.0 * s_ij * s_kl * diag[None, None, None, :]
    )
    return t_a, t_b, t_c, t_d


def zeta_tensors(sigma: np.ndarray, delta: np.ndarray, params: LatticeParams):
    """Vectorized coherent parts of both moment equations (full tensors)."""
    wells = sigma.shape[0]
    coupling = hop_matrix(params, wells)
    z1 = coupling @ sigma - sigma @ coupling
    z1 -= params.interaction * (
        np.einsum("iiij->ij", delta) - np.einsum("ijjj->ij", delta)
    )

    z2 = np.einsum("im,mjkl->ijkl", coupling, delta)
    z2 -= np.einsum("jm,imkl->ijkl", coupling, delta)
    z2 += np.einsum("km,ijml->ijkl", coupling, delta)
    z2 -= np.einsum("lm,ijkm->ijkl", coupling, delta)
    t_a, t_b, t_c, t_d = _chi3_pattern_tensors(sigma, delta)
    z2 -= params.interaction * (t_a - t_b + t_c - t_d)
    return z1, z2


def bbr_rhs(sigma: np.ndarray, delta: np.ndarray, params: LatticeParams):
    """Time derivatives (dsigma/dt, ddelta/dt) of the truncated hierarchy."""
    mu = params.onsite
    z1, z2 = zeta_tensors(sigma, delta, params)
    phase1 = mu[:, None] - mu[None, :]
    phase2 = (
        mu[:, None, None, None]
        - mu[None, :, None, None]
        + mu[None, None, :, None]
        - mu[None, None, None, :]
    )
    dsigma = -1j * (z1 - phase1 * sigma)
    ddelta = -1j * (z2 - phase2 * delta)
    return dsigma, ddelta


def pure_moments(psi: np.ndarray, n_particles: int) -> MomentState:
    """Moments of the product state with every particle in orbital psi."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    psi = np.asarray(psi, dtype=complex)
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ValueError("orbital must not be the zero vector")
    psi = psi / norm
    wells = len(psi)
    proj = np.outer(psi.conj(), psi)
    sigma = n_particles * proj
    delta = n_particles * (n_particles - 1) * (
        proj[:, :, None, None] * proj[None, None, :, :]
    )
    delta += n_particles * (
        psi.conj()[:, None, None, None]
        * np.eye(wells)[None, :, :, None]
        * psi[None, None, None, :]
    )
    return MomentState(sigma, delta)
