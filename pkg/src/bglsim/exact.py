"""Matrix-free exact Bose-Hubbard dynamics on the fixed-N Fock basis.

The Hamiltonian and all density-matrix expectations are evaluated without ever
materializing an operator matrix.  For every well pair the basis provides a
precomputed (source, target, amplitude) hop map, so applying a single
creation-annihilation pair is one vectorized scatter over the basis.  A small
cache of the sixteen pair-operator images of the current amplitude vector
turns the Hamiltonian, the SPDM, and every controller-requested TPDM or
three-particle entry into plain dot products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import FockBasis

__all__ = [
    "LatticeParams",
    "ManyBodyState",
    "BoseHubbardSpace",
    "pure_state",
]


@dataclass
class LatticeParams:
    """Instantaneous Bose-Hubbard parameters (hbar = 1).

    hop[m] couples wells m and m+1; the on-site interaction is constant and
    equal at each site; onsite[m] is the chemical potential of well m.
    """

    hop: np.ndarray
    interaction: float
    onsite: np.ndarray

    def __post_init__(self):
        self.hop = np.asarray(self.hop, dtype=float)
        self.onsite = np.asarray(self.onsite, dtype=float)


@dataclass
class ManyBodyState:
    """Normalized amplitude vector over a fixed-(N, M) Fock basis."""

    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.size,):
            raise ValueError(
                f"amplitude vector of length {self.amplitudes.shape} does not "
                f"match basis dimension {self.basis.size}"
            )

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


class BoseHubbardSpace:
    """Matrix-free operator algebra for one fixed-(N, M) Fock basis."""

    def __init__(self, basis: FockBasis):
        self.basis = basis
        self.size = basis.size
        self.n_wells = basis.n_wells
        occ = basis.occupations
        self._occ_float = occ.astype(float)
        # interaction diagonal sum_m n_m (n_m - 1) / 2, filled once
        self._int_diag = 0.5 * (occ * (occ - 1.0)).sum(axis=1)
        # states with an empty well i: the complement of any hop image into i
        self._empty_well = [np.flatnonzero(occ[:, m] == 0) for m in range(self.n_wells)]
        self._scratch: dict[tuple[int, int], np.ndarray] = {}

    # -- single pair operators ----------------------------------------------

    def _pair_scratch(self, i: int, j: int, length: int) -> np.ndarray:
        buf = self._scratch.get((i, j))
        if buf is None or len(buf) != length:
            buf = np.empty(length, dtype=complex)
            self._scratch[(i, j)] = buf
        return buf

    def apply_pair(self, vec: np.ndarray, i: int, j: int, out: np.ndarray | None = None) -> np.ndarray:
        """Image of (create at i, annihilate at j) applied to a vector.

        The image is supported exactly on the states with a particle in
        well i, so only their complement needs zeroing when a buffer is
        reused.
        """
        if out is None:
            out = np.empty(self.size, dtype=complex)
        if i == j:
            np.multiply(self._occ_float[:, i], vec, out=out)
            return out
        if i < j:
            src, dst, amp = self.basis.pair_map(i, j)
            take_from, write_to = src, dst
        else:
            src, dst, amp = self.basis.pair_map(j, i)
            take_from, write_to = dst, src
        tmp = self._pair_scratch(min(i, j), max(i, j), len(src))
        np.take(vec, take_from, out=tmp)
        np.multiply(tmp, amp, out=tmp)
        out[write_to] = tmp
        out[self._empty_well[i]] = 0.0
        return out

    def pair_expectation(self, vec: np.ndarray, i: int, j: int) -> complex:
        """<vec| a^dag_i a_j |vec> via gathers only (no scatter)."""
        if i == j:
            return complex(np.sum(self._occ_float[:, i] * np.abs(vec) ** 2))
        if i < j:
            src, dst, amp = self.basis.pair_map(i, j)
            return complex(np.sum(np.conj(vec[dst]) * amp * vec[src]))
        return complex(np.conj(self.pair_expectation(vec, j, i)))

    # -- pair-image cache -----------------------------------------------------

    def lazy_cache(self, vec: np.ndarray, buffers: dict) -> "PairImageCache":
        return PairImageCache(self, vec, buffers)

    def build_cache(self, vec: np.ndarray, pairs=None, out: dict | None = None) -> dict:
        """Images a^dag_i a_j |vec> for the requested (default: all) pairs.

        ``out`` may hold preallocated buffers from a previous call to avoid
        reallocating 16 basis-sized vectors per derivative evaluation.
        """
        if pairs is None:
            wells = range(self.n_wells)
            pairs = [(i, j) for i in wells for j in wells]
        cache = out if out is not None else {}
        for i, j in pairs:
            cache[(i, j)] = self.apply_pair(vec, i, j, out=cache.get((i, j)))
        return cache

    @staticmethod
    def delta_from_cache(cache: dict, i: int, j: int, k: int, l: int) -> complex:
        """TPDM entry <a^dag_i a_j a^dag_k a_l> from cached pair images."""
        return complex(np.vdot(cache[(j, i)], cache[(k, l)]))

    def chi3_from_cache(self, cache: dict, i: int, j: int, k: int, l: int, m: int, n: int) -> complex:
        """Three-particle entry <a^dag_i a_j a^dag_k a_l a^dag_m a_n>."""
        if k == l:
            inner = self._occ_float[:, k] * cache[(m, n)]
        else:
            inner = self.apply_pair(cache[(m, n)], k, l)
        return complex(np.vdot(cache[(j, i)], inner))

    def sigma_from_cache(self, vec: np.ndarray, cache) -> np.ndarray:
        """SPDM using cached pair images where present, gathers otherwise.

        Nearest-neighbor images are pulled from the cache since the
        Hamiltonian needs them anyway; longer-range entries are cheaper as
        pure gather contractions.
        """
        wells = self.n_wells
        sigma = np.zeros((wells, wells), dtype=complex)
        pops = self._occ_float.T @ (np.abs(vec) ** 2)
        for i in range(wells):
            sigma[i, i] = pops[i]
            for j in range(i + 1, wells):
                if j == i + 1:
                    val = np.vdot(vec, cache[(i, j)])
                else:
                    val = self.pair_expectation(vec, i, j)
                sigma[i, j] = val
                sigma[j, i] = np.conj(val)
        return sigma

    # -- operator expectations and the Hamiltonian ---------------------------

    def apply_hamiltonian(self, vec: np.ndarray, params: LatticeParams, cache: dict | None = None) -> np.ndarray:
        """H . vec for the instantaneous parameters; the input is untouched."""
        if len(params.onsite) != self.n_wells or len(params.hop) != self.n_wells - 1:
            raise ValueError("parameter arrays do not match the basis well count")
        diag = params.interaction * self._int_diag + self._occ_float @ params.onsite
        out = diag * vec
        for m in range(self.n_wells - 1):
            hop = params.hop[m]
            if hop == 0.0:
                continue
            if cache is not None:
                out -= hop * cache[(m, m + 1)]
                out -= hop * cache[(m + 1, m)]
            else:
                # src and dst are each duplicate-free, so in-place fancy
                # indexing is collision-safe
                src, dst, amp = self.basis.pair_map(m, m + 1)
                out[dst] -= hop * amp * vec[src]
                out[src] -= hop * amp * vec[dst]
        return out

    def spdm(self, vec: np.ndarray) -> np.ndarray:
        """Single-particle density matrix sigma_ij = <a^dag_i a_j>."""
        wells = self.n_wells
        sigma = np.zeros((wells, wells), dtype=complex)
        for i in range(wells):
            for j in range(i, wells):
                val = self.pair_expectation(vec, i, j)
                sigma[i, j] = val
                if i != j:
                    sigma[j, i] = np.conj(val)
        return sigma

    def tpdm_entry(self, vec: np.ndarray, i: int, j: int, k: int, l: int) -> complex:
        """Non-normal-ordered TPDM entry <a^dag_i a_j a^dag_k a_l>."""
        left = self.apply_pair(vec, j, i)
        right = self.apply_pair(vec, k, l)
        return complex(np.vdot(left, right))

    def triple_entry(self, vec: np.ndarray, i: int, j: int, k: int, l: int, m: int, n: int) -> complex:
        """Three-particle entry via three successive operator applications."""
        left = self.apply_pair(vec, j, i)
        inner = self.apply_pair(vec, m, n)
        inner = self.apply_pair(inner, k, l)
        return complex(np.vdot(left, inner))


class PairImageCache:
    """Pair-operator images of one amplitude vector, built on first use.

    Buffers persist across derivative evaluations (one dict per back-end
    instance); each cache instance tracks which entries are valid for its
    own vector.  Controllers that never ask for long-range images therefore
    never pay for them.
    """

    def __init__(self, space: BoseHubbardSpace, vec: np.ndarray, buffers: dict):
        self.space = space
        self.vec = vec
        self._buffers = buffers
        self._built: set[tuple[int, int]] = set()

    def __getitem__(self, key: tuple[int, int]) -> np.ndarray:
        if key not in self._built:
            self._buffers[key] = self.space.apply_pair(
                self.vec, *key, out=self._buffers.get(key)
            )
            self._built.add(key)
        return self._buffers[key]


def pure_state(basis: FockBasis, psi: np.ndarray) -> np.ndarray:
    """Amplitudes of the product state built from one single-particle orbital.

    Every particle occupies the same orbital psi (normalized to unit total
    population before use).  Coefficients are evaluated in log-magnitude and
    accumulated-phase form so the construction stays finite far beyond the
    range of direct factorials.
    """
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (basis.n_wells,):
        raise ValueError(f"orbital needs {basis.n_wells} components")
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ValueError("orbital must not be the zero vector")
    psi = psi / norm

    occ = basis.occupations
    n = basis.n_particles
    log_fact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, n + 1)))))

    mags = np.abs(psi)
    live = mags > 0.0
    log_mag = np.where(live, np.log(mags, where=live, out=np.zeros_like(mags)), 0.0)
    phases = np.angle(psi)

    log_amp = 0.5 * log_fact[n] - 0.5 * log_fact[occ].sum(axis=1) + occ @ log_mag
    phase = occ @ phases
    amps = np.exp(log_amp - log_amp.max()) * np.exp(1j * phase)
    if not live.all():
        dead = (occ[:, ~live] > 0).any(axis=1)
        amps[dead] = 0.0
    amps /= np.linalg.norm(amps)
    return amps
