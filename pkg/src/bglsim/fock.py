"""Lexicographically ordered Fock basis for N bosons in M wells.

The basis is enumerated in descending lexicographic order of the occupation
vectors, so ``|N,0,...,0>`` has index 0 and ``|0,...,0,N>`` has index D-1.
Index arithmetic (dimension, global index, hop shifts) reduces to binomial
coefficients; a Pascal-triangle table built once per basis keeps every lookup
constant-time so the matrix-free Hamiltonian kernel never searches for states.

Well indices are 0-based throughout the package; the 1-based bookkeeping of
the combinatorial formulas is confined to this module.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["dimension", "FockBasis"]


def dimension(n_particles: int, n_wells: int) -> int:
    """Number of Fock states for ``n_particles`` bosons in ``n_wells`` wells.

    Exact integer arithmetic (Python ints), valid for any size.
    """
    if n_wells < 1:
        raise ValueError(f"need at least one well, got M={n_wells}")
    if n_particles < 0:
        raise ValueError(f"negative particle number N={n_particles}")
    return math.comb(n_particles + n_wells - 1, n_particles)


class FockBasis:
    """Fixed-(N, M) bosonic Fock basis with constant-time index arithmetic.

    Attributes
    ----------
    n_particles, n_wells : int
        Basis parameters N and M.
    size : int
        Basis dimension D = C(N+M-1, N).
    occupations : (D, M) int32 array
        All occupation vectors in basis order (row k is the state with
        index k).  Built lazily on first access.
    """

    def __init__(self, n_particles: int, n_wells: int):
        self.size = dimension(n_particles, n_wells)  # validates N, M
        self.n_particles = int(n_particles)
        self.n_wells = int(n_wells)
        if self.size > 2**62:
            raise ValueError(
                f"basis dimension {self.size} exceeds the 64-bit index range"
            )
        # dim_table[n, m] = D(n, m); cumulative sums come from the identity
        # sum_{k<n} D(k, m) = D(n-1, m+1), so one table serves both.
        n_max, m_max = self.n_particles, self.n_wells
        table = np.zeros((n_max + 1, m_max + 2), dtype=np.int64)
        table[0, 1:] = 1
        table[:, 1] = 1
        for n in range(1, n_max + 1):
            for m in range(2, m_max + 2):
                table[n, m] = table[n - 1, m] + table[n, m - 1]
        self._dim_table = table
        self._occupations: np.ndarray | None = None
        self._pair_maps: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    # -- state validation -------------------------------------------------

    def _as_state(self, state) -> np.ndarray:
        occ = np.asarray(state, dtype=np.int64)
        if occ.shape != (self.n_wells,):
            raise ValueError(
                f"expected {self.n_wells} occupations, got shape {occ.shape}"
            )
        if (occ < 0).any():
            raise ValueError(f"negative occupation in {occ.tolist()}")
        if occ.sum() != self.n_particles:
            raise ValueError(
                f"occupations {occ.tolist()} sum to {occ.sum()}, "
                f"basis holds N={self.n_particles}"
            )
        return occ

    # -- index arithmetic --------------------------------------------------

    def lex_index(self, state) -> int:
        """Global index of an occupation vector in the ordered basis."""
        occ = self._as_state(state)
        table = self._dim_table
        nu = 0
        remaining = self.n_particles
        for m in range(self.n_wells - 1):
            remaining -= int(occ[m])
            if remaining > 0:
                # sum_{k < remaining} D(k, M-m-1)
                nu += int(table[remaining - 1, self.n_wells - m])
        return nu

    def state_at(self, index: int) -> np.ndarray:
        """Occupation vector at a basis index (inverse of lex_index)."""
        if not 0 <= index < self.size:
            raise IndexError(f"index {index} outside [0, {self.size})")
        table = self._dim_table
        occ = np.zeros(self.n_wells, dtype=np.int32)
        remaining = self.n_particles
        rest = int(index)
        for m in range(self.n_wells - 1):
            cols = self.n_wells - m  # wells m..M-1 still open
            # largest tail count t with sum_{k<t} D(k, cols-1) <= rest
            tail = 0
            while tail < remaining and table[tail, cols] <= rest:
                tail += 1
            if tail > 0:
                rest -= int(table[tail - 1, cols])
            occ[m] = remaining - tail
            remaining = tail
        occ[self.n_wells - 1] = remaining
        return occ

    def hop_shift(self, state, i: int, j: int) -> int:
        """Index shift caused by moving one particle from well j to well i.

        Evaluated on the pre-hop state; for nearest neighbors the sum
        collapses to a single binomial coefficient.
        """
        occ = self._as_state(state)
        if i == j:
            raise ValueError("hop needs two distinct wells")
        if occ[j] < 1:
            raise ValueError(f"no particle to move out of well {j}")
        table = self._dim_table
        lo, hi = (i, j) if i < j else (j, i)
        partial = int(occ[: lo + 1].sum())
        shift = 0
        for m in range(lo + 1, hi + 1):  # 1-based m from min+1 to max
            tail = self.n_particles - partial  # particles beyond well m-1
            cols = self.n_wells - m
            if i < j:
                # receiving well comes first: index decreases
                shift -= int(table[tail - 1, cols]) if tail >= 1 else 0
            else:
                shift += int(table[tail, cols])
            if m <= self.n_wells - 1:
                partial += int(occ[m])
        return shift

    def apply_hop(self, state, i: int, j: int) -> tuple[np.ndarray, float]:
        """Apply the bosonic hop (receive at i, remove at j) to a state.

        Returns the target occupation vector and the matrix element
        sqrt((n_i + 1) * n_j).
        """
        occ = self._as_state(state)
        if i == j:
            raise ValueError("hop needs two distinct wells")
        if occ[j] < 1:
            raise ValueError(f"no particle to move out of well {j}")
        amp = math.sqrt((occ[i] + 1) * occ[j])
        after = occ.copy()
        after[j] -= 1
        after[i] += 1
        return after, amp

    # -- bulk structures for the matrix-free kernel -------------------------

    @property
    def occupations(self) -> np.ndarray:
        if self._occupations is None:
            occ = np.zeros((self.size, self.n_wells), dtype=np.int32)
            self._fill_block(occ, self.n_particles)
            occ.setflags(write=False)
            self._occupations = occ
        return self._occupations

    def _fill_block(self, buf: np.ndarray, n: int) -> None:
        cols = buf.shape[1]
        if cols == 1:
            buf[:, 0] = n
            return
        if cols == 2:
            buf[:, 0] = np.arange(n, -1, -1)
            buf[:, 1] = np.arange(0, n + 1)
            return
        row = 0
        for first in range(n, -1, -1):
            size = int(self._dim_table[n - first, cols - 1])
            buf[row : row + size, 0] = first
            self._fill_block(buf[row : row + size, 1:], n - first)
            row += size

    def pair_map(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized hop map for the ordered pair (i < j).

        Returns ``(src, dst, amp)`` such that the operator receiving at i and
        removing at j sends basis index ``src[k]`` to ``dst[k]`` with matrix
        element ``amp[k]``.  The reverse hop runs ``dst -> src`` with the same
        amplitudes, so one map serves both directions.
        """
        if not 0 <= i < j < self.n_wells:
            raise ValueError(f"pair_map needs 0 <= i < j < M, got ({i}, {j})")
        key = (i, j)
        if key not in self._pair_maps:
            occ = self.occupations
            src = np.flatnonzero(occ[:, j] >= 1)
            cum = np.cumsum(occ[src], axis=1, dtype=np.int64)
            shift = np.zeros(len(src), dtype=np.int64)
            table = self._dim_table
            for m in range(i + 1, j + 1):
                tail = self.n_particles - cum[:, m - 1]
                shift -= table[tail - 1, self.n_wells - m]
            dst = src + shift
            amp = np.sqrt(
                (occ[src, i] + 1.0) * occ[src, j]
            )
            src = src.astype(np.intp)
            dst = dst.astype(np.intp)
            for arr in (src, dst, amp):
                arr.setflags(write=False)
            self._pair_maps[key] = (src, dst, amp)
        return self._pair_maps[key]
