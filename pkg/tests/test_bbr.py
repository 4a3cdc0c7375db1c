"""Moment hierarchy against naive transliterations and the exact kernel.

Two oracle layers:
 1. a loop-based bounds-checked rewrite of the coherent terms (guards the
    vectorized tensors against slicing/boundary errors), and
 2. the exact many-body kernel: with exact moments fed in, the first two
    hierarchy equations are exact identities, so their right-hand sides must
    reproduce dense-operator time derivatives to machine precision.
"""

import math

import numpy as np
import pytest

from bglsim.bbr import (
    MomentState,
    bbr_rhs,
    pure_moments,
    triple_factorize,
    zeta1,
    zeta2,
    zeta_tensors,
)
from bglsim.exact import BoseHubbardSpace, LatticeParams, pure_state
from bglsim.fock import FockBasis
from bglsim.meanfield import TwoModeParams, analytic_params, stationary_init

from test_exact import dense_hamiltonian, dense_pair_operator
from test_fock import oracle_order


# ---------------------------------------------------------------------------
# naive oracle
# ---------------------------------------------------------------------------

def naive_zeta1(sigma, delta, params, i, j):
    wells = sigma.shape[0]

    def hop(a, b):
        if 0 <= a < wells and 0 <= b < wells and abs(a - b) == 1:
            return params.hop[min(a, b)]
        return 0.0

    def sig(a, b):
        if 0 <= a < wells and 0 <= b < wells:
            return sigma[a, b]
        return 0.0

    return (
        hop(i - 1, i) * sig(i - 1, j)
        + hop(i + 1, i) * sig(i + 1, j)
        - hop(j, j - 1) * sig(i, j - 1)
        - hop(j, j + 1) * sig(i, j + 1)
        - params.interaction * (delta[i, i, i, j] - delta[i, j, j, j])
    )


def naive_zeta2(sigma, delta, params, i, j, k, l):
    wells = sigma.shape[0]

    def hop(a, b):
        if 0 <= a < wells and 0 <= b < wells and abs(a - b) == 1:
            return params.hop[min(a, b)]
        return 0.0

    def del4(a, b, c, d):
        if all(0 <= x < wells for x in (a, b, c, d)):
            return delta[a, b, c, d]
        return 0.0

    def chi(a, b, c, d, e, f):
        return triple_factorize(sigma, delta, a, b, c, d, e, f)

    val = (
        hop(i - 1, i) * del4(i - 1, j, k, l)
        + hop(i + 1, i) * del4(i + 1, j, k, l)
        - hop(j, j - 1) * del4(i, j - 1, k, l)
        - hop(j, j + 1) * del4(i, j + 1, k, l)
        + hop(k - 1, k) * del4(i, j, k - 1, l)
        + hop(k + 1, k) * del4(i, j, k + 1, l)
        - hop(l, l - 1) * del4(i, j, k, l - 1)
        - hop(l, l + 1) * del4(i, j, k, l + 1)
    )
    val -= params.interaction * (
        chi(i, i, i, j, k, l)
        - chi(i, j, j, j, k, l)
        + chi(i, j, k, k, k, l)
        - chi(i, j, k, l, l, l)
    )
    return val


def random_moments(rng, wells, symmetric=True):
    sigma = rng.normal(size=(wells, wells)) + 1j * rng.normal(size=(wells, wells))
    delta = rng.normal(size=(wells,) * 4) + 1j * rng.normal(size=(wells,) * 4)
    if symmetric:
        sigma = 0.5 * (sigma + sigma.conj().T)
        delta = 0.5 * (delta + delta.conj().transpose(3, 2, 1, 0))
    return sigma, delta


def random_params(rng, wells):
    return LatticeParams(
        hop=rng.normal(size=wells - 1),
        interaction=rng.normal(),
        onsite=rng.normal(size=wells),
    )


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(42)


# ---------------------------------------------------------------------------
# coherent-term formulas
# ---------------------------------------------------------------------------

class TestZeta1:
    def test_vanishes_without_couplings(self, rng):
        sigma, delta = random_moments(rng, 4)
        params = LatticeParams(hop=[0.0] * 3, interaction=0.0, onsite=np.zeros(4))
        for i in range(4):
            for j in range(4):
                assert zeta1(sigma, lambda *ix: delta[ix], params, i, j) == 0.0

    def test_matches_naive_oracle(self, rng):
        for wells in (2, 3, 4):
            sigma, delta = random_moments(rng, wells)
            params = random_params(rng, wells)
            for i in range(wells):
                for j in range(wells):
                    got = zeta1(sigma, lambda *ix: delta[ix], params, i, j)
                    assert got == pytest.approx(
                        naive_zeta1(sigma, delta, params, i, j), abs=1e-12
                    )

    def test_tensor_version_agrees(self, rng):
        sigma, delta = random_moments(rng, 4)
        params = random_params(rng, 4)
        z1, _ = zeta_tensors(sigma, delta, params)
        for i in range(4):
            for j in range(4):
                assert z1[i, j] == pytest.approx(
                    zeta1(sigma, lambda *ix: delta[ix], params, i, j), abs=1e-12
                )


class TestZeta2:
    def test_vanishes_without_couplings(self, rng):
        sigma, delta = random_moments(rng, 4)
        params = LatticeParams(hop=[0.0] * 3, interaction=0.0, onsite=np.zeros(4))

        def chi(*ix):
            return triple_factorize(sigma, delta, *ix)

        assert zeta2(lambda *ix: delta[ix], chi, params, 1, 1, 1, 2) == 0.0

    def test_matches_naive_oracle(self, rng):
        wells = 4
        sigma, delta = random_moments(rng, wells)
        params = random_params(rng, wells)

        def chi(*ix):
            return triple_factorize(sigma, delta, *ix)

        for idx in [(0, 1, 2, 3), (1, 1, 1, 2), (1, 2, 2, 2), (0, 0, 3, 3), (3, 2, 1, 0)]:
            got = zeta2(lambda *ix: delta[ix], chi, params, *idx)
            assert got == pytest.approx(naive_zeta2(sigma, delta, params, *idx), abs=1e-11)

    def test_tensor_version_agrees_everywhere(self, rng):
        wells = 4
        sigma, delta = random_moments(rng, wells)
        params = random_params(rng, wells)
        _, z2 = zeta_tensors(sigma, delta, params)

        def chi(*ix):
            return triple_factorize(sigma, delta, *ix)

        for i in range(wells):
            for j in range(wells):
                for k in range(wells):
                    for l in range(wells):
                        assert z2[i, j, k, l] == pytest.approx(
                            zeta2(lambda *ix: delta[ix], chi, params, i, j, k, l),
                            abs=1e-11,
                        )


class TestHierarchyExactness:
    """With exact moments the first two hierarchy equations are identities."""

    def test_sigma_equation_matches_dense_derivative(self, rng):
        n, wells = 3, 4
        space = BoseHubbardSpace(FockBasis(n, wells))
        order = oracle_order(n, wells)
        pos = {s: k for k, s in enumerate(order)}
        params = random_params(rng, wells)
        ham = dense_hamiltonian(order, pos, params.hop, params.interaction, params.onsite)
        vec = rng.normal(size=space.size) + 1j * rng.normal(size=space.size)
        vec /= np.linalg.norm(vec)

        dvec = -1j * (ham @ vec)
        sigma = space.spdm(vec)
        for i in range(wells):
            for j in range(wells):
                op = dense_pair_operator(order, pos, i, j)
                dsig = np.vdot(dvec, op @ vec) + np.vdot(vec, op @ dvec)
                z = zeta1(sigma, lambda *ix: space.tpdm_entry(vec, *ix), params, i, j)
                model = -1j * (z - (params.onsite[i] - params.onsite[j]) * sigma[i, j])
                assert model == pytest.approx(dsig, abs=1e-10)

    def test_delta_equation_matches_dense_derivative(self, rng):
        n, wells = 3, 4
        space = BoseHubbardSpace(FockBasis(n, wells))
        order = oracle_order(n, wells)
        pos = {s: k for k, s in enumerate(order)}
        params = random_params(rng, wells)
        ham = dense_hamiltonian(order, pos, params.hop, params.interaction, params.onsite)
        vec = rng.normal(size=space.size) + 1j * rng.normal(size=space.size)
        vec /= np.linalg.norm(vec)
        dvec = -1j * (ham @ vec)

        for idx in [(1, 1, 1, 2), (1, 2, 2, 2), (0, 1, 2, 3)]:
            i, j, k, l = idx
            a = dense_pair_operator(order, pos, i, j) @ dense_pair_operator(order, pos, k, l)
            ddelta = np.vdot(dvec, a @ vec) + np.vdot(vec, a @ dvec)
            z = zeta2(
                lambda *ix: space.tpdm_entry(vec, *ix),
                lambda *ix: space.triple_entry(vec, *ix),
                params,
                *idx,
            )
            mu = params.onsite
            phase = mu[i] - mu[j] + mu[k] - mu[l]
            model = -1j * (z - phase * space.tpdm_entry(vec, *idx))
            assert model == pytest.approx(ddelta, abs=1e-10)


# ---------------------------------------------------------------------------
# closure quality
# ---------------------------------------------------------------------------

class TestTripleFactorize:
    def test_zero_moments(self):
        z = np.zeros((4, 4), dtype=complex)
        zd = np.zeros((4,) * 4, dtype=complex)
        assert triple_factorize(z, zd, 1, 1, 1, 2, 2, 2) == 0.0

    def test_pure_state_large_n(self):
        psi = np.array([0.5, 0.5, 0.5, 0.5], dtype=complex)
        psi = psi * np.exp(1j * np.array([0.2, -0.4, 0.9, 0.0]))
        n = 100
        basis = FockBasis(n, 4)
        space = BoseHubbardSpace(basis)
        vec = pure_state(basis, psi)
        ms = pure_moments(psi, n)
        for idx in [(1, 1, 1, 2, 2, 2), (0, 1, 1, 2, 2, 3)]:
            exact = space.triple_entry(vec, *idx)
            approx = triple_factorize(ms.sigma, ms.delta, *idx)
            assert abs(approx - exact) / abs(exact) < 5.0 / n

    def test_pure_state_n20_within_recorded_band(self):
        psi = np.array([0.6, 0.4, 0.5, 0.2], dtype=complex)
        n = 20
        basis = FockBasis(n, 4)
        space = BoseHubbardSpace(basis)
        vec = pure_state(basis, psi)
        ms = pure_moments(psi, n)
        exact = space.triple_entry(vec, 1, 1, 1, 2, 2, 2)
        approx = triple_factorize(ms.sigma, ms.delta, 1, 1, 1, 2, 2, 2)
        assert abs(approx - exact) / abs(exact) < 0.15


# ---------------------------------------------------------------------------
# full right-hand side
# ---------------------------------------------------------------------------

class TestBbrRhs:
    def test_uniform_onsite_shift_is_gauge(self, rng):
        sigma, delta = random_moments(rng, 4)
        params = random_params(rng, 4)
        shifted = LatticeParams(
            hop=params.hop, interaction=params.interaction, onsite=params.onsite + 2.7
        )
        ds1, dd1 = bbr_rhs(sigma, delta, params)
        ds2, dd2 = bbr_rhs(sigma, delta, shifted)
        assert np.allclose(ds1, ds2, atol=1e-12)
        assert np.allclose(dd1, dd2, atol=1e-12)

    def test_free_evolution_is_one_particle_commutator(self, rng):
        sigma, delta = random_moments(rng, 4)
        params = LatticeParams(
            hop=[0.3, 1.0, 0.7], interaction=0.0, onsite=np.array([0.1, 0.0, 0.0, -0.2])
        )
        ds, _ = bbr_rhs(sigma, delta, params)
        from bglsim.bbr import hop_matrix

        h_one = -hop_matrix(params, 4) + np.diag(params.onsite)
        # d<A>/dt = +i <[H, A]> under i d psi/dt = H psi
        expected = 1j * (h_one @ sigma - sigma @ h_one)
        assert np.allclose(ds, expected, atol=1e-12)

    def test_preserves_conjugation_symmetry(self, rng):
        sigma, delta = random_moments(rng, 4, symmetric=True)
        params = random_params(rng, 4)
        ds, dd = bbr_rhs(sigma, delta, params)
        assert np.abs(ds - ds.conj().T).max() < 1e-12
        assert np.abs(dd - dd.conj().transpose(3, 2, 1, 0)).max() < 1e-12

    def test_trace_conserved(self, rng):
        sigma, delta = random_moments(rng, 4, symmetric=True)
        params = random_params(rng, 4)
        ds, _ = bbr_rhs(sigma, delta, params)
        assert abs(np.trace(ds)) < 1e-12

    def test_stationary_current_derivative_fd_check(self):
        """d jt12/dt from the hierarchy matches a finite difference of the
        exact dynamics at N=20, starting from the balanced pure state."""
        import scipy.linalg

        gamma, j12, g = 0.5, 1.0, 0.1
        n_part, n2 = 20, 10
        pops = np.array([5.0, 5.0, 5.0, 5.0])
        p = TwoModeParams(gamma=gamma, g=g, j12=j12)
        psi = stationary_init(pops[1], pops[0], pops[3], p)
        psi /= np.linalg.norm(psi)
        g_eff = g / n2
        u = g_eff / (n_part - 1)
        j01, j23, mu0, mu3 = analytic_params(0.0, 5.0, 5.0, 5.0, p, g_eff)

        basis = FockBasis(n_part, 4)
        space = BoseHubbardSpace(basis)
        vec = pure_state(basis, psi)
        params = LatticeParams(hop=[j01, j12, j23], interaction=u, onsite=[mu0, 0, 0, mu3])

        order = oracle_order(n_part, 4)
        pos = {s: k for k, s in enumerate(order)}
        ham = dense_hamiltonian(order, pos, params.hop, params.interaction, params.onsite)
        dt = 1e-5
        prop = scipy.linalg.expm(-1j * ham * dt)
        fwd = prop @ vec
        bwd = prop.conj().T @ vec
        jt12_fd = (
            2 * np.imag(BoseHubbardSpace.spdm(space, fwd)[1, 2])
            - 2 * np.imag(BoseHubbardSpace.spdm(space, bwd)[1, 2])
        ) / (2 * dt)

        sigma = space.spdm(vec)
        z12 = zeta1(sigma, lambda *ix: space.tpdm_entry(vec, *ix), params, 1, 2)
        dsigma12 = -1j * z12  # inner wells carry no on-site energy
        assert 2 * np.imag(dsigma12) == pytest.approx(jt12_fd, abs=1e-6)


# ---------------------------------------------------------------------------
# pure-state moments
# ---------------------------------------------------------------------------

class TestPureMoments:
    def test_trace_is_n(self):
        psi = np.array([0.2, 0.4, 0.6, 0.1], dtype=complex)
        ms = pure_moments(psi, 37)
        assert np.trace(ms.sigma).real == pytest.approx(37.0, abs=1e-12)

    def test_number_variance_binomial_oracle(self):
        n = 5
        psi = np.array([0.6, 0.8], dtype=complex)
        ms = pure_moments(psi, n)
        p_occ = 0.36
        second_moment = sum(
            k**2 * math.comb(n, k) * p_occ**k * (1 - p_occ) ** (n - k)
            for k in range(n + 1)
        )
        assert ms.delta[0, 0, 0, 0].real == pytest.approx(second_moment, abs=1e-12)

    def test_purity_is_one(self):
        psi = np.array([0.3, 0.5, 0.7, 0.1], dtype=complex)
        ms = pure_moments(psi, 10)
        reduced = ms.sigma / np.trace(ms.sigma)
        purity = (4 * np.trace(reduced @ reduced).real - 1) / 3
        assert purity == pytest.approx(1.0, abs=1e-12)

    def test_matches_exact_construction(self):
        psi = np.array([0.4, 0.3, 0.6, 0.2], dtype=complex)
        psi = psi * np.exp(1j * np.array([0.0, 1.0, -0.5, 2.0]))
        n = 6
        basis = FockBasis(n, 4)
        space = BoseHubbardSpace(basis)
        vec = pure_state(basis, psi)
        ms = pure_moments(psi, n)
        assert np.allclose(space.spdm(vec), ms.sigma, atol=1e-10)
        for idx in [(0, 1, 1, 2), (1, 1, 2, 2), (3, 2, 2, 1), (0, 0, 0, 0)]:
            assert space.tpdm_entry(vec, *idx) == pytest.approx(
                ms.delta[idx], abs=1e-10
            )

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            pure_moments(np.array([1.0, 0.0]), 0)
        with pytest.raises(ValueError):
            pure_moments(np.zeros(3), 5)


class TestMomentState:
    def test_symmetrize_and_asymmetry(self, rng):
        sigma, delta = random_moments(rng, 4, symmetric=False)
        ms = MomentState(sigma, delta)
        assert ms.asymmetry() > 0.1
        ms.symmetrize()
        assert ms.asymmetry() < 1e-14
