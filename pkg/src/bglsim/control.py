"""State-feedback reservoir controllers.

Each derivative evaluation asks the active controller for the four reservoir
parameters (J01, J23, mu0, mu3).  Tunneling rates pin the reservoir currents
to the gain/loss target 2*gamma*n; on-site energies hold the system-reservoir
coherences at zero (mean-field and many-body variants) or, in the modified
variant, additionally project onto the manifold of stationary inner current.
A controller signals breakdown by raising BreakdownSignal when a reduced
current in one of its denominators collapses relative to its initial value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bbr, meanfield
from .bbr import MomentState
from .exact import BoseHubbardSpace, LatticeParams

__all__ = [
    "BreakdownSignal",
    "ControlPolicy",
    "ControlOutput",
    "VARIANTS",
    "feedback_tunneling",
    "mf_onsite",
    "mf_onsite_sigma",
    "mb_onsite",
    "bgl_onsite",
    "rescale_interaction",
    "detect_breakdown",
    "make_controller",
    "MeanFieldMoments",
    "ExactMoments",
    "BBRMoments",
    "stationarity_condition_number",
]

VARIANTS = ("AnalyticMF", "FeedbackMF", "FeedbackMB", "FeedbackBGL")


class BreakdownSignal(Exception):
    """A controller denominator collapsed; the balanced episode is over."""

    def __init__(self, cause: str, time: float, value: float = math.nan, threshold: float = math.nan):
        self.cause = cause
        self.time = time
        self.value = value
        self.threshold = threshold
        super().__init__(
            f"breakdown at t={time:.6g}: {cause} (|value|={abs(value):.3e}, "
            f"threshold={threshold:.3e})"
        )


@dataclass
class ControlPolicy:
    """Which controller runs, and its physical targets."""

    variant: str
    gamma: float
    j12: float
    g_or_u: float
    epsilon_breakdown: float = 1e-3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown policy variant {self.variant!r}")
        if not 0.0 < self.epsilon_breakdown < 1.0:
            raise ValueError("epsilon_breakdown must lie in (0, 1)")


@dataclass
class ControlOutput:
    """Reservoir parameters produced for one derivative evaluation."""

    j01: float
    j23: float
    mu0: float
    mu3: float
    alpha: float | None = None
    beta: float | None = None
    omega: float | None = None

    def projection_residual(self) -> float | None:
        """alpha*mu0 + beta*mu3 - omega, zero for the modified controller."""
        if self.alpha is None:
            return None
        return self.alpha * self.mu0 + self.beta * self.mu3 - self.omega


# ---------------------------------------------------------------------------
# controller formulas
# ---------------------------------------------------------------------------

def feedback_tunneling(sigma: np.ndarray, gamma: float) -> tuple[float, float]:
    """Tunneling rates that hold both reservoir currents at 2*gamma*n."""
    jt01 = 2.0 * float(np.imag(sigma[0, 1]))
    jt23 = 2.0 * float(np.imag(sigma[2, 3]))
    n1 = float(np.real(sigma[1, 1]))
    n2 = float(np.real(sigma[2, 2]))
    return 2.0 * gamma * n1 / jt01, 2.0 * gamma * n2 / jt23


def mf_onsite_sigma(sigma: np.ndarray, g_eff: float, j12: float) -> tuple[float, float]:
    """Mean-field on-site energies that freeze c01 and c23 (sigma form)."""
    jt01 = 2.0 * np.imag(sigma[0, 1])
    jt23 = 2.0 * np.imag(sigma[2, 3])
    jt02 = 2.0 * np.imag(sigma[0, 2])
    jt13 = 2.0 * np.imag(sigma[1, 3])
    n0, n1 = np.real(sigma[0, 0]), np.real(sigma[1, 1])
    n2, n3 = np.real(sigma[2, 2]), np.real(sigma[3, 3])
    mu0 = -j12 * jt02 / jt01 - g_eff * (n0 - n1)
    mu3 = -j12 * jt13 / jt23 - g_eff * (n3 - n2)
    return float(mu0), float(mu3)


def mf_onsite(psi: np.ndarray, g_eff: float, j12: float) -> tuple[float, float]:
    """Mean-field on-site energies from the wave function."""
    psi = np.asarray(psi, dtype=complex)
    return mf_onsite_sigma(np.outer(psi.conj(), psi), g_eff, j12)


def mb_onsite(sigma: np.ndarray, delta_entry, u: float, j12: float) -> tuple[float, float]:
    """Many-body on-site energies with two-particle corrections.

    Freezes c01 and c23 of the SPDM; ``delta_entry(i, j, k, l)`` supplies the
    TPDM entries 0001, 0111, 2223 and 2333.
    """
    jt01 = 2.0 * np.imag(sigma[0, 1])
    jt23 = 2.0 * np.imag(sigma[2, 3])
    jt02 = 2.0 * np.imag(sigma[0, 2])
    jt13 = 2.0 * np.imag(sigma[1, 3])
    jt2_0001 = 2.0 * np.imag(delta_entry(0, 0, 0, 1))
    jt2_0111 = 2.0 * np.imag(delta_entry(0, 1, 1, 1))
    jt2_2223 = 2.0 * np.imag(delta_entry(2, 2, 2, 3))
    jt2_2333 = 2.0 * np.imag(delta_entry(2, 3, 3, 3))
    mu0 = (-j12 * jt02 - u * (jt2_0001 - jt2_0111)) / jt01
    mu3 = (-j12 * jt13 + u * (jt2_2223 - jt2_2333)) / jt23
    return float(mu0), float(mu3)


def bgl_onsite(
    sigma: np.ndarray,
    zeta1_entry,
    zeta2_entry,
    j01: float,
    j23: float,
    j12: float,
    u: float,
    mu_unprojected: tuple[float, float],
) -> tuple[float, float, float, float, float]:
    """On-site energies projected onto the stationary-inner-current line.

    Takes the coherence-freezing energies ``mu_unprojected`` and moves them
    orthogonally onto the line alpha*mu0 + beta*mu3 = omega on which
    d jt12/dt stays zero.  Returns (mu0, mu3, alpha, beta, omega).
    """
    jt01 = 2.0 * np.imag(sigma[0, 1])
    jt23 = 2.0 * np.imag(sigma[2, 3])
    jt02 = 2.0 * np.imag(sigma[0, 2])
    jt13 = 2.0 * np.imag(sigma[1, 3])
    c01 = 2.0 * np.real(sigma[0, 1])
    c23 = 2.0 * np.real(sigma[2, 3])
    c02 = 2.0 * np.real(sigma[0, 2])
    c13 = 2.0 * np.real(sigma[1, 3])

    alpha = j01 * (jt02 + c02 * c01 / jt01)
    beta = j23 * (jt13 + c13 * c23 / jt23)

    chi_01 = 2.0 * np.real(zeta1_entry(0, 1))
    chi_23 = 2.0 * np.real(zeta1_entry(2, 3))
    ups_02 = 2.0 * np.imag(zeta1_entry(0, 2))
    ups_13 = 2.0 * np.imag(zeta1_entry(1, 3))
    ups_11 = 2.0 * np.imag(zeta1_entry(1, 1))
    ups_22 = 2.0 * np.imag(zeta1_entry(2, 2))
    ups2_1112 = 2.0 * np.imag(zeta2_entry(1, 1, 1, 2))
    ups2_1222 = 2.0 * np.imag(zeta2_entry(1, 2, 2, 2))

    omega = (
        j01 * c02 * chi_01 / jt01
        - j23 * c13 * chi_23 / jt23
        + j01 * ups_02
        + j12 * (ups_22 - ups_11)
        - j23 * ups_13
        - u * (ups2_1112 - ups2_1222)
    )

    denom = alpha**2 + beta**2
    mu0_0, mu3_0 = mu_unprojected
    mu0 = (alpha * omega + beta**2 * mu0_0 - alpha * beta * mu3_0) / denom
    mu3 = (beta * omega + alpha**2 * mu3_0 - alpha * beta * mu0_0) / denom
    return float(mu0), float(mu3), float(alpha), float(beta), float(omega)


def rescale_interaction(g: float, n_embedded: int, n_total: int) -> float:
    """On-site interaction U emulating macroscopic strength g in the
    embedded pair.

    The lattice must present the embedded wells with a per-population
    interaction of g / N2, whatever the total particle number; with the
    macroscopic-microscopic relation g_macro = (N - 1) U this pins
    U = g N / (N2 (N - 1)).  Product-state moments then reproduce the
    mean-field on-site energies exactly at every N (see mb_onsite).
    """
    if n_total < 2:
        raise ValueError("interaction is undefined for fewer than 2 particles")
    if n_embedded < 1:
        raise ValueError("embedded particle count must be >= 1")
    return g * n_total / (n_embedded * (n_total - 1))


def detect_breakdown(
    currents: tuple[float, float],
    initial: tuple[float, float],
    eps: float,
) -> str | None:
    """Name of the first reservoir current that collapsed, or None.

    A current breaks down when it falls below eps times its initial value;
    if both have collapsed, the relatively smaller one is reported.
    """
    ratios = {}
    for name, now, start in (
        ("jt01", currents[0], initial[0]),
        ("jt23", currents[1], initial[1]),
    ):
        if start == 0.0:
            raise ValueError(f"initial current {name} must be nonzero")
        ratios[name] = abs(now) / abs(start)
    tripped = {name: r for name, r in ratios.items() if r < eps}
    if not tripped:
        return None
    return min(tripped, key=tripped.get)


# ---------------------------------------------------------------------------
# moment adapters: uniform controller view onto the three back-ends
# ---------------------------------------------------------------------------

class MeanFieldMoments:
    """Moment view of a mean-field state (populations in particle units).

    Two-particle entries, needed only by the modified controller, come from
    the product-state moments with the configured particle number.
    """

    def __init__(self, psi: np.ndarray, n_particles: int | None = None):
        self.psi = np.asarray(psi, dtype=complex)
        self.sigma = np.outer(self.psi.conj(), self.psi)
        self._n = n_particles
        self._pure: MomentState | None = None

    def _moments(self) -> MomentState:
        if self._pure is None:
            if self._n is None:
                raise ValueError(
                    "two-particle moments on the mean-field back-end need a "
                    "configured particle number"
                )
            ms = bbr.pure_moments(self.psi, self._n)
            # keep particle-unit normalization consistent with sigma
            scale = np.real(np.trace(self.sigma)) / self._n
            ms.sigma *= scale
            ms.delta *= scale**2
            self._pure = ms
        return self._pure

    def delta(self, i, j, k, l) -> complex:
        return self._moments().delta_entry(i, j, k, l)

    def zeta1(self, params: LatticeParams, i: int, j: int) -> complex:
        return bbr.zeta1(self.sigma, self.delta, params, i, j)

    def zeta2(self, params: LatticeParams, i: int, j: int, k: int, l: int) -> complex:
        ms = self._moments()

        def chi3(*idx):
            return bbr.triple_factorize(ms.sigma, ms.delta, *idx)

        return bbr.zeta2(self.delta, chi3, params, i, j, k, l)


class ExactMoments:
    """Moment view of a many-body amplitude vector via the pair-image cache.

    All two- and three-particle entries are exact expectation values.
    """

    def __init__(self, space: BoseHubbardSpace, vec: np.ndarray, cache: dict | None = None):
        self.space = space
        self.vec = vec
        self.cache = cache if cache is not None else space.build_cache(vec)
        self._sigma: np.ndarray | None = None
        self._delta: dict[tuple, complex] = {}

    @property
    def sigma(self) -> np.ndarray:
        if self._sigma is None:
            self._sigma = self.space.sigma_from_cache(self.vec, self.cache)
        return self._sigma

    def delta(self, i, j, k, l) -> complex:
        key = (i, j, k, l)
        if key not in self._delta:
            self._delta[key] = self.space.delta_from_cache(self.cache, i, j, k, l)
        return self._delta[key]

    def zeta1(self, params: LatticeParams, i: int, j: int) -> complex:
        return bbr.zeta1(self.sigma, self.delta, params, i, j)

    def zeta2(self, params: LatticeParams, i: int, j: int, k: int, l: int) -> complex:
        def chi3(*idx):
            return self.space.chi3_from_cache(self.cache, *idx)

        return bbr.zeta2(self.delta, chi3, params, i, j, k, l)


class BBRMoments:
    """Moment view of a truncated moment state (closure for third order)."""

    def __init__(self, ms: MomentState):
        self.ms = ms
        self.sigma = ms.sigma

    def delta(self, i, j, k, l) -> complex:
        return self.ms.delta_entry(i, j, k, l)

    def zeta1(self, params: LatticeParams, i: int, j: int) -> complex:
        return bbr.zeta1(self.sigma, self.delta, params, i, j)

    def zeta2(self, params: LatticeParams, i: int, j: int, k: int, l: int) -> complex:
        def chi3(*idx):
            return bbr.triple_factorize(self.ms.sigma, self.ms.delta, *idx)

        return bbr.zeta2(self.delta, chi3, params, i, j, k, l)


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------

class FeedbackController:
    """Continuous feedback controller evaluated inside every derivative call."""

    def __init__(self, policy: ControlPolicy, g_eff: float, u: float):
        self.policy = policy
        self.g_eff = g_eff  # per-population strength for mean-field formulas
        self.u = u  # on-site interaction for many-body corrections
        self._initial: tuple[float, float] | None = None
        self._bgl_scale0: float | None = None

    def prime(self, moments, t0: float = 0.0) -> "ControlOutput":
        sigma = moments.sigma
        jt01 = 2.0 * float(np.imag(sigma[0, 1]))
        jt23 = 2.0 * float(np.imag(sigma[2, 3]))
        if jt01 == 0.0 or jt23 == 0.0:
            raise ValueError("initial reservoir currents must be nonzero")
        self._initial = (jt01, jt23)
        out = self.evaluate(t0, moments)
        if out.alpha is not None:
            self._bgl_scale0 = out.alpha**2 + out.beta**2
        return out

    def _check_currents(self, sigma: np.ndarray, t: float) -> None:
        if self._initial is None:
            return
        jt01 = 2.0 * float(np.imag(sigma[0, 1]))
        jt23 = 2.0 * float(np.imag(sigma[2, 3]))
        eps = self.policy.epsilon_breakdown
        cause = detect_breakdown((jt01, jt23), self._initial, eps)
        if cause is not None:
            value = jt01 if cause == "jt01" else jt23
            ref = self._initial[0] if cause == "jt01" else self._initial[1]
            raise BreakdownSignal(cause, t, value, eps * abs(ref))

    def evaluate(self, t: float, moments) -> ControlOutput:
        sigma = moments.sigma
        self._check_currents(sigma, t)
        pol = self.policy
        j01, j23 = feedback_tunneling(sigma, pol.gamma)

        if pol.variant == "FeedbackMF":
            mu0, mu3 = mf_onsite_sigma(sigma, self.g_eff, pol.j12)
            return ControlOutput(j01, j23, mu0, mu3)

        mu0, mu3 = mb_onsite(sigma, moments.delta, self.u, pol.j12)
        if pol.variant == "FeedbackMB":
            return ControlOutput(j01, j23, mu0, mu3)

        # modified variant: project onto the stationary-current line
        params = LatticeParams(
            hop=np.array([j01, pol.j12, j23]),
            interaction=self.u,
            onsite=np.zeros(4),
        )
        mu0, mu3, alpha, beta, omega = bgl_onsite(
            sigma,
            lambda i, j: moments.zeta1(params, i, j),
            lambda i, j, k, l: moments.zeta2(params, i, j, k, l),
            j01,
            j23,
            pol.j12,
            self.u,
            (mu0, mu3),
        )
        if self._bgl_scale0 is not None:
            denom = alpha**2 + beta**2
            floor = self.policy.epsilon_breakdown**2 * self._bgl_scale0
            if denom < floor:
                raise BreakdownSignal("control-degenerate", t, denom, floor)
        return ControlOutput(j01, j23, mu0, mu3, alpha, beta, omega)


class AnalyticController:
    """Closed-form schedule; breakdown still read off the actual state."""

    def __init__(self, policy: ControlPolicy, g_eff: float, n: float, n0_0: float, n3_0: float):
        self.policy = policy
        self.g_eff = g_eff
        self.n = n
        self.n0_0 = n0_0
        self.n3_0 = n3_0
        self._two_mode = meanfield.TwoModeParams(
            gamma=policy.gamma, g=g_eff, j12=policy.j12
        )
        self._initial: tuple[float, float] | None = None

    def prime(self, moments, t0: float = 0.0) -> ControlOutput:
        sigma = moments.sigma
        jt01 = 2.0 * float(np.imag(sigma[0, 1]))
        jt23 = 2.0 * float(np.imag(sigma[2, 3]))
        if jt01 == 0.0 or jt23 == 0.0:
            raise ValueError("initial reservoir currents must be nonzero")
        self._initial = (jt01, jt23)
        return self.evaluate(t0, moments)

    def evaluate(self, t: float, moments) -> ControlOutput:
        sigma = moments.sigma
        if self._initial is not None:
            eps = self.policy.epsilon_breakdown
            jt01 = 2.0 * float(np.imag(sigma[0, 1]))
            jt23 = 2.0 * float(np.imag(sigma[2, 3]))
            cause = detect_breakdown((jt01, jt23), self._initial, eps)
            if cause is not None:
                value = jt01 if cause == "jt01" else jt23
                ref = self._initial[0] if cause == "jt01" else self._initial[1]
                raise BreakdownSignal(cause, t, value, eps * abs(ref))
        try:
            j01, j23, mu0, mu3 = meanfield.analytic_params(
                t, self.n, self.n0_0, self.n3_0, self._two_mode, self.g_eff
            )
        except meanfield.ReservoirDepleted:
            raise BreakdownSignal("jt01", t, 0.0, 0.0) from None
        return ControlOutput(j01, j23, mu0, mu3)


def make_controller(policy: ControlPolicy, *, g_eff: float, u: float,
                    n: float | None = None, n0_0: float | None = None,
                    n3_0: float | None = None):
    """Instantiate the controller for a policy; analytic schedules need the
    initial populations."""
    if policy.variant == "AnalyticMF":
        if None in (n, n0_0, n3_0):
            raise ValueError("analytic schedule needs n, n0_0 and n3_0")
        return AnalyticController(policy, g_eff, n, n0_0, n3_0)
    return FeedbackController(policy, g_eff, u)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def stationarity_condition_number(
    ms: MomentState, params: LatticeParams, j12: float, probe: float = 1e-3
) -> float:
    """Condition number of the 2x2 linear system that would freeze both the
    inner coherence and the inner current at once.

    Both stationarity demands are linear in (mu0, mu3).  The two rows are
    extracted by finite differences of the second time derivative of
    sigma_12 under the truncated-moment dynamics with frozen tunneling
    rates.  Near a pure state the rows are nearly parallel and the condition
    number blows up, which is why the solver is exposed as a diagnostic only.
    """

    def second_derivative(mu0: float, mu3: float) -> complex:
        p = LatticeParams(
            hop=params.hop,
            interaction=params.interaction,
            onsite=np.array([mu0, 0.0, 0.0, mu3]),
        )
        ds, dd = bbr.bbr_rhs(ms.sigma, ms.delta, p)
        eps = probe
        ds2, _ = bbr.bbr_rhs(ms.sigma + eps * ds, ms.delta + eps * dd, p)
        return complex((ds2[1, 2] - ds[1, 2]) / eps)

    # central differences isolate the part linear in the on-site energies
    col0 = 0.5 * (second_derivative(1.0, 0.0) - second_derivative(-1.0, 0.0))
    col3 = 0.5 * (second_derivative(0.0, 1.0) - second_derivative(0.0, -1.0))
    rows = np.array(
        [
            [np.real(col0), np.real(col3)],
            [np.imag(col0), np.imag(col3)],
        ]
    )
    return float(np.linalg.cond(rows))
