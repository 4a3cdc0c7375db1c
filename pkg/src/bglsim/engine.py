"""Run orchestration: adaptive integration with the controller in the loop.

A single explicit Dormand-Prince 5(4) stepper drives all four back-ends.  The
reservoir parameters are re-evaluated inside every derivative call (rejected
trial steps therefore never commit parameter values), accepted steps land
exactly on the sample grid, and the recorded parameter history covers
accepted steps only.  Breakdown is an expected terminal status, reported
separately from step-size underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import meanfield, observables
from .bbr import MomentState, bbr_rhs, pure_moments
from .control import (
    BBRMoments,
    BreakdownSignal,
    ControlOutput,
    ControlPolicy,
    ExactMoments,
    MeanFieldMoments,
    make_controller,
    rescale_interaction,
)
from .exact import BoseHubbardSpace, LatticeParams, pure_state
from .fock import FockBasis, dimension
from .meanfield import TwoModeParams, stationary_init
from .observables import ObservableRecord

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunStatus",
    "Trajectory",
    "step_control",
    "evolve",
    "BACKENDS",
]

BACKENDS = ("TwoModeMF", "FourModeMF", "ExactBH", "BBR")

# default integrator tolerances (absolute, relative) per back-end.  The
# exact back-end needs a tiny absolute floor: the error norm averages over
# the full basis, so an absolute tolerance of 1e-8 would admit a norm drift
# of order sqrt(D)*atol per step.
_DEFAULT_TOL = {
    "TwoModeMF": (1e-9, 1e-9),
    "FourModeMF": (1e-9, 1e-9),
    "BBR": (1e-9, 1e-9),
    "ExactBH": (1e-12, 1e-8),
}

# bytes per basis state for the exact back-end: 16 pair-image buffers,
# integrator stages and work arrays, plus the hop maps and occupation table
_EXACT_BYTES_PER_STATE = 700


class ConfigError(ValueError):
    """A run configuration is malformed or exceeds resource limits."""


@dataclass
class RunConfig:
    """Everything one trajectory needs; figure presets fill these fields."""

    backend: str
    variant: str | None
    gamma: float
    j12: float
    g: float
    n: float
    n0: float
    n3: float
    n_particles: int | None = None
    n_embedded: int | None = None
    t_end: float = 10.0
    abs_tol: float | None = None
    rel_tol: float | None = None
    sample_dt: float = 0.05
    epsilon_breakdown: float = 1e-3
    memory_cap_mb: float = 4096.0

    def resolved_tolerances(self) -> tuple[float, float]:
        default_abs, default_rel = _DEFAULT_TOL[self.backend]
        return (
            default_abs if self.abs_tol is None else self.abs_tol,
            default_rel if self.rel_tol is None else self.rel_tol,
        )

    def g_eff(self) -> float:
        """Per-population interaction strength g / N2."""
        n2 = self.n_embedded if self.n_embedded is not None else 2.0 * self.n
        return self.g / n2

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.variant is None and self.backend != "TwoModeMF":
            raise ConfigError(f"backend {self.backend} needs a policy variant")
        if self.variant is not None and self.backend == "TwoModeMF":
            raise ConfigError("the open two-mode reference run takes no policy")
        if self.variant == "AnalyticMF" and self.backend != "FourModeMF":
            raise ConfigError("the analytic schedule is only valid on the mean-field back-end")
        if (
            self.variant in ("FeedbackMB", "FeedbackBGL")
            and self.backend == "FourModeMF"
            and self.n_particles is None
        ):
            raise ConfigError(
                "many-body controllers on the mean-field back-end need a "
                "particle number for the product-state moments"
            )
        if self.t_end <= 0:
            raise ConfigError("t_end must be positive")
        if self.sample_dt <= 0:
            raise ConfigError("sample_dt must be positive")
        for name in ("n", "n0", "n3"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"initial population {name} must be positive")
        abs_tol, rel_tol = self.resolved_tolerances()
        for name, val in (("abs_tol", abs_tol), ("rel_tol", rel_tol)):
            if not 0.0 < val < 1e-2:
                raise ConfigError(f"{name}={val} outside (0, 1e-2)")
        if self.gamma > self.j12:
            raise ConfigError("gamma > J12 has no stationary regime")
        if self.backend in ("ExactBH", "BBR"):
            if self.n_particles is None or self.n_embedded is None:
                raise ConfigError("many-body back-ends need N and N2")
            if self.n_particles < 2:
                raise ConfigError("many-body back-ends need N >= 2")
            if abs(2.0 * self.n - self.n_embedded) > 1e-9:
                raise ConfigError(
                    f"N2={self.n_embedded} does not match the embedded "
                    f"population 2n={2 * self.n}"
                )
            total = 2.0 * self.n + self.n0 + self.n3
            if abs(total - self.n_particles) > 1e-9:
                raise ConfigError(
                    f"N={self.n_particles} does not match the initial "
                    f"populations summing to {total}"
                )
        if self.backend == "ExactBH":
            dim = dimension(self.n_particles, 4)
            need_mb = dim * _EXACT_BYTES_PER_STATE / 2**20
            if need_mb > self.memory_cap_mb:
                raise ConfigError(
                    f"exact run needs basis dimension D={dim} "
                    f"(~{need_mb:.0f} MB) exceeding the memory cap of "
                    f"{self.memory_cap_mb:.0f} MB"
                )


@dataclass
class RunStatus:
    kind: str  # completed | breakdown | step_underflow
    cause: str | None = None
    time: float | None = None

    def describe(self) -> str:
        if self.kind == "completed":
            return "completed"
        return f"{self.kind}({self.cause}, t={self.time:.6g})"


@dataclass
class Trajectory:
    config: RunConfig
    records: list[ObservableRecord]
    param_times: np.ndarray
    params: np.ndarray  # columns J01, J23, mu0, mu3
    bgl_residuals: np.ndarray | None
    status: RunStatus
    stats: dict

    def times(self) -> np.ndarray:
        return np.array([rec.t for rec in self.records])

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(rec, name) for rec in self.records]
        return np.array([math.nan if v is None else v for v in vals])


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)
# ---------------------------------------------------------------------------

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_ERR = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_MAX_REJECTS = 60


def _error_norm(diff, y_old, y_new, abs_tol, rel_tol) -> float:
    scale = abs_tol + rel_tol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean(np.abs(diff / scale) ** 2)))


def _stages(rhs, t, y, h, k1):
    """Stage derivatives, the 5th-order solution and the error estimate."""
    k = [k1]
    for s in range(1, 6):
        ys = y + h * sum(a * ks for a, ks in zip(_A[s], k))
        k.append(rhs(t + _C[s] * h, ys))
    y5 = y + h * sum(a * ks for a, ks in zip(_A[6], k))
    k7 = rhs(t + h, y5)
    k.append(k7)
    err = h * sum(e * ks for e, ks in zip(_ERR, k))
    return y5, k7, err


def step_control(rhs, state, t, h, abs_tol=1e-9, rel_tol=1e-9):
    """One accepted adaptive step; rejects and retries with reduced h.

    Returns (new state, new t, proposed next h, error estimate of the
    accepted step).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    y = np.asarray(state, dtype=complex)
    k1 = rhs(t, y)
    for _ in range(_MAX_REJECTS):
        y5, _, err_vec = _stages(rhs, t, y, h, k1)
        err = _error_norm(err_vec, y, y5, abs_tol, rel_tol)
        if err <= 1.0:
            factor = _MAX_FACTOR if err == 0.0 else min(
                _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err ** -0.2)
            )
            return y5, t + h, h * factor, err
        h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
        if h < 1e-13 * max(1.0, abs(t)):
            break
    raise RuntimeError(f"step size underflow at t={t:.6g}")


def _initial_step(y0, k1, abs_tol, rel_tol, limit):
    scale = abs_tol + rel_tol * np.abs(y0)
    d0 = np.sqrt(np.mean(np.abs(y0 / scale) ** 2))
    d1 = np.sqrt(np.mean(np.abs(k1 / scale) ** 2))
    h = 0.01 * d0 / d1 if d1 > 1e-14 else 1e-6
    return min(h, limit)


# ---------------------------------------------------------------------------
# back-ends
# ---------------------------------------------------------------------------

class _FourModeMF:
    uses_controller = True
    fsal = True

    def __init__(self, config: RunConfig):
        self.config = config
        self.g_eff = config.g_eff()
        self.two_mode = TwoModeParams(gamma=config.gamma, g=self.g_eff, j12=config.j12)

    def initial_state(self) -> np.ndarray:
        c = self.config
        return stationary_init(c.n, c.n0, c.n3, self.two_mode)

    def adapter(self, y):
        return MeanFieldMoments(y, n_particles=self.config.n_particles)

    def derivative(self, t, y, out: ControlOutput, adapter):
        params = LatticeParams(
            hop=np.array([out.j01, self.config.j12, out.j23]),
            interaction=self.g_eff,
            onsite=np.array([out.mu0, 0.0, 0.0, out.mu3]),
        )
        return meanfield.gpe_rhs(y, params)

    def post_accept(self, y) -> bool:
        return False

    def record(self, t, y, out: ControlOutput) -> ObservableRecord:
        sigma = np.outer(np.conj(y), y)
        p4, p2 = observables.purity_embedded(sigma)
        return ObservableRecord(
            t=t,
            n0=abs(y[0]) ** 2,
            n1=abs(y[1]) ** 2,
            n2=abs(y[2]) ** 2,
            n3=abs(y[3]) ** 2,
            jt01=observables.reduced_current(sigma, 0, 1),
            jt12=observables.reduced_current(sigma, 1, 2),
            jt23=observables.reduced_current(sigma, 2, 3),
            c01=observables.coherence(sigma, 0, 1),
            c12=observables.coherence(sigma, 1, 2),
            c23=observables.coherence(sigma, 2, 3),
            J01=out.j01,
            J23=out.j23,
            mu0=out.mu0,
            mu3=out.mu3,
            P4=p4,
            P2=p2,
            conservation=float(np.sum(np.abs(y) ** 2)),
        )


class _TwoModeMF:
    uses_controller = False
    fsal = True

    def __init__(self, config: RunConfig):
        self.config = config
        self.params = TwoModeParams(
            gamma=config.gamma, g=config.g_eff(), j12=config.j12
        )

    def initial_state(self) -> np.ndarray:
        return stationary_init(self.config.n, self.config.n0, self.config.n3, self.params)[1:3]

    def adapter(self, y):
        return None

    def derivative(self, t, y, out, adapter):
        return meanfield.two_mode_rhs(y, self.params)

    def post_accept(self, y) -> bool:
        return False

    def record(self, t, y, out) -> ObservableRecord:
        sigma = np.outer(np.conj(y), y)
        return ObservableRecord(
            t=t,
            n1=abs(y[0]) ** 2,
            n2=abs(y[1]) ** 2,
            jt12=observables.reduced_current(sigma, 0, 1),
            c12=observables.coherence(sigma, 0, 1),
            P2=observables.purity(sigma),
            conservation=float(np.sum(np.abs(y) ** 2)),
        )


class _ExactBH:
    uses_controller = True
    fsal = True

    def __init__(self, config: RunConfig):
        self.config = config
        self.u = rescale_interaction(config.g, config.n_embedded, config.n_particles)
        self.basis = FockBasis(config.n_particles, 4)
        self.space = BoseHubbardSpace(self.basis)
        self.two_mode = TwoModeParams(gamma=config.gamma, g=config.g_eff(), j12=config.j12)
        self._cache: dict = {}

    def initial_state(self) -> np.ndarray:
        c = self.config
        psi = stationary_init(c.n, c.n0, c.n3, self.two_mode)
        return pure_state(self.basis, psi)

    def adapter(self, y):
        return ExactMoments(self.space, y, self.space.lazy_cache(y, self._cache))

    def derivative(self, t, y, out: ControlOutput, adapter):
        params = LatticeParams(
            hop=np.array([out.j01, self.config.j12, out.j23]),
            interaction=self.u,
            onsite=np.array([out.mu0, 0.0, 0.0, out.mu3]),
        )
        h_vec = self.space.apply_hamiltonian(y, params, cache=adapter.cache)
        # integrate in the frame rotating at the instantaneous mean energy:
        # a time-dependent global gauge that leaves every observable
        # untouched but removes the dominant phase rotation from the
        # controlled on-site energies, enlarging stable step sizes
        energy = np.real(np.vdot(y, h_vec)) / np.real(np.vdot(y, y))
        return -1j * (h_vec - energy * y)

    def post_accept(self, y) -> bool:
        return False

    def record(self, t, y, out: ControlOutput) -> ObservableRecord:
        mom = ExactMoments(self.space, y, self.space.lazy_cache(y, self._cache))
        sigma = mom.sigma
        p4, p2 = observables.purity_embedded(sigma)
        return ObservableRecord(
            t=t,
            n0=float(np.real(sigma[0, 0])),
            n1=float(np.real(sigma[1, 1])),
            n2=float(np.real(sigma[2, 2])),
            n3=float(np.real(sigma[3, 3])),
            jt01=observables.reduced_current(sigma, 0, 1),
            jt12=observables.reduced_current(sigma, 1, 2),
            jt23=observables.reduced_current(sigma, 2, 3),
            c01=observables.coherence(sigma, 0, 1),
            c12=observables.coherence(sigma, 1, 2),
            c23=observables.coherence(sigma, 2, 3),
            J01=out.j01,
            J23=out.j23,
            mu0=out.mu0,
            mu3=out.mu3,
            P4=p4,
            P2=p2,
            var_n1=observables.variance_number(sigma, mom.delta, 1),
            var_n2=observables.variance_number(sigma, mom.delta, 2),
            var_jt12=observables.variance_current(sigma, mom.delta, 1, 2),
            conservation=float(np.sum(np.abs(y) ** 2)),
        )


class _BBR:
    uses_controller = True
    fsal = False  # post-step symmetrization modifies the state

    def __init__(self, config: RunConfig):
        self.config = config
        self.u = rescale_interaction(config.g, config.n_embedded, config.n_particles)
        self.two_mode = TwoModeParams(gamma=config.gamma, g=config.g_eff(), j12=config.j12)
        self.max_asymmetry = 0.0

    def initial_state(self) -> np.ndarray:
        c = self.config
        psi = stationary_init(c.n, c.n0, c.n3, self.two_mode)
        ms = pure_moments(psi, c.n_particles)
        return np.concatenate([ms.sigma.ravel(), ms.delta.ravel()])

    @staticmethod
    def _views(y):
        return y[:16].reshape(4, 4), y[16:].reshape(4, 4, 4, 4)

    def adapter(self, y):
        sigma, delta = self._views(y)
        return BBRMoments(MomentState(sigma, delta))

    def derivative(self, t, y, out: ControlOutput, adapter):
        params = LatticeParams(
            hop=np.array([out.j01, self.config.j12, out.j23]),
            interaction=self.u,
            onsite=np.array([out.mu0, 0.0, 0.0, out.mu3]),
        )
        sigma, delta = self._views(y)
        dsigma, ddelta = bbr_rhs(sigma, delta, params)
        return np.concatenate([dsigma.ravel(), ddelta.ravel()])

    def post_accept(self, y) -> bool:
        sigma, delta = self._views(y)
        herm = np.abs(sigma - sigma.conj().T).max()
        rev = np.abs(delta - delta.conj().transpose(3, 2, 1, 0)).max()
        self.max_asymmetry = max(self.max_asymmetry, float(herm), float(rev))
        sigma[:] = 0.5 * (sigma + sigma.conj().T)
        delta[:] = 0.5 * (delta + delta.conj().transpose(3, 2, 1, 0))
        return True

    def record(self, t, y, out: ControlOutput) -> ObservableRecord:
        sigma, delta = self._views(y)
        p4, p2 = observables.purity_embedded(sigma)
        delta_entry = lambda *ix: delta[ix]
        return ObservableRecord(
            t=t,
            n0=float(np.real(sigma[0, 0])),
            n1=float(np.real(sigma[1, 1])),
            n2=float(np.real(sigma[2, 2])),
            n3=float(np.real(sigma[3, 3])),
            jt01=observables.reduced_current(sigma, 0, 1),
            jt12=observables.reduced_current(sigma, 1, 2),
            jt23=observables.reduced_current(sigma, 2, 3),
            c01=observables.coherence(sigma, 0, 1),
            c12=observables.coherence(sigma, 1, 2),
            c23=observables.coherence(sigma, 2, 3),
            J01=out.j01,
            J23=out.j23,
            mu0=out.mu0,
            mu3=out.mu3,
            P4=p4,
            P2=p2,
            var_n1=observables.variance_number(sigma, delta_entry, 1),
            var_n2=observables.variance_number(sigma, delta_entry, 2),
            var_jt12=observables.variance_current(sigma, delta_entry, 1, 2),
            conservation=float(np.real(np.trace(sigma))),
        )


_BACKEND_CLASSES = {
    "FourModeMF": _FourModeMF,
    "TwoModeMF": _TwoModeMF,
    "ExactBH": _ExactBH,
    "BBR": _BBR,
}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def _build_controller(config: RunConfig):
    if config.variant is None:
        return None
    g_eff = config.g_eff()
    if config.n_particles is not None and config.n_particles >= 2:
        n2 = config.n_embedded if config.n_embedded is not None else max(round(2 * config.n), 1)
        u = rescale_interaction(config.g, n2, config.n_particles)
    else:
        u = 0.0
    policy = ControlPolicy(
        variant=config.variant,
        gamma=config.gamma,
        j12=config.j12,
        g_or_u=u if config.backend in ("ExactBH", "BBR") else g_eff,
        epsilon_breakdown=config.epsilon_breakdown,
    )
    return make_controller(
        policy, g_eff=g_eff, u=u, n=config.n, n0_0=config.n0, n3_0=config.n3
    )


def evolve(config: RunConfig) -> Trajectory:
    """Integrate one configured run to t_end, breakdown, or failure."""
    config.validate()
    backend = _BACKEND_CLASSES[config.backend](config)
    controller = _build_controller(config) if backend.uses_controller else None
    abs_tol, rel_tol = config.resolved_tolerances()

    stats = {"accepted": 0, "rejected": 0, "rhs_evaluations": 0}

    def rhs_with_control(t, y):
        stats["rhs_evaluations"] += 1
        adapter = backend.adapter(y)
        out = controller.evaluate(t, adapter) if controller is not None else None
        return backend.derivative(t, y, out, adapter), out

    def rhs(t, y):
        return rhs_with_control(t, y)[0]

    t = 0.0
    y = backend.initial_state()
    if controller is not None:
        out0 = controller.prime(backend.adapter(y), 0.0)
    else:
        out0 = None

    records = [backend.record(t, y, out0)]
    param_times = [t]
    param_rows = [_param_row(out0)]
    residuals = [_residual(out0)]

    k1, out_now = rhs_with_control(t, y)
    h = _initial_step(y, k1, abs_tol, rel_tol, min(config.sample_dt, config.t_end))
    sample_index = 1
    status: RunStatus | None = None
    rejects_in_row = 0

    while t < config.t_end - 1e-12 * max(1.0, config.t_end):
        next_sample = min(sample_index * config.sample_dt, config.t_end)
        h_try = min(h, next_sample - t)
        clamped = h_try < h

        try:
            y_new, k7_pair, err_vec = _stages_with_control(
                rhs_with_control, t, y, h_try, k1
            )
        except BreakdownSignal as sig:
            status = RunStatus("breakdown", sig.cause, sig.time)
            break

        err = _error_norm(err_vec, y, y_new, abs_tol, rel_tol)
        if err > 1.0:
            stats["rejected"] += 1
            rejects_in_row += 1
            h = h_try * max(_MIN_FACTOR, _SAFETY * err**-0.2)
            if h < 1e-13 * max(1.0, t) or rejects_in_row > _MAX_REJECTS:
                status = RunStatus("step_underflow", "error control", t)
                break
            continue

        rejects_in_row = 0
        stats["accepted"] += 1
        t_new = next_sample if clamped or abs(t + h_try - next_sample) < 1e-14 else t + h_try
        y = y_new
        t = t_new

        factor = _MAX_FACTOR if err == 0.0 else min(
            _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err**-0.2)
        )
        if clamped:
            # the natural step was cut to land on the sample grid; keep it
            h = max(h, h_try * factor)
        else:
            h = h_try * factor

        modified = backend.post_accept(y)
        try:
            if modified or not backend.fsal:
                k1, out_now = rhs_with_control(t, y)
            else:
                k1, out_now = k7_pair
        except BreakdownSignal as sig:
            status = RunStatus("breakdown", sig.cause, sig.time)
            out_now = None

        if out_now is not None:
            param_times.append(t)
            param_rows.append(_param_row(out_now))
            residuals.append(_residual(out_now))
        if abs(t - sample_index * config.sample_dt) < 1e-9 * max(1.0, t) or t >= config.t_end:
            if out_now is not None or controller is None:
                records.append(backend.record(t, y, out_now))
            while sample_index * config.sample_dt <= t + 1e-12:
                sample_index += 1
        if status is not None:
            break

    if status is None:
        status = RunStatus("completed")

    stats["max_delta_asymmetry"] = getattr(backend, "max_asymmetry", 0.0)
    has_bgl = any(r is not None for r in residuals)
    return Trajectory(
        config=config,
        records=records,
        param_times=np.array(param_times),
        params=np.array(
            [[math.nan] * 4 if row is None else row for row in param_rows]
        ),
        bgl_residuals=(
            np.array([math.nan if r is None else r for r in residuals])
            if has_bgl
            else None
        ),
        status=status,
        stats=stats,
    )


def _param_row(out: ControlOutput | None):
    if out is None:
        return None
    return [out.j01, out.j23, out.mu0, out.mu3]


def _residual(out: ControlOutput | None):
    if out is None:
        return None
    return out.projection_residual()


def _stages_with_control(rhs_pair, t, y, h, k1):
    """Dormand-Prince stages where the rhs also yields the control output.

    Returns (y5, (k7, control at t+h), error vector); the stage-7 pair feeds
    the FSAL reuse and the accepted-step parameter history.
    """
    k = [k1]
    for s in range(1, 6):
        ys = y + h * sum(a * ks for a, ks in zip(_A[s], k))
        k.append(rhs_pair(t + _C[s] * h, ys)[0])
    y5 = y + h * sum(a * ks for a, ks in zip(_A[6], k))
    k7, out7 = rhs_pair(t + h, y5)
    k.append(k7)
    err = h * sum(e * ks for e, ks in zip(_ERR, k))
    return y5, (k7, out7), err
