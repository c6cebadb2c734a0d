"""Time integration of the coupled Navier-Stokes / functionalized Cahn-Hilliard system.

Both unknowns live in the dealiased Fourier subspace. The default scheme is a
first-order semi-implicit Euler step that treats ``m_bar Lap^3 phi`` and
``nu_bar Lap u`` implicitly (diagonal in Fourier space) and every other term
explicitly at t^n. An explicit classical RK4 integrator of the same
semi-discrete system is provided for cross-checks.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import ModelParams, PhaseState
from .spectral import Field, Grid, VectorField, leray_coefficients

log = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e12
RK4_STABILITY_RADIUS = 2.78


class Scheme(str, enum.Enum):
    SEMI_IMPLICIT_EULER = "semi-implicit-euler"
    EXPLICIT_RK4 = "rk4"


class SolverConfigError(ValueError):
    pass


class BlowUpError(RuntimeError):
    """Raised when a field or monitored norm becomes non-finite or exceeds the threshold."""

    def __init__(self, t: float, monitor: str, message: str = "", record=None):
        self.t = t
        self.monitor = monitor
        self.record = record
        super().__init__(message or f"blow-up detected at t={t:.6g} (monitor: {monitor})")


@dataclass
class ForcingSpec:
    """Source terms added to the momentum and phase equations.

    Each callable maps time ``t`` to physical samples on the grid: ``g_u(t)``
    has shape ``(dim, *n)``, ``g_phi(t)`` has shape ``n``. Either may be None.
    """

    g_u: Callable[[float], np.ndarray] | None = None
    g_phi: Callable[[float], np.ndarray] | None = None
    name: str = "custom"


@dataclass
class SolverConfig:
    dt: float
    t_end: float
    scheme: Scheme = Scheme.SEMI_IMPLICIT_EULER
    cfl_safety: float = 0.5
    forcing: ForcingSpec | None = None
    stabilization: float = 0.0  # S in  S * Lap(phi^{n+1} - phi^n); 0 disables

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if not self.dt > 0:
            raise SolverConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= 0:
            raise SolverConfigError(f"t_end must be non-negative, got {self.t_end}")
        if not 0 < self.cfl_safety <= 1:
            raise SolverConfigError("cfl_safety must lie in (0, 1]")
        if self.stabilization < 0:
            raise SolverConfigError("stabilization constant must be non-negative")


def rk4_dt_bound(grid: Grid, params: ModelParams, cfg: SolverConfig) -> float:
    kmax = grid.kmax
    return cfg.cfl_safety * RK4_STABILITY_RADIUS / (params.m_bar * kmax**6 + params.nu_bar * kmax**2)


def check_config(grid: Grid, params: ModelParams, cfg: SolverConfig) -> None:
    if cfg.scheme is Scheme.EXPLICIT_RK4:
        bound = rk4_dt_bound(grid, params, cfg)
        if cfg.dt > bound:
            raise SolverConfigError(
                f"dt={cfg.dt:.3g} exceeds the RK4 stiffness bound {bound:.3g} for this grid"
            )


# --------------------------------------------------------------------------
# explicit right-hand sides in Fourier space

def _masked(grid: Grid, a: np.ndarray) -> np.ndarray:
    return np.where(grid.mask, a, 0)


def _divergence(grid: Grid, vh: np.ndarray) -> np.ndarray:
    return sum(1j * kj * vh[j] for j, kj in enumerate(grid.k))


def _gradients(grid: Grid, fh: np.ndarray) -> np.ndarray:
    return grid.ifft(np.stack([1j * kj * fh for kj in grid.k]))


@dataclass
class Fluxes:
    """Explicit tendencies evaluated at one state (all spectral, dealiased)."""

    phi: np.ndarray
    u: np.ndarray  # already Leray-projected


def chemical_terms(grid: Grid, phi: np.ndarray, params: ModelParams):
    from .model import mu_hat_array, omega_array

    phi_hat = grid.fft(phi)
    omega = omega_array(grid, phi, phi_hat, params.potential)
    mu_hat = mu_hat_array(grid, phi, omega, params)
    return phi_hat, mu_hat


def explicit_fluxes(grid: Grid, phi: np.ndarray, u: np.ndarray, params: ModelParams,
                    t: float, forcing: ForcingSpec | None = None,
                    phi_hat: np.ndarray | None = None,
                    mu_hat: np.ndarray | None = None) -> Fluxes:
    """Full (unsplit) right-hand sides of the phase and momentum equations."""
    if phi_hat is None or mu_hat is None:
        phi_hat, mu_hat = chemical_terms(grid, phi, params)
    u_hat = grid.fft(u)
    grad_phi = _gradients(grid, phi_hat)
    mu = grid.ifft(mu_hat)

    # phase: -u.grad(phi) + div(m(phi) grad(mu))
    advect = grid.fft(np.sum(u * grad_phi, axis=0))
    if params.mobility.kind == "constant":
        diffuse = -params.mobility.value * grid.ksq * mu_hat
    else:
        flux = params.mobility(phi) * _gradients(grid, mu_hat)
        diffuse = _divergence(grid, grid.fft(flux))
    phi_rhs = _masked(grid, diffuse - advect)
    if forcing is not None and forcing.g_phi is not None:
        phi_rhs = phi_rhs + _masked(grid, grid.fft(forcing.g_phi(t)))

    # momentum: -(u.grad)u + div(2 nu(phi) Du) + mu grad(phi)
    dim = grid.dim
    gu = np.stack([_gradients(grid, u_hat[i]) for i in range(dim)])  # gu[i, j] = d_j u_i
    convect = np.stack([np.sum(u * gu[i], axis=0) for i in range(dim)])
    force = mu * grad_phi - convect
    rhs = grid.fft(force)
    if params.viscosity.kind == "constant":
        nu = params.viscosity.value
        kdotu = sum(kj * u_hat[j] for j, kj in enumerate(grid.k))
        viscous = np.stack([-nu * grid.ksq * u_hat[i] - nu * grid.k[i] * kdotu for i in range(dim)])
    else:
        nu2 = 2 * params.viscosity(phi)
        stress = 0.5 * (gu + np.swapaxes(gu, 0, 1)) * nu2
        stress_hat = grid.fft(stress)
        viscous = np.stack([_divergence(grid, stress_hat[i]) for i in range(dim)])
    rhs = rhs + viscous
    if forcing is not None and forcing.g_u is not None:
        rhs = rhs + grid.fft(forcing.g_u(t))
    u_rhs = leray_coefficients(grid, _masked(grid, rhs))
    return Fluxes(phi_rhs, u_rhs)


# --------------------------------------------------------------------------
# semi-implicit Euler

def _state_fluxes(state: PhaseState, params: ModelParams, cfg: SolverConfig) -> Fluxes:
    state.require_caches(params)
    g = state.grid
    phi = state.phi.values
    phi_hat = g.fft(phi)
    mu_hat = _masked(g, g.fft(state.mu.values))
    return explicit_fluxes(g, phi, state.u.values, params, state.t, cfg.forcing, phi_hat, mu_hat)


def _phase_update(grid: Grid, phi_hat: np.ndarray, rhs: np.ndarray, params: ModelParams,
                  cfg: SolverConfig) -> np.ndarray:
    dt = cfg.dt
    k6 = grid.ksq**3
    S = cfg.stabilization
    # explicit copy of the implicit part is removed: N = rhs + m_bar Lap^3 phi
    numer = phi_hat / dt + rhs + params.m_bar * k6 * phi_hat + S * grid.ksq * phi_hat
    new = _masked(grid, numer / (1.0 / dt + params.m_bar * k6 + S * grid.ksq))
    new.flat[0] = phi_hat.flat[0] + dt * rhs.flat[0].real if cfg.forcing else phi_hat.flat[0]
    return new


def _velocity_update(grid: Grid, u_hat: np.ndarray, rhs: np.ndarray, params: ModelParams,
                     cfg: SolverConfig) -> np.ndarray:
    dt = cfg.dt
    nub = params.nu_bar
    numer = u_hat / dt + rhs + nub * grid.ksq * u_hat
    new = numer / (1.0 / dt + nub * grid.ksq)
    return leray_coefficients(grid, _masked(grid, new))


def step_phase(state: PhaseState, params: ModelParams, cfg: SolverConfig,
               fluxes: Fluxes | None = None) -> Field:
    g = state.grid
    fluxes = fluxes or _state_fluxes(state, params, cfg)
    new = _phase_update(g, g.fft(state.phi.values), fluxes.phi, params, cfg)
    out = Field(g, g.ifft(new))
    _guard(out.data, state.t + cfg.dt, "phi")
    return out


def step_velocity(state: PhaseState, params: ModelParams, cfg: SolverConfig,
                  fluxes: Fluxes | None = None) -> VectorField:
    g = state.grid
    fluxes = fluxes or _state_fluxes(state, params, cfg)
    new = _velocity_update(g, g.fft(state.u.values), fluxes.u, params, cfg)
    out = VectorField(g, g.ifft(new))
    _guard(out.data, state.t + cfg.dt, "u")
    return out


def _guard(a: np.ndarray, t: float, name: str) -> None:
    # magnitudes are judged by the diagnostics monitors; only non-finite data stops a step
    if not np.all(np.isfinite(a)):
        raise BlowUpError(t, name, f"non-finite {name} at t={t:.6g}")


# --------------------------------------------------------------------------
# explicit RK4

def _rk4_step(state: PhaseState, params: ModelParams, cfg: SolverConfig):
    g = state.grid
    dt = cfg.dt
    t = state.t
    forced = cfg.forcing is not None

    def rhs(phi_hat, u_hat, tt):
        fl = explicit_fluxes(g, g.ifft(phi_hat), g.ifft(u_hat), params, tt, cfg.forcing)
        dphi = fl.phi.copy()
        dphi.flat[0] = fl.phi.flat[0].real if forced else 0.0
        return dphi, fl.u

    p0 = _masked(g, g.fft(state.phi.values))
    u0 = _masked(g, g.fft(state.u.values))
    k1 = rhs(p0, u0, t)
    k2 = rhs(p0 + 0.5 * dt * k1[0], u0 + 0.5 * dt * k1[1], t + 0.5 * dt)
    k3 = rhs(p0 + 0.5 * dt * k2[0], u0 + 0.5 * dt * k2[1], t + 0.5 * dt)
    k4 = rhs(p0 + dt * k3[0], u0 + dt * k3[1], t + dt)
    p1 = p0 + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    u1 = u0 + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    if not forced:
        p1.flat[0] = p0.flat[0]
    phi = Field(g, g.ifft(p1))
    u = VectorField(g, g.ifft(leray_coefficients(g, u1)))
    _guard(phi.data, t + dt, "phi")
    _guard(u.data, t + dt, "u")
    return phi, u


def step(state: PhaseState, params: ModelParams, cfg: SolverConfig) -> PhaseState:
    """Advance one step of size ``cfg.dt`` and return a new state with fresh caches."""
    if cfg.scheme is Scheme.EXPLICIT_RK4:
        phi, u = _rk4_step(state, params, cfg)
    else:
        fluxes = _state_fluxes(state, params, cfg)
        phi = step_phase(state, params, cfg, fluxes)
        u = step_velocity(state, params, cfg, fluxes)
    new = PhaseState(state.t + cfg.dt, phi, u)
    return new.refresh(params)


def galerkin_project(state: PhaseState, params: ModelParams) -> PhaseState:
    """Project phi onto the retained modes and u onto retained solenoidal modes."""
    g = state.grid
    phi = Field(g, g.ifft(_masked(g, g.fft(state.phi.values))))
    u = VectorField(g, g.ifft(leray_coefficients(g, _masked(g, g.fft(state.u.values)))))
    return PhaseState(state.t, phi, u).refresh(params)


def in_galerkin_space(state: PhaseState, tol: float = 1e-12) -> bool:
    g = state.grid
    outside = ~g.mask
    ph = g.fft(state.phi.values)
    uh = g.fft(state.u.values)
    scale = max(1.0, np.abs(ph).max(), np.abs(uh).max())
    return bool(np.abs(ph[outside]).max(initial=0) <= tol * scale
                and np.abs(uh[:, outside]).max(initial=0) <= tol * scale)


# --------------------------------------------------------------------------
# time step control

def advective_dt(state: PhaseState, cfg: SolverConfig) -> float:
    umax = float(np.sqrt(np.sum(state.u.values**2, axis=0)).max())
    if not np.isfinite(umax):
        raise BlowUpError(state.t, "u", "non-finite velocity in CFL estimate")
    if umax == 0:
        return math.inf
    return cfg.cfl_safety * min(state.grid.dx) / umax


def stable_dt(state: PhaseState, params: ModelParams, cfg: SolverConfig) -> float:
    dt = advective_dt(state, cfg)
    if cfg.scheme is Scheme.EXPLICIT_RK4:
        dt = min(dt, rk4_dt_bound(state.grid, params, cfg))
    return cfg.dt if math.isinf(dt) else dt


# --------------------------------------------------------------------------
# driver

@dataclass
class Sinks:
    """Output hooks for :func:`run`.

    ``on_record`` receives every emitted DiagnosticsRecord, ``on_snapshot``
    receives ``(state, step_index)`` at the requested snapshot times.
    """

    on_record: Callable | None = None
    on_snapshot: Callable | None = None
    record_every: int = 1
    snapshot_times: Sequence[float] = ()
    collector: object | None = None  # diagnostics.DiagnosticsCollector
    records: list = field(default_factory=list)

    def emit(self, record) -> None:
        self.records.append(record)
        if self.on_record is not None:
            self.on_record(record)


def run(state0: PhaseState, params: ModelParams, cfg: SolverConfig,
        sinks: Sinks | None = None, *, step_index: int = 0) -> PhaseState:
    """Advance ``state0`` to ``cfg.t_end``.

    Diagnostics are gathered every step by ``sinks.collector`` (created if
    absent) and emitted every ``record_every`` steps plus at the final time.
    On blow-up the offending record is emitted and BlowUpError propagates.
    """
    from .diagnostics import DiagnosticsCollector

    grid = state0.grid
    check_config(grid, params, cfg)
    sinks = sinks or Sinks()
    if sinks.collector is None:
        sinks.collector = DiagnosticsCollector(params)
    collector = sinks.collector

    state = state0 if state0.caches_valid else state0.copy().refresh(params)
    if not in_galerkin_space(state):
        log.info("projecting initial data onto the retained Fourier modes")
        state = galerkin_project(state, params)

    pending = sorted(float(ts) for ts in sinks.snapshot_times)
    tol = 1e-9 * cfg.dt

    def snapshots_due(s: PhaseState, idx: int) -> None:
        while pending and s.t >= pending[0] - tol:
            pending.pop(0)
            if sinks.on_snapshot is not None:
                sinks.on_snapshot(s, idx)

    if not collector.has_history:
        record = collector.collect(state, cfg.dt, step_index)
        sinks.emit(record)
        collector.check(record)
    snapshots_due(state, step_index)

    while cfg.t_end - state.t > tol:
        remaining = cfg.t_end - state.t
        dt = cfg.dt if abs(remaining - cfg.dt) <= tol or remaining > cfg.dt else remaining
        dt_limit = stable_dt(state, params, cfg)
        if dt_limit < dt:
            log.warning("clamping dt %.3g -> %.3g (CFL)", dt, dt_limit)
            dt = dt_limit
        step_cfg = cfg if dt == cfg.dt else _with_dt(cfg, dt)
        try:
            state = step(state, params, step_cfg)
        except BlowUpError as exc:
            record = collector.failure_record(state, exc)
            exc.monitor = record.diverged or exc.monitor
            exc.record = record
            sinks.emit(record)
            raise
        step_index += 1
        record = collector.collect(state, dt, step_index)
        final = cfg.t_end - state.t <= tol
        if step_index % sinks.record_every == 0 or final or record.flagged:
            sinks.emit(record)
        collector.check(record)
        snapshots_due(state, step_index)
    return state


def _with_dt(cfg: SolverConfig, dt: float) -> SolverConfig:
    return SolverConfig(dt=dt, t_end=cfg.t_end, scheme=cfg.scheme, cfl_safety=cfg.cfl_safety,
                        forcing=cfg.forcing, stabilization=cfg.stabilization)
