"""Time-sampled functionals: energies, dissipation, energy-law residual,
Serrin-type monitors, the strong-solution functional Lambda, twin-run
distance with a fitted Gronwall envelope, and spectral pressure recovery.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    ModelParams, NumericalOverflowError, PhaseState, dissipation, energy_E,
    kinetic_energy, velocity_gradient,
)
from .spectral import SPECTRAL, Field, grad, leray_coefficients, lp_norm, sobolev_norm
from .solver import BLOWUP_THRESHOLD, BlowUpError, SolverConfig, step

log = logging.getLogger(__name__)

# (p, q) on 3/p + 2/q = 1 for u, and on 3/p + 2/q = 2 for grad u
VELOCITY_PAIRS = ((4.0, 8.0), (6.0, 4.0), (math.inf, 2.0))
GRADIENT_PAIRS = ((2.0, 4.0), (3.0, 2.0), (6.0, 4.0 / 3.0))


def _pname(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:g}"


def _qname(q: float) -> str:
    return "4_3" if abs(q - 4.0 / 3.0) < 1e-12 else f"{q:g}"


def monitor_names() -> list[str]:
    names = [f"int_u_L{_pname(p)}_q{_qname(q)}" for p, q in VELOCITY_PAIRS]
    names += [f"int_gradu_L{_pname(p)}_q{_qname(q)}" for p, q in GRADIENT_PAIRS]
    return names


CSV_VERSION = 1
CSV_COLUMNS = (
    ["t", "mass", "kinetic", "elastic", "total", "dissipation", "energy_residual", "mu_mean"]
    + [f"u_L{_pname(p)}" for p, _ in VELOCITY_PAIRS]
    + [f"gradu_L{_pname(p)}" for p, _ in GRADIENT_PAIRS]
    + monitor_names()
    + ["lambda", "h_a_integral"]
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float            # integral of phi
    kinetic: float
    elastic: float
    total: float
    dissipation: float
    energy_residual: float
    mu_mean: float         # integral of mu
    serrin_u_p: dict       # p -> ||u||_{L^p}
    serrin_gradu_p: dict   # p -> ||grad u||_{L^p}
    serrin_integrals: dict  # monitor name -> running integral
    lam: float
    h_a_integral: float
    flagged: bool = False
    diverged: str | None = None

    def row(self) -> list[float]:
        vals = [self.t, self.mass, self.kinetic, self.elastic, self.total, self.dissipation,
                self.energy_residual, self.mu_mean]
        vals += [self.serrin_u_p[p] for p, _ in VELOCITY_PAIRS]
        vals += [self.serrin_gradu_p[p] for p, _ in GRADIENT_PAIRS]
        vals += [self.serrin_integrals[name] for name in monitor_names()]
        vals += [self.lam, self.h_a_integral]
        return vals


@dataclass
class LambdaValue:
    value: float
    grad_u_sq: float
    grad_mu_sq: float
    cross: float
    gamma: float
    m_star: float
    m_sup: float

    @property
    def bounds_applicable(self) -> bool:
        quad = 0.5 * self.grad_u_sq + 0.5 * self.gamma * self.m_sup * self.grad_mu_sq
        return abs(self.cross) <= 0.5 * quad

    @property
    def lower(self) -> float:
        return 0.25 * self.grad_u_sq + 0.25 * self.gamma * self.m_star * self.grad_mu_sq

    @property
    def upper(self) -> float:
        return self.grad_u_sq + self.gamma * self.m_sup * self.grad_mu_sq


# --------------------------------------------------------------------------
# individual functionals

def grad_u_lp(state: PhaseState, p: float) -> float:
    g = state.grid
    gu = velocity_gradient(state.u)
    frob = np.sqrt(np.sum(gu**2, axis=(0, 1)))
    if math.isinf(p):
        return float(frob.max())
    return float((g.cell_volume * np.sum(frob**p)) ** (1.0 / p))


def mu_integral(state: PhaseState) -> float:
    return state.grid.integrate(state.mu.values)


def mu_integral_bound(state: PhaseState, params: ModelParams) -> float:
    """||f'(phi)|| ||omega|| + |eta| |Omega|^{1/2} ||omega||."""
    g = state.grid
    fp = params.potential.f(state.phi.values, 1)
    om = state.omega.values
    om_norm = math.sqrt(g.integrate(om**2))
    return math.sqrt(g.integrate(fp**2)) * om_norm + abs(params.eta) * math.sqrt(g.volume) * om_norm


def lambda_functional(state: PhaseState, params: ModelParams, gamma: float = 1.0) -> LambdaValue:
    """Lambda = 1/2 ||grad u||^2 + gamma/2 int m(phi)|grad mu|^2 + gamma (u.grad phi, mu)."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    state.require_caches(params)
    g = state.grid
    gu = velocity_gradient(state.u)
    grad_u_sq = g.integrate(np.sum(gu**2, axis=(0, 1)))
    grad_mu = grad(state.mu).values
    grad_mu_sq_pt = np.sum(grad_mu**2, axis=0)
    grad_mu_sq = g.integrate(grad_mu_sq_pt)
    weighted = g.integrate(params.mobility(state.phi.values) * grad_mu_sq_pt)
    if gamma == 0:
        cross = 0.0
        value = 0.5 * grad_u_sq
    else:
        grad_phi = grad(state.phi).values
        cross = g.integrate(np.sum(state.u.values * grad_phi, axis=0) * state.mu.values)
        value = 0.5 * grad_u_sq + 0.5 * gamma * weighted + gamma * cross
    m_sup = float(np.max(params.mobility(state.phi.values)))
    return LambdaValue(value, grad_u_sq, grad_mu_sq, cross, gamma, params.m_star,
                       max(m_sup, params.m_star))


def h_a(u1_lp_q: float, state2: PhaseState, state1: PhaseState) -> float:
    """Gronwall integrand 1 + ||u1||_{L^p}^q + ||grad u2||^2 + ||mu2||_{H1}^2 + ||phi1||_{H3}^2 + ||phi2||_{H3}^2."""
    g = state2.grid
    gu2 = velocity_gradient(state2.u)
    grad_u2_sq = g.integrate(np.sum(gu2**2, axis=(0, 1)))
    return (1.0 + u1_lp_q + grad_u2_sq + sobolev_norm(state2.mu, 1) ** 2
            + sobolev_norm(state1.phi, 3) ** 2 + sobolev_norm(state2.phi, 3) ** 2)


def recover_pressure(state: PhaseState, params: ModelParams) -> Field:
    """Solve -Lap P = div[(u.grad)u - div(2 nu(phi) Du) - mu grad(phi)], zero mean."""
    g = state.grid
    state.require_caches(params)
    phi = state.phi.values
    phi_hat = g.fft(phi)
    mu_hat = np.where(g.mask, g.fft(state.mu.values), 0)
    rhs_hat = momentum_rhs(state, params, phi_hat, mu_hat)
    # Lap P = div(rhs)
    ksq = g.ksq
    safe = np.where(ksq == 0, 1.0, ksq)
    div_rhs = sum(1j * kj * rhs_hat[j] for j, kj in enumerate(g.k))
    p_hat = np.where(ksq == 0, 0, -div_rhs / safe)
    return Field(g, p_hat, SPECTRAL)


def momentum_rhs(state: PhaseState, params: ModelParams, phi_hat=None, mu_hat=None) -> np.ndarray:
    """Unprojected, dealiased -(u.grad)u + div(2 nu Du) + mu grad(phi) in Fourier space."""
    g = state.grid
    phi = state.phi.values
    if phi_hat is None:
        phi_hat = g.fft(phi)
    if mu_hat is None:
        mu_hat = np.where(g.mask, g.fft(state.mu.values), 0)
    u = state.u.values
    grad_phi = g.ifft(np.stack([1j * kj * phi_hat for kj in g.k]))
    gu = velocity_gradient(state.u)
    dim = g.dim
    convect = np.stack([np.sum(u * gu[i], axis=0) for i in range(dim)])
    force = g.ifft(mu_hat) * grad_phi - convect
    stress = params.viscosity(phi) * (gu + np.swapaxes(gu, 0, 1))
    stress_hat = g.fft(stress)
    viscous = np.stack([sum(1j * kj * stress_hat[i, j] for j, kj in enumerate(g.k))
                        for i in range(dim)])
    return np.where(g.mask, g.fft(force) + viscous, 0)


def helmholtz_residual(state: PhaseState, params: ModelParams) -> float:
    """|| P[rhs] - (rhs - grad P) || for the momentum right-hand side."""
    g = state.grid
    rhs = momentum_rhs(state, params)
    p_hat = recover_pressure(state, params).data
    grad_p = np.stack([1j * kj * p_hat for kj in g.k])
    diff = leray_coefficients(g, rhs) - (rhs - grad_p)
    return float(np.sqrt(g.volume * np.sum(np.abs(diff) ** 2)))


# --------------------------------------------------------------------------
# accumulated monitors

class SerrinMonitors:
    """Running left-endpoint integrals of ||u||_{L^p}^q and ||grad u||_{L^p}^q.

    Norms are re-evaluated every ``every`` calls to :meth:`update`; in between
    the last value is held (piecewise-constant left-endpoint rule).
    """

    def __init__(self, every: int = 1):
        self.every = max(1, int(every))
        self.integrals = {name: 0.0 for name in monitor_names()}
        self.last_values: dict[str, float] | None = None
        self.last_t: float | None = None
        self.norms_u: dict[float, float] = {}
        self.norms_gradu: dict[float, float] = {}
        self.h_a_integral = 0.0
        self.last_h_a: float | None = None

    def _evaluate(self, state: PhaseState) -> dict[str, float]:
        self.norms_u = {p: lp_norm(state.u, p) for p, _ in VELOCITY_PAIRS}
        self.norms_gradu = {p: grad_u_lp(state, p) for p, _ in GRADIENT_PAIRS}
        vals = {}
        for (p, q), name in zip(VELOCITY_PAIRS + GRADIENT_PAIRS, monitor_names()):
            norm = self.norms_u[p] if name.startswith("int_u_") else self.norms_gradu[p]
            vals[name] = norm**q
        return vals

    def update(self, state: PhaseState, step_index: int, force: bool = False) -> None:
        due = self.last_values is None or force or step_index % self.every == 0
        if not due:
            return
        t = state.t
        if self.last_values is not None:
            span = t - self.last_t
            for name, v in self.last_values.items():
                self.integrals[name] += v * span
            self.h_a_integral += self.last_h_a * span
        self.last_values = self._evaluate(state)
        u_lp_q = self.last_values[monitor_names()[0]]
        self.last_h_a = h_a(u_lp_q, state, state) if state.caches_valid else 1.0
        self.last_t = t

    def running(self, t: float) -> tuple[dict[str, float], float]:
        """Integrals extended to time t with the held left-endpoint values."""
        span = t - self.last_t
        out = {name: self.integrals[name] + self.last_values[name] * span for name in self.integrals}
        return out, self.h_a_integral + self.last_h_a * span

    def state_dict(self) -> dict:
        return {
            "every": self.every,
            "integrals": dict(self.integrals),
            "last_values": dict(self.last_values) if self.last_values else None,
            "last_t": self.last_t,
            "norms_u": {_pname(p): v for p, v in self.norms_u.items()},
            "norms_gradu": {_pname(p): v for p, v in self.norms_gradu.items()},
            "h_a_integral": self.h_a_integral,
            "last_h_a": self.last_h_a,
        }

    def load_state_dict(self, d: dict) -> None:
        self.every = int(d["every"])
        self.integrals = {k: float(v) for k, v in d["integrals"].items()}
        self.last_values = d["last_values"]
        self.last_t = d["last_t"]
        self.norms_u = {float(p): v for p, v in d["norms_u"].items()}
        self.norms_gradu = {float(p): v for p, v in d["norms_gradu"].items()}
        self.h_a_integral = d["h_a_integral"]
        self.last_h_a = d["last_h_a"]


def serrin_monitors(state: PhaseState, monitors: SerrinMonitors | None = None,
                    step_index: int = 0) -> SerrinMonitors:
    """Advance running Serrin integrals to ``state.t``; a new accumulator starts there."""
    if monitors is None:
        monitors = SerrinMonitors()
    monitors.update(state, step_index)
    return monitors


# --------------------------------------------------------------------------
# collector

class DiagnosticsCollector:
    """Stateful per-step collector used by the run driver.

    Keeps the previous total energy and dissipation for the energy-law
    residual R^n = (E^{n+1} - E^n)/dt + D^n and the Serrin accumulators.
    """

    def __init__(self, params: ModelParams, gamma: float = 1.0, lp_every: int = 10):
        self.params = params
        self.gamma = gamma
        self.monitors = SerrinMonitors(lp_every)
        self.prev_total: float | None = None
        self.prev_dissipation: float | None = None

    @property
    def has_history(self) -> bool:
        return self.prev_total is not None

    def collect(self, state: PhaseState, dt: float, step_index: int = 0) -> DiagnosticsRecord:
        rec = collect(state, self.params, prev_total=self.prev_total,
                      prev_dissipation=self.prev_dissipation, dt=dt,
                      monitors=self.monitors, gamma=self.gamma, step_index=step_index)
        self.prev_total = rec.total
        self.prev_dissipation = rec.dissipation
        return rec

    def check(self, record: DiagnosticsRecord) -> None:
        if record.flagged:
            raise BlowUpError(record.t, record.diverged or "diagnostics", record=record)

    def failure_record(self, state: PhaseState, exc: BlowUpError) -> DiagnosticsRecord:
        """Record for a step that blew up; monitors evaluated on the last finite state."""
        names = monitor_names()
        integrals, ha = self.monitors.running(exc.t) if self.monitors.last_values else (
            {n: math.nan for n in names}, math.nan)
        diverged = first_diverged(self.monitors.norms_u, self.monitors.norms_gradu, integrals) or exc.monitor
        nan = math.nan
        return DiagnosticsRecord(
            t=exc.t, mass=nan, kinetic=nan, elastic=nan, total=nan, dissipation=nan,
            energy_residual=nan, mu_mean=nan,
            serrin_u_p={p: nan for p, _ in VELOCITY_PAIRS},
            serrin_gradu_p={p: nan for p, _ in GRADIENT_PAIRS},
            serrin_integrals=integrals, lam=nan, h_a_integral=ha, flagged=True, diverged=diverged,
        )

    def state_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "prev_total": self.prev_total,
            "prev_dissipation": self.prev_dissipation,
            "monitors": self.monitors.state_dict(),
        }

    def load_state_dict(self, d: dict) -> None:
        self.gamma = d["gamma"]
        self.prev_total = d["prev_total"]
        self.prev_dissipation = d["prev_dissipation"]
        self.monitors.load_state_dict(d["monitors"])


def current_norms(state: PhaseState) -> tuple[dict, dict]:
    return ({p: lp_norm(state.u, p) for p, _ in VELOCITY_PAIRS},
            {p: grad_u_lp(state, p) for p, _ in GRADIENT_PAIRS})


def first_diverged(norms_u: dict, norms_gradu: dict, integrals: dict) -> str | None:
    """First monitor (canonical order) whose norm is non-finite or above the
    blow-up threshold, or whose running integral is non-finite."""
    names = monitor_names()
    pairs = [(p, norms_u) for p, _ in VELOCITY_PAIRS] + [(p, norms_gradu) for p, _ in GRADIENT_PAIRS]
    for name, (p, table) in zip(names, pairs):
        v = table.get(p, 0.0)
        if not np.isfinite(v) or v > BLOWUP_THRESHOLD or not np.isfinite(integrals.get(name, 0.0)):
            return name
    return None


def collect(state: PhaseState, params: ModelParams, *, prev_total: float | None = None,
            prev_dissipation: float | None = None, dt: float | None = None,
            monitors: SerrinMonitors | None = None, gamma: float = 1.0,
            step_index: int = 0) -> DiagnosticsRecord:
    """Evaluate every tracked functional at ``state``.

    ``energy_residual`` is ``(total - prev_total)/dt + prev_dissipation``; it is
    0.0 when no previous sample is given.
    """
    state.require_caches(params)
    g = state.grid
    flagged = False
    with np.errstate(all="ignore"):
        try:
            elastic = energy_E(state.phi, params)
        except NumericalOverflowError:
            elastic, flagged = math.nan, True
        kin = kinetic_energy(state.u)
        total = kin + elastic
        diss = dissipation(state, params)
        if prev_total is None or dt is None:
            residual = 0.0
        else:
            residual = (total - prev_total) / dt + prev_dissipation
        if monitors is None:
            monitors = SerrinMonitors(1)
        monitors.update(state, step_index)
        integrals, ha_int = monitors.running(state.t)
        lam = lambda_functional(state, params, gamma).value
    scalars = {"elastic": elastic, "kinetic": kin, "total": total, "dissipation": diss,
               "energy_residual": residual, "lambda": lam}
    bad_scalar = next((k for k, v in scalars.items() if not np.isfinite(v)), None)
    phi_max = float(np.abs(state.phi.values).max())
    bad_phi = not np.isfinite(phi_max) or phi_max > BLOWUP_THRESHOLD
    diverged = first_diverged(monitors.norms_u, monitors.norms_gradu, integrals)
    if diverged is None and (flagged or bad_scalar or bad_phi):
        # the L^p norms may be stale between evaluations; name the culprit from fresh ones
        with np.errstate(all="ignore"):
            diverged = first_diverged(*current_norms(state), integrals)
        diverged = diverged or ("phi" if bad_phi else bad_scalar) or "elastic"
    flagged = diverged is not None
    return DiagnosticsRecord(
        t=state.t,
        mass=g.integrate(state.phi.values),
        kinetic=kin, elastic=elastic, total=total, dissipation=diss,
        energy_residual=residual, mu_mean=mu_integral(state),
        serrin_u_p=dict(monitors.norms_u), serrin_gradu_p=dict(monitors.norms_gradu),
        serrin_integrals=integrals, lam=lam, h_a_integral=ha_int,
        flagged=flagged, diverged=diverged if flagged else None,
    )


# --------------------------------------------------------------------------
# twin runs

@dataclass(frozen=True)
class TwinRunRecord:
    t: float
    H: float
    h_a: float
    envelope: float


@dataclass
class TwinRunResult:
    records: list[TwinRunRecord]
    c_fit: float
    fit_until: float
    violations: list[float] = field(default_factory=list)

    @property
    def envelope_respected(self) -> bool:
        return not self.violations

    def rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]


def distance_H(s1: PhaseState, s2: PhaseState) -> float:
    """1/2 ||u1 - u2||^2 + 1/2 ||Lap(phi1 - phi2)||^2."""
    g = s1.grid
    du = s1.u.values - s2.u.values
    dphi_hat = g.fft(s1.phi.values - s2.phi.values)
    lap_sq = g.volume * np.sum((g.ksq * np.abs(dphi_hat)) ** 2)
    return float(0.5 * g.integrate(np.sum(du**2, axis=0)) + 0.5 * lap_sq)


def fit_gronwall_constant(H: np.ndarray, I: np.ndarray) -> float:
    """Least-squares C >= 0 in log(H/H0) ~ C * I (line through the origin)."""
    if H[0] <= 0 or len(H) < 2:
        return 0.0
    y = np.log(np.maximum(H[1:], 1e-300) / H[0])
    x = I[1:]
    denom = float(np.dot(x, x))
    if denom == 0:
        return 0.0
    return max(0.0, float(np.dot(x, y)) / denom)


def twin_run(state1: PhaseState, state2: PhaseState, params: ModelParams, cfg: SolverConfig,
             *, p: float = 4.0, q: float = 8.0, fit_fraction: float = 0.2,
             rtol: float = 1e-9) -> TwinRunResult:
    """Advance two states in lockstep and compare H(t) against H(0) exp(C_fit int h_a)."""
    if not state1.grid.same_as(state2.grid):
        raise ValueError("twin runs need both states on the same grid")
    s1 = state1 if state1.caches_valid else state1.copy().refresh(params)
    s2 = state2 if state2.caches_valid else state2.copy().refresh(params)
    nsteps = int(round((cfg.t_end - s1.t) / cfg.dt))
    ts, Hs, has = [], [], []
    for n in range(nsteps + 1):
        ts.append(s1.t)
        Hs.append(distance_H(s1, s2))
        has.append(h_a(lp_norm(s1.u, p) ** q, s2, s1))
        if n < nsteps:
            s1 = step(s1, params, cfg)
            s2 = step(s2, params, cfg)
    t = np.array(ts)
    H = np.array(Hs)
    ha = np.array(has)
    I = np.concatenate([[0.0], np.cumsum(ha[:-1] * np.diff(t))])
    fit_until = t[0] + fit_fraction * (t[-1] - t[0])
    window = t <= fit_until + 1e-12
    c_fit = fit_gronwall_constant(H[window], I[window])
    env = H[0] * np.exp(c_fit * I)
    violations = [float(tt) for tt, h, e in zip(t, H, env)
                  if tt > fit_until and h > e * (1 + rtol)]
    records = [TwinRunRecord(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(t, H, ha, env)]
    return TwinRunResult(records, c_fit, float(fit_until), violations)
