"""Independent oracles for the model and the solver.

* finite-difference directional derivative of the energy, compared with <mu, psi>
* manufactured solutions with generated forcings and convergence studies
* L^p norms recomputed on a zero-padded, doubled grid
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import (
    CoefficientLaw, ModelParams, PhaseState, compute_mu, energy_E,
)
from .spectral import Field, Grid, VectorField, inner, lp_norm, random_smooth_field
from .solver import ForcingSpec, Scheme, Sinks, SolverConfig, explicit_fluxes, run

log = logging.getLogger(__name__)

EPS_RANGE = (1e-7, 1e-3)


# --------------------------------------------------------------------------
# variational oracle

def variational_oracle(phi: Field, psi: Field, eps: float, params: ModelParams) -> float:
    """Central difference (E(phi + eps psi) - E(phi - eps psi)) / (2 eps)."""
    if not EPS_RANGE[0] <= eps <= EPS_RANGE[1]:
        raise ValueError(f"eps must lie in [{EPS_RANGE[0]:g}, {EPS_RANGE[1]:g}], got {eps:g}")
    if not phi.grid.same_as(psi.grid):
        raise ValueError("phi and psi must share a grid")
    g = phi.grid
    a, b = phi.values, psi.values
    plus = energy_E(Field(g, a + eps * b), params)
    minus = energy_E(Field(g, a - eps * b), params)
    return (plus - minus) / (2 * eps)


def richardson_oracle(phi: Field, psi: Field, eps: float, params: ModelParams) -> float:
    """Fourth-order combination of the central differences at eps and 2 eps."""
    d1 = variational_oracle(phi, psi, eps, params)
    d2 = variational_oracle(phi, psi, min(2 * eps, EPS_RANGE[1]), params)
    return (4 * d1 - d2) / 3


@dataclass(frozen=True)
class GradientCheck:
    oracle: float
    extrapolated: float
    pairing: float

    @property
    def rel_error(self) -> float:
        return abs(self.oracle - self.pairing) / (1 + abs(self.pairing))

    @property
    def rel_error_extrapolated(self) -> float:
        return abs(self.extrapolated - self.pairing) / (1 + abs(self.pairing))


def gradient_check(phi: Field, psi: Field, params: ModelParams, eps: float = 1e-5,
                   mu_fn: Callable[[Field, ModelParams], Field] = compute_mu) -> GradientCheck:
    return GradientCheck(
        oracle=variational_oracle(phi, psi, eps, params),
        extrapolated=richardson_oracle(phi, psi, eps, params),
        pairing=inner(mu_fn(phi, params), psi),
    )


def random_pairs(grid: Grid, rng: np.random.Generator, count: int, kmax: float = 4.0,
                 amplitude: float = 0.8):
    for _ in range(count):
        phi = random_smooth_field(grid, rng, kmax, amplitude, mean=rng.uniform(-0.3, 0.3))
        psi = random_smooth_field(grid, rng, kmax, 1.0)
        yield phi, psi


# --------------------------------------------------------------------------
# manufactured solutions

ExactFn = Callable[[Grid, float], np.ndarray]


def _evaluate_modes(ref: Grid, coef: np.ndarray, target: Grid) -> np.ndarray:
    """Sum the Fourier series with coefficients ``coef`` (on ``ref``) at the nodes of ``target``."""
    lead = coef.ndim - ref.dim
    out = coef
    for j in range(ref.dim):
        x = np.arange(target.n[j]) * target.dx[j]
        E = np.exp(1j * np.outer(x, ref.wavenumbers[j]))
        out = np.moveaxis(np.tensordot(E, out, axes=([1], [lead + j])), 0, lead + j)
    return out.real


@dataclass
class MMSCase:
    """Closed-form exact fields and their time derivatives, sampled on any grid.

    ``bandwidth`` bounds the per-axis wavenumbers of phi* and u*;
    ``forcing_bandwidth`` bounds those of the generated forcings.
    """

    name: str
    phi: ExactFn
    u: ExactFn
    dphi_dt: ExactFn
    du_dt: ExactFn
    bandwidth: int
    forcing_bandwidth: int
    steady: bool = False
    default_forcing: str = "discrete"
    dim: int = 2

    def state(self, grid: Grid, t: float, params: ModelParams) -> PhaseState:
        return PhaseState(t, Field(grid, self.phi(grid, t)), VectorField(grid, self.u(grid, t))).refresh(params)

    def _reference_grid(self, grid: Grid) -> Grid:
        # products reach forcing_bandwidth + bandwidth; keep them unaliased
        n = max(16, 2 * (self.forcing_bandwidth + self.bandwidth) + 4)
        return Grid(grid.dim, (n,) * grid.dim, grid.length, dealias_fraction=1.0)

    def forcing_coefficients(self, grid: Grid, t: float, params: ModelParams):
        """Spectral forcings on ``grid``: time derivative minus the unforced right-hand side."""
        phi = self.phi(grid, t)
        u = self.u(grid, t)
        fl = explicit_fluxes(grid, phi, u, params, t)
        g_phi = grid.fft(self.dphi_dt(grid, t)) - fl.phi
        g_u = grid.fft(self.du_dt(grid, t)) - fl.u
        return g_phi, g_u

    def forcing(self, grid: Grid, params: ModelParams, kind: str | None = None) -> ForcingSpec:
        """ForcingSpec for ``grid``.

        ``discrete``: built from the solver's own operators on ``grid``; the
        sampled exact fields then solve the semi-discrete system exactly.
        ``continuous``: built on an unaliased reference grid and evaluated at
        the nodes of ``grid``; discretization errors remain visible.
        """
        kind = kind or self.default_forcing
        if kind == "discrete":
            def g_phi(t):
                return grid.ifft(self.forcing_coefficients(grid, t, params)[0])

            def g_u(t):
                return grid.ifft(self.forcing_coefficients(grid, t, params)[1])
        elif kind == "continuous":
            ref = self._reference_grid(grid)
            cache: dict[float, tuple] = {}

            def both(t):
                if t not in cache:
                    if len(cache) > 8:
                        cache.clear()
                    gp, gu = self.forcing_coefficients(ref, t, params)
                    cache[t] = (_evaluate_modes(ref, gp, grid), _evaluate_modes(ref, gu, grid))
                return cache[t]

            def g_phi(t):
                return both(t)[0]

            def g_u(t):
                return both(t)[1]
        else:
            raise ValueError(f"unknown forcing kind {kind!r}")
        return ForcingSpec(g_u=g_u, g_phi=g_phi, name=f"{self.name}:{kind}")

    def residuals(self, grid: Grid, t: float, params: ModelParams,
                  forcing: ForcingSpec) -> tuple[float, float]:
        """Max-norm residuals of both equations for the exact fields under ``forcing``."""
        phi = self.phi(grid, t)
        u = self.u(grid, t)
        fl = explicit_fluxes(grid, phi, u, params, t, forcing)
        r_phi = grid.ifft(np.where(grid.mask, grid.fft(self.dphi_dt(grid, t)), 0) - fl.phi)
        r_u = grid.ifft(np.where(grid.mask, grid.fft(self.du_dt(grid, t)), 0) - fl.u)
        return float(np.abs(r_phi).max()), float(np.abs(r_u).max())


def _decaying() -> MMSCase:
    def phi(g, t):
        x, y = g.coords()[:2]
        return math.exp(-t) * np.cos(x) * np.cos(y)

    def u(g, t):
        x, y = g.coords()[:2]
        return math.exp(-t) * np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])

    return MMSCase(
        name="decaying", phi=phi, u=u,
        dphi_dt=lambda g, t: -phi(g, t), du_dt=lambda g, t: -u(g, t),
        bandwidth=1, forcing_bandwidth=6, default_forcing="discrete",
    )


# sine coefficients of a smoothed step, truncated at three modes
STRIPE_COEFFS = (0.9, 0.25, 0.08)


def _steady() -> MMSCase:
    def phi(g, t):
        x = g.coords()[0]
        return sum(b * np.sin((j + 1) * x) for j, b in enumerate(STRIPE_COEFFS))

    def zero_vec(g, t):
        return np.zeros((g.dim, *g.shape))

    def zero(g, t):
        return np.zeros(g.shape)

    return MMSCase(
        name="steady", phi=phi, u=zero_vec, dphi_dt=zero, du_dt=zero_vec,
        bandwidth=len(STRIPE_COEFFS), forcing_bandwidth=5 * len(STRIPE_COEFFS),
        steady=True, default_forcing="continuous",
    )


MMS_CATALOG: dict[str, Callable[[], MMSCase]] = {"decaying": _decaying, "steady": _steady}


def make_mms(case_id: str) -> MMSCase:
    try:
        return MMS_CATALOG[case_id]()
    except KeyError:
        raise KeyError(f"unknown manufactured solution {case_id!r}; "
                       f"known: {', '.join(sorted(MMS_CATALOG))}") from None


def mms_params(eta: float = -0.5) -> ModelParams:
    """Constant-coefficient parameters used by the convergence studies."""
    return ModelParams(eta=eta, viscosity=CoefficientLaw.constant(1.0),
                       mobility=CoefficientLaw.constant(1.0))


# --------------------------------------------------------------------------
# convergence studies

@dataclass
class StudyResult:
    kind: str
    levels: list[float]
    errors: list[float]
    slope: float
    monotone: bool
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [{"level": lv, "error": e, "slope": self.slope} for lv, e in zip(self.levels, self.errors)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["level", "error", "slope"])
            w.writeheader()
            w.writerows(self.rows())


def solution_error(state: PhaseState, case: MMSCase, t: float) -> float:
    g = state.grid
    dphi = state.phi.values - case.phi(g, t)
    du = state.u.values - case.u(g, t)
    return math.sqrt(g.integrate(dphi**2) + g.integrate(np.sum(du**2, axis=0)))


def solve_case(case: MMSCase, grid: Grid, params: ModelParams, dt: float, t_end: float,
               scheme: Scheme | str = Scheme.SEMI_IMPLICIT_EULER, forcing_kind: str | None = None,
               cfl_safety: float = 1.0) -> float:
    """Run the case from its exact initial data and return the error at t_end."""
    forcing = case.forcing(grid, params, forcing_kind)
    cfg = SolverConfig(dt=dt, t_end=t_end, scheme=scheme, cfl_safety=cfl_safety, forcing=forcing)
    state = run(case.state(grid, 0.0, params), params, cfg, Sinks(record_every=10**9))
    return solution_error(state, case, t_end)


def fit_slope(levels, errors) -> float:
    x = np.log(np.asarray(levels, dtype=float))
    y = np.log(np.maximum(np.asarray(errors, dtype=float), 1e-300))
    return float(np.polyfit(x, y, 1)[0])


def convergence_study(case: MMSCase, *, dts=None, ns=None, params: ModelParams | None = None,
                      t_end: float = 1.0, n: int = 8, dt: float = 1e-3,
                      scheme: Scheme | str = Scheme.SEMI_IMPLICIT_EULER,
                      forcing_kind: str | None = None, csv_path=None) -> StudyResult:
    """Temporal study (``dts`` given, fixed ``n``) or spatial study (``ns`` given, fixed ``dt``)."""
    if (dts is None) == (ns is None):
        raise ValueError("give exactly one of dts or ns")
    params = params or mms_params()
    levels = list(dts if dts is not None else ns)
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least 3 refinement levels")
    errors = []
    t0 = time.perf_counter()
    for lv in levels:
        if dts is not None:
            grid = Grid.cube(case.dim, n)
            errors.append(solve_case(case, grid, params, lv, t_end, scheme, forcing_kind))
        else:
            grid = Grid.cube(case.dim, int(lv))
            errors.append(solve_case(case, grid, params, dt, t_end, scheme, forcing_kind))
    kind = "temporal" if dts is not None else "spatial"
    if kind == "temporal":
        monotone = all(b < a for a, b in zip(errors, errors[1:]))
    else:
        monotone = all(b <= a * (1 + 1e-6) + 1e-12 for a, b in zip(errors, errors[1:]))
    if not monotone:
        log.warning("%s study on %r: error sequence is not monotone: %s", kind, case.name, errors)
    result = StudyResult(kind, levels, errors, fit_slope(levels, errors), monotone,
                         {"case": case.name, "scheme": Scheme(scheme).value,
                          "seconds": time.perf_counter() - t0})
    if csv_path is not None:
        result.to_csv(csv_path)
    return result


# --------------------------------------------------------------------------
# brute-force quadrature

def zero_pad(coef: np.ndarray, grid: Grid, factor: int = 2) -> tuple[Grid, np.ndarray]:
    """Embed spectral coefficients in a grid refined by ``factor``; Nyquist content is split."""
    fine = Grid(grid.dim, tuple(factor * nj for nj in grid.n), grid.length, grid.dealias_fraction)
    out = coef
    lead = coef.ndim - grid.dim
    for j, nj in enumerate(grid.n):
        ax = lead + j
        h = nj // 2
        nyq = 0.5 * np.take(out, [h], axis=ax)
        shape = list(out.shape)
        shape[ax] = (factor - 1) * nj - 1
        parts = [np.take(out, range(h), axis=ax), nyq, np.zeros(shape, dtype=complex), nyq,
                 np.take(out, range(h + 1, nj), axis=ax)]
        out = np.concatenate(parts, axis=ax)
    return fine, out


def bruteforce_norm_check(f: Field | VectorField, p: float) -> float:
    """L^p norm re-evaluated on the zero-padded doubled grid."""
    if p not in (2, 3, 4, 6):
        raise ValueError(f"brute-force check supports p in {{2, 3, 4, 6}}, got {p}")
    g = f.grid
    fine, coef = zero_pad(f.coefficients, g)
    vals = fine.ifft(coef)
    mag = np.abs(vals) if vals.ndim == g.dim else np.sqrt(np.sum(vals**2, axis=0))
    return float((fine.cell_volume * np.sum(mag**p)) ** (1.0 / p))


def norm_agreement(f: Field | VectorField, p: float) -> float:
    ref = bruteforce_norm_check(f, p)
    return abs(lp_norm(f, p) - ref) / max(ref, 1e-300)


# --------------------------------------------------------------------------
# suites (used by the command line)

@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def suite_identity(samples: int = 10**6, seed: int = 0) -> SuiteResult:
    from .model import Potential

    pot = Potential()
    s = np.random.default_rng(seed).uniform(-3, 3, samples)
    err = float(np.abs(s * pot.f(s) - 2 * pot.F(s) - (0.5 * s**4 - 0.5)).max())
    return SuiteResult("identity", err <= 1e-13, f"max abs error {err:.2e}")


def suite_variational(n: int = 32, pairs: int = 20, seed: int = 0,
                      mu_fn: Callable[[Field, ModelParams], Field] = compute_mu) -> SuiteResult:
    rng = np.random.default_rng(seed)
    grid = Grid.cube(2, n)
    worst = 0.0
    for i, (phi, psi) in enumerate(random_pairs(grid, rng, pairs)):
        params = ModelParams(eta=[-1.0, 0.5, 2.0][i % 3])
        worst = max(worst, gradient_check(phi, psi, params, mu_fn=mu_fn).rel_error)
    return SuiteResult("variational", worst <= 1e-6, f"{pairs} pairs, worst rel error {worst:.2e}")


def suite_mms_temporal() -> SuiteResult:
    case = make_mms("decaying")
    euler = convergence_study(case, dts=[0.04, 0.02, 0.01, 0.005], t_end=1.0, n=8)
    rk4 = convergence_study(case, dts=[0.1, 0.05, 0.025, 0.0125], t_end=1.0, n=8, scheme="rk4")
    ok = abs(euler.slope - 1.0) <= 0.2 and abs(rk4.slope - 4.0) <= 0.4
    return SuiteResult("mms-temporal", ok, f"euler slope {euler.slope:.3f}, rk4 slope {rk4.slope:.3f}")


def suite_mms_spatial() -> SuiteResult:
    case = make_mms("steady")
    ns = [8, 16, 32, 48]
    res = convergence_study(case, ns=ns, dt=1e-3, t_end=0.05)
    beyond = [e for lv, e in zip(ns, res.errors) if lv > 2 * case.forcing_bandwidth]
    ok = bool(beyond) and max(beyond) <= 1e-8
    return SuiteResult("mms-spatial", ok, "errors " + ", ".join(f"n={lv}: {e:.1e}" for lv, e in zip(ns, res.errors)))


def suite_norms(n: int = 32, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    grid = Grid.cube(2, n)
    worst = 0.0
    for p in (2, 4, 6):
        f = random_smooth_field(grid, rng, 3.0, 1.0)
        worst = max(worst, norm_agreement(f, p))
    f = random_smooth_field(grid, rng, 3.0, 0.5, mean=2.0)  # positive, so |f|^3 is smooth
    worst = max(worst, norm_agreement(f, 3))
    return SuiteResult("norms", worst <= 1e-8, f"worst rel disagreement {worst:.2e}")


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "identity": suite_identity,
    "variational": suite_variational,
    "mms-temporal": suite_mms_temporal,
    "mms-spatial": suite_mms_spatial,
    "norms": suite_norms,
}


def run_suites(names=None) -> list[SuiteResult]:
    out = []
    for name in names or SUITES:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}")
        t0 = time.perf_counter()
        res = SUITES[name]()
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
