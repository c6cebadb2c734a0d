"""Continuous-model ingredients of the membrane/fluid system.

Energy
    E(phi) = int 1/2 (-Lap phi + f(phi))^2 + eta (1/2 |grad phi|^2 + F(phi))
with the two-level chemical potential
    omega = -Lap phi + f(phi),   mu = -Lap omega + f'(phi) omega + eta omega.

Products are formed pointwise in physical space. ``omega`` is kept at full
grid resolution (it is exactly representable when phi lives in the dealiased
subspace); ``mu`` and every force built from it are truncated to the dealias
mask, so that <mu, psi> is the exact directional derivative of E for psi in
the retained subspace.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.polynomial import Polynomial

from .spectral import (
    PHYSICAL, SPECTRAL, Field, Grid, VectorField, grad, leray_coefficients,
)


class ModelError(ValueError):
    """Invalid model configuration."""


class NumericalOverflowError(FloatingPointError):
    """A functional evaluated to a non-finite value."""


# --------------------------------------------------------------------------
# coefficient laws (viscosity, mobility)

@dataclass(frozen=True)
class CoefficientLaw:
    """Positive coefficient law ``c(s)``.

    ``constant``: c(s) = value.
    ``bounded_smooth``: c(s) = floor + base + amplitude * s^2 / (1 + s^2).
    """

    kind: Literal["constant", "bounded_smooth"] = "constant"
    value: float = 1.0
    base: float = 0.0
    amplitude: float = 0.0
    floor: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            if not self.value > 0:
                raise ModelError(f"constant law needs value > 0, got {self.value}")
        elif self.kind == "bounded_smooth":
            if not self.floor > 0:
                raise ModelError(f"bounded_smooth law needs floor > 0, got {self.floor}")
            if self.base + min(self.amplitude, 0.0) < 0:
                raise ModelError("bounded_smooth law dips below its floor")
        else:
            raise ModelError(f"unknown coefficient law {self.kind!r}")

    @classmethod
    def constant(cls, value: float) -> "CoefficientLaw":
        return cls("constant", value=value)

    @classmethod
    def bounded_smooth(cls, base: float, amplitude: float, floor: float) -> "CoefficientLaw":
        return cls("bounded_smooth", base=base, amplitude=amplitude, floor=floor)

    @property
    def lower_bound(self) -> float:
        if self.kind == "constant":
            return self.value
        return self.floor + self.base + min(self.amplitude, 0.0)

    @property
    def upper_bound(self) -> float:
        if self.kind == "constant":
            return self.value
        return self.floor + self.base + max(self.amplitude, 0.0)

    def __call__(self, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return np.full_like(s, self.value if order == 0 else 0.0)
        r = 1.0 + s * s
        if order == 0:
            return self.floor + self.base + self.amplitude * s * s / r
        if order == 1:
            return self.amplitude * 2 * s / r**2
        if order == 2:
            return self.amplitude * (2 - 6 * s * s) / r**3
        raise ValueError("coefficient laws expose derivatives up to order 2")

    def sup_on(self, lo: float = -1.5, hi: float = 1.5) -> float:
        s = np.linspace(lo, hi, 3001)
        return float(np.max(self(s)))


# --------------------------------------------------------------------------
# potential

DOUBLE_WELL = (0.25, 0.0, -0.5, 0.0, 0.25)  # F(s) = (s^2 - 1)^2 / 4


@dataclass(frozen=True)
class Potential:
    """Polynomial bulk potential F(s) = sum_j a_j s^j; f = F'."""

    coefficients: tuple[float, ...] = DOUBLE_WELL
    _polys: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        while len(coeffs) > 1 and coeffs[-1] == 0:
            coeffs = coeffs[:-1]
        degree = len(coeffs) - 1
        if degree < 2 or degree % 2 or coeffs[-1] <= 0:
            raise ModelError("potential must have even degree >= 2 and positive leading coefficient")
        object.__setattr__(self, "coefficients", coeffs)
        F = Polynomial(coeffs)
        object.__setattr__(self, "_polys", tuple(F.deriv(j) for j in range(5)))

    @property
    def is_double_well(self) -> bool:
        return self.coefficients == DOUBLE_WELL

    def F(self, s):
        return self._polys[0](np.asarray(s, dtype=float))

    def f(self, s, order: int = 0):
        if order not in (0, 1, 2, 3):
            raise ValueError(f"f derivative order must be 0..3, got {order}")
        s = np.asarray(s, dtype=float)
        if self.is_double_well:
            # explicit forms are cheaper and round identically everywhere
            if order == 0:
                return s * s * s - s
            if order == 1:
                return 3 * s * s - 1
            if order == 2:
                return 6 * s
            return np.full_like(s, 6.0)
        return self._polys[order + 1](s)


@dataclass(frozen=True)
class ModelParams:
    eta: float
    viscosity: CoefficientLaw = field(default_factory=CoefficientLaw)
    mobility: CoefficientLaw = field(default_factory=CoefficientLaw)
    nu_bar: float | None = None
    m_bar: float | None = None
    potential: Potential = field(default_factory=Potential)

    def __post_init__(self):
        if not np.isfinite(self.eta):
            raise ModelError("eta must be finite")
        if self.nu_bar is None:
            object.__setattr__(self, "nu_bar", max(self.nu_star, self.viscosity.sup_on()))
        if self.m_bar is None:
            object.__setattr__(self, "m_bar", max(self.m_star, self.mobility.sup_on()))
        if not self.nu_bar >= self.nu_star:
            raise ModelError(f"nu_bar={self.nu_bar} below viscosity floor {self.nu_star}")
        if not self.m_bar >= self.m_star:
            raise ModelError(f"m_bar={self.m_bar} below mobility floor {self.m_star}")

    @property
    def nu_star(self) -> float:
        return self.viscosity.lower_bound

    @property
    def m_star(self) -> float:
        return self.mobility.lower_bound


# --------------------------------------------------------------------------
# pointwise functions

def f_eval(phi, order: int = 0, potential: Potential | None = None):
    """f = F' and its derivatives up to order 3, pointwise."""
    pot = potential or Potential()
    if isinstance(phi, Field):
        return Field(phi.grid, pot.f(phi.values, order))
    return pot.f(phi, order)


def potential_F(phi, potential: Potential | None = None):
    pot = potential or Potential()
    if isinstance(phi, Field):
        return Field(phi.grid, pot.F(phi.values))
    return pot.F(phi)


def viscosity_eval(phi: Field, params: ModelParams) -> Field:
    return Field(phi.grid, params.viscosity(phi.values))


def mobility_eval(phi: Field, params: ModelParams) -> Field:
    return Field(phi.grid, params.mobility(phi.values))


# --------------------------------------------------------------------------
# chemical potentials (array level, used by the solver)

def omega_array(grid: Grid, phi: np.ndarray, phi_hat: np.ndarray, potential: Potential) -> np.ndarray:
    return grid.ifft(grid.ksq * phi_hat) + potential.f(phi)


def mu_hat_array(grid: Grid, phi: np.ndarray, omega: np.ndarray, params: ModelParams) -> np.ndarray:
    """Dealiased spectral coefficients of mu."""
    omega_hat = grid.fft(omega)
    rest = (params.potential.f(phi, 1) + params.eta) * omega
    mu_hat = grid.ksq * omega_hat + grid.fft(rest)
    return np.where(grid.mask, mu_hat, 0)


def compute_omega(phi: Field, params: ModelParams | None = None) -> Field:
    pot = params.potential if params is not None else Potential()
    g = phi.grid
    return Field(g, omega_array(g, phi.values, phi.coefficients, pot))


def compute_mu(phi: Field, params: ModelParams) -> Field:
    g = phi.grid
    vals = phi.values
    omega = omega_array(g, vals, phi.coefficients, params.potential)
    return Field(g, g.ifft(mu_hat_array(g, vals, omega, params)))


# --------------------------------------------------------------------------
# state

@dataclass(eq=False)
class PhaseState:
    """Simulation state. phi and u are physical-space samples; omega/mu are caches."""

    t: float
    phi: Field
    u: VectorField
    omega: Field | None = None
    mu: Field | None = None
    caches_valid: bool = False

    def __post_init__(self):
        if self.phi.repr != PHYSICAL:
            self.phi = self.phi.physical()
        if self.u.repr != PHYSICAL:
            self.u = self.u.physical()
        if not self.phi.grid.same_as(self.u.grid):
            raise ValueError("phi and u must live on the same grid")

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    def set_phi(self, phi: Field) -> None:
        self.phi = phi.physical()
        self.invalidate()

    def invalidate(self) -> None:
        self.omega = None
        self.mu = None
        self.caches_valid = False

    def refresh(self, params: ModelParams) -> "PhaseState":
        self.omega = compute_omega(self.phi, params)
        self.mu = compute_mu(self.phi, params)
        self.caches_valid = True
        return self

    def require_caches(self, params: ModelParams) -> None:
        if not self.caches_valid:
            raise ValueError("state caches are stale; call refresh(params) first")

    def copy(self) -> "PhaseState":
        return PhaseState(
            self.t, self.phi.copy(), self.u.copy(),
            self.omega.copy() if self.omega is not None else None,
            self.mu.copy() if self.mu is not None else None,
            self.caches_valid,
        )

    @classmethod
    def at_rest(cls, grid: Grid, phi: Field, params: ModelParams | None = None, t: float = 0.0):
        state = cls(t, phi, VectorField.zeros(grid))
        return state.refresh(params) if params is not None else state


# --------------------------------------------------------------------------
# functionals

def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericalOverflowError(f"{what} is not finite")
    return value


def energy_density(phi: Field, params: ModelParams) -> np.ndarray:
    g = phi.grid
    vals = phi.values
    phi_hat = phi.coefficients
    omega = omega_array(g, vals, phi_hat, params.potential)
    grad_sq = np.sum(g.ifft(np.stack([1j * kj * phi_hat for kj in g.k])) ** 2, axis=0)
    return 0.5 * omega**2 + params.eta * (0.5 * grad_sq + params.potential.F(vals))


def energy_E(phi: Field, params: ModelParams) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        dens = energy_density(phi, params)
        value = phi.grid.integrate(dens)
    return _check_finite(value, "elastic energy")


def kinetic_energy(u: VectorField) -> float:
    g = u.grid
    return 0.5 * g.integrate(np.sum(u.values**2, axis=0))


def total_energy(state: PhaseState, params: ModelParams) -> float:
    return _check_finite(kinetic_energy(state.u) + energy_E(state.phi, params), "total energy")


def strain_rate(u: VectorField) -> np.ndarray:
    """Du = (grad u + grad u^T)/2 as an array [i, j, ...] with grad u[i, j] = d_j u_i."""
    g = u.grid
    uh = u.coefficients
    gu = np.stack([np.stack([g.ifft(1j * kj * uh[i]) for kj in g.k]) for i in range(g.dim)])
    return 0.5 * (gu + np.swapaxes(gu, 0, 1))


def velocity_gradient(u: VectorField) -> np.ndarray:
    g = u.grid
    uh = u.coefficients
    return np.stack([np.stack([g.ifft(1j * kj * uh[i]) for kj in g.k]) for i in range(g.dim)])


def dissipation(state: PhaseState, params: ModelParams) -> float:
    """int 2 nu(phi) |Du|^2 + m(phi) |grad mu|^2."""
    state.require_caches(params)
    g = state.grid
    phi = state.phi.values
    D = strain_rate(state.u)
    viscous = 2 * params.viscosity(phi) * np.sum(D**2, axis=(0, 1))
    grad_mu = grad(state.mu).values
    diffusive = params.mobility(phi) * np.sum(grad_mu**2, axis=0)
    return g.integrate(viscous + diffusive)


def korteweg_force(state: PhaseState) -> VectorField:
    """Capillary force mu grad(phi), dealiased (spectral representation)."""
    if not state.caches_valid:
        raise ValueError("state caches are stale; call refresh(params) first")
    g = state.grid
    grad_phi = grad(state.phi).values
    force = g.fft(state.mu.values * grad_phi)
    return VectorField(g, np.where(g.mask, force, 0), SPECTRAL)


def project_solenoidal(u: VectorField) -> VectorField:
    """Leray-project and return a physical field (helper for initial data)."""
    g = u.grid
    return VectorField(g, g.ifft(leray_coefficients(g, u.coefficients)))


@dataclass(frozen=True)
class EnergyLowerBound:
    """Pieces of the lower bound E(phi) >= 1/4 ||omega||^2 - C for the double well.

    ``sharp`` keeps the quartic term with its sign:
        1/4 ||omega||^2 - eta/8 int phi^4 + (eta/4 + eta^3/8) |Omega|   (eta < 0)
    ``coarse`` uses C_lb = |eta (1/4 + eta^2/8)| |Omega| + |eta|/8 int phi^4.
    For eta >= 0 both reduce to 1/4 ||omega||^2 since F >= 0.
    """

    energy: float
    quarter_omega_sq: float
    quartic: float
    volume: float
    eta: float

    @property
    def sharp(self) -> float:
        if self.eta >= 0:
            return self.quarter_omega_sq
        e = self.eta
        return self.quarter_omega_sq - e / 8 * self.quartic + (e / 4 + e**3 / 8) * self.volume

    @property
    def c_lb(self) -> float:
        e = self.eta
        return abs(e * (0.25 + e * e / 8)) * self.volume + abs(e) / 8 * self.quartic

    @property
    def coarse(self) -> float:
        if self.eta >= 0:
            return self.quarter_omega_sq
        return self.quarter_omega_sq - self.c_lb


def energy_lower_bound(phi: Field, params: ModelParams) -> EnergyLowerBound:
    if not params.potential.is_double_well:
        raise ModelError("the energy lower bound is only available for the default double well")
    g = phi.grid
    omega = compute_omega(phi, params).values
    vals = phi.values
    return EnergyLowerBound(
        energy=energy_E(phi, params),
        quarter_omega_sq=0.25 * g.integrate(omega**2),
        quartic=g.integrate(vals**4),
        volume=g.volume,
        eta=params.eta,
    )
