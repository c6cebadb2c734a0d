"""Fourier machinery on a periodic box.

Fields are sampled on a uniform grid ``x_j = j L / n``. Spectral coefficients
use the forward-normalised DFT, so the zero mode equals the mean value and
``||f||^2 = |Omega| * sum |f_k|^2``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.fft

Repr = Literal["physical", "spectral"]

PHYSICAL: Repr = "physical"
SPECTRAL: Repr = "spectral"


class GridError(ValueError):
    """Unsupported grid geometry or resolution."""


class DomainError(ValueError):
    """Argument outside the domain of a norm or operator."""


def _workers() -> int:
    value = os.environ.get("FCHFLOW_THREADS")
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class Grid:
    dim: int
    n: tuple[int, ...]
    length: tuple[float, ...]
    dealias_fraction: float = 1.0 / 3.0

    # derived tables, filled in __post_init__
    wavenumbers: tuple[np.ndarray, ...] = field(init=False, repr=False)
    k: tuple[np.ndarray, ...] = field(init=False, repr=False)
    ksq: np.ndarray = field(init=False, repr=False)
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise GridError(f"dim must be 2 or 3, got {self.dim}")
        n = tuple(int(v) for v in np.broadcast_to(self.n, (self.dim,)))
        length = tuple(float(v) for v in np.broadcast_to(self.length, (self.dim,)))
        for nj in n:
            if nj < 8 or nj % 2:
                raise GridError(f"resolution must be even and >= 8, got {nj}")
        for lj in length:
            if not lj > 0:
                raise GridError(f"box length must be positive, got {lj}")
        if not 0 < self.dealias_fraction <= 1:
            raise GridError("dealias_fraction must lie in (0, 1]")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "length", length)

        tables = []
        kderiv = []
        mask = np.ones(n, dtype=bool)
        for j, (nj, lj) in enumerate(zip(n, length)):
            scale = 2 * np.pi / lj
            kj = np.fft.fftfreq(nj, d=1.0 / nj) * scale
            tables.append(kj)
            kd = kj.copy()
            kd[nj // 2] = 0.0  # Nyquist: keep odd derivatives real
            shape = [1] * self.dim
            shape[j] = nj
            kderiv.append(kd.reshape(shape))
            cutoff = self.dealias_fraction * (nj / 2) * scale
            keep = np.abs(kj) <= cutoff * (1 + 1e-12)
            mask &= keep.reshape(shape)
        ksq = sum(kd**2 for kd in kderiv)
        object.__setattr__(self, "wavenumbers", tuple(tables))
        object.__setattr__(self, "k", tuple(kderiv))
        object.__setattr__(self, "ksq", np.broadcast_to(ksq, n).copy())
        object.__setattr__(self, "mask", mask)

    @classmethod
    def cube(cls, dim: int = 2, n: int = 64, length: float = 2 * np.pi,
             dealias_fraction: float = 1.0 / 3.0) -> "Grid":
        return cls(dim, (n,) * dim, (length,) * dim, dealias_fraction)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return math.prod(self.n)

    @property
    def volume(self) -> float:
        return math.prod(self.length)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(lj / nj for lj, nj in zip(self.length, self.n))

    @property
    def cell_volume(self) -> float:
        return self.volume / self.size

    @property
    def kmax(self) -> float:
        """Largest |k| among retained (dealiased) modes."""
        return float(np.sqrt(self.ksq[self.mask].max()))

    def coords(self) -> list[np.ndarray]:
        """Coordinate arrays, one per axis, broadcast to the full grid."""
        axes = [np.arange(nj) * (lj / nj) for nj, lj in zip(self.n, self.length)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def same_as(self, other: "Grid") -> bool:
        return (self is other) or (
            self.dim == other.dim and self.n == other.n
            and self.length == other.length
            and self.dealias_fraction == other.dealias_fraction
        )

    # raw array transforms; leading axes are treated as components
    def fft(self, a: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return scipy.fft.fftn(a, axes=axes, norm="forward", workers=_workers())

    def ifft(self, a: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return scipy.fft.ifftn(a, axes=axes, norm="forward", workers=_workers()).real

    def integrate(self, a: np.ndarray) -> float:
        """Equal-weight (trapezoidal) quadrature of physical samples."""
        return float(np.sum(a) * self.cell_volume)


@dataclass(eq=False)
class Field:
    """Scalar field tagged with its representation."""

    grid: Grid
    data: np.ndarray
    repr: Repr = PHYSICAL

    def __post_init__(self):
        if self.repr not in (PHYSICAL, SPECTRAL):
            raise ValueError(f"unknown representation {self.repr!r}")
        if self.data.shape != self.grid.shape:
            raise ValueError(f"data shape {self.data.shape} != grid {self.grid.shape}")

    def physical(self) -> "Field":
        return transform(self, PHYSICAL)

    def spectral(self) -> "Field":
        return transform(self, SPECTRAL)

    def copy(self) -> "Field":
        return Field(self.grid, self.data.copy(), self.repr)

    @property
    def values(self) -> np.ndarray:
        """Physical samples (transforming if needed)."""
        return self.data if self.repr == PHYSICAL else self.grid.ifft(self.data)

    @property
    def coefficients(self) -> np.ndarray:
        return self.data if self.repr == SPECTRAL else self.grid.fft(self.data)

    def mean(self) -> float:
        return float(self.coefficients.flat[0].real)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        return cls(grid, np.asarray(fn(*grid.coords()), dtype=float) * np.ones(grid.shape))


@dataclass(eq=False)
class VectorField:
    """``dim`` components stacked along axis 0, sharing one grid and representation."""

    grid: Grid
    data: np.ndarray
    repr: Repr = PHYSICAL

    def __post_init__(self):
        if self.data.shape != (self.grid.dim, *self.grid.shape):
            raise ValueError(f"vector data shape {self.data.shape} does not match grid")

    @property
    def components(self) -> list[Field]:
        return [Field(self.grid, c, self.repr) for c in self.data]

    def physical(self) -> "VectorField":
        return transform(self, PHYSICAL)

    def spectral(self) -> "VectorField":
        return transform(self, SPECTRAL)

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.data.copy(), self.repr)

    @property
    def values(self) -> np.ndarray:
        return self.data if self.repr == PHYSICAL else self.grid.ifft(self.data)

    @property
    def coefficients(self) -> np.ndarray:
        return self.data if self.repr == SPECTRAL else self.grid.fft(self.data)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.dim, *grid.shape)))

    @classmethod
    def from_components(cls, fields: list[Field]) -> "VectorField":
        grid = fields[0].grid
        reprs = {f.repr for f in fields}
        if len(reprs) != 1 or any(not f.grid.same_as(grid) for f in fields):
            raise ValueError("components must share grid and representation")
        return cls(grid, np.stack([f.data for f in fields]), reprs.pop())


AnyField = Field | VectorField


def transform(f: AnyField, target: Repr) -> AnyField:
    if target not in (PHYSICAL, SPECTRAL):
        raise ValueError(f"unknown representation {target!r}")
    if f.repr == target:
        return f
    data = f.grid.fft(f.data) if target == SPECTRAL else f.grid.ifft(f.data)
    return type(f)(f.grid, data, target)


def grad(f: Field) -> VectorField:
    fh = f.coefficients
    g = f.grid
    return VectorField(g, np.stack([1j * kj * fh for kj in g.k]), SPECTRAL)


def div(v: VectorField) -> Field:
    vh = v.coefficients
    g = v.grid
    return Field(g, sum(1j * kj * vh[j] for j, kj in enumerate(g.k)), SPECTRAL)


def laplacian(f: AnyField) -> AnyField:
    return type(f)(f.grid, -f.grid.ksq * f.coefficients, SPECTRAL)


def dealias(f: AnyField) -> AnyField:
    if f.repr != SPECTRAL:
        raise ValueError("dealias expects a spectral-representation field")
    return type(f)(f.grid, np.where(f.grid.mask, f.data, 0), SPECTRAL)


def leray_coefficients(grid: Grid, vh: np.ndarray) -> np.ndarray:
    """Apply I - k k^T/|k|^2 to stacked spectral coefficients."""
    ksq = grid.ksq
    safe = np.where(ksq == 0, 1.0, ksq)
    kdotv = sum(kj * vh[j] for j, kj in enumerate(grid.k))
    out = np.empty_like(vh)
    for j, kj in enumerate(grid.k):
        out[j] = vh[j] - kj * kdotv / safe
    return out


def leray_project(v: VectorField) -> VectorField:
    if v.repr != SPECTRAL:
        raise ValueError("leray_project expects a spectral-representation field")
    return VectorField(v.grid, leray_coefficients(v.grid, v.data), SPECTRAL)


def _magnitude(f: AnyField) -> np.ndarray:
    vals = f.values
    if isinstance(f, VectorField):
        return np.sqrt(np.sum(vals**2, axis=0))
    return np.abs(vals)


def lp_norm(f: AnyField, p: float) -> float:
    """L^p norm; p = 2 via Parseval, p = inf via max, otherwise trapezoidal quadrature."""
    if not p >= 1:
        raise DomainError(f"L^p norm needs p >= 1, got {p}")
    g = f.grid
    if p == 2:
        ch = f.coefficients
        return float(np.sqrt(g.volume * np.sum(np.abs(ch) ** 2)))
    mag = _magnitude(f)
    if np.isinf(p):
        return float(mag.max())
    return float((g.cell_volume * np.sum(mag**p)) ** (1.0 / p))


def sobolev_norm(f: AnyField, s: int) -> float:
    """H^s norm: (||f||^2 + ||(-Delta)^{s/2} f||^2)^{1/2}; s = 0 gives ||f||."""
    if s not in (0, 1, 2, 3):
        raise DomainError(f"sobolev order must be 0..3, got {s}")
    g = f.grid
    power = np.abs(f.coefficients) ** 2
    if power.ndim > g.dim:
        power = power.sum(axis=0)
    l2sq = g.volume * power.sum()
    if s == 0:
        return float(np.sqrt(l2sq))
    return float(np.sqrt(l2sq + g.volume * np.sum(g.ksq**s * power)))


def inner(a: AnyField, b: AnyField) -> float:
    """L^2 inner product (spectral sum; exact for band-limited data)."""
    g = a.grid
    return float(g.volume * np.sum((a.coefficients * np.conj(b.coefficients)).real))


def random_smooth_field(grid: Grid, rng: np.random.Generator, kmax: float = 4.0,
                        amplitude: float = 1.0, mean: float = 0.0) -> Field:
    """Random real field with Fourier support |k_j| <= kmax (also inside the dealias mask)."""
    shape = grid.shape
    raw = rng.standard_normal(shape)
    ch = grid.fft(raw)
    keep = grid.mask.copy()
    for j, kj in enumerate(grid.wavenumbers):
        sh = [1] * grid.dim
        sh[j] = kj.size
        keep &= (np.abs(kj) <= kmax).reshape(sh)
    ch = np.where(keep, ch, 0)
    ch.flat[0] = 0
    vals = grid.ifft(ch)
    scale = np.abs(vals).max()
    if scale > 0:
        vals *= amplitude / scale
    vals = grid.ifft(np.where(grid.mask, grid.fft(vals), 0))
    vals += mean - grid.fft(vals).flat[0].real
    return Field(grid, vals)


def random_solenoidal_field(grid: Grid, rng: np.random.Generator, kmax: float = 4.0,
                            amplitude: float = 1.0) -> VectorField:
    comps = np.stack([random_smooth_field(grid, rng, kmax, 1.0).data for _ in range(grid.dim)])
    vh = leray_coefficients(grid, grid.fft(comps))
    vals = grid.ifft(vh)
    scale = np.sqrt(np.sum(vals**2, axis=0)).max()
    if scale > 0:
        vals *= amplitude / scale
    return VectorField(grid, vals)
