"""Run configuration: YAML schema, validation, round-trip serialization and
initial-condition generators.

Schema (all blocks except ``model.eta`` have defaults)::

    grid:   {dim: 2, n: 64, L: 6.283185307179586, dealias_fraction: 0.3333333333333333}
    model:
      eta: -1.0                      # required
      viscosity: {kind: constant, value: 1.0}
      mobility:  {kind: bounded_smooth, base: 0.5, amplitude: 0.2, floor: 0.5}
      potential: [0.25, 0.0, -0.5, 0.0, 0.25]
      nu_bar: null                   # null -> sup of the law on [-1.5, 1.5]
      m_bar: null
    solver: {scheme: semi-implicit-euler, dt: 1.0e-4, t_end: 0.1, cfl_safety: 0.5,
             forcing: null, stabilization: 0.0}
    ic:
      phi: random-perturbation       # random-perturbation | single-mode | tanh-stripe | constant
      seed: 0
      mean: 0.0
      amplitude: 0.2
      bandlimit: 2.0                 # null -> white perturbation (then dealiased)
      mode: [1, 0]                   # single-mode wave vector
      width: 0.5                     # tanh-stripe interface width
      velocity: none                 # none | taylor-green | random
      velocity_amplitude: 0.0
    output: {every: 1, lp_every: 10, snapshot_times: [], dir: out}
    twin: {amplitude: 1.0e-8, seed: 1, bandlimit: 2.0, fit_fraction: 0.2, p: 4.0, q: 8.0}
    gamma: 1.0
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .model import CoefficientLaw, ModelParams, PhaseState, Potential, DOUBLE_WELL
from .solver import Scheme, SolverConfig
from .spectral import Field, Grid, VectorField, leray_coefficients, random_solenoidal_field


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted path."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class UnknownKeyError(ConfigError):
    pass


class MissingKeyError(ConfigError):
    def __init__(self, key: str):
        super().__init__(key, "required")
        self.args = (f"{key} required",)


class NonPositiveFloorError(ConfigError):
    pass


class OddResolutionError(ConfigError):
    pass


class NonPositiveTimeStepError(ConfigError):
    pass


# --------------------------------------------------------------------------
# blocks

@dataclass
class GridBlock:
    dim: int = 2
    n: int = 64
    L: float = 2 * math.pi
    dealias_fraction: float = 1.0 / 3.0

    def build(self) -> Grid:
        return Grid.cube(self.dim, self.n, self.L, self.dealias_fraction)


@dataclass
class LawBlock:
    kind: str = "constant"
    value: float = 1.0
    base: float = 0.0
    amplitude: float = 0.0
    floor: float = 0.0

    def build(self) -> CoefficientLaw:
        if self.kind == "constant":
            return CoefficientLaw.constant(self.value)
        return CoefficientLaw.bounded_smooth(self.base, self.amplitude, self.floor)


@dataclass
class ModelBlock:
    eta: float
    viscosity: LawBlock = field(default_factory=LawBlock)
    mobility: LawBlock = field(default_factory=LawBlock)
    potential: list[float] = field(default_factory=lambda: list(DOUBLE_WELL))
    nu_bar: float | None = None
    m_bar: float | None = None

    def build(self) -> ModelParams:
        return ModelParams(
            eta=self.eta, viscosity=self.viscosity.build(), mobility=self.mobility.build(),
            nu_bar=self.nu_bar, m_bar=self.m_bar, potential=Potential(tuple(self.potential)),
        )


@dataclass
class SolverBlock:
    scheme: str = "semi-implicit-euler"
    dt: float = 1e-4
    t_end: float = 0.1
    cfl_safety: float = 0.5
    forcing: str | None = None
    stabilization: float = 0.0

    def build(self, grid: Grid | None = None, params: ModelParams | None = None) -> SolverConfig:
        forcing = None
        if self.forcing is not None:
            from .verification import make_mms

            forcing = make_mms(self.forcing).forcing(grid, params)
        return SolverConfig(dt=self.dt, t_end=self.t_end, scheme=self.scheme,
                            cfl_safety=self.cfl_safety, forcing=forcing,
                            stabilization=self.stabilization)


@dataclass
class ICBlock:
    phi: str = "random-perturbation"
    seed: int = 0
    mean: float = 0.0
    amplitude: float = 0.2
    bandlimit: float | None = 2.0
    mode: list[int] = field(default_factory=lambda: [1, 0])
    width: float = 0.5
    velocity: str = "none"
    velocity_amplitude: float = 0.0


@dataclass
class OutputBlock:
    every: int = 1
    lp_every: int = 10
    snapshot_times: list[float] = field(default_factory=list)
    dir: str = "out"


@dataclass
class TwinBlock:
    amplitude: float = 1e-8
    seed: int = 1
    bandlimit: float = 2.0
    fit_fraction: float = 0.2
    p: float = 4.0
    q: float = 8.0


@dataclass
class RunConfig:
    grid: GridBlock
    model: ModelBlock
    solver: SolverBlock
    ic: ICBlock = field(default_factory=ICBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    twin: TwinBlock | None = None
    gamma: float = 1.0


PHI_GENERATORS = ("random-perturbation", "single-mode", "tanh-stripe", "constant")
VELOCITY_GENERATORS = ("none", "taylor-green", "random")
LAW_KINDS = ("constant", "bounded_smooth")

_PI_EXPR = re.compile(r"^\s*([0-9.eE+-]*)\s*\*?\s*pi\s*$")


# --------------------------------------------------------------------------
# parsing

def _number(value: Any, key: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if isinstance(value, str):
        m = _PI_EXPR.match(value)
        if m:
            coef = m.group(1)
            return (float(coef) if coef not in ("", "+", "-") else float(coef + "1")) * math.pi
        try:
            return float(value)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    if isinstance(value, (int, float)):
        return float(value)
    raise ConfigError(key, f"expected a number, got {value!r}")


def _integer(value: Any, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return int(value)


def _block(cls, data: Any, prefix: str, required: tuple[str, ...] = ()) -> dict:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(prefix, f"expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise UnknownKeyError(f"{prefix}.{key}", "unknown key")
    for key in required:
        if data.get(key) is None:
            raise MissingKeyError(f"{prefix}.{key}")
    return dict(data)


def _parse_law(data: Any, key: str) -> LawBlock:
    d = _block(LawBlock, data, key)
    kind = d.get("kind", "constant")
    if kind not in LAW_KINDS:
        raise ConfigError(f"{key}.kind", f"must be one of {LAW_KINDS}, got {kind!r}")
    law = LawBlock(kind=kind, **{k: _number(v, f"{key}.{k}") for k, v in d.items() if k != "kind"})
    if kind == "constant" and not law.value > 0:
        raise NonPositiveFloorError(f"{key}.value", f"constant law must be positive, got {law.value}")
    if kind == "bounded_smooth":
        if not law.floor > 0:
            raise NonPositiveFloorError(f"{key}.floor", f"must be > 0, got {law.floor}")
        if law.base + min(law.amplitude, 0.0) < 0:
            raise ConfigError(key, "law dips below its floor")
    return law


def config_from_dict(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "configuration must be a mapping")
    top = _block(RunConfig, data, "config")
    if "model" not in top:
        raise MissingKeyError("model.eta")

    g = _block(GridBlock, top.get("grid"), "grid")
    grid = GridBlock(
        dim=_integer(g.get("dim", 2), "grid.dim"),
        n=_integer(g.get("n", 64), "grid.n"),
        L=_number(g.get("L", 2 * math.pi), "grid.L"),
        dealias_fraction=_number(g.get("dealias_fraction", 1.0 / 3.0), "grid.dealias_fraction"),
    )
    if grid.dim not in (2, 3):
        raise ConfigError("grid.dim", f"must be 2 or 3, got {grid.dim}")
    if grid.n % 2:
        raise OddResolutionError("grid.n", f"must be even, got {grid.n}")
    if grid.n < 8:
        raise ConfigError("grid.n", f"must be >= 8, got {grid.n}")
    if not grid.L > 0:
        raise ConfigError("grid.L", "must be positive")
    if not 0 < grid.dealias_fraction <= 1:
        raise ConfigError("grid.dealias_fraction", "must lie in (0, 1]")

    m = _block(ModelBlock, top["model"], "model", required=("eta",))
    potential = m.get("potential", list(DOUBLE_WELL))
    if not isinstance(potential, list) or not potential:
        raise ConfigError("model.potential", "expected a list of coefficients")
    model = ModelBlock(
        eta=_number(m["eta"], "model.eta"),
        viscosity=_parse_law(m.get("viscosity"), "model.viscosity"),
        mobility=_parse_law(m.get("mobility"), "model.mobility"),
        potential=[_number(c, "model.potential") for c in potential],
        nu_bar=None if m.get("nu_bar") is None else _number(m["nu_bar"], "model.nu_bar"),
        m_bar=None if m.get("m_bar") is None else _number(m["m_bar"], "model.m_bar"),
    )
    for key in ("nu_bar", "m_bar"):
        v = getattr(model, key)
        if v is not None and not v > 0:
            raise NonPositiveFloorError(f"model.{key}", f"must be > 0, got {v}")

    s = _block(SolverBlock, top.get("solver"), "solver")
    solver = SolverBlock(
        scheme=str(s.get("scheme", "semi-implicit-euler")),
        dt=_number(s.get("dt", 1e-4), "solver.dt"),
        t_end=_number(s.get("t_end", 0.1), "solver.t_end"),
        cfl_safety=_number(s.get("cfl_safety", 0.5), "solver.cfl_safety"),
        forcing=None if s.get("forcing") is None else str(s["forcing"]),
        stabilization=_number(s.get("stabilization", 0.0), "solver.stabilization"),
    )
    if solver.scheme not in {sch.value for sch in Scheme}:
        raise ConfigError("solver.scheme", f"unknown scheme {solver.scheme!r}")
    if not solver.dt > 0:
        raise NonPositiveTimeStepError("solver.dt", f"must be > 0, got {solver.dt}")
    if not solver.t_end >= 0:
        raise ConfigError("solver.t_end", "must be non-negative")
    if not 0 < solver.cfl_safety <= 1:
        raise ConfigError("solver.cfl_safety", "must lie in (0, 1]")
    if solver.forcing is not None:
        from .verification import MMS_CATALOG

        if solver.forcing not in MMS_CATALOG:
            raise ConfigError("solver.forcing", f"unknown forcing case {solver.forcing!r}")

    i = _block(ICBlock, top.get("ic"), "ic")
    ic = ICBlock(
        phi=str(i.get("phi", "random-perturbation")),
        seed=_integer(i.get("seed", 0), "ic.seed"),
        mean=_number(i.get("mean", 0.0), "ic.mean"),
        amplitude=_number(i.get("amplitude", 0.2), "ic.amplitude"),
        bandlimit=None if i.get("bandlimit", 2.0) is None else _number(i.get("bandlimit", 2.0), "ic.bandlimit"),
        mode=[_integer(v, "ic.mode") for v in i.get("mode", [1, 0])],
        width=_number(i.get("width", 0.5), "ic.width"),
        velocity=str(i.get("velocity", "none")),
        velocity_amplitude=_number(i.get("velocity_amplitude", 0.0), "ic.velocity_amplitude"),
    )
    if ic.phi not in PHI_GENERATORS:
        raise ConfigError("ic.phi", f"must be one of {PHI_GENERATORS}, got {ic.phi!r}")
    if ic.velocity not in VELOCITY_GENERATORS:
        raise ConfigError("ic.velocity", f"must be one of {VELOCITY_GENERATORS}, got {ic.velocity!r}")
    if len(ic.mode) != grid.dim:
        ic.mode = (ic.mode + [0] * grid.dim)[: grid.dim]

    o = _block(OutputBlock, top.get("output"), "output")
    output = OutputBlock(
        every=_integer(o.get("every", 1), "output.every"),
        lp_every=_integer(o.get("lp_every", 10), "output.lp_every"),
        snapshot_times=[_number(v, "output.snapshot_times") for v in o.get("snapshot_times", []) or []],
        dir=str(o.get("dir", "out")),
    )
    if output.every < 1 or output.lp_every < 1:
        raise ConfigError("output", "cadences must be >= 1")

    twin = None
    if top.get("twin") is not None:
        t = _block(TwinBlock, top["twin"], "twin")
        twin = TwinBlock(
            amplitude=_number(t.get("amplitude", 1e-8), "twin.amplitude"),
            seed=_integer(t.get("seed", 1), "twin.seed"),
            bandlimit=_number(t.get("bandlimit", 2.0), "twin.bandlimit"),
            fit_fraction=_number(t.get("fit_fraction", 0.2), "twin.fit_fraction"),
            p=_number(t.get("p", 4.0), "twin.p"),
            q=_number(t.get("q", 8.0), "twin.q"),
        )
        if not 0 < twin.fit_fraction < 1:
            raise ConfigError("twin.fit_fraction", "must lie in (0, 1)")

    gamma = _number(top.get("gamma", 1.0), "gamma")
    if gamma < 0:
        raise ConfigError("gamma", "must be non-negative")
    return RunConfig(grid, model, solver, ic, output, twin, gamma)


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed YAML: {exc}") from None
    return config_from_dict(data if data is not None else {})


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    if d["twin"] is None:
        del d["twin"]
    return d


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# --------------------------------------------------------------------------
# initial conditions

def _bandlimit(grid: Grid, vals: np.ndarray, kmax: float) -> np.ndarray:
    keep = grid.mask.copy()
    for j, kj in enumerate(grid.wavenumbers):
        sh = [1] * grid.dim
        sh[j] = kj.size
        keep &= (np.abs(kj) <= kmax + 1e-12).reshape(sh)
    return grid.ifft(np.where(keep, grid.fft(vals), 0))


def random_perturbation(grid: Grid, seed: int, mean: float, amplitude: float,
                        bandlimit: float | None = None) -> Field:
    """mean + uniform noise in [-a, a]; optionally band-limited and rescaled to max |.| = a,
    then the mean is reset exactly to ``mean``."""
    rng = np.random.default_rng(seed)
    pert = rng.uniform(-amplitude, amplitude, grid.shape)
    if bandlimit is not None:
        pert = _bandlimit(grid, pert, bandlimit)
        peak = np.abs(pert).max()
        if peak > 0:
            pert *= amplitude / peak
    pert -= pert.mean()
    return Field(grid, mean + pert)


def single_mode(grid: Grid, mean: float, amplitude: float, mode) -> Field:
    x = grid.coords()
    phase = sum(2 * np.pi * m * xj / lj for m, xj, lj in zip(mode, x, grid.length))
    return Field(grid, mean + amplitude * np.cos(phase))


def tanh_stripe(grid: Grid, width: float, mean: float = 0.0) -> Field:
    """Two flat interfaces at L/4 and 3L/4 along the first axis (periodic stripe)."""
    x = grid.coords()[0]
    L = grid.length[0]
    vals = np.tanh((x - L / 4) / width) - np.tanh((x - 3 * L / 4) / width) - 1.0
    return Field(grid, vals + mean - vals.mean())


def taylor_green(grid: Grid, amplitude: float) -> VectorField:
    x, y = grid.coords()[:2]
    a = 2 * np.pi / grid.length[0]
    b = 2 * np.pi / grid.length[1]
    comps = [amplitude * np.cos(a * x) * np.sin(b * y), -amplitude * (a / b) * np.sin(a * x) * np.cos(b * y)]
    if grid.dim == 3:
        comps.append(np.zeros(grid.shape))
    return VectorField(grid, np.stack(comps))


def initial_state(cfg: RunConfig, grid: Grid | None = None, params: ModelParams | None = None) -> PhaseState:
    grid = grid or cfg.grid.build()
    ic = cfg.ic
    if ic.phi == "random-perturbation":
        phi = random_perturbation(grid, ic.seed, ic.mean, ic.amplitude, ic.bandlimit)
    elif ic.phi == "single-mode":
        phi = single_mode(grid, ic.mean, ic.amplitude, ic.mode)
    elif ic.phi == "tanh-stripe":
        phi = tanh_stripe(grid, ic.width, ic.mean)
    else:
        phi = Field.constant(grid, ic.mean)
    if ic.velocity == "taylor-green":
        u = taylor_green(grid, ic.velocity_amplitude)
    elif ic.velocity == "random":
        rng = np.random.default_rng(ic.seed + 1)
        u = random_solenoidal_field(grid, rng, ic.bandlimit or 4.0, ic.velocity_amplitude)
    else:
        u = VectorField.zeros(grid)
    u = VectorField(grid, grid.ifft(leray_coefficients(grid, u.coefficients)))
    state = PhaseState(0.0, phi, u)
    return state.refresh(params) if params is not None else state


def twin_perturbation(grid: Grid, twin: TwinBlock) -> Field:
    """Zero-mean band-limited direction scaled so that ||Lap(dphi)|| = amplitude."""
    rng = np.random.default_rng(twin.seed)
    vals = _bandlimit(grid, rng.standard_normal(grid.shape), twin.bandlimit)
    vals -= vals.mean()
    ch = grid.fft(vals)
    lap_norm = math.sqrt(grid.volume * np.sum((grid.ksq * np.abs(ch)) ** 2))
    return Field(grid, vals * (twin.amplitude / lap_norm))
