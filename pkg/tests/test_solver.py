import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fchflow.diagnostics import DiagnosticsCollector
from fchflow.model import CoefficientLaw, ModelParams, PhaseState, total_energy
from fchflow.solver import (
    BlowUpError, ForcingSpec, Scheme, Sinks, SolverConfig, SolverConfigError, check_config,
    galerkin_project, in_galerkin_space, rk4_dt_bound, run, stable_dt, step,
)
from fchflow.spectral import Field, Grid, VectorField, div, random_smooth_field, random_solenoidal_field


def smooth_state(grid, params, seed=0, amp=0.3, uamp=0.3):
    rng = np.random.default_rng(seed)
    phi = random_smooth_field(grid, rng, 3.0, amp, mean=0.1)
    u = random_solenoidal_field(grid, rng, 3.0, uamp)
    return PhaseState(0.0, phi, u).refresh(params)


def test_config_validation():
    with pytest.raises(SolverConfigError):
        SolverConfig(dt=0.0, t_end=1.0)
    with pytest.raises(SolverConfigError):
        SolverConfig(dt=-1e-3, t_end=1.0)
    with pytest.raises(SolverConfigError):
        SolverConfig(dt=1e-3, t_end=1.0, cfl_safety=1.5)
    with pytest.raises(SolverConfigError):
        SolverConfig(dt=1e-3, t_end=1.0, stabilization=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(dt=1e-3, t_end=1.0, scheme="leapfrog")


def test_rk4_bound_enforced(params):
    g = Grid.cube(2, 32)
    bound = rk4_dt_bound(g, params, SolverConfig(dt=1.0, t_end=1.0, scheme="rk4"))
    kmax = g.kmax
    assert bound == pytest.approx(0.5 * 2.78 / (params.m_bar * kmax**6 + params.nu_bar * kmax**2))
    check_config(g, params, SolverConfig(dt=0.9 * bound, t_end=1.0, scheme="rk4"))
    with pytest.raises(SolverConfigError):
        check_config(g, params, SolverConfig(dt=1.1 * bound, t_end=1.0, scheme="rk4"))


def test_single_mode_amplification():
    # linear regime: phi_hat^{n+1}/phi_hat^n = (1/dt + lam + m k^6) / (1/dt + m k^6)
    g = Grid.cube(2, 32)
    x, _ = g.coords()
    k, eta, m, dt, eps = 2, -0.5, 0.7, 1e-2, 1e-7
    p = ModelParams(eta=eta, mobility=CoefficientLaw.constant(m))
    s0 = PhaseState(0.0, Field(g, eps * np.cos(k * x)), VectorField.zeros(g)).refresh(p)
    s1 = step(s0, p, SolverConfig(dt=dt, t_end=1.0))
    lam = -m * k**2 * (k**2 - 1 + eta) * (k**2 - 1)
    expected = (1 / dt + lam + m * k**6) / (1 / dt + m * k**6)
    ratio = s1.phi.data[0, 0] / s0.phi.data[0, 0]
    assert ratio == pytest.approx(expected, rel=1e-9)


def test_rest_state_is_fixed(grid2, params):
    s0 = PhaseState.at_rest(grid2, Field.constant(grid2, 1.0), params)
    s1 = step(s0, params, SolverConfig(dt=1e-2, t_end=1.0))
    assert np.array_equal(s1.phi.data, s0.phi.data)
    assert np.abs(s1.u.data).max() == 0.0


@pytest.mark.parametrize("scheme", ["semi-implicit-euler", "rk4"])
def test_step_invariants(grid2, variable_params, scheme):
    p = variable_params
    s = galerkin_project(smooth_state(grid2, p), p)
    cfg = SolverConfig(dt=1e-3, t_end=1.0, scheme=scheme)
    if scheme == "rk4":
        cfg.dt = 0.9 * rk4_dt_bound(grid2, p, cfg)
    mass0 = s.phi.mean()
    for _ in range(10):
        s = step(s, p, cfg)
        assert np.abs(div(s.u).physical().data).max() <= 1e-11
        assert abs(s.phi.mean() - mass0) <= 1e-14
        assert in_galerkin_space(s)
        assert s.caches_valid


def test_energy_decreases(grid2, variable_params):
    p = variable_params
    s = galerkin_project(smooth_state(grid2, p, amp=0.2, uamp=0.2), p)
    cfg = SolverConfig(dt=1e-4, t_end=1.0)
    e = [total_energy(s, p)]
    for _ in range(30):
        s = step(s, p, cfg)
        e.append(total_energy(s, p))
    assert all(b < a for a, b in zip(e, e[1:]))


def test_step_is_deterministic(grid2, params):
    s = galerkin_project(smooth_state(grid2, params), params)
    cfg = SolverConfig(dt=1e-3, t_end=1.0)
    a, b = step(s, params, cfg), step(s.copy(), params, cfg)
    assert np.array_equal(a.phi.data, b.phi.data)
    assert np.array_equal(a.u.data, b.u.data)


def test_schemes_converge_to_each_other(grid2):
    # Euler is first order, so its distance to the RK4 solution halves with dt
    p = ModelParams(eta=-0.5, mobility=CoefficientLaw.constant(0.05), viscosity=CoefficientLaw.constant(0.5))
    s0 = galerkin_project(smooth_state(grid2, p), p)
    diffs = []
    for dt in (2e-5, 1e-5):
        a = run(s0, p, SolverConfig(dt=dt, t_end=1e-3))
        b = run(s0, p, SolverConfig(dt=dt, t_end=1e-3, scheme="rk4"))
        diffs.append(np.abs(a.phi.data - b.phi.data).max())
    assert 1.8 <= diffs[0] / diffs[1] <= 2.2


def test_galerkin_projection(grid2, params, rng):
    raw = PhaseState(0.0, Field(grid2, rng.standard_normal(grid2.shape)),
                     VectorField(grid2, rng.standard_normal((2, *grid2.shape))))
    assert not in_galerkin_space(raw)
    proj = galerkin_project(raw, params)
    assert in_galerkin_space(proj)
    again = galerkin_project(proj, params)
    np.testing.assert_allclose(again.phi.data, proj.phi.data, atol=1e-15)
    assert np.abs(div(proj.u).physical().data).max() < 1e-12


def test_run_records_and_final_time(grid2, params):
    s0 = PhaseState.at_rest(grid2, Field.constant(grid2, 1.0), params)
    sinks = Sinks(record_every=3)
    final = run(s0, params, SolverConfig(dt=0.1, t_end=0.95), sinks)
    assert final.t == pytest.approx(0.95, abs=1e-14)
    times = [r.t for r in sinks.records]
    # initial record, every third step, and the shortened final step
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(0.95)
    assert len(times) == 1 + 3 + 1


def test_run_snapshots(grid2, params):
    s0 = PhaseState.at_rest(grid2, Field.constant(grid2, 1.0), params)
    seen = []
    sinks = Sinks(on_snapshot=lambda s, i: seen.append((round(s.t, 12), i)), snapshot_times=[0.0, 0.3, 0.5])
    run(s0, params, SolverConfig(dt=0.1, t_end=0.5), sinks)
    assert seen == [(0.0, 0), (0.3, 3), (0.5, 5)]


def test_cfl_clamp(caplog):
    g = Grid.cube(2, 16)
    p = ModelParams(eta=1.0)
    x, y = g.coords()
    u = VectorField(g, np.stack([100 * np.sin(y), np.zeros(g.shape)]))
    s0 = PhaseState(0.0, Field.constant(g, 1.0), u).refresh(p)
    cfg = SolverConfig(dt=0.1, t_end=0.01, cfl_safety=0.5)
    assert stable_dt(s0, p, cfg) == pytest.approx(0.5 * (2 * math.pi / 16) / 100)
    with caplog.at_level(logging.WARNING):
        run(s0, p, cfg)
    assert "clamping dt" in caplog.text


def test_stable_dt_at_rest(grid2, params):
    s0 = PhaseState.at_rest(grid2, Field.constant(grid2, 1.0), params)
    cfg = SolverConfig(dt=0.25, t_end=1.0)
    assert stable_dt(s0, params, cfg) == 0.25


def test_blowup_detected():
    g = Grid.cube(2, 32)
    p = ModelParams(eta=-1e4)
    rng = np.random.default_rng(3)
    s0 = PhaseState(0.0, random_smooth_field(g, rng, 5.0, 0.1), random_solenoidal_field(g, rng, 5.0, 0.1))
    sinks = Sinks(collector=DiagnosticsCollector(p, lp_every=1))
    with pytest.raises(BlowUpError) as info:
        run(s0, p, SolverConfig(dt=1e-3, t_end=1.0), sinks)
    assert info.value.monitor
    assert sinks.records[-1].flagged


def test_forcing_changes_mean(grid2, params):
    s0 = PhaseState.at_rest(grid2, Field.constant(grid2, 0.0), params)
    forcing = ForcingSpec(g_phi=lambda t: np.full(grid2.shape, 2.0), name="const")
    s1 = run(s0, params, SolverConfig(dt=0.01, t_end=0.1, forcing=forcing))
    assert s1.phi.mean() == pytest.approx(0.2, rel=1e-12)


@given(st.integers(0, 2**16))
def test_mass_conservation_property(seed):
    g = Grid.cube(2, 16)
    p = ModelParams(eta=-1.0, mobility=CoefficientLaw.bounded_smooth(0.5, 0.3, 0.2))
    s = galerkin_project(smooth_state(g, p, seed=seed), p)
    m0 = s.phi.mean()
    cfg = SolverConfig(dt=1e-3, t_end=1.0)
    for _ in range(3):
        s = step(s, p, cfg)
    assert abs(s.phi.mean() - m0) <= 1e-14
