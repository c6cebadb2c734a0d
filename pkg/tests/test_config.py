import math
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from fchflow.config import (
    ConfigError, MissingKeyError, NonPositiveFloorError, NonPositiveTimeStepError,
    OddResolutionError, RunConfig, TwinBlock, UnknownKeyError, config_from_dict, config_to_dict,
    initial_state, load_config, parse_config, random_perturbation, serialize_config,
    single_mode, tanh_stripe, taylor_green, twin_perturbation,
)
from fchflow.model import ModelParams
from fchflow.spectral import Grid, div

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def test_minimal_config():
    cfg = parse_config("model: {eta: -1}")
    assert isinstance(cfg, RunConfig)
    assert cfg.model.eta == -1.0
    assert cfg.grid.n == 64 and cfg.grid.dim == 2
    assert cfg.grid.L == pytest.approx(2 * math.pi)
    assert cfg.twin is None
    assert cfg.solver.build().dt == 1e-4


def test_missing_eta():
    for text in ("grid: {n: 16}", "model: {}", ""):
        with pytest.raises(MissingKeyError) as info:
            parse_config(text)
        assert str(info.value) == "model.eta required"


def test_unknown_key_is_named():
    with pytest.raises(UnknownKeyError) as info:
        parse_config("model: {eta: 1, etaa: 2}")
    assert info.value.key == "model.etaa"
    with pytest.raises(UnknownKeyError):
        parse_config("model: {eta: 1}\nsolvr: {dt: 1}")


@pytest.mark.parametrize("law", [
    "{kind: constant, value: 0}",
    "{kind: constant, value: -1}",
    "{kind: bounded_smooth, base: 0.5, amplitude: 0.1, floor: 0}",
])
def test_non_positive_floor(law):
    with pytest.raises(NonPositiveFloorError):
        parse_config(f"model: {{eta: 1, mobility: {law}}}")


def test_odd_resolution():
    with pytest.raises(OddResolutionError):
        parse_config("grid: {n: 33}\nmodel: {eta: 1}")


@pytest.mark.parametrize("dt", ["0", "-1e-3"])
def test_non_positive_dt(dt):
    with pytest.raises(NonPositiveTimeStepError):
        parse_config(f"model: {{eta: 1}}\nsolver: {{dt: {dt}}}")


def test_other_validation():
    with pytest.raises(ConfigError):
        parse_config("model: {eta: 1}\nsolver: {scheme: leapfrog}")
    with pytest.raises(ConfigError):
        parse_config("model: {eta: 1}\nic: {phi: checkerboard}")
    with pytest.raises(ConfigError):
        parse_config("model: {eta: 1}\nsolver: {forcing: unknown}")
    with pytest.raises(ConfigError):
        parse_config("model: {eta: [1")
    with pytest.raises(ConfigError):
        parse_config("model: {eta: yes}")


def test_pi_lengths():
    assert parse_config("grid: {L: 2pi}\nmodel: {eta: 1}").grid.L == pytest.approx(2 * math.pi)
    assert parse_config("grid: {L: pi}\nmodel: {eta: 1}").grid.L == pytest.approx(math.pi)


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path):
    cfg = load_config(path)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert config_to_dict(again) == config_to_dict(cfg)


def test_round_trip_with_twin():
    cfg = parse_config("model: {eta: -1}\ntwin: {amplitude: 1.0e-6, p: 6, q: 4}")
    d = yaml.safe_load(serialize_config(cfg))
    assert d["twin"]["p"] == 6.0
    assert config_from_dict(d) == cfg


# -- initial conditions --------------------------------------------------------

@given(st.integers(0, 2**20), st.floats(-0.8, 0.8), st.floats(0.01, 1.0))
def test_random_perturbation_mean_and_amplitude(seed, mean, amp):
    g = Grid.cube(2, 16)
    f = random_perturbation(g, seed, mean, amp, bandlimit=2.0)
    assert f.mean() == pytest.approx(mean, abs=1e-14)
    # rescaled to max |pert| = amp before the mean shift
    assert np.abs(f.data - mean).max() <= 2 * amp


def test_random_perturbation_is_seeded_and_band_limited(grid2):
    a = random_perturbation(grid2, 5, 0.1, 0.2, 2.0)
    b = random_perturbation(grid2, 5, 0.1, 0.2, 2.0)
    c = random_perturbation(grid2, 6, 0.1, 0.2, 2.0)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    k = np.abs(grid2.wavenumbers[0])
    assert np.abs(a.coefficients[k > 2, :]).max() < 1e-15


def test_single_mode_and_stripe(grid2):
    f = single_mode(grid2, 0.2, 0.5, [2, 1])
    x, y = grid2.coords()
    np.testing.assert_allclose(f.data, 0.2 + 0.5 * np.cos(2 * x + y), atol=1e-14)
    s = tanh_stripe(grid2, 0.3, mean=-0.1)
    assert s.mean() == pytest.approx(-0.1, abs=1e-14)
    # plateaus at -1 and +1 (shifted), saturated away from the interfaces
    assert s.data.max() - s.data.min() == pytest.approx(2.0, abs=1e-3)
    assert np.abs(s.data[:, 0] - s.data[:, 5]).max() == 0.0


def test_taylor_green_generator(grid2):
    u = taylor_green(grid2, 1.5)
    x, y = grid2.coords()
    np.testing.assert_allclose(u.data[0], 1.5 * np.cos(x) * np.sin(y), atol=1e-15)
    assert np.abs(div(u).physical().data).max() < 1e-13


def test_initial_state_from_config():
    cfg = load_config(CONFIG_DIR / "twin.yaml")
    p = cfg.model.build()
    s = initial_state(cfg, params=p)
    assert s.caches_valid
    assert s.phi.mean() == pytest.approx(cfg.ic.mean, abs=1e-14)
    assert np.abs(div(s.u).physical().data).max() < 1e-12
    assert np.sqrt(np.sum(s.u.data**2, axis=0)).max() > 0


def test_twin_perturbation_scaling(grid2):
    d = twin_perturbation(grid2, TwinBlock(amplitude=1e-8, seed=3, bandlimit=3.0))
    lap = grid2.ksq * d.coefficients
    assert math.sqrt(grid2.volume * np.sum(np.abs(lap) ** 2)) == pytest.approx(1e-8, rel=1e-12)
    assert abs(d.mean()) < 1e-24
    zero = twin_perturbation(grid2, TwinBlock(amplitude=0.0))
    assert np.abs(zero.data).max() == 0.0


def test_model_block_builds_params():
    cfg = parse_config("model: {eta: 0.5, viscosity: {kind: constant, value: 0.2}, nu_bar: 0.4}")
    p = cfg.model.build()
    assert isinstance(p, ModelParams)
    assert p.nu_bar == 0.4 and p.eta == 0.5
