import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twistlab.errors import AssumptionViolated
from twistlab.systems import (fourier_family, generic_system, reversed_system,
                              standard_map_family, validate_standing_assumptions)

from conftest import EPS

reals = st.floats(-3, 3, allow_nan=False)


def _map(eps, x, p):
    v = eps * np.cos(2 * np.pi * x)
    return x + p + v, p + v


def test_generating_function_reproduces_map():
    s = standard_map_family(0.3)
    rng = np.random.default_rng(1)
    x, p = rng.random(100), rng.uniform(-1, 1, 100)
    x1, p1 = s.step(x, p)
    xe, pe = _map(0.3, x, p)
    assert np.max(np.abs(x1 - xe)) < 1e-12 and np.max(np.abs(p1 - pe)) < 1e-12
    h1, h2 = s.dh(x, x1)
    assert np.max(np.abs(-h1 - p)) < 1e-12 and np.max(np.abs(h2 - p1)) < 1e-12


def test_integrable_case_is_quadratic(std0):
    x = np.linspace(-1, 1, 7)
    assert np.allclose(std0.h(x, x + 0.3), 0.045)
    assert np.allclose(std0.H(x, 0.4, 0.2), 0.08)
    rep = validate_standing_assumptions(std0)
    assert rep.min_Lvv == 1.0 and rep.min_Hpp == 1.0 and rep.min_twist == 1.0


@pytest.mark.parametrize("name", ["std", "fourier", "std0"])
def test_legendre_duality_random(name, request):
    s = request.getfixturevalue(name)
    rng = np.random.default_rng(7)
    x, v, t = rng.random(1000), rng.uniform(-s.v_max, s.v_max, 1000), rng.random(1000)
    p = s.L_v(x, v, t)
    assert np.max(np.abs(s.L(x, v, t) + s.H(x, p, t) - v * p)) < 1e-9


@given(reals, reals)
def test_lift_periodicity(x, d):
    s = standard_map_family(EPS)
    assert abs(s.h(x + 1, x + d + 1) - s.h(x, x + d)) < 1e-12


@given(reals, st.floats(-2, 2))
def test_twist_margin(x, d):
    s = standard_map_family(EPS)
    assert -s.d2h(x, x + d)[1] >= 0.5


def test_validation_passes_and_fails(std):
    assert validate_standing_assumptions(std).passed
    bad = generic_system("anti", h=lambda x, y: -0.5 * (y - x) ** 2,
                         dh=lambda x, y: (y - x, -(y - x)),
                         d2h=lambda x, y: (-np.ones_like(x), np.ones_like(x), -np.ones_like(x)),
                         L=lambda x, v, t: 0.5 * v ** 2, H=lambda x, p, t: 0.5 * p ** 2)
    with pytest.raises(AssumptionViolated):
        validate_standing_assumptions(bad)
    with pytest.raises(ValueError):
        validate_standing_assumptions(std, grid_density=8)


def test_suspension_kick_has_unit_mass(std):
    t = np.arange(4096) / 4096
    x = 0.3
    # the potential integrates over one period to the kick potential
    assert abs(np.mean(std.potential(x, t)) - std.kick(x)) < 1e-12


def test_reversed_swaps_arguments(std):
    r = reversed_system(std)
    x, y = 0.13, 0.71
    assert r.h(x, y) == pytest.approx(std.h(y, x), abs=1e-15)
    assert reversed_system(r).h(x, y) == pytest.approx(std.h(x, y), abs=1e-15)


def test_fourier_matches_standard():
    a = fourier_family(EPS, v_cos=(1.0,))
    b = standard_map_family(EPS)
    x = np.linspace(0, 1, 11)
    assert np.allclose(a.h(x, x + 0.2), b.h(x, x + 0.2), atol=1e-14)
    assert np.allclose(a.step(x, 0.1)[1], b.step(x, 0.1)[1], atol=1e-14)


def test_negative_eps_rejected():
    with pytest.raises(ValueError):
        standard_map_family(-0.1)
