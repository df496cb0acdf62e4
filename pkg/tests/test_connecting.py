import numpy as np
import pytest
from hypothesis import given, strategies as st

from twistlab.connecting import (ModifiedActionSpec, build_mu, connecting_orbit,
                                 detect_instability, mane_neighborhood, transition_chain)
from twistlab.errors import ChainStalled, NoGap

NX = 256


def test_build_mu_support_and_mass():
    mu = build_mu((0.4, 0.6), 0.02)
    assert mu.support == pytest.approx((0.42, 0.58), abs=1e-15)
    x = np.linspace(0, 1, 200_001)
    assert np.trapezoid(mu(x), x) == pytest.approx(0.02, abs=1e-12)
    assert np.all(mu(x[(x < 0.42) | (x > 0.58)]) == 0.0)
    assert np.all(mu.clearance(x[(x < 0.42) | (x > 0.58)]) >= 0.0)
    assert mu.clearance(0.5) == pytest.approx(-0.08)
    assert np.all(build_mu((0.4, 0.6), 0.0)(x) == 0.0)
    with pytest.raises(ValueError):
        build_mu((0.6, 0.4), 0.01)


def test_mu_derivative_and_primitive():
    mu = build_mu((0.7, 1.3), -0.03)
    x = np.linspace(-1.0, 2.0, 3001)
    h = 1e-6
    assert np.allclose((mu(x + h) - mu(x - h)) / (2 * h), mu.derivative(x), atol=1e-4)
    assert np.allclose((mu.primitive(x + h) - mu.primitive(x - h)) / (2 * h), mu(x), atol=1e-6)
    assert np.allclose(mu.primitive(x + 1) - mu.primitive(x), -0.03, atol=1e-14)
    assert mu.primitive(mu.lo) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(0, 0.9), st.floats(0.02, 0.5), st.floats(-1, 1), st.floats(-0.05, 0.05))
def test_mu_translation_equivariance(lo, w, s, amount):
    a = build_mu((lo, lo + w), amount)
    b = build_mu((lo + s, lo + w + s), amount)
    x = np.linspace(0, 1, 101)
    assert np.allclose(a(x), b(x + s), atol=1e-9 * (1 + abs(a(x)).max()))


def test_rho_window():
    spec = ModifiedActionSpec(0.0, 0.01, build_mu((0.1, 0.2), 0.01), rho_delta=1, T0=20, T1=20)
    r = spec.rho()
    assert len(r) == 40 and np.all(r[:21] == 0) and np.all(r[21:] == 1)
    spec.rho_delta = 4
    assert spec.rho()[22] == pytest.approx(0.5)


def test_atlas_integrable_is_empty(std0):
    atlas = detect_instability(std0, np.linspace(-0.5, 0.5, 5), nx=128, nt=64)
    assert atlas.intervals == [] and not atlas.contains(-0.1, 0.1)
    with pytest.raises(ValueError):
        detect_instability(std0, [0.1, 0.0])


def test_atlas_strong_chaos_covers_grid(std):
    atlas = detect_instability(std, [-0.1, 0.0, 0.1], nx=128, nt=64, refine=False)
    assert atlas.intervals == [(-0.1, 0.1)]
    assert atlas.evidence[0]["notes"] == ["GRID_EDGE", "GRID_EDGE"]
    assert atlas.contains(-0.05, 0.05) and not atlas.contains(-0.2, 0.0)


def test_mane_no_gap_integrable(std0):
    with pytest.raises(NoGap):
        mane_neighborhood(std0, 0.0, 0.02, nx=NX)


def test_mane_gap_standard(std):
    U = mane_neighborhood(std, 0.0, 0.02, nx=NX)
    assert U.contains(0.75)
    lo, hi = U.gaps[0]
    assert hi - lo > 0.5 and not U.contains(0.5 * (lo + hi))
    assert np.all(U.contains(U.x[U.mask]))


def test_zero_mu_link_is_calibrated(std):
    spec = ModifiedActionSpec(0.0, 0.0, build_mu((0.0, 0.5), 0.0), T0=20, T1=20)
    orb = connecting_orbit(std, spec, 10.0 / NX, nx=NX)
    assert orb.el_residual < 1e-9
    assert abs(orb.action) < 1e-8
    assert max(orb.boundary_distances) <= 10.0 / NX
    assert np.isinf(orb.clearance)
    with pytest.raises(ValueError):
        connecting_orbit(std, ModifiedActionSpec(0.0, 0.0, spec.mu, T0=10), 0.1, nx=NX)


@pytest.mark.parametrize("c1,c2", [(0.0, 0.02), (0.02, 0.0)])
def test_short_chain(std, c1, c2):
    log = []
    chain = transition_chain(std, c1, c2, max_step=1.0, T0=20, T1=20, nx=NX, log=log)
    assert chain[0].c == c1 and chain[-1].c_prime == c2
    for link in chain:
        o = link.orbit
        assert o.el_residual < 1e-6 and o.clearance > 0
        assert max(o.boundary_distances) <= 10.0 / NX
    assert log[-1][2] == "OK"
    assert transition_chain(std, c1, c1) == []


def test_chain_stalls_without_gap(std0):
    log = []
    with pytest.raises(ChainStalled):
        transition_chain(std0, 0.0, 0.02, max_step=0.02, dc_min=0.01, nx=128, log=log)
    assert [e[2] for e in log] == ["NO_GAP", "NO_GAP"]
