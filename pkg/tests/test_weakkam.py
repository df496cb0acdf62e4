import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twistlab.aubry import beta
from twistlab.errors import NoConvergence
from twistlab.systems import standard_map_family
from twistlab.weakkam import (LaxOleinik, aubry_set_estimate, discrete_weak_kam, hj_residual,
                              lax_oleinik_step, peierls_barrier, pinned_solution,
                              semiconcavity_constant, solve_weak_kam, superdifferential)

from conftest import EPS

NX = 64
rows = arrays(np.float64, NX, elements=st.floats(-1, 1))


def test_lax_oleinik_step_integrable(std0):
    z = np.zeros(128)
    assert np.max(np.abs(lax_oleinik_step(std0, z, 0.0, 0.0, 1 / 256))) < 1e-15
    out = lax_oleinik_step(std0, z, 0.5, 0.0, 1 / 256)
    assert np.allclose(out, -0.125 / 256, atol=1e-15)


@pytest.mark.parametrize("backend", ["continuous", "discrete"])
@given(u=rows, bump=arrays(np.float64, NX, elements=st.floats(0, 1)),
       a=st.floats(-5, 5), c=st.floats(-0.6, 0.6))
def test_operator_monotone_and_commutes_with_constants(backend, u, bump, a, c):
    s = standard_map_family(EPS)
    op = LaxOleinik(s, [c], NX, 8, backend)
    Tu = op(u[None])[0]
    Tw = op((u + bump)[None])[0]
    assert np.all(Tu <= Tw + 1e-12)
    assert np.allclose(op((u + a)[None])[0], Tu + a, atol=1e-12, rtol=0)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0.1, 1)), min_size=1, max_size=4))
def test_step_keeps_semiconcavity(bumps):
    # min of smooth bumps -w sin^2(pi (x - a)): semiconcave with constant 2 pi^2 max w
    s = standard_map_family(EPS)
    n = 256
    x = np.arange(n) / n
    u = np.min([-w * np.sin(np.pi * (x - a)) ** 2 for a, w in bumps], axis=0)
    c_in = semiconcavity_constant(u[:, None])
    assert c_in <= 2 * np.pi ** 2 * max(w for _, w in bumps) + 1e-9
    dt = 1 / 64
    t = np.linspace(0, 1, 257)
    # the step adds dt * potential, whose second derivative is bounded by eps * 2 pi * max W
    pot2 = EPS * 2 * np.pi * np.max(s.potential(0.25, t) / s.kick(0.25))
    out = lax_oleinik_step(s, u, 0.1, 0.0, dt)
    assert semiconcavity_constant(out[:, None]) <= c_in + dt * pot2 + 1e-9


def test_integrable_solution(std0):
    sol = solve_weak_kam(std0, 0.5, 512, 256)
    assert sol.alpha == pytest.approx(0.125, abs=1e-6)
    assert not sol.singular_mask.any()
    assert np.ptp(sol.u.values) < 1e-6
    assert hj_residual(sol) < 1e-6
    d = discrete_weak_kam(std0, 0.3, 256)
    assert d.alpha == pytest.approx(0.045, abs=1e-9)


def test_standard_at_zero(std):
    sol = solve_weak_kam(std, 0.0, 256, 128)
    assert sol.alpha == pytest.approx(0.1, abs=1e-6)
    assert sol.singular_mask.any()
    d = discrete_weak_kam(std, 0.0, 512)
    prof = beta(std, 2)
    assert d.alpha == pytest.approx(-prof.beta[prof.h == 0][0], abs=1e-6)
    assert d.singular_mask.any()
    assert discrete_weak_kam(std, 0.2, 512).singular_mask.any()


def test_solution_invariants(std):
    sol = solve_weak_kam(std, 0.2, 256, 128)
    U = sol.u.values
    d2 = np.roll(U, -1, 0) + np.roll(U, 1, 0) - 2 * U
    assert np.max(d2) <= sol.semiconcavity_C * sol.dx ** 2 + 1e-9
    m = sol.singular_mask
    assert np.all(sol.p_left.values[m] >= sol.p_right.values[m])
    assert np.all(np.isfinite(U))
    assert sol.lipschitz_K < sol.sys.v_max


def test_domination_random_pairs(std):
    c = 0.2
    sol = solve_weak_kam(std, c, 256, 128)
    rng = np.random.default_rng(0)
    nx, nt = sol.nx, sol.nt
    i, j, k = rng.integers(0, nx, 1000), rng.integers(0, nx, 1000), rng.integers(0, nt, 1000)
    d = (j - i) / nx
    d = np.clip(d - np.round(d), -std.window * sol.dt + c * sol.dt, std.window * sol.dt)
    j = np.rint((i / nx + d) * nx).astype(int)
    xs, ys = i / nx, j / nx
    cost = (sol.dt * std.L(xs, (ys - xs) / sol.dt, k * sol.dt) - c * (ys - xs)
            + sol.alpha * sol.dt)
    u = sol.u.values
    lhs = u[j % nx, (k + 1) % nt] - u[i, k]
    # the last row wraps to the first row of the next period
    assert np.max(lhs - cost) <= 1e-8


def test_semiconcavity_does_not_blow_up(std):
    op = LaxOleinik(std, [0.1], 128, 32)
    rng = np.random.default_rng(2)
    u = rng.standard_normal((1, 128)) * 0.01
    consts = []
    for n in range(40):
        u = op(u)
        if n in (9, 19, 39):
            consts.append(semiconcavity_constant(u[0][:, None]))
    assert consts[2] <= 1.5 * consts[0] + 1e-9


def test_no_convergence_reported(std):
    with pytest.raises(NoConvergence):
        solve_weak_kam(std, 0.123, 64, 32, tol=1e-14, max_periods=3)


def test_barrier(std0, std):
    # integrable case: T^n delta_x0 (y) = d(y, x0)^2 / (2 n), so the barrier tends to 0 like 1/n
    b32, b64 = (peierls_barrier(std0, 0.0, 0.25, nx=128, nt=32, periods=n, tol=np.inf)
                for n in (32, 64))
    assert np.max(b32.values) / np.max(b64.values) == pytest.approx(2.0, rel=0.05)
    assert np.max(b64.values) <= 1.1 / (8 * 64)
    b = peierls_barrier(std, 0.0, 0.75, nx=256, backend="discrete")
    assert abs(b.values[192]) < 1e-9
    assert np.all(b.values >= -1e-9)
    # triangle inequality with the one-step cost
    x = b.x
    rng = np.random.default_rng(1)
    z, y = rng.integers(0, 256, 300), rng.integers(0, 256, 300)
    F = std.h(x[z], x[y]) + b.alpha
    assert np.all(b.values[y] <= b.values[z] + F + 1e-9)
    with pytest.raises(ValueError):
        peierls_barrier(std, 0.0, 0.75, periods=4, tail=8)


def test_barriers_within_one_class_differ_by_constant(std):
    b = peierls_barrier(std, 0.0, [0.75, 0.75 + 2 / 256], nx=256, backend="discrete")
    diff = b.values[0] - b.values[1]
    assert np.ptp(diff) < 1e-3


def test_aubry_estimates(std0, std):
    est = aubry_set_estimate(std0, 0.3, nx=64, nt=32)
    assert len(est) == 64
    for c in (0.0, 0.2):
        est = aubry_set_estimate(std, c, nx=256, nt=128)
        assert np.max(np.abs(est.points - 0.75)) < 5 / 256


def test_pinned(std0, std):
    sol = pinned_solution(std0, 0.2, 64, 32)
    assert sol.pin == 0.0 and np.max(np.abs(sol.u.values)) < 1e-9
    sol = pinned_solution(std, 0.0, 256, 128)
    assert sol.pin == pytest.approx(0.75, abs=2 / 256)
    u0 = sol.u.values[:, 0]
    assert u0[int(round(sol.pin * 256))] == 0.0
    # nonnegative up to the Aubry threshold 10 dx^2
    assert np.min(u0) >= -10 / 256 ** 2


def test_superdifferential(std):
    sol = solve_weak_kam(std, 0.0, 256, 128)
    i = np.flatnonzero(sol.singular_mask[:, 0])[0]
    pp, pm, sing = superdifferential(sol, i / 256, 0.0)
    assert sing and pm - pp > 0
    j = np.flatnonzero(~(sol.singular_mask[:, 0] | np.roll(sol.singular_mask[:, 0], 1)))[5]
    pp, pm, sing = superdifferential(sol, (j + 0.5) / 256, 0.0)
    assert pp == pm and not sing
    xs = np.arange(256) / 256
    for x in xs[::7]:
        pp, pm, _ = superdifferential(sol, x, 0.3)
        # second differences are bounded by C dx^2, so p+ - p- <= C dx
        assert pp <= pm + sol.semiconcavity_C * sol.dx + 1e-9


def test_hj_residual_decreases_with_grid(std):
    r = [hj_residual(solve_weak_kam(std, 0.5, n, n // 2)) for n in (128, 256)]
    assert r[1] < r[0]
