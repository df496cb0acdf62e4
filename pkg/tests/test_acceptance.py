"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in RESULTS and repeated in the terminal summary
(see conftest.py).  Run alone with ``python3 scripts/run_acceptance.py``.
"""

import time

import numpy as np
import pytest

from twistlab.aubry import (alpha_from_beta, beta, build_u_pq, farey, flat_edges,
                            graph_lipschitz, minimal_periodic, splitting_point,
                            translates_cross)
from twistlab.characteristics import Characteristic, integrate_gc, integrate_many, rotation_number
from twistlab.connecting import detect_instability, transition_chain
from twistlab.regularity import holder_check, ordering_check, sigma_of_c
from twistlab.weakkam import (LaxOleinik, alpha_prime, discrete_weak_kam, pinned_batch,
                              solve_weak_kam, solve_weak_kam_batch)

from conftest import EPS

pytestmark = pytest.mark.slow

NX, NT = 512, 256
DX = 1.0 / NX
RESULTS = {}


def _report(n, ok, detail, t0):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  [{time.perf_counter() - t0:.0f} s]"
    RESULTS[n] = line
    print(line)
    assert ok, line


def test_criterion_1_integrable_exactness(std0):
    t0 = time.perf_counter()
    cs = [-1.0, -0.5, 0.0, 0.5, 1.0]
    sols = solve_weak_kam_batch(std0, cs, NX, NT)
    da = max(abs(s.alpha - 0.5 * s.c ** 2) for s in sols)
    du = max(float(np.ptp(s.u.values)) for s in sols)
    drho = 0.0
    for s in sols:
        chi = integrate_gc(s, 0.1, 0.0, 20.0)
        drho = max(drho, abs(rotation_number(chi, 20) - s.c))
    prof = beta(std0, 40)
    db = float(np.max(np.abs(prof.beta - 0.5 * prof.h ** 2)))
    ok = da <= 1e-5 and db <= 1e-9 and du <= 1e-6 and drho <= 1e-6
    _report(1, ok, f"alpha err {da:.1e}, beta err {db:.1e} ({len(prof.h)} samples), "
                   f"u spread {du:.1e}, rho err {drho:.1e}", t0)


@pytest.mark.parametrize("eps", [0.0, EPS])
def test_criterion_2_duality(eps, std0, std):
    t0 = time.perf_counter()
    sys_ = std0 if eps == 0.0 else std
    prof = beta(sys_, 20)
    cs = np.linspace(-0.8, 0.8, 9)
    alphas = np.array([discrete_weak_kam(sys_, c, NX).alpha for c in cs])
    gap = alphas[:, None] + prof.beta[None, :] - cs[:, None] * prof.h[None, :]
    lo = float(gap.min())
    eq = float(np.max(np.abs(gap.min(axis=1))))
    ok = lo >= -1e-6 and eq <= 1e-3
    _report(f"2 (eps={eps:.4f})", ok, f"min gap {lo:.2e}, equality defect {eq:.2e}", t0)


def test_criterion_3_flat_structure(std):
    t0 = time.perf_counter()
    fe = flat_edges(std, 0, 1)
    c0 = fe.c_plus
    sym = abs(fe.c_plus + fe.c_minus)
    sol = solve_weak_kam(std, 0.0, NX, NT)
    atlas = detect_instability(std, np.linspace(-0.5, 0.5, 11))
    covered = atlas.contains(-c0, c0)
    cg = np.arange(0.0, 0.5, 1e-4)
    a = alpha_from_beta(beta(std, 20), cg).alpha
    edge = float(cg[np.flatnonzero(a - a[0] > 1e-12)[0] - 1])
    ok = c0 > 0 and sym <= 1e-3 and sol.singular_mask.any() and covered and abs(edge - c0) <= 1e-2
    _report(3, ok, f"c0 {c0:.6f}, asymmetry {sym:.1e}, singular nodes at c=0 "
                   f"{int(sol.singular_mask[:, 0].sum())}, atlas {atlas.intervals}, "
                   f"alpha-flat edge {edge:.4f}", t0)


def test_criterion_4_rotation_matches_alpha_prime(std):
    t0 = time.perf_counter()
    cs = np.array([-0.7, -0.5, -0.4, -0.2, 0.0, 0.1, 0.2, 0.3, 0.4, 0.45, 0.5, 0.7])
    dc = 0.01
    allc = np.unique(np.round(np.concatenate([cs - dc, cs, cs + dc]), 12))
    sols = {s.c: s for s in solve_weak_kam_batch(std, allc, NX, NT)}
    worst, complete = 0.0, True
    for c in cs:
        trio = [sols[float(np.round(c + k * dc, 12))] for k in (-1, 0, 1)]
        ap = alpha_prime([s.c for s in trio], [s.alpha for s in trio], c)
        sol = trio[1]
        sing = np.flatnonzero(sol.singular_mask[:, 0])
        starts = [0.0, 0.2, 0.5, 0.8] + ([sing[0] / NX] if len(sing) else [0.9])
        S, X, F = integrate_many(sol, starts, 0.0, 200.0)
        complete &= bool(S[-1] >= 200.0 - 1e-9 and np.all(np.isfinite(X)))
        for j in range(len(starts)):
            chi = Characteristic(0.0, S, X[:, j], F[:, j], S[1] - S[0])
            worst = max(worst, abs(rotation_number(chi, 200) - ap))
    ok = worst <= 2e-2 and complete
    _report(4, ok, f"max |rho - alpha'| {worst:.1e} over {len(cs)} c x 5 starts, "
                   f"complete {complete}", t0)


def test_criterion_5_holder(std0, std):
    t0 = time.perf_counter()
    cs = np.round(np.linspace(-0.4, 0.4, 11), 12)
    sweep = pinned_batch(std, cs.tolist(), NX, NT)
    table = sigma_of_c(sweep)
    rep = holder_check(table, sweep, pairs=55)
    strict = bool(np.all(np.diff(table.sigma) > 0))
    sweep0 = solve_weak_kam_batch(std0, cs, NX, NT)
    rep0 = holder_check(sigma_of_c(sweep0), sweep0, pairs=55, grid_slack=1e-12)
    ok = rep.n_pairs >= 50 and rep.passed and strict and rep0.passed
    _report(5, ok, f"max R {rep.max_ratio:.4f} (limit {1 + rep.grid_slack:.4f}, "
                   f"{rep.n_pairs} pairs), sigma strictly increasing {strict}, "
                   f"eps=0 max R {rep0.max_ratio:.15f}", t0)


def test_criterion_6_splitting_structure(std):
    t0 = time.perf_counter()
    r = build_u_pq(std, 0, 1, n=NX)
    dmin = float(np.min(np.diff(r.u_plus - r.u_minus)))
    zs = np.array([splitting_point(std, 0, 1, c) for c in np.linspace(-0.3, 0.3, 9)])
    mono = bool(np.all(np.diff(zs) >= 0))
    fe = flat_edges(std, 0, 1)
    x0 = float(np.mod(minimal_periodic(std, 0, 1).x[0], 1.0))
    d_lo = abs(splitting_point(std, 0, 1, fe.c_minus + 1e-4) - x0)
    d_hi = abs(splitting_point(std, 0, 1, fe.c_plus - 1e-4) - (x0 + 1.0))
    ok = dmin >= -1e-9 and mono and max(d_lo, d_hi) <= 5 * DX
    _report(6, ok, f"min forward difference {dmin:.1e}, splitting monotone {mono}, "
                   f"edge distances ({d_lo:.1e}, {d_hi:.1e}) vs {5 * DX:.1e}", t0)


def test_criterion_7_transition_chain(std):
    t0 = time.perf_counter()
    chain = transition_chain(std, -0.05, 0.05, nx=NX)
    bt = 10 * DX
    worst_el = max(l.orbit.el_residual for l in chain)
    min_clear = min(l.orbit.clearance for l in chain)
    worst_bd = max(max(l.orbit.boundary_distances) for l in chain)
    ok = len(chain) > 0 and worst_el < 1e-6 and min_clear > 0 and worst_bd < bt
    _report(7, ok, f"{len(chain)} links, max EL residual {worst_el:.1e}, min clearance "
                   f"{min_clear:.3f}, max boundary distance {worst_bd:.1e}", t0)


def test_criterion_8_oracle_equivalence(std0, std):
    t0 = time.perf_counter()
    cs = [-1.0, -0.5, 0.0, 0.5, 1.0]
    cont = solve_weak_kam_batch(std0, cs, NX, NT)
    da = du = 0.0
    for c, sc in zip(cs, cont):
        sd = discrete_weak_kam(std0, c, NX)
        da = max(da, abs(sd.alpha - sc.alpha))
        du = max(du, 0.5 * float(np.ptp(sd.u.values[:, 0] - sc.u.values[:, 0])))
    x = np.linspace(0.0, 1.0, 2_000_001)
    scan = float(x[np.argmin(std.h(x, x))])
    found = float(np.mod(minimal_periodic(std, 0, 1).x[0], 1.0))
    dx_fp = abs(scan - found)
    ok = da <= 5e-3 and du <= 5e-3 and dx_fp <= 1e-5
    _report(8, ok, f"alpha diff {da:.1e}, u diff {du:.1e}, fixed point {found:.8f} "
                   f"vs scan {scan:.8f}", t0)


def _invariants(sys_, c_pair):
    """Structural checks on one system; returns a dict of named booleans and numbers."""
    out = {}
    nx, nt = 256, 128
    sol = solve_weak_kam(sys_, c_pair[0], nx, nt)
    U = sol.u.values
    d2 = np.roll(U, -1, 0) + np.roll(U, 1, 0) - 2 * U
    m = sol.singular_mask
    out["semiconcavity"] = bool(np.max(d2) <= sol.semiconcavity_C * sol.dx ** 2 + 1e-9
                                and np.all(sol.p_left.values[m] >= sol.p_right.values[m]))
    # domination on random node pairs one time step apart
    rng = np.random.default_rng(0)
    i, k = rng.integers(0, nx, 2000), rng.integers(0, nt, 2000)
    reach = int(sys_.window * sol.dt * nx)
    j = i + rng.integers(-reach, reach + 1, 2000)
    xs, ys = i / nx, j / nx
    cost = (sol.dt * sys_.L(xs, (ys - xs) / sol.dt, k * sol.dt) - sol.c * (ys - xs)
            + sol.alpha * sol.dt)
    lhs = U[j % nx, (k + 1) % nt] - U[i, k]
    out["domination"] = bool(np.max(lhs - cost) <= 1e-8)
    # operator: order preserving and commuting with constants
    op = LaxOleinik(sys_, [c_pair[0]], 64, 8)
    u = rng.uniform(-1, 1, (20, 64))
    bump = rng.uniform(0, 1, (20, 64))
    Tu, Tw, Ta = op(u), op(u + bump), op(u + 0.7)
    out["monotone"] = bool(np.all(Tu <= Tw + 1e-12) and np.allclose(Ta, Tu + 0.7, atol=1e-12))
    # minimal configurations: non-crossing and a uniform Lipschitz graph bound
    confs = [minimal_periodic(sys_, f.numerator, f.denominator) for f in farey(6, 0.0, 1.0)]
    out["non_crossing"] = not any(translates_cross(X) for X in confs)
    grid = np.linspace(0, 1, 1001)
    h11, h12, h22 = sys_.d2h(grid, grid + 0.3)
    # with h12 = -1, momentum jumps are bounded by max(|h11|, |h22|) times the position jump
    bound = float(max(np.max(np.abs(h11)), np.max(np.abs(h22))))
    lip = max(graph_lipschitz(sys_, X) for X in confs)
    out["lipschitz"] = bool(np.allclose(h12, -1.0) and lip <= bound + 1e-9)
    out["lipschitz_const"] = (lip, bound)
    # ordering corollary across two classes with distinct alpha'
    dc = 0.01
    aps, ends = [], []
    for c in c_pair:
        trio = solve_weak_kam_batch(sys_, [c - dc, c, c + dc], nx, nt)
        aps.append(alpha_prime([s.c for s in trio], [s.alpha for s in trio], c))
        ends.append(trio[1])
    rep = ordering_check(ends[0], ends[1], aps[0], aps[1])
    out["ordering"] = rep.passed
    out["ordering_gap"] = rep.min_gap
    return out


def test_criterion_9_structural_invariants(std, fourier):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, sys_, pair in (("standard", std, (0.2, 0.7)), ("fourier", fourier, (-0.6, 0.6))):
        r = _invariants(sys_, pair)
        flags = [k for k in ("semiconcavity", "domination", "monotone", "non_crossing",
                             "lipschitz", "ordering") if not r[k]]
        ok &= not flags
        parts.append(f"{name}: {'all green' if not flags else 'failed ' + ','.join(flags)} "
                     f"(graph Lipschitz {r['lipschitz_const'][0]:.2f} <= "
                     f"{r['lipschitz_const'][1]:.2f}, ordering gap {r['ordering_gap']:.3f})")
    _report(9, ok, "; ".join(parts), t0)
