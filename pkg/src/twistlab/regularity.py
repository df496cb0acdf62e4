"""The sigma parametrization of the solution family and its 1/2-Hoelder check.

sigma(c) is the mean over [0, 1] of u_hat_c - u_hat_0, where the rectified
section u_hat_c(x) = u(x, 0) + c x - u(0, 0) adds back the linear part and
vanishes at 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import AlphaPrimeTie, MonotonicityViolation
from .weakkam import WeakKamSolution


def rectified_solution(sol: WeakKamSolution):
    """(x, u_hat) on the closed deck [0, 1] (nx + 1 points); u_hat(0) = 0 exactly."""
    u0 = sol.u.values[:, 0]
    x = np.arange(sol.nx + 1) / sol.nx
    vals = np.append(u0, u0[0]) - u0[0] + sol.c * x
    return x, vals


@dataclass
class SigmaTable:
    c: np.ndarray
    sigma: np.ndarray
    lipschitz_C: np.ndarray
    ties: list = field(default_factory=list)

    @property
    def entries(self):
        return list(zip(self.c.tolist(), self.sigma.tolist(), self.lipschitz_C.tolist()))

    def c_of_sigma(self, s):
        """Monotone piecewise-linear inverse of sigma."""
        return np.interp(s, self.sigma, self.c)

    def sigma_of(self, c):
        return np.interp(c, self.c, self.sigma)


def sigma_of_c(sweep: Sequence[WeakKamSolution], quad_tol: Optional[float] = None) -> SigmaTable:
    """Trapezoid quadrature of u_hat_c - u_hat_0 over [0, 1] for a sorted sweep containing c = 0.

    Raises MONOTONICITY_VIOLATION when sigma decreases by more than
    ``quad_tol`` (default dx^2) between neighbours; differences below 1e-12
    are reported as ties.
    """
    cs = np.array([s.c for s in sweep])
    if np.any(np.diff(cs) <= 0):
        raise ValueError("sweep must be sorted by strictly increasing c")
    zero = np.flatnonzero(cs == 0.0)
    if len(zero) == 0:
        raise ValueError("sweep must contain c = 0")
    nx = sweep[0].nx
    if any(s.nx != nx for s in sweep):
        raise ValueError("sweep must share one grid")
    quad_tol = 1.0 / nx ** 2 if quad_tol is None else quad_tol
    x, base = rectified_solution(sweep[int(zero[0])])
    sig = np.array([np.trapezoid(rectified_solution(s)[1] - base, x) for s in sweep])
    lip = np.array([s.lipschitz_K + abs(s.c) for s in sweep])
    d = np.diff(sig)
    bad = np.flatnonzero(d < -quad_tol)
    if len(bad):
        i = int(bad[0])
        raise MonotonicityViolation("sigma decreases along the sweep", c=(cs[i], cs[i + 1]),
                                    drop=float(-d[i]))
    ties = [(float(cs[i]), float(cs[i + 1])) for i in np.flatnonzero(np.abs(d) <= 1e-12)]
    return SigmaTable(c=cs, sigma=sig, lipschitz_C=lip, ties=ties)


@dataclass
class HolderReport:
    max_ratio: float
    grid_slack: float
    passed: bool
    pairs: list

    @property
    def n_pairs(self):
        return len(self.pairs)


def holder_ratio(u1, u2, s1, s2, C1, C2) -> float:
    """||u1 - u2||_inf / (sqrt(2 (C1 + C2)) |s1 - s2|^(1/2))."""
    num = float(np.max(np.abs(np.asarray(u1) - np.asarray(u2))))
    den = np.sqrt(2.0 * abs(C1 + C2)) * np.sqrt(abs(s1 - s2))
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den


def holder_check(table: SigmaTable, sweep: Sequence[WeakKamSolution], pairs: int,
                 seed: int = 0, grid_slack: Optional[float] = None) -> HolderReport:
    """Max Hoelder ratio over sampled pairs of the sweep; PASS iff max R <= 1 + grid_slack.

    All pairs are used when there are at most ``pairs`` of them; otherwise a
    seeded sample without replacement.
    """
    if pairs < 10:
        raise ValueError("pairs must be at least 10")
    n = len(sweep)
    allp = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if len(allp) > pairs:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(allp), size=pairs, replace=False))
        allp = [allp[k] for k in pick]
    grid_slack = 10.0 / sweep[0].nx if grid_slack is None else grid_slack
    hats = [rectified_solution(s)[1] for s in sweep]
    out = []
    for i, j in allp:
        R = holder_ratio(hats[i], hats[j], table.sigma[i], table.sigma[j],
                         table.lipschitz_C[i], table.lipschitz_C[j])
        out.append((float(sweep[i].c), float(sweep[j].c), R))
    mx = max(r for _, _, r in out) if out else 0.0
    return HolderReport(max_ratio=float(mx), grid_slack=float(grid_slack),
                        passed=bool(mx <= 1.0 + grid_slack), pairs=out)


@dataclass
class OrderingReport:
    c: float
    c_prime: float
    min_gap: float
    tolerance: float
    passed: bool


def ordering_check(sol_c: WeakKamSolution, sol_cprime: WeakKamSolution,
                   alpha_prime_c: float, alpha_prime_cprime: float,
                   margin: float = 1e-3) -> OrderingReport:
    """min_x [(c + p_right(c)) - (c' + p_left(c'))] on the t = 0 row; PASS iff >= -5 dx.

    The pair is reordered so that the first solution has the larger alpha'.
    Raises ALPHA_PRIME_TIE when the two alpha' differ by less than ``margin``.
    """
    if abs(alpha_prime_c - alpha_prime_cprime) < margin:
        raise AlphaPrimeTie("alpha' values are indistinguishable", c=sol_c.c,
                            c_prime=sol_cprime.c)
    if alpha_prime_c < alpha_prime_cprime:
        sol_c, sol_cprime = sol_cprime, sol_c
    a = sol_c.p_right.values[:, 0] + sol_c.c
    b = sol_cprime.p_left.values[:, 0] + sol_cprime.c
    gap = float(np.min(a - b))
    tol = 5.0 * sol_c.dx
    return OrderingReport(c=sol_c.c, c_prime=sol_cprime.c, min_gap=gap, tolerance=tol,
                          passed=gap >= -tol)


def velocity_order(sol_c: WeakKamSolution, sol_cprime: WeakKamSolution) -> float:
    """min over shared regular nodes at t = 0 of H_p(c) - H_p(c'); callers pass alpha'(c) > alpha'(c')."""
    sys = sol_c.sys
    x = sol_c.u.x
    reg = ~(sol_c.singular_mask[:, 0] | sol_cprime.singular_mask[:, 0])
    reg &= np.roll(reg, 1) & np.roll(reg, -1)
    pa = 0.5 * (sol_c.p_left.values[:, 0] + sol_c.p_right.values[:, 0]) + sol_c.c
    pb = 0.5 * (sol_cprime.p_left.values[:, 0] + sol_cprime.p_right.values[:, 0]) + sol_cprime.c
    va = sys.H_p(x, pa, 0.0)
    vb = sys.H_p(x, pb, 0.0)
    if not reg.any():
        return float("nan")
    return float(np.min((va - vb)[reg]))


def c_sweep(c_min: float, c_max: float, n_c: int, edges: Sequence[float] = (),
            extra: int = 2, width: float = 0.02) -> np.ndarray:
    """Uniform grid in [c_min, c_max] containing 0, refined with ``extra`` points near each edge."""
    base = np.linspace(c_min, c_max, n_c)
    pts = list(base) + [0.0]
    for e in edges:
        pts += list(e + width * np.linspace(-1, 1, extra + 2)[1:-1])
    pts = np.clip(np.round(np.array(pts), 12), c_min, c_max)
    return np.unique(pts)


def symmetry_defect(sol_c: WeakKamSolution, sol_mc: WeakKamSolution,
                    sol_0: WeakKamSolution, shift: float = 0.5) -> float:
    """Residual of sigma(c) - sigma(-c) = c/2 + (u_hat_c - u_hat_0)(shift).

    Holds when the system is invariant under x -> shift - x; for the
    built-in standard family shift = 1/2.
    """
    x, h0 = rectified_solution(sol_0)
    _, hc = rectified_solution(sol_c)
    _, hm = rectified_solution(sol_mc)
    sc = np.trapezoid(hc - h0, x)
    sm = np.trapezoid(hm - h0, x)
    d_half = np.interp(shift, x, hc - h0)
    return float(sc - sm - sol_c.c / 2.0 - d_half)
