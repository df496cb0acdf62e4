"""Instability intervals and connecting orbits between Aubry sets of nearby classes.

A link from class c to class c' minimizes the discrete modified action

    sum_i [h(x_i, x_{i+1}) - c (x_{i+1} - x_i) - rho_i (M(x_{i+1}) - M(x_i))]
        + T0 alpha(c) + T1 alpha(c')

over x_{-T0}..x_{T1}, where M is a primitive of a bump mu of total mass c' - c
supported in a gap of both Aubry sets, and rho_i switches from 0 to 1 across
the first delta steps.  The two ends are pulled towards the Aubry-set
estimates by a quadratic penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
from math import gamma, sqrt
from typing import List, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as Pl

from .aubry import Configuration, _thomas
from .errors import BoundaryMiss, ChainStalled, NoConvergence, NoGap
from .systems import SystemSpec
from .weakkam import (_clusters, aubry_set_estimate, discrete_weak_kam,
                      solve_weak_kam_batch)

PENALTY_WEIGHT = 100.0


# ---------------------------------------------------------------------------
# instability atlas


@dataclass
class InstabilityAtlas:
    eps: float
    intervals: list
    evidence: list
    samples: list = field(default_factory=list)

    def contains(self, a: float, b: float) -> bool:
        """True if some interval contains [a, b]."""
        return any(lo <= a and b <= hi for lo, hi in self.intervals)


def _singular(sys, cs, nx, nt, backend):
    sols = solve_weak_kam_batch(sys, cs, nx, nt if backend == "continuous" else 1,
                                tol=1e-9 if backend == "continuous" else 1e-11,
                                backend=backend)
    return [(s.c, bool(s.singular_mask.any()), s.alpha) for s in sols]


def _refine_edge(sys, nx, nt, backend, dc_tol, reg, sing):
    """Bisect between a regular and a singular c; return the regular end."""
    while abs(sing - reg) > dc_tol:
        mid = 0.5 * (reg + sing)
        if _singular(sys, [mid], nx, nt, backend)[0][1]:
            sing = mid
        else:
            reg = mid
    return reg


def _flat_of(run, max_q=8, tol=1e-3):
    """Rational alpha-slope shared by the most consecutive sample pairs of a run, as (p, q)."""
    votes = {}
    for (c0, _, a0), (c1, _, a1) in zip(run[:-1], run[1:]):
        slope = (a1 - a0) / (c1 - c0)
        fr = Fraction(slope).limit_denominator(max_q)
        if abs(slope - float(fr)) < tol:
            votes[fr] = votes.get(fr, 0) + 1
    if not votes:
        return None
    fr = max(votes, key=votes.get)
    return (fr.numerator, fr.denominator)


def detect_instability(sys: SystemSpec, c_grid: Sequence[float], nx: int = 256, nt: int = 128,
                       backend: str = "continuous", dc_tol: float = 1e-3,
                       refine: bool = True) -> InstabilityAtlas:
    """Flag each c whose solution has a nonempty singular set and merge runs into intervals.

    Interval ends are refined by bisection between a regular and a singular
    sample until they are dc_tol apart; the reported ends are the regular
    samples, so intervals are open.  A run touching the grid edge ends at the
    edge sample (flagged GRID_EDGE).
    """
    cs = np.asarray(c_grid, dtype=float)
    if np.any(np.diff(cs) <= 0):
        raise ValueError("c_grid must be strictly increasing")
    samples = []
    for i in range(0, len(cs), 8):
        samples += _singular(sys, cs[i:i + 8], nx, nt, backend)
    flags = np.array([f for _, f, _ in samples])
    intervals, evidence = [], []
    i = 0
    while i < len(cs):
        if not flags[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(cs) and flags[j + 1]:
            j += 1
        note = []
        edge = partial(_refine_edge, sys, nx, nt, backend, dc_tol)
        if i == 0:
            a = cs[0]
            note.append("GRID_EDGE")
        else:
            a = edge(cs[i - 1], cs[i]) if refine else cs[i - 1]
        if j == len(cs) - 1:
            b = cs[-1]
            note.append("GRID_EDGE")
        else:
            b = edge(cs[j + 1], cs[j]) if refine else cs[j + 1]
        run = samples[i:j + 1]
        evidence_flat = _flat_of(run)
        intervals.append((float(a), float(b)))
        evidence.append({"singular": [bool(f) for f in flags[i:j + 1]],
                         "c": [float(c) for c in cs[i:j + 1]], "flat": evidence_flat,
                         "notes": note})
        i = j + 1
    return InstabilityAtlas(eps=float(sys.eps), intervals=intervals, evidence=evidence,
                            samples=[(float(c), bool(f)) for c, f, _ in samples])


# ---------------------------------------------------------------------------
# Mane neighbourhood and the 1-form mu


@dataclass
class ManeNeighborhood:
    intervals: list  # arcs (a, b) with a < b, possibly b > 1 for wrapped arcs
    gaps: list       # complementary arcs, largest first
    mask: np.ndarray
    x: np.ndarray
    points_c: np.ndarray
    points_cprime: np.ndarray

    def contains(self, x) -> np.ndarray:
        i = np.rint(np.mod(x, 1.0) * len(self.x)).astype(int) % len(self.x)
        return self.mask[i]


def _arcs(mask, x):
    """Maximal runs of True in a periodic mask as (start, end) arcs on the lift."""
    n = len(mask)
    if mask.all():
        return [(0.0, 1.0)]
    if not mask.any():
        return []
    dx = 1.0 / n
    start = np.flatnonzero(mask & ~np.roll(mask, 1))
    end = np.flatnonzero(mask & ~np.roll(mask, -1))
    out = []
    for s in start:
        e = end[np.searchsorted(end, s) % len(end)]
        hi = x[e] if e >= s else x[e] + 1.0
        out.append((float(x[s] - 0.5 * dx), float(hi + 0.5 * dx)))
    return out


def _estimate(sys, c, nx):
    return aubry_set_estimate(sys, c, nx=nx, backend="discrete")


def mane_neighborhood(sys: SystemSpec, c: float, c_prime: float, margin: float = 0.02,
                      nx: int = 512, mane_tol: Optional[float] = None) -> ManeNeighborhood:
    """Union of the Mane-set estimates at c and c' fattened by ``margin``.

    The estimate is the sub-level set {S < mane_tol} of the barrier sum S of
    the Aubry estimate (default mane_tol = its aubry_tol).  Raises NO_GAP if
    the union covers the circle.
    """
    x = np.arange(nx) / nx
    masks, pts = [], []
    for cc in (c, c_prime):
        est = _estimate(sys, cc, nx)
        tol = est.tol if mane_tol is None else mane_tol
        m = est.indicator < tol
        masks.append(m)
        pts.append(x[m])
    core = masks[0] | masks[1]
    r = int(np.ceil(margin * nx))
    fat = core.copy()
    for k in range(1, r + 1):
        fat |= np.roll(core, k) | np.roll(core, -k)
    if fat.all():
        raise NoGap("the Mane neighbourhood covers the circle", c=c, c_prime=c_prime,
                    margin=margin)
    gaps = _arcs(~fat, x)
    gaps.sort(key=lambda g: -(g[1] - g[0]))
    return ManeNeighborhood(intervals=_arcs(fat, x), gaps=gaps, mask=fat, x=x,
                            points_c=pts[0], points_cprime=pts[1])


@dataclass
class MuProfile:
    """Bump a (1 - s^2)^k on the arc [lo, hi] (lifted coordinates), s = (x - mid) / half.

    Integrates to ``amount`` over one period; ``primitive`` is the lifted
    primitive M with M(x + 1) = M(x) + amount.
    """

    lo: float
    hi: float
    amount: float
    k: int = 4

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self):
        return 0.5 * (self.hi - self.lo)

    @property
    def support(self):
        return (self.lo, self.hi)

    def _norm(self):
        # integral of (1 - s^2)^k over [-1, 1]
        return sqrt(np.pi) * gamma(self.k + 1) / gamma(self.k + 1.5)

    def _local(self, x):
        return (np.mod(np.asarray(x, dtype=float) - self.lo, 1.0) + self.lo - self.mid) / self.half

    def __call__(self, x):
        if self.amount == 0.0:
            return np.zeros_like(np.asarray(x, dtype=float))
        s = self._local(x)
        inside = np.abs(s) < 1.0
        val = np.where(inside, (1.0 - s * s) ** self.k, 0.0)
        return self.amount / (self.half * self._norm()) * val

    def derivative(self, x):
        if self.amount == 0.0:
            return np.zeros_like(np.asarray(x, dtype=float))
        s = self._local(x)
        inside = np.abs(s) < 1.0
        d = np.where(inside, -2.0 * self.k * s * (1.0 - s * s) ** (self.k - 1), 0.0)
        return self.amount / (self.half ** 2 * self._norm()) * d

    def primitive(self, x):
        """Lifted primitive, zero at the arc's left end."""
        x = np.asarray(x, dtype=float)
        if self.amount == 0.0:
            return np.zeros_like(x)
        base = (1.0, 0.0, -1.0)
        poly = Pl.polypow(base, self.k)
        prim = Pl.polyint(poly, lbnd=-1.0)
        turns = np.floor(x - self.lo)
        s = np.clip((x - turns - self.mid) / self.half, -1.0, 1.0)
        frac = Pl.polyval(s, prim) / self._norm()
        return self.amount * (turns + frac)

    def clearance(self, x) -> np.ndarray:
        """Signed circular distance from x to the support (negative inside)."""
        return _arc_distance(x, self.lo, self.hi)


def _arc_distance(x, lo, hi):
    """Signed distance on the circle from x to the arc [lo, hi] (negative inside)."""
    y = np.mod(np.asarray(x, dtype=float) - lo, 1.0)
    w = hi - lo
    inside = y < w
    out_d = np.minimum(y - w, 1.0 - y)
    in_d = -np.minimum(y, w - y)
    return np.where(inside, in_d, out_d)


def build_mu(gap, amount: float, fill: float = 0.8, k: int = 4) -> MuProfile:
    """Smooth bump of total mass ``amount`` supported in the middle ``fill`` of the gap."""
    lo, hi = float(gap[0]), float(gap[1])
    if not hi > lo:
        raise ValueError("gap must be a nonempty arc (lo < hi)")
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * fill
    return MuProfile(lo=mid - half, hi=mid + half, amount=float(amount), k=k)


# ---------------------------------------------------------------------------
# connecting orbits


@dataclass
class ModifiedActionSpec:
    c: float
    c_prime: float
    mu: MuProfile
    rho_delta: int = 1
    T0: int = 60
    T1: int = 60

    @property
    def mu_support(self):
        return self.mu.support

    def rho(self) -> np.ndarray:
        """rho sampled at the steps i = -T0..T1-1: 0 for i <= 0, 1 for i >= delta."""
        i = np.arange(-self.T0, self.T1)
        return np.clip(i / max(self.rho_delta, 1), 0.0, 1.0)


@dataclass
class ConnectingOrbit:
    config: Configuration
    spec: ModifiedActionSpec
    action: float
    el_residual: float
    clearance: float
    boundary_distances: tuple
    gradient: float
    checked_steps: int


def _chain_parts(sys, spec: ModifiedActionSpec, X, anchors0, anchors1, w):
    a, b = X[:, :-1], X[:, 1:]
    rho = spec.rho()[None, :]
    mu = spec.mu
    F = np.sum(sys.h(a, b) - spec.c * (b - a) - rho * (mu.primitive(b) - mu.primitive(a)), axis=1)
    h1, h2 = sys.dh(a, b)
    h11, h12, h22 = sys.d2h(a, b)
    g = np.zeros_like(X)
    g[:, :-1] += h1 + spec.c + rho * mu(a)
    g[:, 1:] += h2 - spec.c - rho * mu(b)
    diag = np.zeros_like(X)
    diag[:, :-1] += h11 + rho * mu.derivative(a)
    diag[:, 1:] += h22 - rho * mu.derivative(b)
    off = h12
    d0 = _signed_to_set(X[:, 0], anchors0)
    d1 = _signed_to_set(X[:, -1], anchors1)
    F = F + w * (d0 ** 2 + d1 ** 2)
    g[:, 0] += 2 * w * d0
    g[:, -1] += 2 * w * d1
    diag[:, 0] += 2 * w
    diag[:, -1] += 2 * w
    return F, g, diag, off


def _signed_to_set(x, pts):
    """Signed circular offset from x to the nearest point of the set pts."""
    d = np.mod(np.asarray(x)[..., None] - np.asarray(pts)[None, :] + 0.5, 1.0) - 0.5
    j = np.argmin(np.abs(d), axis=-1)
    return np.take_along_axis(d, j[..., None], -1)[..., 0]


def _backward_path(sol, x_end, steps):
    """Backward calibrated path x_{-steps}..x_0 = x_end through the section solution."""
    D = sol.displacement[:, 0]
    nx = sol.nx
    path = [float(x_end)]
    y = float(x_end)
    for _ in range(steps):
        s = (y % 1.0) * nx
        j = int(np.floor(s)) % nx
        f = s - np.floor(s)
        y = y - ((1 - f) * D[j] + f * D[(j + 1) % nx])
        path.append(y)
    return np.array(path[::-1])


def _minimize_chain(sys, spec, X, A0, A1, w, gtol=1e-11, max_iter=400):
    lam = np.full(len(X), 1e-8)
    F, g, diag, off = _chain_parts(sys, spec, X, A0, A1, w)
    for _ in range(max_iter):
        gn = np.max(np.abs(g), axis=1)
        act = gn >= gtol
        if not act.any():
            break
        ia = np.flatnonzero(act)
        s, piv = _thomas(diag[ia] + lam[ia, None], off[ia], -g[ia])
        bad = ~(piv > 0) | ~np.all(np.isfinite(s), axis=1)
        s[bad] = -g[ia][bad] / (1.0 + lam[ia][bad, None])
        Xt = X[ia] + np.clip(s, -0.25, 0.25)
        Ft, gt, dt_, ot = _chain_parts(sys, spec, Xt, A0, A1, w)
        ok = (Ft <= F[ia] + 1e-13 * (1 + np.abs(F[ia]))) & ~bad
        acc = ia[ok]
        X[acc], F[acc], g[acc], diag[acc], off[acc] = Xt[ok], Ft[ok], gt[ok], dt_[ok], ot[ok]
        lam[acc] = np.maximum(lam[acc] / 4.0, 1e-14)
        lam[ia[~ok]] *= 8.0
        if np.all(lam[ia] > 1e14):
            break
    return X, F, np.max(np.abs(g), axis=1)


def connecting_orbit(sys: SystemSpec, spec: ModifiedActionSpec, boundary_tol: float,
                     nx: int = 512, weight: float = PENALTY_WEIGHT,
                     max_candidates: int = 3) -> ConnectingOrbit:
    """Minimize the modified action for one link and validate it.

    Starts are built from backward calibrated paths of the section solutions
    at c (left part) and c' (right part) through representatives of each
    Aubry-estimate cluster.  The Euler-Lagrange residual of the unmodified
    map is checked at every interior step whose point avoids supp mu or
    whose rho-window has passed.
    """
    if spec.T0 < 20 or spec.T1 < 20:
        raise ValueError("T0 and T1 must be at least 20")
    sol0 = discrete_weak_kam(sys, spec.c, nx)
    sol1 = discrete_weak_kam(sys, spec.c_prime, nx)
    e0 = _estimate(sys, spec.c, nx)
    e1 = _estimate(sys, spec.c_prime, nx)
    A0, A1 = e0.points, e1.points
    reps0 = _clusters(A0, 3.0 / nx)[:max_candidates]
    reps1 = _clusters(A1, 3.0 / nx)[:max_candidates]
    starts = []
    for a in reps0:
        left = _backward_path(sol0, a, spec.T0)
        for b in reps1:
            right = _backward_path(sol1, b, spec.T1 - 1)
            right = right + np.round(left[-1] - right[0])
            starts.append(np.concatenate([left, right]))
    X, F, gn = _minimize_chain(sys, spec, np.array(starts), A0, A1, weight)
    conv = gn < 1e-9
    if not conv.any():
        raise NoConvergence("modified action minimization did not converge",
                            residual=float(np.min(gn)))
    Fc = np.where(conv, F, np.inf)
    i = int(np.argmin(Fc))
    x = X[i]
    d0 = float(abs(_signed_to_set(x[:1], A0)[0]))
    d1 = float(abs(_signed_to_set(x[-1:], A1)[0]))
    # unmodified Euler-Lagrange residual at eligible interior steps
    h1, h2 = sys.dh(x[:-1], x[1:])
    el = h2[:-1] + h1[1:]
    rho = spec.rho()
    switching = rho[:-1] != rho[1:]
    inside = spec.mu.clearance(x[1:-1]) <= 0.0
    eligible = ~(switching & inside)
    res = float(np.max(np.abs(el[eligible]))) if eligible.any() else 0.0
    clear = float(np.min(spec.mu.clearance(x))) if spec.mu.amount != 0.0 else np.inf
    alpha0, alpha1 = sol0.alpha, sol1.alpha
    action = float(F[i] - weight * (d0 ** 2 + d1 ** 2) + spec.T0 * alpha0 + spec.T1 * alpha1)
    cfg = Configuration(x=x, rotation=((0, 1), "connect"), action=action, start=-spec.T0,
                        kind="connecting", residual=res)
    out = ConnectingOrbit(config=cfg, spec=spec, action=action, el_residual=res,
                          clearance=clear, boundary_distances=(d0, d1), gradient=float(gn[i]),
                          checked_steps=int(eligible.sum()))
    if max(d0, d1) > boundary_tol:
        raise BoundaryMiss("connecting orbit ends away from the Aubry estimates",
                           distances=(d0, d1), boundary_tol=boundary_tol, orbit=out)
    return out


@dataclass
class ChainLink:
    c: float
    c_prime: float
    orbit: ConnectingOrbit
    gap: tuple


def transition_chain(sys: SystemSpec, c1: float, c2: float, max_step: float = 0.05,
                     T0: int = 60, T1: int = 60, boundary_tol: Optional[float] = None,
                     dc_min: float = 1e-3, margin: float = 0.02, nx: int = 512,
                     log: Optional[list] = None) -> List[ChainLink]:
    """Greedy chain of connecting orbits from c1 to c2, halving the step on NO_GAP or BOUNDARY_MISS."""
    if c1 == c2:
        return []
    boundary_tol = 10.0 / nx if boundary_tol is None else boundary_tol
    sign = 1.0 if c2 > c1 else -1.0
    chain = []
    c = c1
    step = max_step
    while sign * (c2 - c) > 1e-12:
        step = min(step, abs(c2 - c))
        cp = c + sign * step
        if abs(c2 - cp) < 1e-12:
            cp = c2
        try:
            U = mane_neighborhood(sys, c, cp, margin, nx)
            mu = build_mu(U.gaps[0], cp - c)
            spec = ModifiedActionSpec(c=c, c_prime=cp, mu=mu, T0=T0, T1=T1)
            orbit = connecting_orbit(sys, spec, boundary_tol, nx)
        except (NoGap, BoundaryMiss, NoConvergence) as err:
            if log is not None:
                log.append((c, cp, err.code))
            step *= 0.5
            if step < dc_min:
                raise ChainStalled("transition chain step underflow", c=c, step=step) from err
            continue
        if log is not None:
            log.append((c, cp, "OK"))
        chain.append(ChainLink(c=c, c_prime=cp, orbit=orbit, gap=U.gaps[0]))
        c = cp
        step = max_step
    return chain
