"""Generalized characteristics of a weak KAM solution.

A characteristic solves x' = H_p(x, c + u_x, t) at regular points and, at a
kink with one-sided derivatives p- > p+, moves with the chord slope
[H(p- + c) - H(p+ + c)] / (p- - p+).  The field is right-continuous in time,
so forward Euler is the natural scheme.

On the grid a kink can be split across two adjacent nodes; a position counts
as singular when a flagged node lies within one cell, and the one-sided
derivatives are taken at the outer ends of that flagged cluster.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateKink, SingularBackward, TooShort
from .weakkam import WeakKamSolution

REGULAR, SINGULAR = 0, 1
# a position is singular when a flagged node lies within this many cells
KINK_REACH = 1


@dataclass
class Characteristic:
    t0: float
    s: np.ndarray
    x_lift: np.ndarray
    flags: np.ndarray
    dtau: float
    rho: Optional[float] = None
    symbol: Optional[str] = None
    transitions: int = 0
    stop_time: Optional[float] = None

    @property
    def T(self) -> float:
        return float(self.s[-1] - self.s[0])

    def at_integer_times(self) -> np.ndarray:
        """Samples at s = 0, 1, 2, ... (forward runs) as an array."""
        per = int(round(1.0 / self.dtau))
        return self.x_lift[::per]


class _Field:
    """Lookup tables for the characteristic velocity of one solution."""

    def __init__(self, sol: WeakKamSolution, reach: int = KINK_REACH):
        self.sol = sol
        self.sys = sol.sys
        self.c = sol.c
        self.nx, self.nt = sol.nx, sol.nt
        pl, pr = sol.p_left.values, sol.p_right.values
        m = sol.singular_mask
        self.centre = 0.5 * (pl + pr)
        near = m.copy()
        for r in range(1, reach + 1):
            near |= np.roll(m, r, 0) | np.roll(m, -r, 0)
        self.near = near
        # one-sided derivatives at the outer ends of each flagged cluster
        pm = pl.copy()
        pp = pr.copy()
        n = self.nx
        for k in np.flatnonzero(m.any(axis=0)):
            col = m[:, k]
            if col.all():
                continue
            starts = np.flatnonzero(col & ~np.roll(col, 1))
            ends = np.flatnonzero(col & ~np.roll(col, -1))
            i = np.flatnonzero(near[:, k])
            # nearest flagged node, searching outward
            j = np.full(len(i), -1)
            for r in range(reach + 1):
                for cand in ((i - r) % n, (i + r) % n):
                    j = np.where((j < 0) & col[cand], cand, j)
            a = starts[np.searchsorted(starts, j, side="right") - 1]
            b = ends[np.searchsorted(ends, j, side="left") % len(ends)]
            pm[i, k], pp[i, k] = pl[a, k], pr[b, k]
        self.p_minus = pm
        self.p_plus = pp

    def lookup(self, x, t):
        """(velocity, singular flag, p_minus, p_plus) for arrays x at time t."""
        x = np.asarray(x, dtype=float)
        k = int(np.floor((t % 1.0) * self.nt + 1e-9)) % self.nt
        s = np.mod(x, 1.0) * self.nx
        i = np.rint(s).astype(int) % self.nx
        sing = self.near[i, k]
        j = np.floor(s).astype(int) % self.nx
        f = s - np.floor(s)
        ux = (1.0 - f) * self.centre[j, k] + f * self.centre[(j + 1) % self.nx, k]
        v = self.sys.H_p(x, ux + self.c, t)
        pm, pp = self.p_minus[i, k], self.p_plus[i, k]
        if np.any(sing):
            gap = pm - pp
            ok = sing & (np.abs(gap) >= 1e-12)
            if np.any(sing & ~ok):
                warnings.warn("flagged kink with equal one-sided derivatives", DegenerateKink)
            safe = np.where(ok, gap, 1.0)
            chord = (self.sys.H(x, pm + self.c, t) - self.sys.H(x, pp + self.c, t)) / safe
            v = np.where(ok, chord, v)
            sing = ok
        return v, sing, pm, pp


def gc_velocity(sol: WeakKamSolution, x: float, t: float) -> float:
    """Velocity of the generalized characteristic through (x, t)."""
    v, _, _, _ = _field(sol).lookup(np.array([x]), t)
    return float(v[0])


_FIELDS: dict = {}


def _field(sol):
    key = id(sol)
    f = _FIELDS.get(key)
    if f is None or f.sol is not sol:
        if len(_FIELDS) > 64:
            _FIELDS.clear()
        f = _FIELDS[key] = _Field(sol)
    return f


def integrate_many(sol: WeakKamSolution, x0s, t0: float, T: float,
                   dtau: Optional[float] = None):
    """Forward Euler for several starts at once; returns (s, X, F) with X, F of shape (n+1, m)."""
    if T <= 0:
        raise ValueError("T must be positive")
    fld = _field(sol)
    dtau = sol.dt / 4.0 if dtau is None else float(dtau)
    n = int(round(T / dtau))
    x = np.array(x0s, dtype=float).ravel()
    X = np.empty((n + 1, len(x)))
    F = np.empty((n + 1, len(x)), dtype=np.int8)
    for k in range(n + 1):
        t = t0 + k * dtau
        v, sing, _, _ = fld.lookup(x, t)
        X[k] = x
        F[k] = sing
        if k < n:
            x = x + dtau * v
    return np.arange(n + 1) * dtau, X, F


def _transitions(flags) -> int:
    f = np.asarray(flags, dtype=np.int8)
    return int(np.sum((f[:-1] == SINGULAR) & (f[1:] == REGULAR)))


def integrate_gc(sol: WeakKamSolution, x0: float, t0: float, T: float,
                 dtau: Optional[float] = None) -> Characteristic:
    """Forward characteristic from (x0, t0) over time T with step dtau (default dt / 4).

    Singular-to-regular transitions are counted as a grid-resolution
    diagnostic; the forward flow itself never stops.
    """
    s, X, F = integrate_many(sol, [x0], t0, T, dtau)
    return Characteristic(t0=float(t0), s=s, x_lift=X[:, 0], flags=F[:, 0],
                          dtau=float(s[1] - s[0]), transitions=_transitions(F[:, 0]))


def integrate_backward(sol: WeakKamSolution, x0: float, t0: float, T: float,
                       dtau: Optional[float] = None) -> Characteristic:
    """Backward calibrated curve from a regular point, stopped at the first singular sample.

    ``s`` runs over 0, -dtau, -2 dtau, ...; ``stop_time`` is the (negative)
    time of the first singular sample if one is hit.
    """
    fld = _field(sol)
    dtau = sol.dt / 4.0 if dtau is None else float(dtau)
    _, sing, _, _ = fld.lookup(np.array([x0]), t0)
    if sing[0]:
        raise SingularBackward("backward curves from a singular point are not unique",
                               x0=x0, t0=t0)
    n = int(round(T / dtau))
    xs = [float(x0)]
    x = np.array([x0], dtype=float)
    stop = None
    for k in range(1, n + 1):
        t = t0 - k * dtau
        # implicit-in-time stepping: velocity at the arrival time slice
        v, _, _, _ = fld.lookup(x, t + dtau - 1e-12)
        x = x - dtau * v
        _, sing, _, _ = fld.lookup(x, t)
        xs.append(float(x[0]))
        if sing[0]:
            stop = -k * dtau
            break
    s = -np.arange(len(xs)) * dtau
    return Characteristic(t0=float(t0), s=s, x_lift=np.array(xs),
                          flags=np.zeros(len(xs), dtype=np.int8), dtau=dtau, stop_time=stop)


def rotation_number(chi: Characteristic, periods: Optional[int] = None) -> float:
    """Least-squares slope of x_lift against time over the trailing half."""
    if periods is not None and chi.T + 1e-9 < periods:
        raise TooShort(f"characteristic spans {chi.T} < {periods} periods")
    if chi.T < 2.0:
        raise TooShort("need at least two periods")
    h = len(chi.s) // 2
    s, x = chi.s[h:], chi.x_lift[h:]
    slope = np.polyfit(s - s.mean(), x, 1)[0]
    chi.rho = float(slope)
    return chi.rho


def classify_symbol(chi: Characteristic, p: int, q: int, tol: float = 1e-6,
                    rho_tol: float = 2e-2) -> str:
    """Rotation symbol relative to p/q from the trailing displacements over q periods.

    'p/q' if they vanish (within tol), 'p/q+' or 'p/q-' if all share a sign,
    'irrational' if the rotation number is not near p/q, 'UNCLASSIFIED' otherwise.
    """
    z = chi.at_integer_times()
    if len(z) < 4 * q + 1:
        raise TooShort("need at least four multiples of q periods")
    rho = chi.rho if chi.rho is not None else rotation_number(chi)
    if abs(rho - p / q) > rho_tol:
        chi.symbol = "irrational"
        return chi.symbol
    d = z[q:] - z[:-q] - p
    d = d[len(d) // 2:]
    if np.all(np.abs(d) < tol):
        sym = f"{p}/{q}"
    elif np.all(d > 0):
        sym = f"{p}/{q}+"
    elif np.all(d < 0):
        sym = f"{p}/{q}-"
    else:
        sym = "UNCLASSIFIED"
    chi.symbol = sym
    return sym


@dataclass
class UniquenessReport:
    delta: float
    max_separation: float
    measured_rate: float
    bound_rate: float
    holds: bool
    separations: np.ndarray = field(repr=False, default=None)


def uniqueness_probe(sol: WeakKamSolution, x0: float, t0: float, delta: float, T: float,
                     dtau: Optional[float] = None) -> UniquenessReport:
    """Separation of characteristics started at x0 and x0 +- delta against a Gronwall bound.

    Forward in time the velocity field is one-sided Lipschitz with constant
    semiconcavity_C * max H_pp, so separations grow at most like
    delta * exp(K s).  The measured rate is max_s log(sep(s) / delta) / s.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    s, X, _ = integrate_many(sol, [x0 - delta, x0, x0 + delta], t0, T, dtau)
    sep = np.maximum(np.abs(X[:, 0] - X[:, 1]), np.abs(X[:, 2] - X[:, 1]))
    xg, pg, tg = np.meshgrid(np.linspace(0, 1, 9), np.linspace(-2, 2, 9) + sol.c,
                             np.linspace(0, 1, 9), indexing="ij")
    hpp = float(np.max(sol.sys.H_pp(xg, pg, tg)))
    K = sol.semiconcavity_C * hpp
    with np.errstate(divide="ignore"):
        rates = np.log(np.maximum(sep[1:], 1e-300) / delta) / s[1:]
    rate = float(np.max(rates))
    dt_slack = 1.0 + 4.0 * (s[1] - s[0]) * K
    bound = delta * np.exp(K * s) * dt_slack
    return UniquenessReport(delta=delta, max_separation=float(np.max(sep)), measured_rate=rate,
                            bound_rate=K, holds=bool(np.all(sep <= bound + 1e-15)),
                            separations=sep)


def order_defect(chi: Characteristic) -> float:
    """Largest violation of rigid-rotation cyclic order among integer-time samples.

    For lifted samples z_k, z_k + m < z_l should imply z_{k+1} + m <= z_{l+1};
    returns the maximum of z_{k+1} + m - z_{l+1} over pairs where it fails.
    """
    z = chi.at_integer_times()
    a, b = z[:-1], z[1:]
    worst = 0.0
    for m in (-1, 0, 1):
        da = a[:, None] + m - a[None, :]
        db = b[:, None] + m - b[None, :]
        viol = np.where(da < 0, db, -np.inf)
        worst = max(worst, float(np.max(viol)))
    return worst
