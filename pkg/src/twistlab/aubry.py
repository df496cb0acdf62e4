"""Discrete variational backend built on the generating function h.

Periodic minimal configurations, the average-action function beta on
rationals, its Legendre dual alpha, one-sided slopes of beta (flats),
heteroclinic configurations asymptotic to periodic ones, the integrated
endpoint momenta u_{p/q +-}, and the splitting point of a flat.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import BisectionFail, FlatDegenerate, NoConvergence
from .systems import SystemSpec

GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)
EL_TOL = 1e-9


@dataclass
class Configuration:
    """A lifted orbit segment x[0..N] starting at time index ``start``.

    ``rotation`` is (p, q) for periodic configurations and ((p, q), sign) for
    heteroclinic ones.  ``action`` is the per-step average for periodic
    configurations and the segment total otherwise.
    """

    x: np.ndarray
    rotation: tuple
    action: float
    start: int = 0
    kind: str = "periodic"
    residual: float = 0.0

    @property
    def p(self) -> int:
        r = self.rotation
        return r[0] if self.kind == "periodic" else r[0][0]

    @property
    def q(self) -> int:
        r = self.rotation
        return r[1] if self.kind == "periodic" else r[0][1]

    def extend(self, lo: int, hi: int) -> np.ndarray:
        """Periodic configurations: values x_lo..x_hi using x_{i+q} = x_i + p."""
        if self.kind != "periodic":
            raise ValueError("only periodic configurations extend")
        i = np.arange(lo, hi + 1)
        k, r = np.divmod(i, self.q)
        return self.x[r] + k * self.p

    def momenta(self, sys: SystemSpec) -> np.ndarray:
        """p_i = d2 h(x_{i-1}, x_i) at the interior and final points."""
        return sys.dh(self.x[:-1], self.x[1:])[1]


def el_residual(sys: SystemSpec, x) -> np.ndarray:
    """Discrete Euler-Lagrange residual d2h(x_{i-1}, x_i) + d1h(x_i, x_{i+1}) at interior points."""
    x = np.asarray(x, dtype=float)
    h1, h2 = sys.dh(x[:-1], x[1:])
    return h2[..., :-1] + h1[..., 1:]


# ---------------------------------------------------------------------------
# periodic minimizers


def _periodic_parts(sys, X, p):
    """Action, gradient and Hessian of W(X) = sum h(x_i, x_{i+1}) with x_q = x_0 + p."""
    M, q = X.shape
    Xe = np.concatenate([X, X[:, :1] + p], axis=1)
    a, b = Xe[:, :-1], Xe[:, 1:]
    W = np.sum(sys.h(a, b), axis=1)
    h1, h2 = sys.dh(a, b)
    h11, h12, h22 = sys.d2h(a, b)
    g = h1 + np.roll(h2, 1, axis=1)
    Hs = np.zeros((M, q, q))
    idx = np.arange(q)
    Hs[:, idx, idx] = h11 + np.roll(h22, 1, axis=1)
    for i in range(q):
        j = (i + 1) % q
        Hs[:, i, j] += h12[:, i]
        Hs[:, j, i] += h12[:, i]
    return W, g, Hs


def _lm_periodic(sys, X, p, gtol=1e-11, max_iter=300):
    M, q = X.shape
    lam = np.full(M, 1e-6)
    W, g, Hs = _periodic_parts(sys, X, p)
    done = np.max(np.abs(g), axis=1) < gtol
    eye = np.eye(q)
    for _ in range(max_iter):
        act = ~done
        if not act.any():
            break
        A = Hs[act] + lam[act, None, None] * eye
        try:
            s = -np.linalg.solve(A, g[act][..., None])[..., 0]
        except np.linalg.LinAlgError:
            s = -g[act] / (1.0 + lam[act, None])
        Xt = X.copy()
        Xt[act] = X[act] + s
        Wt, gt, Ht = _periodic_parts(sys, Xt[act], p)
        ok = Wt <= W[act] + 1e-15 * (1.0 + np.abs(W[act]))
        ia = np.flatnonzero(act)
        acc = ia[ok]
        X[acc] = Xt[acc]
        W[acc], g[acc], Hs[acc] = Wt[ok], gt[ok], Ht[ok]
        lam[acc] = np.maximum(lam[acc] / 3.0, 1e-12)
        lam[ia[~ok]] *= 10.0
        done = (np.max(np.abs(g), axis=1) < gtol) | (lam > 1e12)
    conv = np.max(np.abs(g), axis=1) < max(gtol, 1e-9)
    return X, W, g, conv


def _normalize(x, p, q):
    """Index-shift and translate so that x_0 is the orbit point with smallest value mod 1."""
    x = np.asarray(x, dtype=float)
    j = int(np.argmin(np.mod(x, 1.0)))
    i = np.arange(j, j + q + 1)
    k, r = np.divmod(i, q)
    y = x[r] + k * p
    return y - np.floor(y[0])


_MEMO: dict = {}


def _memo_key(sys, p, q, M):
    return (sys.key if sys.key is not None else id(sys), p, q, M)


def _parent_starts(sys, p, q):
    """Concatenations of the two Stern-Brocot parents' minimizers, one per index shift."""
    (a, b), (c, d) = farey_neighbors(p, q)
    XL = minimal_periodic(sys, a, b)
    XR = minimal_periodic(sys, c, d)
    starts = []
    for first, second in ((XL, XR), (XR, XL)):
        for j in range(first.q):
            blk = first.extend(j, j + first.q)
            end = blk[-1]
            cand = second.extend(0, second.q - 1)
            k = int(np.argmin(np.abs(np.mod(cand - end + 0.5, 1.0) - 0.5)))
            tail = second.extend(k, k + second.q - 1)
            tail = tail + np.round(end - tail[0])
            starts.append(np.concatenate([blk[:-1], tail]))
    return np.array(starts)


def minimal_periodic(sys: SystemSpec, p: int, q: int, multistarts: Optional[int] = None,
                     seed: int = 0) -> Configuration:
    """Global minimizer of sum_{i<q} h(x_i, x_{i+1}) subject to x_{i+q} = x_i + p.

    Starts: ordered configurations with golden-ratio phases, plus (q >= 2)
    concatenations of the minimizers at the two Stern-Brocot parents of p/q,
    which is where minimizers sit when the map is strongly hyperbolic.
    Damped Newton descent, then min by action with ties broken by smallest
    x_0 mod 1.  Results are memoized per system.
    """
    if q < 1 or gcd(p, q) != 1:
        raise ValueError("need q >= 1 and gcd(p, q) = 1")
    M = 8 * q if multistarts is None else int(multistarts)
    if M < 1:
        raise ValueError("multistarts must be positive")
    key = _memo_key(sys, p, q, (M, seed))
    if key in _MEMO:
        return _MEMO[key]
    phases = np.mod(np.arange(M) * GOLDEN + 0.5 * GOLDEN * seed, 1.0)
    X0 = phases[:, None] + np.arange(q)[None, :] * (p / q)
    if q >= 2:
        X0 = np.concatenate([X0, _parent_starts(sys, p, q)])
    X, W, g, conv = _lm_periodic(sys, X0, p)
    if not conv.any():
        raise NoConvergence(f"no start converged for rotation {p}/{q}",
                            residual=float(np.min(np.max(np.abs(g), axis=1))))
    X, W = X[conv], W[conv]
    wmin = np.min(W)
    near = np.flatnonzero(W <= wmin + 1e-12 * (1.0 + abs(wmin)))
    cands = [_normalize(X[i], p, q) for i in near]
    best = min(cands, key=lambda y: (round(y[0] % 1.0, 12)))
    ext = np.concatenate([[best[-2] - p], best])
    res = float(np.max(np.abs(el_residual(sys, ext))))
    out = Configuration(x=best, rotation=(p, q), action=float(wmin / q), residual=res)
    _MEMO[key] = out
    return out


def clear_memo():
    _MEMO.clear()


def periodic_through(sys: SystemSpec, p: int, q: int, y: float) -> Configuration:
    """Minimal (p, q)-periodic configuration constrained to pass through x_0 = y."""
    if q == 1:
        x = np.array([y, y + p], dtype=float)
        return Configuration(x=x, rotation=(p, q), action=float(sys.h(x[0], x[1])))
    M = 4 * q
    phases = np.arange(M) / (M * q)
    Z = y + phases[:, None] * 0.0 + np.arange(1, q)[None, :] * (p / q) \
        + (phases[:, None] - phases.mean())
    Z[0] = y + np.arange(1, q) * (p / q)

    def parts(Z):
        X = np.concatenate([np.full((len(Z), 1), y), Z], axis=1)
        W, g, Hs = _periodic_parts(sys, X, p)
        return W, g[:, 1:], Hs[:, 1:, 1:]

    lam = np.full(len(Z), 1e-6)
    W, g, Hs = parts(Z)
    eye = np.eye(q - 1)
    for _ in range(300):
        if np.max(np.abs(g)) < 1e-11:
            break
        s = -np.linalg.solve(Hs + lam[:, None, None] * eye, g[..., None])[..., 0]
        Wt, gt, Ht = parts(Z + s)
        ok = Wt <= W + 1e-15 * (1.0 + np.abs(W))
        Z[ok] = Z[ok] + s[ok]
        W[ok], g[ok], Hs[ok] = Wt[ok], gt[ok], Ht[ok]
        lam = np.where(ok, np.maximum(lam / 3.0, 1e-12), lam * 10.0)
    i = int(np.argmin(W))
    x = np.concatenate([[y], Z[i], [y + p]])
    return Configuration(x=x, rotation=(p, q), action=float(W[i] / q))


# ---------------------------------------------------------------------------
# beta and alpha


def farey(max_q: int, lo: float = -1.0, hi: float = 1.0):
    """Reduced fractions p/q in [lo, hi] with q <= max_q, sorted."""
    out = set()
    for q in range(1, max_q + 1):
        for p in range(int(np.ceil(lo * q)), int(np.floor(hi * q)) + 1):
            if gcd(p, q) == 1:
                out.add(Fraction(p, q))
    return sorted(out)


@dataclass
class BetaProfile:
    """Samples of beta at rationals; ``flats`` holds the sampled subdifferential
    [left chord slope, right chord slope] at each interior sample."""

    h: np.ndarray
    beta: np.ndarray
    pq: list
    flats: list = field(default_factory=list)
    configs: list = field(default_factory=list, repr=False)

    @property
    def samples(self):
        return list(zip(self.h.tolist(), self.beta.tolist()))

    def convexity_margin(self) -> float:
        """min over consecutive triples of chord(h2) - beta(h2); negative means nonconvex."""
        h, b = self.h, self.beta
        w = (h[2:] - h[1:-1]) / (h[2:] - h[:-2])
        chord = w * b[:-2] + (1.0 - w) * b[2:]
        return float(np.min(chord - b[1:-1])) if len(h) > 2 else np.inf


def beta(sys: SystemSpec, max_q: int, h_range=(-1.0, 1.0),
         multistarts: Optional[int] = None) -> BetaProfile:
    """beta(p/q) = minimal average action over (p, q)-periodic configurations."""
    if max_q < 2:
        raise ValueError("max_q must be at least 2")
    fr = farey(max_q, *h_range)
    confs = [minimal_periodic(sys, f.numerator, f.denominator,
                              None if multistarts is None else multistarts * f.denominator)
             for f in fr]
    h = np.array([float(f) for f in fr])
    b = np.array([cf.action for cf in confs])
    slopes = np.diff(b) / np.diff(h)
    flats = [(float(h[i]), float(slopes[i - 1]), float(slopes[i])) for i in range(1, len(h) - 1)]
    return BetaProfile(h=h, beta=b, pq=[(f.numerator, f.denominator) for f in fr], flats=flats,
                       configs=confs)


@dataclass
class AlphaProfile:
    c: np.ndarray
    alpha: np.ndarray
    h_star: np.ndarray
    window_limit: np.ndarray

    def __iter__(self):
        return iter(zip(self.c.tolist(), self.alpha.tolist()))


def alpha_from_beta(profile: BetaProfile, c_grid) -> AlphaProfile:
    """alpha(c) = max_h (c h - beta(h)) over the samples; WINDOW_LIMIT at the sample edge."""
    c = np.atleast_1d(np.asarray(c_grid, dtype=float))
    vals = c[:, None] * profile.h[None, :] - profile.beta[None, :]
    j = np.argmax(vals, axis=1)
    a = vals[np.arange(len(c)), j]
    edge = (j == 0) | (j == len(profile.h) - 1)
    return AlphaProfile(c=c, alpha=a, h_star=profile.h[j], window_limit=edge)


# ---------------------------------------------------------------------------
# flats


def farey_neighbors(p: int, q: int):
    """Left and right neighbours a/b < p/q < c/d with q b - ... determinant 1 and b, d <= q."""
    if q == 1:
        return (p - 1, 1), (p + 1, 1)
    # right neighbour c/d: c q - d p = 1, 0 < d <= q
    for d in range(1, q + 1):
        if (1 + d * p) % q == 0:
            right = ((1 + d * p) // q, d)
            break
    for b in range(1, q + 1):
        if (b * p - 1) % q == 0:
            left = ((b * p - 1) // q, b)
            break
    return left, right


def _richardson(deltas, values):
    """Neville extrapolation of values(delta) to delta = 0."""
    d = list(map(float, deltas))
    T = list(map(float, values))
    n = len(T)
    for m in range(1, n):
        T = [(d[i] * T[i + 1] - d[i + m] * T[i]) / (d[i] - d[i + m]) for i in range(n - m)]
    return T[0]


def _extrapolate(deltas, slopes):
    """Richardson when the quotients drift linearly in the offset, else the finest quotient.

    At a hyperbolic periodic orbit the quotients converge exponentially and a
    linear extrapolation would overshoot.
    """
    if len(slopes) < 3:
        return _richardson(deltas, slopes)
    d1, d2 = slopes[-2] - slopes[-3], slopes[-1] - slopes[-2]
    r_off = (deltas[-1] - deltas[-2]) / (deltas[-2] - deltas[-3])
    if d1 != 0.0 and abs(d2 / d1) < 0.5 * abs(r_off):
        return float(slopes[-1])
    return _richardson(deltas, slopes)


@dataclass
class FlatEdges:
    c_minus: float
    c_plus: float
    slopes_minus: list
    slopes_plus: list

    def __iter__(self):
        return iter((self.c_minus, self.c_plus))

    @property
    def width(self):
        return self.c_plus - self.c_minus


def flat_edges(sys: SystemSpec, p: int, q: int, refine: int = 2, k0: int = 4) -> FlatEdges:
    """One-sided slopes of beta at p/q from Farey approximants (k p + p')/(k q + q').

    k runs over k0 * 2^j, j = 0..refine; the difference quotients are
    extrapolated to zero offset.
    """
    if gcd(p, q) != 1:
        raise ValueError("need gcd(p, q) = 1")
    b0 = minimal_periodic(sys, p, q).action
    (a, b), (c, d) = farey_neighbors(p, q)
    ks = [k0 * 2 ** j for j in range(refine + 1)]
    out = []
    for (pp, qq) in ((c, d), (a, b)):
        deltas, slopes = [], []
        for k in ks:
            P, Q = k * p + pp, k * q + qq
            g = gcd(P, Q)
            P, Q = P // g, Q // g
            bk = minimal_periodic(sys, P, Q).action
            dl = P / Q - p / q
            deltas.append(dl)
            slopes.append((bk - b0) / dl)
        out.append((_extrapolate(deltas, slopes), slopes))
    (cp, sp), (cm, sm) = out
    return FlatEdges(c_minus=min(cm, cp), c_plus=max(cm, cp), slopes_minus=sm, slopes_plus=sp)


# ---------------------------------------------------------------------------
# heteroclinic configurations


def _thomas(diag, off, rhs):
    """Batched symmetric tridiagonal solve; returns (x, min pivot)."""
    B, n = diag.shape
    cp = np.empty((B, n))
    dp = np.empty((B, n))
    piv = diag[:, 0].copy()
    minpiv = piv.copy()
    cp[:, 0] = off[:, 0] / piv if n > 1 else 0.0
    dp[:, 0] = rhs[:, 0] / piv
    for i in range(1, n):
        piv = diag[:, i] - off[:, i - 1] * cp[:, i - 1]
        minpiv = np.minimum(minpiv, piv)
        if i < n - 1:
            cp[:, i] = off[:, i] / piv
        dp[:, i] = (rhs[:, i] - off[:, i - 1] * dp[:, i - 1]) / piv
    x = np.empty((B, n))
    x[:, -1] = dp[:, -1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[:, i] * x[:, i + 1]
    return x, minpiv


def _segment_parts(sys, A, Z, E):
    X = np.concatenate([A[:, None], Z, E[:, None]], axis=1)
    a, b = X[:, :-1], X[:, 1:]
    W = np.sum(sys.h(a, b), axis=1)
    h1, h2 = sys.dh(a, b)
    h11, h12, h22 = sys.d2h(a, b)
    g = h2[:, :-1] + h1[:, 1:]
    diag = h22[:, :-1] + h11[:, 1:]
    off = h12[:, 1:-1]
    return W, g, diag, off


def minimize_segment(sys: SystemSpec, A, E, Z0, lo=None, hi=None, gtol=1e-12, max_iter=200):
    """Minimize sum h over x_0 = A, x_1..x_{n} = Z, x_{n+1} = E, batched over rows.

    Damped Newton with a tridiagonal Hessian; iterates are clamped to the
    band [lo, hi] when given.
    """
    A = np.atleast_1d(np.asarray(A, dtype=float))
    E = np.atleast_1d(np.asarray(E, dtype=float))
    Z = np.array(Z0, dtype=float, ndmin=2)
    if Z.shape[1] == 0:
        W = sys.h(A, E)
        return Z, np.atleast_1d(W), np.zeros(len(A))
    lam = np.full(len(A), 1e-8)
    W, g, diag, off = _segment_parts(sys, A, Z, E)
    for _ in range(max_iter):
        gn = np.max(np.abs(g), axis=1)
        act = gn >= gtol
        if not act.any():
            break
        ia = np.flatnonzero(act)
        s, piv = _thomas(diag[ia] + lam[ia, None], off[ia], -g[ia])
        bad = ~(piv > 0) | ~np.all(np.isfinite(s), axis=1)
        s[bad] = -g[ia][bad] / (1.0 + lam[ia][bad, None])
        Zt = Z[ia] + s
        if lo is not None:
            Zt = np.clip(Zt, lo[ia], hi[ia])
        Wt, gt, dt_, ot = _segment_parts(sys, A[ia], Zt, E[ia])
        ok = (Wt <= W[ia] + 1e-14 * (1.0 + np.abs(W[ia]))) & ~bad
        acc = ia[ok]
        Z[acc] = Zt[ok]
        W[acc], g[acc], diag[acc], off[acc] = Wt[ok], gt[ok], dt_[ok], ot[ok]
        lam[acc] = np.maximum(lam[acc] / 4.0, 1e-14)
        lam[ia[~ok]] *= 8.0
        if np.all(lam[ia] > 1e14):
            break
    return Z, W, np.max(np.abs(g), axis=1)


@dataclass
class _Gap:
    lo: float
    hi: float
    lower: np.ndarray
    upper: np.ndarray


def _orbit_points(X: Configuration):
    """Sorted orbit points in [x_0, x_0 + 1) with the index of each point."""
    q, p = X.q, X.p
    pts = np.mod(X.x[:q] - X.x[0], 1.0) + X.x[0]
    order = np.argsort(pts)
    return pts[order], order


def _periodic_window(X: Configuration, j0: int, shift: float, N: int):
    """Values of the configuration index-shifted by j0 and translated: times -N..0."""
    return X.extend(j0 - N, j0) + shift


def _gap_of(X: Configuration, y: float, N: int):
    """Lower and upper periodic neighbours (times -N..0) of the point y."""
    q = X.q
    pts, order = _orbit_points(X)
    m = np.floor(y - X.x[0])
    r = y - m
    k = int(np.searchsorted(pts, r, side="right")) - 1
    j_lo = int(order[k])
    lo_val = pts[k] + m
    if k + 1 < q:
        j_hi, hi_val = int(order[k + 1]), pts[k + 1] + m
    else:
        j_hi, hi_val = int(order[0]), pts[0] + m + 1.0
    low = _periodic_window(X, j_lo, lo_val - X.x[j_lo], N)
    up = _periodic_window(X, j_hi, hi_val - X.x[j_hi], N)
    return _Gap(lo=float(lo_val), hi=float(hi_val), lower=low, upper=up)


def _is_degenerate(sys, X: Configuration, tol=1e-11):
    """True when a minimal periodic configuration passes through the middle of a gap."""
    pts, _ = _orbit_points(X)
    ext = np.append(pts, pts[0] + 1.0)
    k = int(np.argmax(np.diff(ext)))
    mid = 0.5 * (ext[k] + ext[k + 1])
    return periodic_through(sys, X.p, X.q, mid).action <= X.action + tol * (1 + abs(X.action))


def _default_window(q):
    return max(8, int(np.ceil(60.0 / q)))


APPROACH_RATES = (0.5, 1.0, 1.75, 3.0)
TRANSIT_TIMES = (1, 3, 6, 12, 24)


def _heteroclinic_batch(sys, X, sign, ys, N, gap=None, shortcut=True):
    """Endpoint-anchored segments x_{-N}..x_0 for many endpoints at once.

    Each endpoint is tried from several initial guesses that cross the gap
    at different times before the end (the minimizer switches between such
    branches at kinks of the one-sided solutions); the lowest action wins.
    With ``gap`` given, every endpoint uses that gap's neighbours; with
    ``shortcut``, endpoints on the orbit return the periodic configuration.
    """
    ys = np.asarray(ys, dtype=float)
    gaps = [gap or _gap_of(X, y, N) for y in ys]
    lower = np.array([g.lower for g in gaps])
    upper = np.array([g.upper for g in gaps])
    anchor = lower if sign == "+" else upper
    other = upper if sign == "+" else lower
    B = len(ys)
    j = np.arange(-N, 1)[None, :]
    guesses = []
    for rate in APPROACH_RATES:
        w = np.exp(j * rate / X.q)
        guesses.append(np.clip(anchor + (ys[:, None] - anchor[:, -1:]) * w, lower, upper)[:, 1:-1])
    for tc in TRANSIT_TIMES:
        s = 1.0 / (1.0 + np.exp(-1.5 * (j + tc)))
        Z = anchor + (other - anchor) * s
        Z[:, -1] = ys
        guesses.append(np.clip(Z, lower, upper)[:, 1:-1])
    K = len(guesses)
    Zs = np.concatenate(guesses)
    rep = lambda a: np.tile(a, (K,) + (1,) * (a.ndim - 1))
    Z, W, gn = minimize_segment(sys, rep(anchor[:, 0]), rep(ys), Zs,
                                rep(lower[:, 1:-1]), rep(upper[:, 1:-1]))
    W = np.where(gn < 1e-8, W, np.inf).reshape(K, B)
    best = np.argmin(W, axis=0)
    rows = best * B + np.arange(B)
    xs = np.concatenate([anchor[:, :1], Z[rows], ys[:, None]], axis=1)
    W, gn = W[best, np.arange(B)], gn[rows]
    gn = np.where(np.isfinite(W), gn, np.inf)
    if shortcut:
        for i in range(B):
            g = gaps[i]
            if min(ys[i] - g.lo, g.hi - ys[i]) < 1e-13:
                src = g.lower if abs(ys[i] - g.lo) <= abs(ys[i] - g.hi) else g.upper
                xs[i] = src - src[-1] + ys[i]
                W[i] = np.sum(sys.h(xs[i][:-1], xs[i][1:]))
                gn[i] = 0.0
    return xs, W, gn


def heteroclinic_config(sys: SystemSpec, p: int, q: int, sign: str, endpoint: float,
                        window: Optional[int] = None,
                        periodic: Optional[Configuration] = None) -> Configuration:
    """Backward (p/q)^sign minimal segment x_{-window q}..x_0 ending at ``endpoint``.

    The far end is clamped to the neighbouring periodic minimal configuration:
    the one through the orbit point just below the endpoint for sign '+',
    just above for '-'.
    """
    if sign not in "+-" or len(sign) != 1:
        raise ValueError("sign must be '+' or '-'")
    X = periodic if periodic is not None else minimal_periodic(sys, p, q)
    gap = _gap_of(X, endpoint, 1)
    if min(endpoint - gap.lo, gap.hi - endpoint) >= 1e-13 and _is_degenerate(sys, X):
        raise FlatDegenerate(f"rotation {p}/{q} has no gap: periodic minimizers fill the circle")
    N = (window or _default_window(q)) * q
    xs, W, gn = _heteroclinic_batch(sys, X, sign, [endpoint], N)
    if gn[0] > 1e-8:
        raise NoConvergence("heteroclinic segment did not converge", residual=float(gn[0]))
    return Configuration(x=xs[0], rotation=((p, q), sign), action=float(W[0]), start=-N,
                         kind="heteroclinic", residual=float(gn[0]))


@dataclass
class UpqResult:
    x: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    x0: float
    degenerate: bool = False


def _cumtrapz(y, x):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def build_u_pq(sys: SystemSpec, p: int, q: int, x_grid=None, n: int = 512,
               window: Optional[int] = None) -> UpqResult:
    """Integrated endpoint momenta of the (p/q)^+ and (p/q)^- backward segments.

    u_+-(x) = int_{x0}^x d2h(xi_y(-1), y) dy with x0 the orbit point of the
    normalized periodic minimizer.  If periodic minimizers fill the circle,
    both use the periodic configuration through each y.
    """
    X = minimal_periodic(sys, p, q)
    x0 = float(X.x[0])
    xg = x0 + np.arange(n + 1) / n if x_grid is None else np.asarray(x_grid, dtype=float)
    N = (window or _default_window(q)) * q
    degenerate = _is_degenerate(sys, X)
    if degenerate:
        mom = np.array([sys.dh(*periodic_through(sys, p, q, y).x[-2:])[1] for y in xg])
        pp = pm = mom
    else:
        moms = []
        for sign in "+-":
            xs, W, gn = _heteroclinic_batch(sys, X, sign, xg, N)
            if np.max(gn) > 1e-8:
                raise NoConvergence("heteroclinic segments did not converge",
                                    residual=float(np.max(gn)))
            moms.append(sys.dh(xs[:, -2], xs[:, -1])[1])
        pp, pm = moms
    return UpqResult(x=xg, u_plus=_cumtrapz(pp, xg), u_minus=_cumtrapz(pm, xg), p_plus=pp,
                     p_minus=pm, x0=x0, degenerate=degenerate)


# ---------------------------------------------------------------------------
# splitting point


def _split_fn(sys, X, gap_i, c, N):
    pts, order = _orbit_points(X)
    ext = np.append(pts, pts[0] + 1.0)
    lo, hi = float(ext[gap_i]), float(ext[gap_i + 1])
    gap = _gap_of(X, 0.5 * (lo + hi), N)

    def D(xs):
        xs = np.atleast_1d(xs)
        _, Wp, g1 = _heteroclinic_batch(sys, X, "+", xs, N, gap, shortcut=False)
        _, Wm, g2 = _heteroclinic_batch(sys, X, "-", xs, N, gap, shortcut=False)
        if max(np.max(g1), np.max(g2)) > 1e-8:
            raise NoConvergence("heteroclinic segment did not converge")
        return Wm - Wp + c * (hi - lo)

    return D, lo, hi


def splitting_difference(sys: SystemSpec, p: int, q: int, c: float, xs, i: int = 0,
                         window: Optional[int] = None):
    """D(x) = A_c^-(x_{i+m}, x) - A_c^+(x_i, x) on the i-th gap (nonincreasing in x)."""
    X = minimal_periodic(sys, p, q)
    N = (window or _default_window(q)) * q
    D, lo, hi = _split_fn(sys, X, i % q, c, N)
    return D(xs), (lo, hi)


def splitting_point(sys: SystemSpec, p: int, q: int, c: float, i: int = 0,
                    window: Optional[int] = None, xtol: float = 1e-12,
                    dtol: float = 1e-13) -> float:
    """Zero of the one-sided heteroclinic action difference on the gap (x_i, x_{i+m}).

    Gaps are indexed by the sorted orbit points in [x_0, x_0 + 1); for q = 1
    the gap is (x_0, x_0 + 1).  If the zero set is an interval its midpoint
    is returned.
    """
    X = minimal_periodic(sys, p, q)
    if _is_degenerate(sys, X):
        raise FlatDegenerate(f"rotation {p}/{q} has no gap")
    N = (window or _default_window(q)) * q
    D, lo, hi = _split_fn(sys, X, i % q, c, N)
    d_lo, d_hi = D([lo, hi])
    if not (d_lo > dtol and d_hi < -dtol):
        raise BisectionFail("no sign change of the action difference on the gap; "
                            "c is outside the flat or the window is too short",
                            d_lo=float(d_lo), d_hi=float(d_hi), c=c)

    f = lambda x: float(D([x])[0])
    z = brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    eta = 1e3 * xtol
    if abs(f(max(lo, z - eta))) > dtol or abs(f(min(hi, z + eta))) > dtol:
        return float(z)

    def edge(pred, a, b):
        while b - a > xtol:
            m = 0.5 * (a + b)
            if pred(f(m)):
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    # the zero set is an interval: return its midpoint
    z_minus = edge(lambda v: v > dtol, lo, z)
    z_plus = edge(lambda v: v >= -dtol, z, hi)
    return 0.5 * (z_minus + z_plus)


# ---------------------------------------------------------------------------
# structural checks


def crossing_count(x, y) -> int:
    """Number of strict sign changes of x_i - y_i along two sequences of equal length."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    s = np.sign(d[np.abs(d) > 1e-12])
    return int(np.sum(s[1:] != s[:-1]))


def translates_cross(X: Configuration, span: int = 3, shifts=range(-2, 3)) -> bool:
    """True if the periodic configuration crosses any of its translates x_{i+k} + l."""
    q = X.q
    base = X.extend(0, span * q)
    for k in range(q):
        for l in shifts:
            if k == 0 and l == 0:
                continue
            other = X.extend(k, k + span * q) + l
            if crossing_count(base, other) > 0:
                return True
    return False


def graph_lipschitz(sys: SystemSpec, X: Configuration) -> float:
    """Largest |p_i - p_j| / |x_i - x_j| over orbit points (mod 1) of a periodic configuration."""
    q = X.q
    ext = X.extend(-1, q)
    mom = sys.dh(ext[:-1], ext[1:])[1][:q]
    pts = np.mod(ext[1:q + 1], 1.0)
    if q < 2:
        return 0.0
    dx = np.abs(pts[:, None] - pts[None, :])
    dx = np.minimum(dx, 1.0 - dx)
    dp = np.abs(mom[:, None] - mom[None, :])
    iu = np.triu_indices(q, 1)
    return float(np.max(dp[iu] / dx[iu]))
