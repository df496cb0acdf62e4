"""Backward weak KAM solutions by Lax-Oleinik iteration.

Two backends share one data model:

* ``continuous``: semi-Lagrangian solver for  u_t + H(x, u_x + c, t) = alpha(c)
  on an nx x nt grid of the space-time torus;
* ``discrete``: Bellman iteration with the generating function as one-step
  cost on the t = 0 section (nt = 1).

For mechanical systems the inner minimization over the departure point is
done in closed form on each cell of the piecewise-linear interpolant, which
makes the scheme exactly monotone and exact on constants.  Other systems
fall back to a sub-grid scan with parabolic refinement.

All functions store u without the linear part c*x.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySet, NoConvergence
from .systems import SystemSpec, reversed_system

KINK_FLOOR = 1e-3
DEFAULT_DAMPING = 0.5


@dataclass
class GridFunction:
    """Values on the periodic (x, t) grid, indexed [i_x, i_t]."""

    values: np.ndarray

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def nt(self) -> int:
        return self.values.shape[1]

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return 1.0 / self.nt

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt


@dataclass
class WeakKamSolution:
    u: GridFunction
    c: float
    alpha: float
    p_left: GridFunction
    p_right: GridFunction
    singular_mask: np.ndarray
    lipschitz_K: float
    semiconcavity_C: float
    backend: str
    kink_threshold: float
    iterations: int = 0
    residual: float = 0.0
    pin: Optional[float] = None
    flags: list = field(default_factory=list)
    # displacement x_i - y* of the minimizer of step k (arrival row k+1)
    displacement: Optional[np.ndarray] = field(default=None, repr=False)
    sys: Optional[SystemSpec] = field(default=None, repr=False)

    @property
    def nx(self) -> int:
        return self.u.nx

    @property
    def nt(self) -> int:
        return self.u.nt

    @property
    def dx(self) -> float:
        return self.u.dx

    @property
    def dt(self) -> float:
        return self.u.dt


# ---------------------------------------------------------------------------
# inner minimization kernels


class _Kernel:
    """Closed-form inf-convolution of a piecewise-linear function.

    Computes  w_i = min_y [ v(y) + (x_i - y)^2 / (2 tau) - c (x_i - y) ]
    for a batch of rows, with y restricted to a window of half-width
    ``half * tau`` centred at the free minimizer displacement c * tau.
    On the cell [y_j, y_j + dx] the minimizer is explicit, so only the cell
    index is searched.
    """

    def __init__(self, n: int, tau: float, cs: np.ndarray, half: float):
        self.n = n
        self.dx = 1.0 / n
        self.tau = float(tau)
        self.cs = np.asarray(cs, dtype=float)
        K = int(np.ceil(half * tau / self.dx)) + 1
        self.K = K
        k0 = np.floor(self.cs * tau / self.dx).astype(int)
        # column m of the window holds cell offset k = k0 + K - m
        self.ks = (k0[:, None] + K - np.arange(2 * K)[None, :]).astype(float)
        self.shift = (np.arange(n)[None, :] - k0[:, None]) % n
        self.pad = (np.arange(n + 2 * K - 1) - K) % n
        self.rows = np.arange(len(self.cs))[:, None]

    def _windows(self, a):
        a = a[self.rows, self.shift][:, self.pad]
        return np.lib.stride_tricks.sliding_window_view(a, 2 * self.K, axis=1)

    def __call__(self, v: np.ndarray):
        dx, tau = self.dx, self.tau
        s = (np.roll(v, -1, axis=1) - v) / dx
        sj = self._windows(s)
        vj = self._windows(v)
        ks = self.ks[:, None, :]
        c = self.cs[:, None, None]
        th = np.clip(ks - tau * (sj + c) / dx, 0.0, 1.0)
        d = (ks - th) * dx
        val = vj + th * dx * sj + d * d / (2.0 * tau) - c * d
        a = np.argmin(val, axis=2)[..., None]
        w = np.take_along_axis(val, a, 2)[..., 0]
        disp = np.take_along_axis(d, a, 2)[..., 0]
        tha = np.take_along_axis(th, a, 2)[..., 0]
        last = self.ks.shape[1] - 1
        # column 0 is the largest offset, the last column the smallest
        hit = bool(np.any(((a[..., 0] == last) & (tha == 1.0)) | ((a[..., 0] == 0) & (tha == 0.0))))
        return w, disp, hit


def _interp_periodic(v: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Linear interpolation of nodal values v (period 1) at points y."""
    n = v.shape[-1]
    s = y * n
    j = np.floor(s).astype(int)
    th = s - j
    j0 = j % n
    j1 = (j + 1) % n
    return (1.0 - th) * np.take(v, j0) + th * np.take(v, j1)


class _ScanKernel:
    """Sub-grid scan of a general one-step cost with parabolic refinement."""

    def __init__(self, n, tau, cs, half, cost, refine=4):
        self.n = n
        self.dx = 1.0 / n
        self.cs = np.asarray(cs, dtype=float)
        self.cost = cost
        self.half = half * tau
        step = self.dx / refine
        self.tau = tau
        self.offsets = [np.arange(-np.ceil(self.half / step), np.ceil(self.half / step) + 1) * step
                        + c * tau for c in self.cs]

    def __call__(self, v):
        x = np.arange(self.n) * self.dx
        ws, ds = [], []
        for b, (c, off) in enumerate(zip(self.cs, self.offsets)):
            d = off[None, :]
            y = x[:, None] - d

            def f(dd, yy):
                return _interp_periodic(v[b], yy) + self.cost(yy, dd) - c * dd

            val = f(d, y)
            a = np.clip(np.argmin(val, axis=1), 1, d.shape[1] - 2)
            r = np.arange(self.n)
            f0, f1, f2 = val[r, a - 1], val[r, a], val[r, a + 1]
            h = off[1] - off[0]
            den = f0 - 2 * f1 + f2
            shift = np.where(den > 0, 0.5 * h * (f0 - f2) / np.where(den > 0, den, 1.0), 0.0)
            shift = np.clip(shift, -h, h)
            dstar = off[a] + shift
            fstar = f(dstar, x - dstar)
            better = fstar < f1
            ws.append(np.where(better, fstar, f1))
            ds.append(np.where(better, dstar, off[a]))
        return np.array(ws), np.array(ds), False


class LaxOleinik:
    """Time-1 Lax-Oleinik operator T_c for a batch of cohomology classes."""

    def __init__(self, sys: SystemSpec, cs, nx: int, nt: int = 1, backend: str = "continuous"):
        self.sys = sys
        self.cs = np.atleast_1d(np.asarray(cs, dtype=float))
        self.nx = int(nx)
        self.backend = backend
        self.nt = int(nt) if backend == "continuous" else 1
        self.x = np.arange(self.nx) / self.nx
        half = sys.window
        if backend == "continuous":
            dt = 1.0 / self.nt
            self.tau = dt
            if sys.mechanical:
                self.kernel = _Kernel(self.nx, dt, self.cs, half)
                self.pre = [dt * sys.potential(self.x, k * dt) for k in range(self.nt)]
                self.post = None
            else:
                self.kernel = None
                self._scan = [
                    _ScanKernel(self.nx, dt, self.cs, half,
                                lambda y, d, t=k * dt: dt * sys.L(y, d / dt, t))
                    for k in range(self.nt)
                ]
        elif backend == "discrete":
            self.tau = 1.0
            if sys.mechanical:
                self.kernel = _Kernel(self.nx, 1.0, self.cs, half)
                self.pre = [sys.kick(self.x)]
                self.post = sys.arrival(self.x)
            else:
                self.kernel = None
                self._scan = [_ScanKernel(self.nx, 1.0, self.cs, half,
                                          lambda y, d: sys.h(y, y + d))]
        else:
            raise ValueError(f"unknown backend {backend!r}")
        self.window_hit = False

    def step(self, u: np.ndarray, k: int = 0):
        """Advance rows u (batch, nx) from t_k to t_{k+1}; returns (w, displacement)."""
        if self.kernel is None:
            w, d, hit = self._scan[k](u)
        else:
            w, d, hit = self.kernel(u + self.pre[k])
            if self.post is not None:
                w = w + self.post
        self.window_hit |= hit
        return w, d

    def __call__(self, u: np.ndarray) -> np.ndarray:
        for k in range(self.nt):
            u = self.step(u, k)[0]
        return u

    def rows(self, u0: np.ndarray, alpha: np.ndarray):
        """All rows of one period starting from u0 (batch, nx), with +alpha*dt per step."""
        B = u0.shape[0]
        U = np.empty((B, self.nx, self.nt))
        D = np.empty((B, self.nx, self.nt))
        u = u0
        for k in range(self.nt):
            U[:, :, k] = u
            u, d = self.step(u, k)
            u = u + alpha[:, None] / self.nt
            D[:, :, k] = d
        return U, D, u


def lax_oleinik_step(sys: SystemSpec, u_row, c: float, t_k: float, dt: float) -> np.ndarray:
    """One semi-Lagrangian step  u_{k+1}(x) = min_y [u_k(y) + dt L(y, (x-y)/dt, t_k) - c (x-y)]."""
    u_row = np.asarray(u_row, dtype=float)
    n = u_row.size
    x = np.arange(n) / n
    if sys.mechanical:
        kern = _Kernel(n, dt, [c], sys.window)
        w, _, _ = kern((u_row + dt * sys.potential(x, t_k))[None, :])
    else:
        kern = _ScanKernel(n, dt, [c], sys.window, lambda y, d: dt * sys.L(y, d / dt, t_k))
        w, _, _ = kern(u_row[None, :])
    return w[0]


# ---------------------------------------------------------------------------
# derivative fields


def one_sided_derivatives(U: np.ndarray):
    """First-order one-sided x-differences of a periodic grid (nx, nt)."""
    n = U.shape[0]
    p_left = (U - np.roll(U, 1, axis=0)) * n
    p_right = (np.roll(U, -1, axis=0) - U) * n
    return p_left, p_right


def semiconcavity_constant(U: np.ndarray) -> float:
    n = U.shape[0]
    d2 = np.roll(U, -1, axis=0) + np.roll(U, 1, axis=0) - 2.0 * U
    return float(max(np.max(d2), 0.0) * n * n)


def _assemble(sys, c, alpha, U, D, backend, iterations, residual, kink_threshold=None,
              pin=None, flags=None) -> WeakKamSolution:
    p_left, p_right = one_sided_derivatives(U)
    C = semiconcavity_constant(U)
    dx = 1.0 / U.shape[0]
    thr = kink_threshold if kink_threshold is not None else max(10.0 * dx * C, KINK_FLOOR)
    mask = (p_left - p_right) > thr
    K = float(max(np.max(np.abs(p_left)), np.max(np.abs(p_right))))
    return WeakKamSolution(
        u=GridFunction(U), c=float(c), alpha=float(alpha), p_left=GridFunction(p_left),
        p_right=GridFunction(p_right), singular_mask=mask, lipschitz_K=K, semiconcavity_C=C,
        backend=backend, kink_threshold=float(thr), iterations=int(iterations),
        residual=float(residual), pin=pin, flags=list(flags or []), displacement=D, sys=sys,
    )


# ---------------------------------------------------------------------------
# fixed points


_CACHE: "OrderedDict[tuple, WeakKamSolution]" = OrderedDict()
_CACHE_SIZE = 96


def _cache_get(key):
    if key in _CACHE:
        _CACHE.move_to_end(key)
        return _CACHE[key]
    return None


def _cache_put(key, sol):
    _CACHE[key] = sol
    while len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)


def clear_cache():
    _CACHE.clear()


def _fixed_points(op: LaxOleinik, tol: float, max_periods: int, damping: float, u0=None):
    """Damped iteration u <- u + lam (T u - u - mean) until osc(T u - u) < tol.

    Plain iteration T^n u + n alpha need not converge for time-periodic
    systems (it can cycle with the period of the Aubry set); the damped map
    has the same fixed points and no cycles.
    """
    B = len(op.cs)
    u = np.zeros((B, op.nx)) if u0 is None else np.array(u0, dtype=float).reshape(B, op.nx)
    done = np.zeros(B, dtype=bool)
    alpha = np.zeros(B)
    res = np.full(B, np.inf)
    n = 0
    for n in range(1, max_periods + 1):
        active = ~done
        w = op(u)
        d = w - u
        a = d.mean(axis=1)
        osc = d.max(axis=1) - d.min(axis=1)
        alpha[active] = -a[active]
        res[active] = osc[active]
        done |= osc < tol
        if done.all():
            break
        upd = np.where(done[:, None], 0.0, damping * (d - a[:, None]))
        u = u + upd
    if not done.all():
        raise NoConvergence(
            f"Lax-Oleinik iteration did not reach tol={tol:g} in {max_periods} periods",
            residual=float(np.max(res[~done])), c=op.cs[~done].tolist())
    return u - u.mean(axis=1, keepdims=True), alpha, n, res


def solve_weak_kam_batch(sys: SystemSpec, cs: Sequence[float], nx: int = 512, nt: int = 256,
                         tol: float = 1e-9, max_periods: int = 2000,
                         damping: float = DEFAULT_DAMPING, backend: str = "continuous",
                         kink_threshold: Optional[float] = None):
    """Solve several cohomology classes in one vectorized sweep (results cached)."""
    cs = [float(c) for c in np.atleast_1d(cs)]
    if backend == "continuous" and (nx < 64 or nt < 32):
        raise ValueError("continuous backend needs nx >= 64 and nt >= 32")
    ntb = nt if backend == "continuous" else 1
    keys = [(sys.key, backend, c, nx, ntb, tol, damping, kink_threshold) for c in cs]
    out = {k: _cache_get(k) for k in keys}
    todo = [c for c, k in zip(cs, keys) if out[k] is None]
    todo = list(dict.fromkeys(todo))
    if todo:
        op = LaxOleinik(sys, todo, nx, ntb, backend)
        u, alpha, n, res = _fixed_points(op, tol, max_periods, damping)
        U, D, _ = op.rows(u, alpha)
        flags = ["WINDOW_LIMIT"] if op.window_hit else []
        for b, c in enumerate(todo):
            sol = _assemble(sys, c, alpha[b], U[b], D[b], backend, n, res[b],
                            kink_threshold, flags=flags)
            key = (sys.key, backend, c, nx, ntb, tol, damping, kink_threshold)
            _cache_put(key, sol)
            out[key] = sol
    return [out[k] for k in keys]


def solve_weak_kam(sys: SystemSpec, c: float, nx: int = 512, nt: int = 256, tol: float = 1e-9,
                   max_periods: int = 2000, damping: float = DEFAULT_DAMPING,
                   kink_threshold: Optional[float] = None) -> WeakKamSolution:
    """Weak KAM solution of the evolutionary HJ equation on the (x, t) torus."""
    return solve_weak_kam_batch(sys, [c], nx, nt, tol, max_periods, damping, "continuous",
                                kink_threshold)[0]


def discrete_weak_kam(sys: SystemSpec, c: float, nx: int = 512, tol: float = 1e-12,
                      max_iters: int = 5000, damping: float = DEFAULT_DAMPING,
                      kink_threshold: Optional[float] = None) -> WeakKamSolution:
    """Fixed point of u(x) = min_y [u(y) + h(y, x) - c (x - y)] + alpha on the t = 0 section.

    Returned as a WeakKamSolution with a single time row; ``u.values[:, 0]``
    is the section function.
    """
    return solve_weak_kam_batch(sys, [c], nx, 1, tol, max_iters, damping, "discrete",
                                kink_threshold)[0]


def alpha_prime(cs, alphas, c: float) -> float:
    """Centered difference of a sampled alpha profile at c (one-sided at the ends)."""
    cs = np.asarray(cs, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    i = int(np.argmin(np.abs(cs - c)))
    lo, hi = max(i - 1, 0), min(i + 1, len(cs) - 1)
    return float((alphas[hi] - alphas[lo]) / (cs[hi] - cs[lo]))


# ---------------------------------------------------------------------------
# Peierls barrier and Aubry set


@dataclass
class BarrierResult:
    x: np.ndarray
    values: np.ndarray
    alpha: float
    x0: np.ndarray
    oscillation: float
    periods: int


def _barrier_batch(sys, c, x0s, nx, nt, backend, alpha, periods, tail, tol):
    op = LaxOleinik(sys, [c] * len(x0s), nx, nt, backend)
    M = 10.0 * (sys.v_max ** 2 + sys.potential_max + 1.0)
    u = np.full((len(x0s), nx), M)
    idx = np.rint(np.asarray(x0s) * nx).astype(int) % nx
    u[np.arange(len(x0s)), idx] = 0.0
    hist = []
    for _ in range(periods):
        u = np.minimum(op(u) + alpha, M)
        hist.append(u)
    last = np.min(hist[-tail:], axis=0)
    prev = np.min(hist[-2 * tail:-tail], axis=0) if periods >= 2 * tail else None
    osc = float(np.max(np.abs(last - prev))) if prev is not None else np.inf
    if osc > tol:
        raise NoConvergence("Peierls barrier tail window still moving", residual=osc, c=c)
    return last, idx / nx, osc


def _alpha_for(sys, c, nx, nt, backend, tol):
    if backend == "continuous":
        return solve_weak_kam(sys, c, nx, nt, tol=tol).alpha
    return discrete_weak_kam(sys, c, nx, tol=tol).alpha


def peierls_barrier(sys: SystemSpec, c: float, x0, nx: int = 512, periods: int = 64,
                    tail: int = 16, nt: int = 256, backend: str = "continuous",
                    tol: float = 1e-6, alpha: Optional[float] = None) -> BarrierResult:
    """h_c^inf((x0, 0), (., 0)) as the min over the last ``tail`` periods of T^n delta_x0 + n alpha.

    ``x0`` may be a scalar or a sequence of seeds (solved as one batch).
    """
    if not periods >= tail >= 8:
        raise ValueError("need periods >= tail >= 8")
    x0s = np.atleast_1d(np.asarray(x0, dtype=float)) % 1.0
    if alpha is None:
        alpha = _alpha_for(sys, c, nx, nt, backend, 1e-11 if backend == "discrete" else 1e-10)
    vals, xs0, osc = _barrier_batch(sys, c, x0s, nx, nt, backend, alpha, periods, tail, tol)
    out = vals[0] if np.ndim(x0) == 0 else vals
    return BarrierResult(x=np.arange(nx) / nx, values=out, alpha=float(alpha), x0=xs0,
                         oscillation=osc, periods=periods)


def reverse_barrier(sys: SystemSpec, c: float, x0, nx: int = 512, periods: int = 64,
                    tail: int = 16, nt: int = 256, backend: str = "continuous",
                    tol: float = 1e-6, alpha: Optional[float] = None) -> BarrierResult:
    """h_c^inf((., 0), (x0, 0)), computed as a forward barrier of the time-reversed system at -c."""
    return peierls_barrier(reversed_system(sys), -c, x0, nx, periods, tail, nt, backend, tol,
                           alpha)


@dataclass
class AubryEstimate:
    """Section points of the Aubry set estimate.

    ``indicator`` is the barrier sum h(x0, x) + h(x, x0) (min over seeds),
    ``upper`` its barrier-iteration upper bound; ``gap`` the largest
    difference between them over seeds.
    """

    points: np.ndarray
    indicator: np.ndarray
    upper: np.ndarray
    seeds: list
    tol: float
    x: np.ndarray
    gap: float
    flags: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def nearest_to_zero(self):
        """Point closest to 0 on the circle; ties go to the nonnegative side."""
        d = _circ(self.points)
        cand = self.points[np.abs(d - np.min(d)) < 1e-12]
        tie = len(cand) > 1
        x0 = float(np.min(cand[cand <= 0.5])) if np.any(cand <= 0.5) else float(cand[0])
        return x0, tie


def backward_limit_points(sol: WeakKamSolution, periods: int = 40) -> np.ndarray:
    """Follow backward calibrated curves from every node for ``periods`` periods.

    Returns the section positions (mod 1) reached; they accumulate on the
    Aubry set.
    """
    D = sol.displacement
    y = sol.u.x.copy()
    for _ in range(periods):
        for k in range(sol.nt - 1, -1, -1):
            y = y - _interp_periodic(D[:, k], y % 1.0)
    return np.sort(y % 1.0)


def _clusters(points, gap):
    pts = np.sort(np.asarray(points) % 1.0)
    if len(pts) == 0:
        return []
    groups = [[pts[0]]]
    for p in pts[1:]:
        if p - groups[-1][-1] > gap:
            groups.append([p])
        else:
            groups[-1].append(p)
    if len(groups) > 1 and pts[0] + 1.0 - pts[-1] <= gap:
        groups[0] = [g - 1.0 for g in groups[-1]] + groups[0]
        groups.pop()
    return [float(np.median(g)) % 1.0 for g in groups]


def _circ(x):
    x = np.asarray(x) % 1.0
    return np.minimum(x, 1.0 - x)


def _fixed(sys, c, nx, nt, backend):
    if backend == "continuous":
        return solve_weak_kam(sys, c, nx, nt, tol=1e-10)
    return discrete_weak_kam(sys, c, nx, tol=1e-11)


def aubry_set_estimate(sys: SystemSpec, c: float, nx: int = 512, nt: int = 256,
                       backend: str = "continuous", aubry_tol: Optional[float] = None,
                       periods: int = 64, tail: int = 16, gap_tol: Optional[float] = None,
                       max_seeds: int = 8) -> AubryEstimate:
    """Grid points x with h_c^inf(x0, x) + h_c^inf(x, x0) < aubry_tol for some seed x0.

    Seeds are limit points of backward calibrated curves, taken nearest to 0
    first; each accepted seed marks one Aubry class.  The barrier sum is
    bracketed: below by u(x) - u(x0) + u_r(x) - u_r(x0) with u, u_r fixed
    points of T_c and of the reversed operator (equality when the class is
    unique), above by barrier iteration.  The lower bracket is used when the
    two agree within ``gap_tol`` (default 10 dx); default ``aubry_tol`` is 10 dx^2.
    A seed is accepted when its barrier upper bound at x0 is below ``gap_tol``.
    """
    ntb = nt if backend == "continuous" else 1
    if aubry_tol is None:
        aubry_tol = 10.0 / nx ** 2
    if gap_tol is None:
        gap_tol = 10.0 / nx
    rsys = reversed_system(sys)
    sol = _fixed(sys, c, nx, ntb, backend)
    rsol = _fixed(rsys, -c, nx, ntb, backend)
    u0 = sol.u.values[:, 0]
    r0 = rsol.u.values[:, 0]
    x = sol.u.x
    ind = np.full(nx, np.inf)
    upper = np.full(nx, np.inf)
    seeds = _clusters(backward_limit_points(sol), 3.0 / nx)
    seeds.sort(key=lambda s: (_circ(s), s))
    used, flags = [], []
    gap = 0.0
    covered = np.zeros(nx, dtype=bool)
    for s in seeds:
        if len(used) >= max_seeds:
            flags.append("SEED_LIMIT")
            break
        i = int(np.rint(s * nx)) % nx
        if covered[i]:
            continue
        fwd = _barrier_batch(sys, c, [x[i]], nx, ntb, backend, sol.alpha, periods, tail,
                             np.inf)[0][0]
        rev = _barrier_batch(rsys, -c, [x[i]], nx, ntb, backend, rsol.alpha, periods, tail,
                             np.inf)[0][0]
        up = fwd + rev
        # barrier iteration carries an O(dx) floor from interpolation
        if up[i] > gap_tol:
            continue
        low = (u0 - u0[i]) + (r0 - r0[i])
        g = float(np.max(up - low))
        gap = max(gap, g)
        S = low if g <= gap_tol else up - up[i]
        if g > gap_tol:
            flags.append("MULTI_CLASS")
        ind = np.minimum(ind, S)
        upper = np.minimum(upper, up)
        covered |= S < aubry_tol
        used.append(float(x[i]))
    pts = x[ind < aubry_tol]
    if len(pts) == 0:
        raise EmptySet("no grid point below aubry_tol", aubry_tol=aubry_tol, c=c)
    return AubryEstimate(points=pts, indicator=ind, upper=upper, seeds=used,
                         tol=float(aubry_tol), x=x, gap=gap, flags=flags)


def pinned_solution(sys: SystemSpec, c: float, nx: int = 512, nt: int = 256,
                    periods: int = 64, tail: int = 16, aubry_tol: Optional[float] = None,
                    gap_tol: Optional[float] = None) -> WeakKamSolution:
    """u_c(., t) = h_c^inf((x0, 0), (., t)) with x0 the Aubry-estimate point nearest 0.

    When the barrier bracket of ``aubry_set_estimate`` closes, the pinned
    function is the fixed point normalized to vanish at (x0, 0); otherwise
    the barrier iterate itself is propagated through one period.
    """
    key = ("pinned", sys.key, float(c), nx, nt, periods, tail, aubry_tol, gap_tol)
    hit = _cache_get(key)
    if hit is not None:
        return hit
    if gap_tol is None:
        gap_tol = 10.0 / nx
    est = aubry_set_estimate(sys, c, nx, nt, "continuous", aubry_tol, periods, tail, gap_tol)
    x0, tie = est.nearest_to_zero()
    flags = ["PIN_TIE"] if tie else []
    sol0 = solve_weak_kam(sys, c, nx, nt, tol=1e-10)
    i0 = int(np.rint(x0 * nx)) % nx
    if "MULTI_CLASS" in est.flags:
        vals, _, osc = _barrier_batch(sys, c, [x0], nx, nt, "continuous", sol0.alpha,
                                      periods, tail, np.inf)
        op = LaxOleinik(sys, [c], nx, nt, "continuous")
        U, D, _ = op.rows(vals, np.array([sol0.alpha]))
        U, D = U[0], D[0]
        flags.append("MULTI_CLASS")
    else:
        U = sol0.u.values - sol0.u.values[i0, 0]
        D = sol0.displacement
        osc = est.gap
    sol = _assemble(sys, c, sol0.alpha, U, D, "continuous", sol0.iterations, osc, pin=x0,
                    flags=flags + sol0.flags)
    _cache_put(key, sol)
    return sol


def pinned_batch(sys: SystemSpec, cs, nx=512, nt=256, periods=64, tail=16, aubry_tol=None):
    """Pinned solutions for a sweep; the fixed points are solved as one batch first."""
    solve_weak_kam_batch(sys, cs, nx, nt, tol=1e-10)
    solve_weak_kam_batch(reversed_system(sys), [-c for c in cs], nx, nt, tol=1e-10)
    return [pinned_solution(sys, c, nx, nt, periods, tail, aubry_tol) for c in cs]


# ---------------------------------------------------------------------------
# pointwise queries


def superdifferential(sol: WeakKamSolution, x: float, t: float):
    """(p_plus, p_minus, singular) at (x, t): right and left x-derivatives of u.

    Values are read from the nearest node of the time row containing t;
    between nodes the one-sided cell slope is used.
    """
    nx, nt = sol.nx, sol.nt
    k = int(np.floor((t % 1.0) * nt + 1e-9)) % nt
    s = (x % 1.0) * nx
    i = int(np.rint(s)) % nx
    if abs(s - np.rint(s)) < 1e-9:
        p_minus = sol.p_left.values[i, k]
        p_plus = sol.p_right.values[i, k]
        return float(p_plus), float(p_minus), bool(sol.singular_mask[i, k])
    j = int(np.floor(s)) % nx
    slope = sol.p_right.values[j, k]
    return float(slope), float(slope), False


def hj_residual(sol: WeakKamSolution) -> float:
    """max |u_t + H(x, u_x + c, t) - alpha| over nodes away from the singular set."""
    sys = sol.sys
    U = sol.u.values
    nx, nt = U.shape
    if nt < 3:
        raise ValueError("residual needs the continuous backend")
    ut = (np.roll(U, -1, axis=1) - np.roll(U, 1, axis=1)) * nt / 2.0
    ux = (np.roll(U, -1, axis=0) - np.roll(U, 1, axis=0)) * nx / 2.0
    X, T = np.meshgrid(sol.u.x, sol.u.t, indexing="ij")
    r = np.abs(ut + sys.H(X, ux + sol.c, T) - sol.alpha)
    m = sol.singular_mask
    bad = m | np.roll(m, 1, 0) | np.roll(m, -1, 0)
    bad = bad | np.roll(bad, 1, 1) | np.roll(bad, -1, 1)
    if np.all(bad):
        return float("nan")
    return float(np.max(r[~bad]))
