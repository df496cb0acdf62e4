"""Model systems: generating functions, suspended Lagrangians and Hamiltonians.

A system is described twice.  The discrete side is a generating function
h(x, x') of an exact symplectic twist map on the cylinder, with p = -d1 h and
p' = d2 h.  The continuous side is a time-periodic Lagrangian L(x, v, t) with
Legendre dual H(x, p, t).  All built-in systems are mechanical,

    h(x, x') = (x' - x)^2 / 2 + P(x) + A(x'),
    L(x, v, t) = v^2 / 2 + U(x, t),

which lets the solvers use closed-form inner minimizations.  ``P`` is the kick
potential felt at departure, ``A`` the one felt at arrival (nonzero only for
time-reversed systems).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import AssumptionViolated

TWO_PI = 2.0 * np.pi
# Default half-width of the smooth kick profile W(t).
KICK_WIDTH = 0.04
# Largest |c| the default velocity window is sized for.
C_MAX = 1.5


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def wrapped_gaussian(width: float = KICK_WIDTH):
    """Return (W, W_max): a 1-periodic Gaussian bump of unit mass centred at t = 0."""
    norm = 1.0 / (width * np.sqrt(TWO_PI))

    def W(t):
        t = np.asarray(t, dtype=float)
        s = t - np.floor(t + 0.5)
        out = np.zeros_like(s)
        for k in (-2, -1, 0, 1, 2):
            out = out + np.exp(-0.5 * ((s - k) / width) ** 2)
        return norm * out

    return W, float(W(0.0))


@dataclass(frozen=True)
class SystemSpec:
    """An exact twist map together with a time-periodic Tonelli suspension.

    Derivative callables (``dh``, ``d2h``, ``L_v`` ...) are vectorized over
    numpy arrays.  ``key`` identifies the system in caches.
    """

    name: str
    eps: float
    h: Callable
    L: Callable
    H: Callable
    v_max: float
    dh: Callable
    d2h: Callable
    L_v: Callable
    L_vv: Callable
    H_p: Callable
    H_pp: Callable
    kick: Optional[Callable] = None
    kick_prime: Optional[Callable] = None
    arrival: Optional[Callable] = None
    arrival_prime: Optional[Callable] = None
    potential: Optional[Callable] = None
    potential_max: float = 0.0
    even: bool = False
    key: tuple = field(default=())

    @property
    def window(self) -> float:
        """Half-width (per unit time) of the search window around the free drift c."""
        return self.v_max - C_MAX if self.kick is not None else self.v_max

    @property
    def mechanical(self) -> bool:
        return self.kick is not None and self.arrival is not None and self.potential is not None

    def step(self, x, p):
        """One application of the map (x, p) -> (x', p') on the lift."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.mechanical:
            x1 = x + p + self.kick_prime(x)
            return x1, x1 - x + self.arrival_prime(x1)
        x1 = x + p
        for _ in range(100):
            g = -self.dh(x, x1)[0] - p
            h12 = self.d2h(x, x1)[1]
            dx = g / h12
            x1 = x1 + dx
            if np.max(np.abs(dx)) < 1e-15:
                break
        return x1, self.dh(x, x1)[1]

    def jacobian(self, x, p):
        """Jacobian of the map at (x, p), assembled from second derivatives of h."""
        x1, _ = self.step(x, p)
        h11, h12, h22 = self.d2h(np.asarray(x, dtype=float), x1)
        dXdx = -h11 / h12
        dXdp = -1.0 / h12
        dPdx = h12 + h22 * dXdx
        dPdp = h22 * dXdp
        return np.stack([np.stack([dXdx, dXdp], -1), np.stack([dPdx, dPdp], -1)], -2)


def mechanical_system(name, eps, phi, dphi, d2phi, W=None, W_max=None, key=(), even=False,
                      c_max: float = C_MAX) -> SystemSpec:
    """Build the system h = (x'-x)^2/2 + eps*phi(x), L = v^2/2 + eps*phi(x)*W(t).

    ``phi`` must be 1-periodic; its derivative is the force profile V.
    """
    if W is None:
        W, W_max = wrapped_gaussian()

    def P(x):
        return eps * phi(x)

    def dP(x):
        return eps * dphi(x)

    def d2P(x):
        return eps * d2phi(x)

    def U(x, t):
        return P(x) * W(t)

    def h(x, x1):
        return 0.5 * (x1 - x) ** 2 + P(x)

    def dh(x, x1):
        return -(x1 - x) + dP(x), x1 - x

    def d2h(x, x1):
        x = np.asarray(x, dtype=float)
        one = np.ones(np.broadcast(x, x1).shape)
        return 1.0 + d2P(x) * one, -one, one

    def L(x, v, t):
        return 0.5 * v ** 2 + U(x, t)

    def H(x, p, t):
        return 0.5 * p ** 2 - U(x, t)

    grid = np.linspace(0.0, 1.0, 4097)
    pmax = float(np.max(np.abs(P(grid))))
    v_max = 1.0 + c_max + 4.0 * np.sqrt(2.0 * pmax)
    return SystemSpec(
        name=name, eps=float(eps), h=h, L=L, H=H, v_max=float(v_max), dh=dh, d2h=d2h,
        L_v=lambda x, v, t: np.asarray(v, dtype=float) + 0.0 * np.asarray(x, dtype=float),
        L_vv=lambda x, v, t: np.ones(np.broadcast(x, v, t).shape),
        H_p=lambda x, p, t: np.asarray(p, dtype=float) + 0.0 * np.asarray(x, dtype=float),
        H_pp=lambda x, p, t: np.ones(np.broadcast(x, p, t).shape),
        kick=P, kick_prime=dP, arrival=_zero, arrival_prime=_zero, potential=U,
        potential_max=pmax * float(W_max), even=even, key=tuple(key),
    )


def standard_map_family(eps: float, kick_width: float = KICK_WIDTH) -> SystemSpec:
    """The standard map f(x, p) = (x + p + eps V(x), p + eps V(x)) with V = cos 2 pi x.

    Generating function h = (x'-x)^2/2 + (eps / 2 pi) sin 2 pi x.  The
    suspension smears the kick over the bump W of width ``kick_width``.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    W, W_max = wrapped_gaussian(kick_width)
    return mechanical_system(
        "standard", eps,
        lambda x: np.sin(TWO_PI * np.asarray(x, dtype=float)) / TWO_PI,
        lambda x: np.cos(TWO_PI * np.asarray(x, dtype=float)),
        lambda x: -TWO_PI * np.sin(TWO_PI * np.asarray(x, dtype=float)),
        W=W, W_max=W_max, key=("standard", float(eps), float(kick_width)), even=True,
    )


def fourier_family(eps: float, v_cos=(), v_sin=(), w_cos=(), w_sin=(), name="fourier",
                   kick_width: float = KICK_WIDTH) -> SystemSpec:
    """User-defined kicked system with force V(x) = sum a_n cos 2 pi n x + b_n sin 2 pi n x.

    V has zero mean so that the map is exact.  If any W coefficients are
    given, the suspension profile is W(t) = 1 + sum (w_cos_n cos + w_sin_n sin)(2 pi n t),
    otherwise the default Gaussian bump is used.
    """
    a = np.asarray(v_cos, dtype=float)
    b = np.asarray(v_sin, dtype=float)
    n_v = np.arange(1, max(len(a), len(b)) + 1)
    a = np.pad(a, (0, len(n_v) - len(a)))
    b = np.pad(b, (0, len(n_v) - len(b)))
    k = TWO_PI * n_v

    def phi(x):
        th = np.multiply.outer(np.asarray(x, dtype=float), k)
        return (np.sin(th) @ (a / k)) - (np.cos(th) @ (b / k)) if len(k) else _zero(x)

    def dphi(x):
        th = np.multiply.outer(np.asarray(x, dtype=float), k)
        return np.cos(th) @ a + np.sin(th) @ b if len(k) else _zero(x)

    def d2phi(x):
        th = np.multiply.outer(np.asarray(x, dtype=float), k)
        return (-np.sin(th) @ (a * k)) + (np.cos(th) @ (b * k)) if len(k) else _zero(x)

    if len(w_cos) or len(w_sin):
        wc = np.asarray(w_cos, dtype=float)
        ws = np.asarray(w_sin, dtype=float)
        n_w = np.arange(1, max(len(wc), len(ws)) + 1)
        wc = np.pad(wc, (0, len(n_w) - len(wc)))
        ws = np.pad(ws, (0, len(n_w) - len(ws)))

        def W(t):
            th = np.multiply.outer(np.asarray(t, dtype=float), TWO_PI * n_w)
            return 1.0 + np.cos(th) @ wc + np.sin(th) @ ws

        samples = W(np.linspace(0.0, 1.0, 2049))
        if np.min(samples) < 0:
            raise AssumptionViolated("time profile W must be nonnegative")
        W_max = float(np.max(samples))
    else:
        W, W_max = wrapped_gaussian(kick_width)
    even = not np.any(b)
    key = ("fourier", float(eps), tuple(a), tuple(b), tuple(w_cos), tuple(w_sin), float(kick_width))
    return mechanical_system(name, eps, phi, dphi, d2phi, W=W, W_max=W_max, key=key,
                             even=even)


def reversed_system(sys: SystemSpec) -> SystemSpec:
    """Time reversal: h_r(x, x') = h(x', x) and L_r(x, v, t) = L(x, -v, -t).

    Barriers of the reversed system at cohomology -c are the barriers of
    ``sys`` at c with their arguments swapped.
    """
    def h(x, x1):
        return sys.h(x1, x)

    def dh(x, x1):
        a, b = sys.dh(x1, x)
        return b, a

    def d2h(x, x1):
        a, b, c = sys.d2h(x1, x)
        return c, b, a

    kw = dict(
        name=sys.name + "-reversed", h=h, dh=dh, d2h=d2h,
        L=lambda x, v, t: sys.L(x, -v, -t),
        H=lambda x, p, t: sys.H(x, -p, -t),
        L_v=lambda x, v, t: -sys.L_v(x, -v, -t),
        L_vv=lambda x, v, t: sys.L_vv(x, -v, -t),
        H_p=lambda x, p, t: -sys.H_p(x, -p, -t),
        H_pp=lambda x, p, t: sys.H_pp(x, -p, -t),
        key=tuple(sys.key) + ("reversed",),
    )
    if sys.mechanical:
        U = sys.potential
        kw.update(kick=sys.arrival, arrival=sys.kick, kick_prime=sys.arrival_prime,
                  arrival_prime=sys.kick_prime, potential=lambda x, t: U(x, -np.asarray(t)))
    return replace(sys, **kw)


@dataclass
class ValidationReport:
    min_Lvv: float
    min_Hpp: float
    min_twist: float
    max_legendre_residual: float
    max_periodicity_residual: float
    passed: bool


def _fd2(f, z, step=1e-4):
    return (f(z + step) - 2.0 * f(z) + f(z - step)) / step ** 2


def validate_standing_assumptions(sys: SystemSpec, grid_density: int = 32,
                                  legendre_tol: float = 1e-9,
                                  margin_tol: float = 0.0) -> ValidationReport:
    """Sample convexity, twist and Legendre duality on a product grid.

    Raises AssumptionViolated if a margin is not positive or duality fails.
    """
    if grid_density < 16:
        raise ValueError("grid_density must be at least 16")
    n = int(grid_density)
    xs = np.arange(n) / n
    vs = np.linspace(-sys.v_max, sys.v_max, n)
    ts = np.arange(n) / n
    X, Vv, T = np.meshgrid(xs, vs, ts, indexing="ij")
    Lvv = sys.L_vv(X, Vv, T)
    P = sys.L_v(X, Vv, T)
    Hpp = sys.H_pp(X, P, T)
    legendre = np.abs(sys.L(X, Vv, T) + sys.H(X, P, T) - P * Vv)
    X2, D2 = np.meshgrid(xs, vs, indexing="ij")
    twist = -sys.d2h(X2, X2 + D2)[1]
    shifted = np.abs(sys.h(X2 + 1.0, X2 + D2 + 1.0) - sys.h(X2, X2 + D2))
    rep = ValidationReport(
        min_Lvv=float(np.min(Lvv)), min_Hpp=float(np.min(Hpp)), min_twist=float(np.min(twist)),
        max_legendre_residual=float(np.max(legendre)),
        max_periodicity_residual=float(np.max(shifted)), passed=False,
    )
    rep.passed = (rep.min_Lvv > margin_tol and rep.min_Hpp > margin_tol
                  and rep.min_twist > margin_tol and rep.max_legendre_residual <= legendre_tol)
    if not rep.passed:
        raise AssumptionViolated("standing assumptions fail on the sampled grid", report=rep)
    return rep


def generic_system(name, h, dh, d2h, L, H, v_max=4.0, key=None) -> SystemSpec:
    """Wrap user-supplied callables; second derivatives of L and H by finite differences."""
    def L_v(x, v, t):
        return (L(x, v + 1e-6, t) - L(x, v - 1e-6, t)) / 2e-6

    def H_p(x, p, t):
        return (H(x, p + 1e-6, t) - H(x, p - 1e-6, t)) / 2e-6

    return SystemSpec(
        name=name, eps=0.0, h=h, L=L, H=H, v_max=float(v_max), dh=dh, d2h=d2h,
        L_v=L_v, L_vv=lambda x, v, t: _fd2(lambda s: L(x, s, t), v),
        H_p=H_p, H_pp=lambda x, p, t: _fd2(lambda s: H(x, s, t), p),
        key=tuple(key) if key else (name,),
    )
