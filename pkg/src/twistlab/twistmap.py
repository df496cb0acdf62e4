"""Iteration of the twist map, phase portraits and area/exactness checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .systems import SystemSpec


@dataclass
class MapOrbit:
    points: np.ndarray  # (length + 1, 2): x mod 1, p
    lift: np.ndarray
    seed: tuple
    length: int


@dataclass
class PointCloud:
    x: np.ndarray
    p: np.ndarray
    seed_id: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass
class SymplecticReport:
    max_det_error: float
    exactness_integral: float
    samples: int
    nodes: int


def _orbits(sys: SystemSpec, x0, p0, n: int):
    x = np.empty((n + 1,) + np.shape(x0))
    p = np.empty_like(x)
    x[0], p[0] = x0, p0
    for k in range(n):
        x[k + 1], p[k + 1] = sys.step(x[k], p[k])
    return x, p


def iterate(sys: SystemSpec, seed, n: int) -> MapOrbit:
    """Orbit of length n + 1 of the lifted map starting at seed = (x0, p0)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x0, p0 = map(float, seed)
    lift, p = _orbits(sys, x0, p0, n)
    pts = np.column_stack([np.mod(lift, 1.0), p])
    return MapOrbit(points=pts, lift=lift, seed=(x0, p0), length=n)


def phase_portrait(sys: SystemSpec, seeds, n: int) -> PointCloud:
    """Union of the orbits of all seeds as (x mod 1, p) points, ordered by seed then time."""
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 2)
    if len(seeds) == 0:
        raise ValueError("seeds must be nonempty")
    x, p = _orbits(sys, seeds[:, 0], seeds[:, 1], n)
    ids = np.repeat(np.arange(len(seeds)), n + 1)
    return PointCloud(x=np.mod(x.T.ravel(), 1.0), p=p.T.ravel(), seed_id=ids)


def random_seeds(count: int, p_range=(-0.5, 0.5), seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.random(count), rng.uniform(*p_range, size=count)])


def numeric_jacobian(sys: SystemSpec, x, p, step: float = 1e-4):
    """Jacobian of the map by fourth-order central differences of ``sys.step``."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    cols = []
    for ex, ep in ((step, 0.0), (0.0, step)):
        f = [np.stack(sys.step(x + k * ex, p + k * ep), -1) for k in (-2, -1, 1, 2)]
        cols.append((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * step))
    return np.stack(cols, -1)


def check_symplectic(sys: SystemSpec, samples: int, nodes: int = 4096, p0: float = 0.0,
                     p_range=(-1.0, 1.0), seed: int = 0) -> SymplecticReport:
    """Max |det Df - 1| at random points, and the flux of the map across the circle p = p0.

    The flux is int p' dx' over the image of the circle minus int p dx over
    the circle itself, by the trapezoid rule (spectrally accurate for the
    periodic integrand).
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    x = rng.random(samples)
    p = rng.uniform(*p_range, size=samples)
    J = numeric_jacobian(sys, x, p)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    s = np.arange(nodes) / nodes
    _, p1 = sys.step(s, np.full(nodes, p0))
    dx1 = numeric_jacobian(sys, s, np.full(nodes, p0))[..., 0, 0]
    flux = float(np.mean(p1 * dx1) - p0)
    return SymplecticReport(max_det_error=float(np.max(np.abs(det - 1.0))),
                            exactness_integral=flux, samples=samples, nodes=nodes)


def fixed_points_of_kick(sys: SystemSpec, n: int = 4096):
    """Points (x, 0) fixed by the map: zeros of the kick derivative, refined by Newton."""
    s = (np.arange(n) + 0.5) / n
    f = sys.step(s, np.zeros(n))[0] - s
    idx = np.flatnonzero(np.sign(f[:-1]) != np.sign(f[1:]))
    out = []
    for i in idx:
        z = 0.5 * (s[i] + s[i + 1])
        for _ in range(50):
            fz = sys.step(z, 0.0)[0] - z
            dz = fz / (sys.jacobian(z, 0.0)[0, 0] - 1.0)
            z -= dz
            if abs(dz) < 1e-15:
                break
        out.append(float(z))
    return np.array(out)
