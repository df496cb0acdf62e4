"""Command-line front end: run configuration, result cache and file emitters.

Every subcommand computes a JSON-serializable payload (cached by content
hash), then writes its CSV/JSON/SVG artifacts from that payload and a
manifest describing the run.  Exit status: 0 on success, 2 on validation
errors, 3 on numerical non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import platform
import sys
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import CorruptCache, TwistLabError

# bump when a numerical routine changes its output; part of every cache key
CODE_VERSION = f"{__version__}+1"
CACHE_ENV = "TWISTLAB_CACHE"

SUBCOMMANDS = ("portrait", "beta", "flats", "upq", "wkam", "gc", "rho", "holder", "connect",
               "atlas", "validate")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    system: str = "standard"
    eps: float = 0.0
    coefficients: dict = field(default_factory=dict)
    kick_width: float = 0.04
    nx: int = 512
    nt: int = 256
    tol: float = 1e-9
    tol_el: float = 1e-6
    aubry_tol: Optional[float] = None
    boundary_tol: Optional[float] = None
    kink_threshold: Optional[float] = None
    seed: int = 0
    out: str = "twistlab-out"
    threads: int = 1
    params: dict = field(default_factory=dict)

    def validate(self):
        for name in ("tol", "tol_el", "aubry_tol", "boundary_tol", "kink_threshold",
                     "kick_width"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.nx < 16 or self.nt < 1:
            raise ValueError("grid too small")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.system not in ("standard", "fourier"):
            raise ValueError(f"unknown system {self.system!r}")
        return self


def load_config(path) -> dict:
    """Read a YAML or JSON run configuration into a flat dict."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a mapping")
    return data


def make_config(file_values: dict, flag_values: dict) -> RunConfig:
    """Defaults, then the config file, then explicit flags; unknown keys go to ``params``."""
    names = {f.name for f in dataclasses.fields(RunConfig)}
    merged, params = {}, {}
    for src in (file_values, flag_values):
        for k, v in src.items():
            k = k.replace("-", "_")
            if k in names and k != "params":
                merged[k] = v
            elif k == "params":
                params.update(v)
            else:
                params[k] = v
    cfg = RunConfig(**merged, params=params)
    cfg.eps = float(cfg.eps)
    return cfg.validate()


def build_system(cfg: RunConfig):
    from .systems import fourier_family, standard_map_family
    if cfg.system == "standard":
        return standard_map_family(cfg.eps, cfg.kick_width)
    co = cfg.coefficients
    return fourier_family(cfg.eps, co.get("v_cos", ()), co.get("v_sin", ()),
                          co.get("w_cos", ()), co.get("w_sin", ()), kick_width=cfg.kick_width)


# ---------------------------------------------------------------------------
# cache


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


@dataclass(frozen=True)
class CacheKey:
    operation: str
    system: str
    arguments: str
    version: str = CODE_VERSION

    @classmethod
    def make(cls, operation, cfg: RunConfig, arguments: dict, version=CODE_VERSION):
        system = {"system": cfg.system, "eps": cfg.eps, "coefficients": cfg.coefficients,
                  "kick_width": cfg.kick_width}
        return cls(operation, _canonical(system), _canonical(arguments), version)

    @property
    def digest(self) -> str:
        return hashlib.sha256(_canonical(asdict(self)).encode()).hexdigest()


class Cache:
    """Content-addressed JSON store; each entry records its key and a payload hash."""

    def __init__(self, root):
        self.root = Path(root)
        self.evicted = []

    def _path(self, key: CacheKey) -> Path:
        return self.root / f"{key.digest}.json"

    def get(self, key: CacheKey):
        path = self._path(key)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text())
            body = _canonical(entry["payload"])
            ok = (entry["key"] == asdict(key)
                  and hashlib.sha256(body.encode()).hexdigest() == entry["sha256"])
        except (ValueError, KeyError, TypeError):
            ok = False
        if not ok:
            path.unlink(missing_ok=True)
            self.evicted.append(key.digest)
            warnings.warn(f"{CorruptCache.code}: evicted cache entry {key.digest[:12]}")
            return None
        return entry["payload"]

    def put(self, key: CacheKey, payload):
        payload = json.loads(_canonical(payload))
        body = _canonical(payload)
        entry = {"key": asdict(key), "sha256": hashlib.sha256(body.encode()).hexdigest(),
                 "payload": payload}
        _atomic_write(self._path(key), json.dumps(entry, sort_keys=True))
        return payload


def cache_root(cfg: RunConfig) -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path(cfg.out) / ".cache")


# ---------------------------------------------------------------------------
# emitters


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Fraction):
        return str(o)
    if dataclasses.is_dataclass(o):
        return asdict(o)
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, columns):
    """Header row plus one row per index; floats with 17 significant digits."""
    cols = [np.asarray(c).ravel() for c in columns]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")
    return str(path)


def read_csv(path):
    """Inverse of write_csv: (header, float array of rows)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n")
    return str(path)


def write_svg_scatter(path, x, y, width=640, height=480, radius=0.6, lines=False):
    """Minimal SVG scatter (or polyline) of y against x with a fitted view box."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pad = 20
    x0, x1 = float(np.min(x)), float(np.max(x))
    y0, y1 = float(np.min(y)), float(np.max(y))
    sx = (width - 2 * pad) / (x1 - x0 or 1.0)
    sy = (height - 2 * pad) / (y1 - y0 or 1.0)
    px = pad + (x - x0) * sx
    py = height - pad - (y - y0) * sy
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if lines:
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        out.append(f'<polyline fill="none" stroke="black" stroke-width="1" points="{pts}"/>')
    else:
        out.append('<g fill="black">')
        out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{radius}"/>' for a, b in zip(px, py)]
        out.append("</g>")
    out.append("</svg>")
    _atomic_write(path, "\n".join(out) + "\n")
    return str(path)


# ---------------------------------------------------------------------------
# experiments; each returns (payload, writer) where writer(payload, outdir) -> files


def _p(cfg, name, default=None):
    v = cfg.params.get(name)
    return default if v is None else v


def run_portrait(cfg, sys_):
    from .twistmap import phase_portrait, random_seeds
    seeds = _p(cfg, "seeds", 200)
    if isinstance(seeds, str) and not seeds.isdigit():
        seeds = np.loadtxt(seeds, delimiter=",", ndmin=2)[:, :2]
    else:
        seeds = random_seeds(int(seeds), tuple(_p(cfg, "p_range", (-0.5, 0.5))), cfg.seed)
    cloud = phase_portrait(sys_, seeds, int(_p(cfg, "iters", 1000)))
    return {"seed_id": cloud.seed_id, "x": cloud.x, "p": cloud.p,
            "summary": {"points": len(cloud), "seeds": int(len(seeds))}}


def emit_portrait(payload, out, cfg):
    files = [write_csv(out / "portrait.csv", ["seed_id", "x", "p"],
                       [payload["seed_id"], payload["x"], payload["p"]])]
    if _p(cfg, "svg"):
        files.append(write_svg_scatter(out / "portrait.svg", payload["x"], payload["p"]))
    return files


def run_beta(cfg, sys_):
    from .aubry import beta
    prof = beta(sys_, int(_p(cfg, "max_q", 20)), tuple(_p(cfg, "h_range", (-1.0, 1.0))))
    return {"h": prof.h, "beta": prof.beta,
            "summary": {"max_q": int(_p(cfg, "max_q", 20)), "samples": len(prof.h),
                        "convexity_margin": prof.convexity_margin()}}


def emit_beta(payload, out, cfg):
    return [write_csv(out / "beta.csv", ["h", "beta"], [payload["h"], payload["beta"]])]


def run_flats(cfg, sys_):
    from .aubry import flat_edges
    p, q = int(_p(cfg, "p", 0)), int(_p(cfg, "q", 1))
    fe = flat_edges(sys_, p, q)
    return {"summary": {"p": p, "q": q, "c_minus": fe.c_minus, "c_plus": fe.c_plus,
                        "width": fe.width}}


def emit_summary(name):
    def emit(payload, out, cfg):
        return [write_json(out / f"{name}.json", payload["summary"])]
    return emit


def run_upq(cfg, sys_):
    from .aubry import build_u_pq
    p, q = int(_p(cfg, "p", 0)), int(_p(cfg, "q", 1))
    r = build_u_pq(sys_, p, q, n=int(_p(cfg, "grid", 512)))
    return {"x": r.x, "u_plus": r.u_plus, "u_minus": r.u_minus,
            "summary": {"p": p, "q": q, "x0": r.x0, "degenerate": bool(r.degenerate)}}


def emit_upq(payload, out, cfg):
    return [write_csv(out / "upq.csv", ["x", "u_plus", "u_minus"],
                      [payload["x"], payload["u_plus"], payload["u_minus"]]),
            write_json(out / "upq.json", payload["summary"])]


def _solve(cfg, sys_, c, backend=None):
    from .weakkam import solve_weak_kam_batch
    backend = backend or _p(cfg, "backend", "cont")
    backend = {"cont": "continuous", "disc": "discrete"}.get(backend, backend)
    if backend not in ("continuous", "discrete"):
        raise ValueError(f"unknown backend {backend!r}")
    nt = cfg.nt if backend == "continuous" else 1
    tol = cfg.tol if backend == "continuous" else min(cfg.tol, 1e-11)
    return solve_weak_kam_batch(sys_, [c], cfg.nx, nt, tol,
                                int(_p(cfg, "max_periods", 2000)), backend=backend,
                                kink_threshold=cfg.kink_threshold)[0]


def run_wkam(cfg, sys_):
    c = float(_p(cfg, "c", 0.0))
    sol = _solve(cfg, sys_, c)
    X, T = np.meshgrid(sol.u.x, sol.u.t, indexing="ij")
    return {"x": X.ravel(), "t": T.ravel(), "u": sol.u.values.ravel(),
            "p_left": sol.p_left.values.ravel(), "p_right": sol.p_right.values.ravel(),
            "singular": sol.singular_mask.ravel().astype(int),
            "summary": {"c": c, "alpha": sol.alpha, "lipschitz_K": sol.lipschitz_K,
                        "semiconcavity_C": sol.semiconcavity_C, "residual": sol.residual,
                        "iterations": int(sol.iterations), "backend": sol.backend,
                        "flags": list(sol.flags)}}


def emit_wkam(payload, out, cfg):
    keys = ["x", "t", "u", "p_left", "p_right", "singular"]
    return [write_csv(out / "wkam.csv", keys, [payload[k] for k in keys]),
            write_json(out / "wkam.json", payload["summary"])]


def run_gc(cfg, sys_):
    from .characteristics import integrate_gc
    c = float(_p(cfg, "c", 0.0))
    sol = _solve(cfg, sys_, c, "continuous")
    dtau = _p(cfg, "dtau")
    chi = integrate_gc(sol, float(_p(cfg, "x0", 0.0)), float(_p(cfg, "t0", 0.0)),
                       float(_p(cfg, "T", 10.0)), None if dtau is None else float(dtau))
    return {"s": chi.s, "x_lift": chi.x_lift, "flag": chi.flags.astype(int),
            "summary": {"c": c, "transitions": chi.transitions, "T": chi.T}}


def emit_gc(payload, out, cfg):
    return [write_csv(out / "gc.csv", ["s", "x_lift", "flag"],
                      [payload["s"], payload["x_lift"], payload["flag"]])]


def run_rho(cfg, sys_):
    from .characteristics import classify_symbol, integrate_gc, rotation_number
    from .weakkam import alpha_prime
    c = float(_p(cfg, "c", 0.0))
    periods = int(_p(cfg, "periods", 200))
    dc = float(_p(cfg, "dc", 0.01))
    sols = [_solve(cfg, sys_, cc, "continuous") for cc in (c - dc, c, c + dc)]
    ap = alpha_prime([s.c for s in sols], [s.alpha for s in sols], c)
    dtau = _p(cfg, "dtau")
    chi = integrate_gc(sols[1], float(_p(cfg, "x0", 0.0)), float(_p(cfg, "t0", 0.0)),
                       float(periods), None if dtau is None else float(dtau))
    rho = rotation_number(chi, periods)
    fr = Fraction(rho).limit_denominator(int(_p(cfg, "max_q", 8)))
    symbol = classify_symbol(chi, fr.numerator, fr.denominator)
    return {"summary": {"c": c, "rho": rho, "alpha_prime": ap, "symbol": symbol,
                        "periods": periods}}


def run_holder(cfg, sys_):
    from .regularity import holder_check, sigma_of_c
    from .weakkam import pinned_batch
    cs = np.linspace(float(_p(cfg, "c_min", -0.4)), float(_p(cfg, "c_max", 0.4)),
                     int(_p(cfg, "n_c", 11)))
    cs = np.unique(np.append(np.round(cs, 12), 0.0))
    sweep = pinned_batch(sys_, cs.tolist(), cfg.nx, cfg.nt, aubry_tol=cfg.aubry_tol)
    table = sigma_of_c(sweep)
    rep = holder_check(table, sweep, int(_p(cfg, "pairs", 50)), seed=cfg.seed)
    return {"c": table.c, "sigma": table.sigma, "C": table.lipschitz_C,
            "summary": {"max_ratio": rep.max_ratio, "grid_slack": rep.grid_slack,
                        "passed": rep.passed, "n_pairs": rep.n_pairs,
                        "pairs": [list(p) for p in rep.pairs], "ties": table.ties}}


def emit_holder(payload, out, cfg):
    return [write_json(out / "holder.json", payload["summary"]),
            write_csv(out / "sigma.csv", ["c", "sigma", "C"],
                      [payload["c"], payload["sigma"], payload["C"]])]


def run_connect(cfg, sys_):
    from .connecting import transition_chain
    log = []
    chain = transition_chain(sys_, float(_p(cfg, "c1", -0.05)), float(_p(cfg, "c2", 0.05)),
                             float(_p(cfg, "max_step", 0.05)), int(_p(cfg, "t0", 60)),
                             int(_p(cfg, "t1", 60)), cfg.boundary_tol, nx=cfg.nx, log=log)
    links = []
    for k, link in enumerate(chain):
        o = link.orbit
        x = o.config.x
        inside = (o.spec.mu.clearance(x) <= 0).astype(int)
        links.append({"c": link.c, "c_prime": link.c_prime, "action": o.action,
                      "el_residual": o.el_residual, "clearance": o.clearance,
                      "boundary_distances": list(o.boundary_distances),
                      "mu_support": list(o.spec.mu_support),
                      "i": np.arange(-o.spec.T0, o.spec.T1 + 1), "x": x, "flag": inside})
    summary = {"c1": float(_p(cfg, "c1", -0.05)), "c2": float(_p(cfg, "c2", 0.05)),
               "n_links": len(chain), "attempts": [list(a) for a in log],
               "links": [{k: v for k, v in ln.items() if k not in ("i", "x", "flag")}
                         for ln in links]}
    return {"links": links, "summary": summary}


def emit_connect(payload, out, cfg):
    files = [write_json(out / "connect.json", payload["summary"])]
    for k, ln in enumerate(payload["links"]):
        files.append(write_csv(out / f"link_{k:03d}.csv", ["i", "x_i", "flag"],
                               [ln["i"], ln["x"], ln["flag"]]))
    return files


def run_atlas(cfg, sys_):
    from .connecting import detect_instability
    grid = np.linspace(float(_p(cfg, "c_min", -0.5)), float(_p(cfg, "c_max", 0.5)),
                       int(_p(cfg, "n_c", 11)))
    at = detect_instability(sys_, grid, cfg.nx, cfg.nt, dc_tol=float(_p(cfg, "dc_tol", 1e-3)))
    return {"summary": {"eps": at.eps, "intervals": [list(i) for i in at.intervals],
                        "evidence": at.evidence, "samples": [list(s) for s in at.samples]}}


def run_validate(cfg, sys_):
    from .systems import validate_standing_assumptions
    rep = validate_standing_assumptions(sys_, int(_p(cfg, "grid_density", 32)))
    return {"summary": asdict(rep)}


EXPERIMENTS = {
    "portrait": (run_portrait, emit_portrait),
    "beta": (run_beta, emit_beta),
    "flats": (run_flats, emit_summary("flats")),
    "upq": (run_upq, emit_upq),
    "wkam": (run_wkam, emit_wkam),
    "gc": (run_gc, emit_gc),
    "rho": (run_rho, emit_summary("rho")),
    "holder": (run_holder, emit_holder),
    "connect": (run_connect, emit_connect),
    "atlas": (run_atlas, emit_summary("atlas")),
    "validate": (run_validate, emit_summary("validate")),
}


# ---------------------------------------------------------------------------
# argument parsing and the run driver


def _common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="YAML or JSON run configuration")
    p.add_argument("--system", default=S, choices=["standard", "fourier"])
    p.add_argument("--eps", type=float, default=S)
    p.add_argument("--nx", type=int, default=S)
    p.add_argument("--nt", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--threads", type=int, default=S, help="cap on worker threads")
    p.add_argument("--json", action="store_true", default=S,
                   help="print the summary as JSON on stdout")
    p.add_argument("--no-cache", action="store_true", default=S)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="twistlab",
                                     description="Weak KAM and Aubry-Mather experiments on twist maps")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "portrait": [("--seeds", str), ("--iters", int), ("--svg", "flag")],
        "beta": [("--max-q", int)],
        "flats": [("--p", int), ("--q", int)],
        "upq": [("--p", int), ("--q", int), ("--grid", int)],
        "wkam": [("--c", float), ("--max-periods", int), ("--backend", ["cont", "disc"])],
        "gc": [("--c", float), ("--x0", float), ("--t0", float), ("--T", float),
               ("--dtau", float)],
        "rho": [("--c", float), ("--x0", float), ("--t0", float), ("--periods", int),
                ("--dtau", float)],
        "holder": [("--c-min", float), ("--c-max", float), ("--n-c", int), ("--pairs", int)],
        "connect": [("--c1", float), ("--c2", float), ("--t0", int), ("--t1", int),
                    ("--max-step", float)],
        "atlas": [("--c-min", float), ("--c-max", float), ("--n-c", int), ("--dc-tol", float)],
        "validate": [("--grid-density", int)],
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        _common(p)
        for flag, kind in specs[name]:
            dest = flag[2:].replace("-", "_")
            if kind == "flag":
                p.add_argument(flag, dest=dest, action="store_true", default=S)
            elif isinstance(kind, list):
                p.add_argument(flag, dest=dest, choices=kind, default=S)
            else:
                p.add_argument(flag, dest=dest, type=kind, default=S)
    return parser


def _versions():
    return {"twistlab": __version__, "code_version": CODE_VERSION, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def run(command: str, flags: dict, config_file=None, use_cache: bool = True):
    """Execute one experiment; returns (exit_code, manifest dict)."""
    t0 = time.perf_counter()
    manifest = {"command": command, "versions": _versions(), "status": "ok", "outputs": []}
    try:
        file_values = load_config(config_file) if config_file else {}
        cfg = make_config(file_values, flags)
        manifest["config"] = asdict(cfg)
        out = Path(cfg.out)
        sys_ = build_system(cfg)
        compute, emit = EXPERIMENTS[command]
        args = {k: v for k, v in asdict(cfg).items() if k not in ("out", "threads")}
        key = CacheKey.make(command, cfg, args)
        cache = Cache(cache_root(cfg))
        payload = cache.get(key) if use_cache else None
        manifest["cache"] = {"key": key.digest, "hit": payload is not None}
        with threadpool_limits(limits=cfg.threads):
            if payload is None:
                payload = compute(cfg, sys_)
                payload = cache.put(key, payload) if use_cache else \
                    json.loads(_canonical(payload))
            manifest["outputs"] = emit(payload, out, cfg)
        if cache.evicted:
            manifest["cache"]["evicted"] = cache.evicted
        manifest["summary"] = payload.get("summary")
        code = 0
    except TwistLabError as err:
        manifest.update(status="error", error={"code": err.code, "message": str(err),
                                               "details": _safe(err.details)})
        code = err.exit_code
    except ValueError as err:
        manifest.update(status="error", error={"code": "VALIDATION", "message": str(err)})
        code = 2
    manifest["wall_time"] = time.perf_counter() - t0
    manifest["exit_code"] = code
    outdir = Path(manifest.get("config", {}).get("out", flags.get("out", "twistlab-out")))
    write_json(outdir / f"manifest_{command}.json", manifest)
    return code, manifest


def _safe(details):
    try:
        return json.loads(_canonical(details))
    except TypeError:
        return {k: repr(v) for k, v in details.items()}


def main(argv=None) -> int:
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    config_file = ns.pop("config", None)
    as_json = ns.pop("json", False)
    use_cache = not ns.pop("no_cache", False)
    code, manifest = run(command, ns, config_file, use_cache)
    if as_json:
        print(json.dumps({"exit_code": code, "summary": manifest.get("summary"),
                          "error": manifest.get("error"), "outputs": manifest["outputs"]},
                         sort_keys=True, default=_jsonable))
    elif code == 0:
        print(f"{command}: ok -> {', '.join(manifest['outputs'])}")
    else:
        err = manifest["error"]
        print(f"{command}: {err['code']}: {err['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
