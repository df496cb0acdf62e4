"""Phase portrait of the standard map at a few kick strengths, as CSV + SVG per eps."""

import argparse
from pathlib import Path

import numpy as np

from twistlab.cli import write_csv, write_svg_scatter
from twistlab.systems import standard_map_family
from twistlab.twistmap import phase_portrait, random_seeds


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.0, 0.1, 2 * np.pi * 0.1])
    ap.add_argument("--seeds", type=int, default=150)
    ap.add_argument("--iters", type=int, default=800)
    ap.add_argument("--out", default="portraits")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = random_seeds(args.seeds, (-0.5, 0.5), seed=0)
    for eps in args.eps:
        cloud = phase_portrait(standard_map_family(eps), seeds, args.iters)
        stem = out / f"portrait_eps{eps:.4f}"
        write_csv(stem.with_suffix(".csv"), ["seed_id", "x", "p"], [cloud.seed_id, cloud.x, cloud.p])
        write_svg_scatter(stem.with_suffix(".svg"), cloud.x, cloud.p)
        print(f"eps={eps:.4f}: {len(cloud)} points -> {stem}.svg")


if __name__ == "__main__":
    main()
