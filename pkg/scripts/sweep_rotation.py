"""Rotation numbers of generalized characteristics against alpha'(c) over a c grid."""

import argparse

import numpy as np

from twistlab.characteristics import integrate_gc, rotation_number
from twistlab.systems import standard_map_family
from twistlab.weakkam import alpha_prime, solve_weak_kam_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=2 * np.pi * 0.1)
    ap.add_argument("--c", type=float, nargs="+", default=[-0.5, 0.0, 0.4, 0.5])
    ap.add_argument("--nx", type=int, default=256)
    ap.add_argument("--periods", type=int, default=100)
    ap.add_argument("--dc", type=float, default=0.01)
    args = ap.parse_args()
    sys_ = standard_map_family(args.eps)
    cs = np.asarray(args.c)
    allc = np.unique(np.round(np.concatenate([cs - args.dc, cs, cs + args.dc]), 12))
    sols = {s.c: s for s in solve_weak_kam_batch(sys_, allc, args.nx, args.nx // 2)}
    print(f"{'c':>8} {'alpha':>12} {'alpha_prime':>12} {'rho':>10}")
    for c in cs:
        trio = [sols[float(np.round(c + k * args.dc, 12))] for k in (-1, 0, 1)]
        ap_c = alpha_prime([s.c for s in trio], [s.alpha for s in trio], c)
        chi = integrate_gc(trio[1], 0.0, 0.0, float(args.periods))
        print(f"{c:8.3f} {trio[1].alpha:12.8f} {ap_c:12.6f} {rotation_number(chi):10.6f}")


if __name__ == "__main__":
    main()
