"""Strict comparison fails without condition (c): sweep the intensity."""

from __future__ import annotations

import argparse

from defaultbsde import counterexample_suite


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.25, 1.0, 4.0])
    ap.add_argument("--N", type=int, default=50)
    ap.add_argument("--paths", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    print(f"{'gamma':>6} {'quotient':>9} {'sup|Y-H|':>9} {'max|zeta-1|':>11} {'y0 gap':>9} {'P(xi>0)':>8} passed")
    for g in args.gammas:
        r = counterexample_suite(g, 1.0, args.N, args.paths, args.seed)
        print(f"{g:6.2f} {r['condition_c']['worst_quotient']:9.3f} {r['sup_abs_y_minus_h']:9.1e} "
              f"{r['max_abs_zeta_minus_one']:11.1e} {r['comparison']['y0_gap']:9.1e} {r['prob_xi_gt_xibar']:8.3f} "
              f"{r['passed']}")


if __name__ == "__main__":
    main()
