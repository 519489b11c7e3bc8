"""Time-step bias of the regression solver against the discrete and continuous closed forms."""

from __future__ import annotations

import argparse

import numpy as np

from defaultbsde import DefaultModel, LinearBsdeSpec, TerminalSpec, analytic_linear_price, build_grid, linear_driver, simulate_bundle, solve


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--a", type=float, default=0.05)
    ap.add_argument("--c", type=float, default=0.5)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--paths", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    claim = TerminalSpec(lambda H, X: 1.0 + H[:, 0], 2.0)
    spec = LinearBsdeSpec(args.a, 0.0, args.c, claim)
    exact = analytic_linear_price(args.a, args.c, args.gamma, 1.0, 1.0, 2.0)
    print(f"continuous closed form {exact:.6f}")
    print(f"{'N':>5} {'solve':>10} {'se':>9} {'adjoint grid':>12} {'err vs cont':>12}")
    for N in (10, 20, 40, 80):
        b = simulate_bundle(DefaultModel.constant(args.gamma), build_grid(1.0, N), 1, args.paths, args.seed)
        sol = solve(linear_driver(spec, b), claim, b)
        ref = analytic_linear_price(args.a, args.c, args.gamma, 1.0, 1.0, 2.0, grid=b.grid)
        print(f"{N:5d} {sol.y0:10.6f} {sol.y0_se:9.2e} {ref:12.6f} {sol.y0 - exact:12.2e}")


if __name__ == "__main__":
    main()
