"""Residual of the discrete Ito identity for exp(beta t) X^2 as the grid is refined."""

from __future__ import annotations

import argparse

from defaultbsde import DefaultModel, ForwardSdeSpec, ito_convergence


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--paths", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=202)
    args = ap.parse_args()
    spec = ForwardSdeSpec.geometric(1.0, 0.05, 0.2, -0.3)
    for N in (25, 50, 100):
        out = ito_convergence(spec, DefaultModel.constant(args.gamma), 1.0, N, args.paths, args.seed, beta=1.0)
        print(f"N={N:4d}: rms {out['rms_N']:.3e}, rms at 2N {out['rms_2N']:.3e}, ratio {out['ratio']:.3f}")


if __name__ == "__main__":
    main()
