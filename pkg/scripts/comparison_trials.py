"""Random driver pairs satisfying condition (c): pathwise ordering of the solutions."""

from __future__ import annotations

import argparse

from defaultbsde import run_comparison_trials


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--N", type=int, default=25)
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()
    trials = run_comparison_trials(args.trials, args.gamma, 1.0, args.N, args.paths, args.seed)
    for i, t in enumerate(trials):
        print(f"trial {i:2d}: violation fraction {t['violation_fraction']:.2e}, y0 gap {t['y0_gap']:.4f}")
    print(f"worst violation fraction {max(t['violation_fraction'] for t in trials):.2e}")


if __name__ == "__main__":
    main()
