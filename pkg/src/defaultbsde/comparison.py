"""Comparison of BSDE solutions, condition (c) checks and the strict-comparison counterexample."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import BsdeSolution, DriverSpec, NodeState, RegressionBasis, SolverConfig, _state, solve
from .kernel import DefaultModel, PathBundle, build_grid, simulate_bundle
from .terminal import TerminalSpec

__all__ = [
    "check_condition_c",
    "ConditionCResult",
    "ComparisonReport",
    "compare_solutions",
    "counterexample_drivers",
    "counterexample_suite",
    "CompliantPair",
    "random_compliant_pair",
]


@dataclass
class ConditionCResult:
    ok: bool
    worst: float
    witnesses: list

    def __iter__(self):
        return iter((self.ok, self.worst, self.witnesses))


def check_condition_c(driver: DriverSpec, bundle: PathBundle, sample_count: int = 256,
                      rng: np.random.Generator | None = None, X: np.ndarray | None = None,
                      scale: float = 3.0, n_witnesses: int = 3) -> ConditionCResult:
    """Sample the condition (c) difference quotients at pre-default nodes.

    For each default index i the quotient is
    [g(.., zt^{i-1}) - g(.., zt^i)] / ((zeta^i - zetabar^i) gamma^i), where
    zt^i takes its first i components from zetabar and the rest from zeta.
    Only (path, node, i) with gamma_eff > 0 are sampled.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    geff = bundle.gamma_eff[:, :-1, :]
    cand = np.argwhere(geff > 0)
    if cand.size == 0:
        return ConditionCResult(True, np.inf, [])
    pick = cand[rng.integers(0, len(cand), size=sample_count)]
    m, d, k = driver.m, bundle.d, bundle.k
    worst, witnesses = np.inf, []
    records = []
    for i_node in np.unique(pick[:, 1]):
        rows = pick[pick[:, 1] == i_node]
        paths, comps = rows[:, 0], rows[:, 2]
        n = len(rows)
        st = _state(bundle, int(i_node), X).subset(paths)
        y = rng.normal(scale=scale, size=(n, m))
        z = rng.normal(scale=scale, size=(n, m, d))
        zeta = rng.normal(scale=scale, size=(n, m, k)) * (st.gamma_eff > 0)[:, None, :]
        zbar = rng.normal(scale=scale, size=(n, m, k)) * (st.gamma_eff > 0)[:, None, :]
        t = float(bundle.grid.nodes[i_node])
        for j in np.unique(comps):
            sel = comps == j
            sub = st.subset(np.flatnonzero(sel))
            lo = zeta[sel].copy()
            lo[:, :, :j] = zbar[sel][:, :, :j]
            hi = lo.copy()
            hi[:, :, j] = zbar[sel][:, :, j]
            num = driver(t, y[sel], z[sel], lo, sub) - driver(t, y[sel], z[sel], hi, sub)
            den = (zeta[sel][:, :, j] - zbar[sel][:, :, j]) * sub.gamma_eff[:, j][:, None]
            ok = np.abs(den) > 1e-12
            q = np.where(ok, num / np.where(ok, den, 1.0), np.inf)[:, 0]
            for r, qv in enumerate(q):
                if np.isfinite(qv):
                    records.append((float(qv), int(paths[sel][r]), int(i_node), int(j)))
    if records:
        records.sort(key=lambda r: r[0])
        worst = records[0][0]
        witnesses = [{"quotient": q, "path": p, "node": i, "component": j} for q, p, i, j in records[:n_witnesses]]
    return ConditionCResult(bool(worst > -1 + 1e-9), float(worst), witnesses)


@dataclass
class ComparisonReport:
    """Pathwise comparison of Y against Ybar on a shared bundle."""

    violation_fraction: float
    max_violation: float
    y0_gap: float
    y0_gap_se: float
    condition_c_ok: bool
    tol: float
    terminal_gap_prob: float = 0.0
    driver_gap_prob: float = 0.0
    strict_candidate: bool = False
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def compare_solutions(sol: BsdeSolution, sol_bar: BsdeSolution, tol: float | None = None,
                      xi: np.ndarray | None = None, xi_bar: np.ndarray | None = None,
                      driver: DriverSpec | None = None, driver_bar: DriverSpec | None = None,
                      X: np.ndarray | None = None, condition_c_ok: bool | None = None) -> ComparisonReport:
    """Fraction of (path, node) pairs with Y < Ybar - tol and the time-zero gap.

    ``tol`` defaults to 5 dt + 3 SE with SE the combined standard error of
    the two time-zero values. When the terminal values and drivers are
    given, the report also estimates P(xi > xibar) and the probability that
    g(t, Ybar, Zbar, zetabar) > gbar there; a strict-comparison candidate is
    a time-zero gap statistically zero despite either being positive.
    """
    b, bb = sol.bundle, sol_bar.bundle
    if b is not bb and (b.grid != bb.grid or b.n_paths != bb.n_paths or not np.array_equal(b.H, bb.H)):
        raise ValueError("solutions must share the same grid and bundle")
    if sol.m != 1 or sol_bar.m != 1:
        raise ValueError("comparison is defined for one-dimensional Y")
    se = float(np.hypot(sol.y0_se, sol_bar.y0_se))
    dt = b.grid.dt
    if tol is None:
        tol = 5 * dt + 3 * se
    diff = sol.Y[:, :, 0] - sol_bar.Y[:, :, 0]
    viol = diff < -tol
    gap = float(sol.y0 - sol_bar.y0)
    if condition_c_ok is None:
        condition_c_ok = bool(sol.meta.get("condition_c", True) and sol_bar.meta.get("condition_c", True))
    term_p = 0.0
    if xi is not None and xi_bar is not None:
        term_p = float(np.mean(np.asarray(xi).ravel() > np.asarray(xi_bar).ravel() + 1e-12))
    drv_p = 0.0
    if driver is not None and driver_bar is not None:
        hits = 0
        t = b.grid.nodes
        for i in range(b.N):
            st = _state(b, i, X)
            args = (t[i], sol_bar.Y[:, i], sol_bar.Z[:, i], sol_bar.zeta[:, i], st)
            hits += int(np.sum(driver(*args)[:, 0] > driver_bar(*args)[:, 0] + 1e-12))
        drv_p = hits / (b.N * b.n_paths)
    strict = abs(gap) <= 3 * se + 1e-10 and (term_p > 0 or drv_p > 0)
    return ComparisonReport(
        violation_fraction=float(viol.mean()),
        max_violation=float(max(0.0, -(diff.min()))),
        y0_gap=gap,
        y0_gap_se=se,
        condition_c_ok=condition_c_ok,
        tol=float(tol),
        terminal_gap_prob=term_p,
        driver_gap_prob=drv_p,
        strict_candidate=bool(strict),
    )


def counterexample_drivers(gamma: float):
    """The generator with solution (H, 0, 1) and its zero companion.

    g = 1{pre} sqrt(gamma) - 1{pre} sqrt(gamma)(sqrt(gamma) + 1) zeta, xi = H_T;
    gbar = 0, xibar = 0.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    sg = float(np.sqrt(gamma))

    def g(t, y, z, zeta, st: NodeState):
        pre = (st.h[:, 0] == 0).astype(float)
        return pre * sg - pre * sg * (sg + 1.0) * zeta[:, 0]

    drv = DriverSpec(g, lipschitz=sg * (sg + 1.0) * sg, satisfies_c=False, y_dependent=False,
                     name="counterexample")
    zero = DriverSpec(lambda t, y, z, zeta, st: np.zeros(y.shape[0]), lipschitz=0.0, y_dependent=False,
                      name="zero")
    return drv, zero


def counterexample_suite(gamma: float = 1.0, T: float = 1.0, N: int = 50, n_paths: int = 100_000,
                         seed: int = 2024, zeta_tol: float = 0.1, workers: int = 1) -> dict:
    """Solve the counterexample pair and evaluate its four assertions."""
    bundle = simulate_bundle(DefaultModel.constant(gamma), build_grid(T, N), 1, n_paths, seed, workers=workers)
    drv, zero = counterexample_drivers(gamma)
    xi_spec = TerminalSpec.default_indicator(0)
    sol = solve(drv, xi_spec, bundle)
    sol_bar = solve(zero, TerminalSpec.constant(0.0), bundle)
    H = bundle.H[:, :, 0].astype(float)
    dt = bundle.grid.dt
    y_tol = 5 * dt + 3 * sol.y0_se
    y_err = float(np.abs(sol.Y[:, :, 0] - H).max())
    pre = bundle.pre_default[:, :-1, 0]
    zeta = sol.zeta[:, :-1, 0, 0]
    zeta_err = float(np.abs(zeta[pre] - 1.0).max()) if pre.any() else 0.0
    bar_zero = bool(not np.any(sol_bar.Y) and not np.any(sol_bar.Z) and not np.any(sol_bar.zeta))
    xi = H[:, -1]
    rep = compare_solutions(sol, sol_bar, xi=xi, xi_bar=np.zeros_like(xi), condition_c_ok=False)
    cc = check_condition_c(drv, bundle, 256, np.random.default_rng(seed))
    p_gap = float(np.mean(xi > 0))
    checks = {
        "y_tracks_h": y_err <= y_tol,
        "zeta_is_one": zeta_err <= zeta_tol,
        "ybar_is_zero": bar_zero,
        "y0_gap_zero_with_terminal_gap": abs(rep.y0_gap) <= 3 * rep.y0_gap_se + 1e-10 and p_gap > 0,
    }
    return {
        "gamma": gamma, "T": T, "N": N, "n_paths": n_paths, "seed": seed,
        "y0": sol.y0, "y0_se": sol.y0_se, "ybar0": sol_bar.y0,
        "sup_abs_y_minus_h": y_err, "y_tolerance": y_tol,
        "max_abs_zeta_minus_one": zeta_err, "zeta_tolerance": zeta_tol,
        "prob_xi_gt_xibar": p_gap,
        "condition_c": {"ok": cc.ok, "worst_quotient": cc.worst, "expected": -(np.sqrt(gamma) + 1) / np.sqrt(gamma)},
        "comparison": rep.to_dict(),
        "checks": checks,
        "strict_comparison_fails": bool(rep.strict_candidate),
        "passed": bool(all(checks.values())),
    }


@dataclass(frozen=True)
class CompliantPair:
    """Driver/terminal pair (g, xi) and a dominated pair (gbar, xibar) on X = B."""

    driver: DriverSpec
    driver_bar: DriverSpec
    terminal: TerminalSpec
    terminal_bar: TerminalSpec
    params: dict


def random_compliant_pair(rng: np.random.Generator, gamma: float) -> CompliantPair:
    """Random smooth pair satisfying (a)-(c) with xi >= xibar and g >= gbar.

    g = alpha + a y + b sin(z) + gamma_eff (w zeta + eps sin(zeta)); its
    condition (c) quotients lie in [w - |eps|, w + |eps|] inside (-0.9, 5).
    gbar = g - delta(t) and xibar = xi - Delta(X_T) with delta, Delta >= 0.
    """
    alpha = float(rng.uniform(-0.5, 0.5))
    a = float(rng.uniform(-1, 1))
    bz = float(rng.uniform(-1, 1))
    eps = float(rng.uniform(-0.4, 0.4))
    w = float(rng.uniform(-0.9 + abs(eps) + 0.05, 5 - abs(eps) - 0.05))
    d0, d1 = rng.uniform(0, 0.3, size=2)
    s0, s1, s2 = rng.uniform(-1, 1, size=3)
    D0, D1 = rng.uniform(0, 0.5, size=2)
    C = abs(a) + abs(bz) + (abs(w) + abs(eps)) * np.sqrt(gamma)

    def g(t, y, z, zeta, st):
        ge = st.gamma_eff[:, 0]
        return alpha + a * y + bz * np.sin(z[:, 0]) + ge * (w * zeta[:, 0] + eps * np.sin(zeta[:, 0]))

    def gbar(t, y, z, zeta, st):
        return g(t, y, z, zeta, st) - (d0 + d1 * t)

    def xi(H, X):
        return s0 + s1 * H[:, 0] + s2 * np.tanh(X[:, 0])

    def xibar(H, X):
        return xi(H, X) - (D0 + D1 * (1 + np.cos(X[:, 0])) / 2)

    bound = abs(s0) + abs(s1) + abs(s2)
    params = dict(alpha=alpha, a=a, b=bz, w=w, eps=eps, delta=(float(d0), float(d1)),
                  terminal=(float(s0), float(s1), float(s2)), Delta=(float(D0), float(D1)))
    return CompliantPair(
        DriverSpec(g, C, name="pair"),
        DriverSpec(gbar, C, name="pair_bar"),
        TerminalSpec(xi, bound, "pair"),
        TerminalSpec(xibar, bound + D0 + D1, "pair_bar"),
        params,
    )


def run_comparison_trials(n_trials: int = 20, gamma: float = 0.5, T: float = 1.0, N: int = 25,
                          n_paths: int = 20_000, seed: int = 11, degree: int = 2) -> list[dict]:
    """Solve randomized compliant pairs and collect their comparison reports."""
    rng = np.random.default_rng(seed)
    out = []
    basis = RegressionBasis(degree)
    for trial in range(n_trials):
        bundle = simulate_bundle(DefaultModel.constant(gamma), build_grid(T, N), 1, n_paths, seed + 1000 + trial)
        X = bundle.B
        pair = random_compliant_pair(rng, gamma)
        sol = solve(pair.driver, pair.terminal, bundle, basis, SolverConfig(), X)
        sol_bar = solve(pair.driver_bar, pair.terminal_bar, bundle, basis, SolverConfig(), X)
        rep = compare_solutions(sol, sol_bar)
        out.append({"trial": trial, "params": pair.params, **rep.to_dict()})
    return out


__all__ += ["run_comparison_trials"]
