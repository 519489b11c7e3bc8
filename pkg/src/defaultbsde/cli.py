"""Command-line runner: ``python -m defaultbsde <kind> --config run.json``.

Exit codes: 0 on success, 2 on configuration or output-path errors, 3 on
numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .comparison import counterexample_suite, run_comparison_trials
from .engine import DriverSpec, RegressionBasis, SolverConfig, export_csv, solve
from .errors import ConfigError, NumericalError
from .game import ThetaSet, evaluate_cost, robust_price, separable_game, solve_game_bsde, verify_saddle
from .jump_ito import ForwardSdeSpec, ito_convergence
from .kernel import DefaultModel, build_grid, martingale_check, simulate_bundle
from .linear import (
    LinearBsdeSpec,
    MarketSpec,
    adjoint_price,
    analytic_linear_price,
    asset_paths,
    linear_driver,
    market_linear_coefficients,
    replication_strategy,
)
from .terminal import TerminalSpec

log = logging.getLogger("defaultbsde")

KINDS = ("simulate", "price-linear", "replicate", "solve", "compare", "counterexample", "game", "robust", "ito-check")
THREADS_ENV = "DEFAULTBSDE_THREADS"

COMMON_DEFAULTS = {"T": 1.0, "N": 50, "d": 1, "k": 1, "n_paths": 10_000, "seed": 2024, "gamma": 0.1,
                   "output": None, "format": "json"}

KIND_DEFAULTS = {
    "simulate": {"max_paths": 100},
    "price-linear": {"a": 0.0, "b": 0.0, "c": 0.5, "form": "pricing", "claim": {"type": "survival", "amount": 1.0}},
    "replicate": {"mu": [0.0, 0.05, 0.1], "nu": [0.0, 0.3, 0.0], "kappa": [0.0, 0.0, -0.5],
                  "claim": {"type": "survival", "amount": 1.0}},
    "solve": {"driver": {"type": "linear", "a": 0.0, "b": 0.0, "c": 0.5, "form": "pricing"},
              "terminal": {"type": "survival", "amount": 1.0}, "degree": 0, "ridge": 0.0, "theta": 1.0,
              "method": "projection", "max_paths": 100},
    "compare": {"n_trials": 20, "degree": 2},
    "counterexample": {"zeta_tol": 0.1},
    "game": {"n_perturbations": 10, "degree": 2, "grid_points": 41, "u": 0.3, "v": -0.4, "perturb_seed": 0},
    "robust": {"u": [-0.1, 0.0, 0.1], "v": [-0.2, 0.0, 0.2], "w": [-0.5, 0.0, 0.5], "degree": 2},
    "ito-check": {"x0": 1.0, "mu": 0.05, "nu": 0.2, "kappa": -0.3, "beta": 1.0},
}


@dataclass
class RunConfig:
    """Resolved configuration for one experiment."""

    kind: str
    T: float
    N: int
    d: int
    k: int
    n_paths: int
    seed: int
    gamma: object
    output: str | None = None
    format: str = "json"
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, kind: str, raw: dict) -> "RunConfig":
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}")
        merged = copy.deepcopy(COMMON_DEFAULTS)
        merged.update(copy.deepcopy(KIND_DEFAULTS[kind]))
        for key, val in raw.items():
            if isinstance(val, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **val}
            else:
                merged[key] = val
        merged.pop("kind", None)
        common = {key: merged.pop(key) for key in COMMON_DEFAULTS}
        unknown = set(merged) - set(KIND_DEFAULTS[kind])
        if unknown:
            raise ConfigError(f"unknown keys for {kind}: {sorted(unknown)}")
        cfg = cls(kind=kind, params=merged, **common)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.T, (int, float)) and self.T > 0, "T must be positive")
        for name in ("N", "n_paths"):
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool) and v >= 1, f"{name} must be a positive integer")
        need(isinstance(self.d, int) and self.d >= 0, "d must be a nonnegative integer")
        need(isinstance(self.k, int) and self.k >= 1, "k must be a positive integer")
        need(isinstance(self.seed, int) and 0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer")
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        need(g.size in (1, self.k) and np.all(g >= 0) and np.all(np.isfinite(g)),
             "gamma must be a nonnegative number or one per default")
        need(self.format in ("json", "csv"), "format must be json or csv")
        p = self.params
        if self.kind == "price-linear" or (self.kind == "solve" and p["driver"].get("type") == "linear"):
            src = p if self.kind == "price-linear" else p["driver"]
            form = src.get("form", "pricing")
            need(form in ("pricing", "comparison"), "form must be pricing or comparison")
            c = np.asarray(src.get("c", 0.0), float)
            need(np.all(c < 1) if form == "pricing" else np.all(c > -1), f"c = {c.tolist()} violates the {form} sign rule")
        if self.kind in ("replicate", "game", "robust", "ito-check", "counterexample"):
            need(self.k == 1, f"{self.kind} uses a single default time (k = 1)")
        if self.kind in ("replicate", "game", "robust", "ito-check"):
            need(self.d == 1, f"{self.kind} uses one Brownian motion (d = 1)")
        if self.kind == "counterexample":
            need(float(g[0]) > 0, "the counterexample needs gamma > 0")
        if self.kind == "replicate":
            need(float(g[0]) > 0, "the market-implied c needs gamma > 0")
            try:
                MarketSpec(p["mu"], p["nu"], p["kappa"]).weights()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.kind == "robust":
            need(all(w > -1 for w in p["w"]), "every w must exceed -1")
        if self.kind == "ito-check":
            need(p["kappa"] > -1, "kappa must exceed -1")
        if self.kind == "compare":
            need(int(p["n_trials"]) >= 1, "n_trials must be positive")
        if self.kind == "solve":
            need(p["method"] in ("projection", "moment"), "method must be projection or moment")
            need(0 <= p["theta"] <= 1, "theta must lie in [0, 1]")
            need(p["driver"].get("type") in ("linear", "zero", "counterexample"), "unknown driver type")
        for key in ("degree",):
            if key in p:
                need(isinstance(p[key], int) and p[key] >= 0, "degree must be a nonnegative integer")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "T": self.T, "N": self.N, "d": self.d, "k": self.k, "n_paths": self.n_paths,
               "seed": self.seed, "gamma": self.gamma, "output": self.output, "format": self.format}
        out.update(self.params)
        return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, sets: list[str]) -> dict:
    """Apply ``key=value`` overrides; dotted keys reach into nested objects."""
    out = copy.deepcopy(raw)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} reaches into a non-object")
        node[parts[-1]] = _parse_value(val)
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from None


def _model(cfg: RunConfig) -> DefaultModel:
    g = np.atleast_1d(np.asarray(cfg.gamma, dtype=float))
    return DefaultModel.constant(np.broadcast_to(g, (cfg.k,)).tolist())


def _bundle(cfg: RunConfig, d: int | None = None):
    return simulate_bundle(_model(cfg), build_grid(cfg.T, cfg.N), cfg.d if d is None else d, cfg.n_paths, cfg.seed,
                           workers=_threads())


def _terminal(spec: dict) -> TerminalSpec:
    kind = spec.get("type", "survival")
    amount = float(spec.get("amount", 1.0))
    if kind == "survival":
        return TerminalSpec.survival(amount)
    if kind == "default":
        return TerminalSpec.default_indicator(int(spec.get("index", 0)), amount)
    if kind == "constant":
        return TerminalSpec.constant(amount)
    raise ConfigError(f"unknown terminal type {kind!r}")


def _closed_form(cfg: RunConfig, p: dict, grid=None):
    claim = p["claim"]
    if cfg.k != 1 or p["form"] != "pricing" or any(isinstance(p[x], (list, dict)) for x in ("a", "c")):
        return None
    amount = float(claim.get("amount", 1.0))
    xs, xd = {"survival": (amount, 0.0), "default": (0.0, amount), "constant": (amount, amount)}[claim["type"]]
    g = float(np.atleast_1d(cfg.gamma)[0])
    return analytic_linear_price(float(p["a"]), float(p["c"]), g, cfg.T, xs, xd, grid)


def run_simulate(cfg: RunConfig):
    b = _bundle(cfg)
    rep = martingale_check(b)
    surv = (b.H[:, -1, :] == 0).mean(axis=0)
    result = {"martingale": rep.to_dict(), "ok": rep.ok, "survival_T": surv.tolist(),
              "defaults_total": int(b.H[:, -1, :].sum())}
    rows = None
    if cfg.format == "csv":
        n = min(cfg.params["max_paths"], b.n_paths)
        B, M, t = b.B, b.M, b.grid.nodes
        header = (["path", "node", "t"] + [f"H{j + 1}" for j in range(b.k)] + [f"B{l + 1}" for l in range(b.d)]
                  + [f"M{j + 1}" for j in range(b.k)])
        rows = [header]
        for p_ in range(n):
            for i in range(b.N + 1):
                rows.append([p_, i, _fmt(t[i])] + [int(h) for h in b.H[p_, i]] + [_fmt(x) for x in B[p_, i]]
                            + [_fmt(x) for x in M[p_, i]])
    return result, rows


def run_price_linear(cfg: RunConfig):
    p = cfg.params
    b = _bundle(cfg)
    spec = LinearBsdeSpec(p["a"], p["b"], p["c"], _terminal(p["claim"]), form=p["form"])
    y_adj, se_adj = adjoint_price(spec, b)
    sol = solve(linear_driver(spec, b), spec.claim, b)
    ref = _closed_form(cfg, p)
    ref_grid = _closed_form(cfg, p, b.grid)
    tol = 3 * np.hypot(se_adj, sol.y0_se) + 5 * b.grid.dt
    result = {"adjoint_y0": y_adj, "adjoint_se": se_adj, "solve_y0": sol.y0, "solve_se": sol.y0_se,
              "closed_form": ref, "closed_form_on_grid": ref_grid, "tolerance": tol,
              "agree": bool(abs(y_adj - sol.y0) <= tol and (ref is None or abs(y_adj - ref) <= tol))}
    return result, None


def run_replicate(cfg: RunConfig):
    p = cfg.params
    g = float(np.atleast_1d(cfg.gamma)[0])
    market = MarketSpec(p["mu"], p["nu"], p["kappa"])
    a, bcoef, c = market_linear_coefficients(market, g)
    if c >= 1:
        raise ConfigError(f"market-implied c = {c:.6g} is not below 1")
    b = _bundle(cfg)
    spec = LinearBsdeSpec(a, bcoef, c, _terminal(p["claim"]), form="pricing")
    y_adj, se_adj = adjoint_price(spec, b)
    sol = solve(linear_driver(spec, b), spec.claim, b)
    Y, Z, zeta = sol.scalar()
    pre = b.pre_default[:, :, 0]
    th1, th2, th3 = replication_strategy(market, Y[:, :-1], Z[:, :-1, 0], zeta[:, :-1, 0], pre[:, :-1])
    nu, ka = market.nu, market.kappa
    r1 = nu[0] * Y[:, :-1] + th2 * (nu[1] - nu[0]) + th3 * (nu[2] - nu[0]) - Z[:, :-1, 0]
    r2 = ka[0] * Y[:, :-1] + th2 * (ka[1] - ka[0]) + th3 * (ka[2] - ka[0]) - zeta[:, :-1, 0] * pre[:, :-1]
    S = asset_paths(market, b)
    result = {"a": a, "b": bcoef, "c": c, "determinant": market.determinant, "price_adjoint": y_adj,
              "price_adjoint_se": se_adj, "price_solve": sol.y0, "theta0": [float(th1[:, 0].mean()),
              float(th2[:, 0].mean()), float(th3[:, 0].mean())],
              "max_residual_brownian": float(np.abs(r1).max()), "max_residual_jump": float(np.abs(r2).max()),
              "mean_terminal_assets": S[:, -1, :].mean(axis=0).tolist()}
    return result, None


def _driver_from(cfg: RunConfig, spec: dict, b):
    kind = spec.get("type")
    if kind == "linear":
        ls = LinearBsdeSpec(spec.get("a", 0.0), spec.get("b", 0.0), spec.get("c", 0.0), form=spec.get("form", "pricing"))
        return linear_driver(ls, b)
    if kind == "zero":
        return DriverSpec(lambda t, y, z, zeta, st: np.zeros(y.shape[0]), 0.0, y_dependent=False, name="zero")
    if kind == "counterexample":
        from .comparison import counterexample_drivers

        return counterexample_drivers(float(np.atleast_1d(cfg.gamma)[0]))[0]
    raise ConfigError(f"unknown driver type {kind!r}; use linear, zero or counterexample")


def run_solve(cfg: RunConfig):
    p = cfg.params
    b = _bundle(cfg)
    drv = _driver_from(cfg, p["driver"], b)
    sol = solve(drv, _terminal(p["terminal"]), b, RegressionBasis(p["degree"], p["ridge"]),
                SolverConfig(theta=p["theta"], method=p["method"]))
    result = {"y0": sol.y0, "y0_se": sol.y0_se, "meta": sol.meta}
    rows = None
    if cfg.format == "csv":
        buf = io.StringIO()
        export_csv(sol, buf, max_paths=p["max_paths"])
        rows = list(csv.reader(io.StringIO(buf.getvalue())))
    return result, rows


def run_compare(cfg: RunConfig):
    p = cfg.params
    trials = run_comparison_trials(int(p["n_trials"]), float(np.atleast_1d(cfg.gamma)[0]), cfg.T, cfg.N,
                                   cfg.n_paths, cfg.seed, int(p["degree"]))
    worst = max(t["violation_fraction"] for t in trials)
    return {"trials": trials, "max_violation_fraction": worst, "passed": bool(worst <= 1e-3)}, None


def run_counterexample(cfg: RunConfig):
    g = float(np.atleast_1d(cfg.gamma)[0])
    rep = counterexample_suite(g, cfg.T, cfg.N, cfg.n_paths, cfg.seed, cfg.params["zeta_tol"], workers=_threads())
    return rep, None


def run_game(cfg: RunConfig):
    p = cfg.params
    spec = separable_game(n_grid=int(p["grid_points"]))
    b = _bundle(cfg)
    rep = verify_saddle(spec, int(p["n_perturbations"]), b, RegressionBasis(p["degree"]),
                        np.random.default_rng(p["perturb_seed"]))
    sol, J0, _ = solve_game_bsde(spec, b, RegressionBasis(p["degree"]), "fixed", u=p["u"], v=p["v"])
    J, se, diag = evaluate_cost(spec, p["u"], p["v"], b)
    rep["fixed_controls"] = {"u": p["u"], "v": p["v"], "J_bsde": J0, "J_bsde_se": sol.y0_se, "J_girsanov": J,
                             "J_girsanov_se": se, "ess": diag["ess"],
                             "agree": bool(abs(J0 - J) <= 3 * np.hypot(se, sol.y0_se) + 5 * b.grid.dt)}
    return rep, None


def robust_claim() -> TerminalSpec:
    """1{tau > T}(1 + tanh(B_T)/2)."""
    return TerminalSpec(lambda H, X: (H[:, 0] == 0) * (1.0 + 0.5 * np.tanh(X[:, 0])), 1.5, "robust_claim")


def run_robust(cfg: RunConfig):
    p = cfg.params
    b = _bundle(cfg)
    X = b.B
    theta = ThetaSet.grid(p["u"], p["v"], p["w"])
    claim = robust_claim()
    y0, se, _ = robust_price(theta, claim, b, RegressionBasis(p["degree"]), X)
    prices = []
    for u, v, w in theta.points:
        y, s = adjoint_price(LinearBsdeSpec(u, v, w, claim, form="comparison"), b, X)
        prices.append({"theta": [u, v, w], "price": y, "se": s})
    best = max(prices, key=lambda r: r["price"])
    tol = 3 * np.hypot(se, best["se"]) + 5 * b.grid.dt
    return {"upper_price": y0, "upper_se": se, "max_fixed_price": best["price"], "argmax_theta": best["theta"],
            "tolerance": tol, "dominates": bool(all(y0 >= r["price"] - tol for r in prices)),
            "fixed_prices": prices}, None


def run_ito(cfg: RunConfig):
    p = cfg.params
    spec = ForwardSdeSpec.geometric(p["x0"], p["mu"], p["nu"], p["kappa"])
    out = ito_convergence(spec, _model(cfg), cfg.T, cfg.N, cfg.n_paths, cfg.seed, p["beta"])
    out["ratio_in_range"] = bool(0.3 <= out["ratio"] <= 0.8)
    return out, None


RUNNERS = {
    "simulate": run_simulate, "price-linear": run_price_linear, "replicate": run_replicate, "solve": run_solve,
    "compare": run_compare, "counterexample": run_counterexample, "game": run_game, "robust": run_robust,
    "ito-check": run_ito,
}


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _summary_rows(result: dict) -> list[list]:
    flat = {}

    def walk(prefix, val):
        if isinstance(val, dict):
            for k, v in val.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(val, (int, float, bool, str)) or val is None:
            flat[prefix] = val

    walk("", result)
    keys = sorted(flat)
    return [keys, [_fmt(flat[k]) if isinstance(flat[k], float) else flat[k] for k in keys]]


def _check_writable(path: str | None) -> None:
    if path is None:
        return
    target = Path(path)
    parent = target.parent if str(target.parent) else Path(".")
    if not parent.is_dir() or not os.access(parent, os.W_OK) or (target.exists() and not os.access(target, os.W_OK)):
        raise ConfigError(f"output path {path!r} is not writable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defaultbsde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="{" + ",".join(KINDS) + "}")
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--output", help="report path (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"))
    return parser


def run(argv: list[str] | None = None) -> int:
    """Parse arguments, run one experiment and write its report; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = {}
        if args.config:
            try:
                raw = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError("config must be a JSON object")
        raw = apply_overrides(raw, args.set)
        if args.output:
            raw["output"] = args.output
        if args.format:
            raw["format"] = args.format
        cfg = RunConfig.from_dict(args.kind, raw)
        _check_writable(cfg.output)
        _threads()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result, rows = RUNNERS[cfg.kind](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in {cfg.kind}: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    report = {"kind": cfg.kind, "config": cfg.to_dict(), "seed": cfg.seed,
              "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(), "result": _jsonable(result)}
    if cfg.format == "json":
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    else:
        rows = rows if rows is not None else _summary_rows({"kind": cfg.kind, **report["result"]})
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        text = buf.getvalue()
    try:
        if cfg.output:
            Path(cfg.output).write_text(text)
            if cfg.format == "csv":
                meta = {k: report[k] for k in ("kind", "config", "seed", "timestamp")}
                Path(cfg.output + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        else:
            sys.stdout.write(text)
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
