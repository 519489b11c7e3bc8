"""Zero-sum stochastic differential game with default: Hamiltonian, saddle search,
game BSDE, Girsanov cost evaluation and the robust upper price."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .engine import BsdeSolution, DriverSpec, NodeState, RegressionBasis, SolverConfig, solve
from .errors import NumericalError
from .jump_ito import ForwardSdeSpec, exponential_log_increments, simulate_forward
from .kernel import PathBundle
from .terminal import TerminalSpec

__all__ = [
    "GameSpec",
    "SaddleResult",
    "ThetaSet",
    "IsaacsError",
    "hamiltonian",
    "saddle_search",
    "solve_game_bsde",
    "GirsanovResult",
    "girsanov_weights",
    "weighted_default_intensity",
    "evaluate_cost",
    "verify_saddle",
    "robust_price",
    "separable_game",
]


class IsaacsError(NumericalError):
    """Saddle mode met a node where min-max and max-min differ on the grids."""


@dataclass(frozen=True)
class GameSpec:
    """Coefficients of the game.

    ``b(t, x, u, v)`` and ``c(t, x, u, v)`` take x of shape (..., m) and u, v
    broadcastable against x[..., 0]; they return (..., d) and (..., k).
    ``f`` returns (...). The forward state X solves the control-free SDE of
    ``forward`` under P, with m = d = k so that sigma and kappa are square.
    """

    forward: ForwardSdeSpec
    b: Callable
    c: Callable
    f: Callable
    h: TerminalSpec
    U: np.ndarray
    V: np.ndarray
    sigma_inv_bound: float = np.inf
    kappa_inv_bound: float = np.inf
    b_bound: float = np.inf
    c_bound: float = np.inf
    state_free: bool = False  # b, c, f, sigma, kappa ignore x: grid tables are built once per node

    def __post_init__(self):
        for name in ("U", "V"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"{name} must be a nonempty 1-d grid")
            object.__setattr__(self, name, arr)

    def inverses(self, t: float, x: np.ndarray):
        """sigma^{-1} and kappa^{-1} at (t, x), shapes (n, d, m) and (n, k, m)."""
        sig = self.forward.sigma(t, x)
        kap = self.forward.kappa(t, x)
        if sig.shape[1] != sig.shape[2] or kap.shape[1] != kap.shape[2]:
            raise ValueError("sigma and kappa must be square (m = d = k)")
        out = []
        for name, mat in (("sigma", sig), ("kappa", kap)):
            det = np.linalg.det(mat)
            if np.any(np.abs(det) < 1e-12):
                p = int(np.argmin(np.abs(det)))
                raise ValueError(f"{name} is singular at t={t}, x={x[p].tolist()}")
            out.append(np.linalg.inv(mat))
        return out[0], out[1]

    def thetas(self, t: float, x: np.ndarray, u, v):
        """(sigma^{-1} b, kappa^{-1} c) per path; u, v are (n,) or scalars."""
        n = x.shape[0]
        u = np.broadcast_to(np.asarray(u, float), (n,))
        v = np.broadcast_to(np.asarray(v, float), (n,))
        si, ki = self.inverses(t, x)
        bb = np.asarray(self.b(t, x, u, v), float).reshape(n, -1)
        cc = np.asarray(self.c(t, x, u, v), float).reshape(n, -1)
        return np.einsum("ndm,nm->nd", si, bb), np.einsum("nkm,nm->nk", ki, cc)

    def validate(self, rng: np.random.Generator, samples: int = 256, T: float = 1.0, scale: float = 3.0) -> None:
        """Spot-check invertibility bounds, kappa^{-1} c > -1 and f >= 0."""
        m = self.forward.m
        t = float(rng.uniform(0, T))
        x = self.forward.x0 + rng.normal(scale=scale, size=(samples, m))
        u = rng.choice(self.U, size=samples)
        v = rng.choice(self.V, size=samples)
        si, ki = self.inverses(t, x)
        if np.any(np.linalg.norm(si, axis=(1, 2)) > self.sigma_inv_bound + 1e-9):
            raise ValueError("|sigma^{-1}| exceeds its declared bound")
        if np.any(np.linalg.norm(ki, axis=(1, 2)) > self.kappa_inv_bound + 1e-9):
            raise ValueError("|kappa^{-1}| exceeds its declared bound")
        _, thM = self.thetas(t, x, u, v)
        if np.any(thM <= -1 + 1e-9):
            p = int(np.argmin(thM.min(axis=1)))
            raise ValueError(f"kappa^{{-1}} c <= -1 at x={x[p].tolist()}, u={u[p]}, v={v[p]}")
        if np.any(np.asarray(self.f(t, x, u, v)) < 0):
            raise ValueError("running cost f must be nonnegative")


@dataclass
class SaddleResult:
    """Grid saddle per query point; arrays of shape (n,)."""

    u_star: np.ndarray
    v_star: np.ndarray
    value: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    u_index: np.ndarray
    v_index: np.ndarray

    @property
    def isaacs_gap(self) -> np.ndarray:
        return self.upper - self.lower


def _hamiltonian_grid(spec: GameSpec, t, x, z, zeta, gamma_eff, U, V):
    """H on the product grid, shape (n, |U|, |V|)."""
    n = x.shape[0]
    nu, nv = U.size, V.size
    if spec.state_free:
        x1 = x[:1]
        xg = np.broadcast_to(x1[:, None, None, :], (1, nu, nv, x.shape[1]))
        ug = np.broadcast_to(U[None, :, None], (1, nu, nv))
        vg = np.broadcast_to(V[None, None, :], (1, nu, nv))
        si, ki = spec.inverses(t, x1)
        bb = np.asarray(spec.b(t, xg, ug, vg), float).reshape(nu * nv, -1)
        cc = np.asarray(spec.c(t, xg, ug, vg), float).reshape(nu * nv, -1)
        ff = np.broadcast_to(np.asarray(spec.f(t, xg, ug, vg), float), (1, nu, nv)).reshape(1, nu * nv)
        table = np.concatenate([(bb @ si[0].T).T, (cc @ ki[0].T).T, ff], axis=0)
        lhs = np.concatenate([z, zeta * gamma_eff, np.ones((n, 1))], axis=1)
        return (lhs @ table).reshape(n, nu, nv)
    xg = np.broadcast_to(x[:, None, None, :], (n, nu, nv, x.shape[1]))
    ug = np.broadcast_to(U[None, :, None], (n, nu, nv))
    vg = np.broadcast_to(V[None, None, :], (n, nu, nv))
    si, ki = spec.inverses(t, x)
    bb = np.asarray(spec.b(t, xg, ug, vg), float).reshape(n, nu, nv, -1)
    cc = np.asarray(spec.c(t, xg, ug, vg), float).reshape(n, nu, nv, -1)
    thB = np.einsum("ndm,nuvm->nuvd", si, bb)
    thM = np.einsum("nkm,nuvm->nuvk", ki, cc)
    ff = np.broadcast_to(np.asarray(spec.f(t, xg, ug, vg), float), (n, nu, nv))
    return (
        np.einsum("nd,nuvd->nuv", z, thB)
        + np.einsum("nk,nuvk->nuv", zeta * gamma_eff, thM)
        + ff
    )


def hamiltonian(spec: GameSpec, t: float, x, z, zeta, u, v, gamma_eff) -> np.ndarray:
    """z . sigma^{-1} b + zeta . (kappa^{-1} c) 1{pre} gamma + f, per path.

    x (n, m), z (n, d), zeta (n, k), gamma_eff (n, k) already masked.
    """
    x = np.atleast_2d(np.asarray(x, float))
    n = x.shape[0]
    z = np.asarray(z, float).reshape(n, -1)
    zeta = np.asarray(zeta, float).reshape(n, -1)
    ge = np.broadcast_to(np.asarray(gamma_eff, float), zeta.shape)
    thB, thM = spec.thetas(t, x, u, v)
    ff = np.broadcast_to(np.asarray(spec.f(t, x, np.broadcast_to(u, (n,)), np.broadcast_to(v, (n,))), float), (n,))
    return (z * thB).sum(axis=1) + (zeta * ge * thM).sum(axis=1) + ff


def saddle_search(spec: GameSpec, t: float, x, z, zeta, gamma_eff, chunk: int = 4096) -> SaddleResult:
    """Grid min-max and max-min with lowest-index tie-breaking.

    u* = argmin_u max_v H and v* = argmax_v min_u H.
    """
    x = np.atleast_2d(np.asarray(x, float))
    n = x.shape[0]
    z = np.asarray(z, float).reshape(n, -1)
    zeta = np.asarray(zeta, float).reshape(n, -1)
    ge = np.broadcast_to(np.asarray(gamma_eff, float), zeta.shape)
    ui = np.empty(n, dtype=np.int64)
    vi = np.empty(n, dtype=np.int64)
    val, up, lo = (np.empty(n) for _ in range(3))
    for s in range(0, n, chunk):
        sl = slice(s, min(s + chunk, n))
        Hm = _hamiltonian_grid(spec, t, x[sl], z[sl], zeta[sl], ge[sl], spec.U, spec.V)
        mx = Hm.max(axis=2)
        mn = Hm.min(axis=1)
        ui[sl] = np.argmin(mx, axis=1)
        vi[sl] = np.argmax(mn, axis=1)
        r = np.arange(sl.stop - sl.start)
        up[sl] = mx[r, ui[sl]]
        lo[sl] = mn[r, vi[sl]]
        val[sl] = Hm[r, ui[sl], vi[sl]]
    return SaddleResult(spec.U[ui], spec.V[vi], val, up, lo, ui, vi)


def _controls_at(ctrl, i: int, t: float, x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    if callable(ctrl):
        return np.broadcast_to(np.asarray(ctrl(t, x), float), (n,))
    arr = np.asarray(ctrl, float)
    if arr.ndim == 2:
        return arr[:, i]
    return np.broadcast_to(arr, (n,))


def _theta_bounds(spec: GameSpec, gamma_max: float) -> float:
    """Lipschitz constant of the game drivers in (z, zeta)."""
    return float(spec.sigma_inv_bound * spec.b_bound + spec.kappa_inv_bound * spec.c_bound * np.sqrt(gamma_max))


class _GameDriver:
    """Driver H(t, X, z, zeta, u, v) under one of the solver modes; records controls."""

    def __init__(self, spec: GameSpec, mode: str, u=None, v=None, N: int = 0, n: int = 0, chunk: int = 4096):
        self.spec, self.mode, self.u, self.v, self.chunk = spec, mode, u, v, chunk
        self.u_star = np.full((n, N), np.nan)
        self.v_star = np.full((n, N), np.nan)
        self.max_gap = 0.0

    def __call__(self, t, y, z, zeta, st: NodeState):
        spec, x = self.spec, st.x
        i = st.i
        if self.mode == "fixed":
            u = _controls_at(self.u, i, t, x)
            v = _controls_at(self.v, i, t, x)
            out = hamiltonian(spec, t, x, z, zeta, u, v, st.gamma_eff)
        elif self.mode == "saddle":
            res = saddle_search(spec, t, x, z, zeta, st.gamma_eff, self.chunk)
            gap = res.isaacs_gap
            bad = gap > 1e-9 * (1 + np.abs(res.value))
            if bad.any():
                p = int(np.flatnonzero(bad)[0])
                raise IsaacsError(
                    f"Isaacs condition fails at node {i}, path {p}: gap {gap[p]:.6g}, "
                    f"z={z[p].tolist()}, zeta={zeta[p].tolist()}"
                )
            self.max_gap = max(self.max_gap, float(gap.max(initial=0.0)))
            u, v, out = res.u_star, res.v_star, res.value
        elif self.mode == "best_response_u":
            v = _controls_at(self.v, i, t, x)
            Hm = np.stack([hamiltonian(spec, t, x, z, zeta, uu, v, st.gamma_eff) for uu in spec.U], axis=1)
            k = np.argmin(Hm, axis=1)
            u, out = spec.U[k], Hm[np.arange(len(k)), k]
        elif self.mode == "best_response_v":
            u = _controls_at(self.u, i, t, x)
            Hm = np.stack([hamiltonian(spec, t, x, z, zeta, u, vv, st.gamma_eff) for vv in spec.V], axis=1)
            k = np.argmax(Hm, axis=1)
            v, out = spec.V[k], Hm[np.arange(len(k)), k]
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.u_star[:, i] = u
        self.v_star[:, i] = v
        return out


def solve_game_bsde(spec: GameSpec, bundle: PathBundle, basis: RegressionBasis = RegressionBasis(2),
                    mode: Literal["fixed", "saddle", "best_response_u", "best_response_v"] = "saddle",
                    u=None, v=None, X: np.ndarray | None = None, chunk: int = 4096):
    """Solve Y = h + int H(s, X, Z, zeta, u, v) ds - int Z dB - int zeta dM.

    Controls for ``fixed`` and the best-response modes are constants,
    callables (t, x) -> (n,), or arrays (n, N). Returns (solution, J0,
    controls) where controls holds the realized u and v per (path, node).
    """
    if mode in ("fixed", "best_response_v") and u is None:
        raise ValueError(f"mode {mode!r} needs u")
    if mode in ("fixed", "best_response_u") and v is None:
        raise ValueError(f"mode {mode!r} needs v")
    X = simulate_forward(spec.forward, bundle) if X is None else X
    drv = _GameDriver(spec, mode, u, v, bundle.N, bundle.n_paths, chunk)
    C = _theta_bounds(spec, float(bundle.gamma.max(initial=0.0)))
    driver = DriverSpec(drv, lipschitz=C if np.isfinite(C) else 0.0, y_dependent=False, name=f"game[{mode}]")
    sol = solve(driver, spec.h, bundle, basis, SolverConfig(), X)
    sol.meta["mode"] = mode
    sol.meta["max_isaacs_gap"] = drv.max_gap
    return sol, sol.y0, {"u": drv.u_star, "v": drv.v_star}


@dataclass
class GirsanovResult:
    """Density L_T per path with its diagnostics."""

    L: np.ndarray
    log_L: np.ndarray
    theta_B: np.ndarray  # (n, N, d)
    theta_M: np.ndarray  # (n, N, k)
    ess: float

    @property
    def mean(self) -> float:
        return float(self.L.mean())

    @property
    def se(self) -> float:
        return float(self.L.std(ddof=1) / np.sqrt(self.L.size)) if self.L.size > 1 else 0.0

    @property
    def unreliable(self) -> bool:
        return self.ess < 0.01 * self.L.size


def girsanov_weights(spec: GameSpec, u, v, bundle: PathBundle, X: np.ndarray | None = None) -> GirsanovResult:
    """L_T = E(int sigma^{-1} b dB + int kappa^{-1} c dM)_T by exact log-update."""
    X = simulate_forward(spec.forward, bundle) if X is None else X
    n, N = bundle.n_paths, bundle.N
    t = bundle.grid.nodes
    thB = np.empty((n, N, bundle.d))
    thM = np.empty((n, N, bundle.k))
    for i in range(N):
        x = X[:, i, :]
        thB[:, i], thM[:, i] = spec.thetas(t[i], x, _controls_at(u, i, t[i], x), _controls_at(v, i, t[i], x))
    live = bundle.pre_default[:, :-1, :] & (bundle.gamma[None, :-1, :] > 0)
    if np.any((thM <= -1) & live):
        p, i, j = np.argwhere((thM <= -1) & live)[0]
        raise NumericalError(f"kappa^{{-1}} c = {thM[p, i, j]:.6g} <= -1 on path {p} at node {i}, default {j + 1}")
    c = np.where(live, thM, 0.0)
    inc = exponential_log_increments(0.0, thB, c, bundle)
    logL = inc.sum(axis=1)
    L = np.exp(logL)
    ess = float(L.sum() ** 2 / (L**2).sum()) if np.any(L > 0) else 0.0
    return GirsanovResult(L, logL, thB, thM, ess)


def weighted_default_intensity(weights: np.ndarray, bundle: PathBundle, j: int = 0):
    """Ratio estimate sum L 1{default} / sum L exposure and its delta-method SE.

    Exposure is the pre-default time on the grid less half a step for
    defaulted paths, since the default is recorded at the right node.
    """
    dt = bundle.grid.dt
    pre = bundle.pre_default[:, :-1, j]
    D = bundle.H[:, -1, j].astype(float)
    expo = pre.sum(axis=1) * dt - 0.5 * dt * D
    A, B = weights * D, weights * expo
    R = A.sum() / B.sum()
    n = weights.size
    se = float(np.sqrt(np.var(A - R * B, ddof=1) / n) / B.mean())
    return float(R), se


def evaluate_cost(spec: GameSpec, u, v, bundle: PathBundle, X: np.ndarray | None = None):
    """J = E[L_T (sum f dt + h)] with SE from the weighted sample.

    Returns (J, SE, diagnostics) where diagnostics has the ESS and an
    ``unreliable`` flag for ESS below 1% of the paths.
    """
    X = simulate_forward(spec.forward, bundle) if X is None else X
    gw = girsanov_weights(spec, u, v, bundle, X)
    t = bundle.grid.nodes
    run = np.zeros(bundle.n_paths)
    for i in range(bundle.N):
        x = X[:, i, :]
        fv = spec.f(t[i], x, _controls_at(u, i, t[i], x), _controls_at(v, i, t[i], x))
        run += np.broadcast_to(np.asarray(fv, float), (bundle.n_paths,)) * bundle.grid.dt
    h = spec.h.evaluate(bundle.H[:, -1, :].astype(float), X[:, -1, :])[:, 0]
    w = gw.L * (run + h)
    n = w.size
    se = float(w.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(w.mean()), se, {"ess": gw.ess, "unreliable": gw.unreliable, "mean_L": gw.mean}


def verify_saddle(spec: GameSpec, n_perturbations: int, bundle: PathBundle, basis: RegressionBasis = RegressionBasis(2),
                  rng: np.random.Generator | None = None, tol: float | None = None,
                  one_sided: Literal["both", "v"] = "both") -> dict:
    """Check J(u*, v) <= J(u*, v*) <= J(u, v*) for random constant perturbations.

    (u*, v*) are the feedback controls realized by the saddle-mode solve.
    Every J is a Girsanov-weighted estimate on the same bundle; the default
    tolerance is 3 combined SE + 5 dt. With ``one_sided="v"`` only the
    maximizer inequality is checked (u plays no role).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    X = simulate_forward(spec.forward, bundle)
    sol, J0, ctrl = solve_game_bsde(spec, bundle, basis, "saddle", X=X)
    us, vs = ctrl["u"], ctrl["v"]
    Js, Js_se, _ = evaluate_cost(spec, us, vs, bundle, X)
    dt = bundle.grid.dt
    rows = []
    for _ in range(n_perturbations):
        vr = float(rng.choice(spec.V))
        J, se, _ = evaluate_cost(spec, us, vr, bundle, X)
        t_ = tol if tol is not None else 3 * np.hypot(se, Js_se) + 5 * dt
        rows.append({"kind": "v", "control": vr, "J": J, "se": se, "margin": Js - J, "tol": float(t_),
                     "ok": bool(J <= Js + t_)})
        if one_sided == "both":
            ur = float(rng.choice(spec.U))
            J, se, _ = evaluate_cost(spec, ur, vs, bundle, X)
            t_ = tol if tol is not None else 3 * np.hypot(se, Js_se) + 5 * dt
            rows.append({"kind": "u", "control": ur, "J": J, "se": se, "margin": J - Js, "tol": float(t_),
                         "ok": bool(Js <= J + t_)})
    return {
        "J_bsde": J0, "J_bsde_se": sol.y0_se, "J_star": Js, "J_star_se": Js_se,
        "max_isaacs_gap": sol.meta["max_isaacs_gap"], "perturbations": rows,
        "passed": all(r["ok"] for r in rows),
    }


@dataclass(frozen=True)
class ThetaSet:
    """Finite set of (u, v, w) for the robust driver u y + v . z + w . 1{pre} gamma zeta."""

    points: tuple

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        if not pts:
            raise ValueError("Theta must be nonempty")
        for p in pts:
            if len(p) != 3 or not all(np.isfinite(p)):
                raise ValueError(f"bad Theta point {p}")
            if p[2] <= -1 + 1e-9:
                raise ValueError(f"w = {p[2]} violates the jump condition w > -1")
        object.__setattr__(self, "points", pts)

    @classmethod
    def grid(cls, u, v, w) -> "ThetaSet":
        return cls(tuple(itertools.product(np.atleast_1d(u), np.atleast_1d(v), np.atleast_1d(w))))

    @property
    def bound(self) -> tuple:
        arr = np.abs(np.asarray(self.points))
        return tuple(arr.max(axis=0))


def robust_driver(theta: ThetaSet, gamma_max: float) -> DriverSpec:
    """Pointwise maximum of the linear generators over Theta (d = k = 1)."""
    from .linear import linear_value

    pts = theta.points
    ub, vb, wb = theta.bound
    C = max(ub, vb, wb * np.sqrt(gamma_max))

    def g(t, y, z, zeta, st):
        vals = [linear_value(u, np.array([v]), np.array([w]), y, z, zeta, st.gamma_eff, 1.0) for u, v, w in pts]
        return vals[0] if len(vals) == 1 else np.max(np.stack(vals), axis=0)

    return DriverSpec(g, lipschitz=float(C), satisfies_c=True, y_dependent=bool(any(p[0] != 0 for p in pts)),
                      name="robust")


def robust_price(theta: ThetaSet, claim: TerminalSpec, bundle: PathBundle, basis: RegressionBasis = RegressionBasis(),
                 X: np.ndarray | None = None, config: SolverConfig = SolverConfig()):
    """Upper price: solve with g = max over Theta of u y + v z + w gamma_eff zeta.

    Returns (y0, SE, solution).
    """
    if bundle.d != 1 or bundle.k != 1:
        raise ValueError("robust_price uses d = k = 1")
    drv = robust_driver(theta, float(bundle.gamma.max(initial=0.0)))
    sol = solve(drv, claim, bundle, basis, config, X)
    return sol.y0, sol.y0_se, sol


__all__ += ["robust_driver"]


def separable_game(x0: float = 0.0, n_grid: int = 41) -> GameSpec:
    """sigma = kappa = 1, b = u, c = v/2, f = u^2 + 1 - v^2, U = V = [-1, 1],
    h = 1 + H_T/2 + 1/(1 + X_T^2); the Hamiltonian separates in (u, v)."""
    grid = np.linspace(-1.0, 1.0, n_grid)
    fwd = ForwardSdeSpec.constant(x0, 0.0, 1.0, 1.0)
    h = TerminalSpec(lambda H, X: 1.0 + 0.5 * H[:, 0] + 1.0 / (1.0 + X[:, 0] ** 2), 2.5, "separable")
    return GameSpec(
        forward=fwd,
        b=lambda t, x, u, v: np.asarray(u, float)[..., None] + 0.0 * x,
        c=lambda t, x, u, v: 0.5 * np.asarray(v, float)[..., None] + 0.0 * x,
        f=lambda t, x, u, v: np.asarray(u, float) ** 2 + 1.0 - np.asarray(v, float) ** 2,
        h=h,
        U=grid,
        V=grid,
        sigma_inv_bound=1.0,
        kappa_inv_bound=1.0,
        b_bound=1.0,
        c_bound=0.5,
        state_free=True,
    )
