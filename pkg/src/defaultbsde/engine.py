"""Backward regression scheme for BSDEs driven by B and the default martingales.

Conditional expectations given G_{t_i} are computed per default-configuration
bucket by least squares on polynomials of the forward state. Without a
forward state the buckets are the whole information set and the regression
is exact bucket averaging.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from .errors import NumericalError
from .kernel import PathBundle
from .terminal import TerminalSpec

__all__ = [
    "NodeState",
    "DriverSpec",
    "RegressionBasis",
    "SolverConfig",
    "BsdeSolution",
    "ConditionalFit",
    "fit_conditional",
    "condition_expectation",
    "extract_martingale_coeffs",
    "solve",
    "solve_frozen",
    "PicardReport",
    "picard_diagnostics",
    "beta_norm",
    "apriori_estimate",
    "export_csv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeState:
    """What the driver may read at node i besides (y, z, zeta)."""

    t: float
    i: int
    x: np.ndarray | None  # (n, m_x) forward state or None
    h: np.ndarray  # (n, k) default indicators
    gamma_eff: np.ndarray  # (n, k) 1{pre-default} * gamma

    def subset(self, idx: np.ndarray) -> "NodeState":
        return NodeState(self.t, self.i, None if self.x is None else self.x[idx], self.h[idx], self.gamma_eff[idx])


@dataclass(frozen=True)
class DriverSpec:
    """Generator g(t, y, z, zeta) with its declared Lipschitz constant.

    For ``m == 1`` the callable receives y of shape (n,), z of shape (n, d)
    and zeta of shape (n, k) and returns (n,). For ``m > 1`` it receives
    (n, m), (n, m, d), (n, m, k) and returns (n, m). The engine passes zeta
    already masked to zero where a default has occurred.
    """

    g: Callable
    lipschitz: float
    satisfies_a: bool = True
    satisfies_b: bool = True
    satisfies_c: bool = True
    m: int = 1
    y_dependent: bool = True
    name: str = "driver"

    def __call__(self, t, y, z, zeta, state: NodeState) -> np.ndarray:
        if self.m == 1:
            out = np.asarray(self.g(t, y[:, 0], z[:, 0, :], zeta[:, 0, :], state), dtype=float)
            return np.broadcast_to(out, (y.shape[0],))[:, None] if out.ndim <= 1 else out
        return np.asarray(self.g(t, y, z, zeta, state), dtype=float)

    def check_lipschitz(self, bundle: PathBundle, rng: np.random.Generator, samples: int = 200,
                        X: np.ndarray | None = None, scale: float = 3.0) -> tuple[bool, float]:
        """Sampled difference quotients against condition (b).

        Returns (ok, worst ratio |dg| / C(|dy| + |dz| + |dzeta| sqrt(gamma_eff))).
        """
        n = min(samples, bundle.n_paths)
        worst = 0.0
        ok = True
        for _ in range(4):
            i = int(rng.integers(0, bundle.N))
            idx = rng.choice(bundle.n_paths, size=n, replace=False)
            st = _state(bundle, i, X).subset(idx)
            y1, y2 = (rng.normal(scale=scale, size=(n, self.m)) for _ in range(2))
            z1, z2 = (rng.normal(scale=scale, size=(n, self.m, bundle.d)) for _ in range(2))
            s1, s2 = (rng.normal(scale=scale, size=(n, self.m, bundle.k)) for _ in range(2))
            mask = (st.gamma_eff > 0)[:, None, :]
            s1, s2 = s1 * mask, s2 * mask
            g1 = self(bundle.grid.nodes[i], y1, z1, s1, st)
            g2 = self(bundle.grid.nodes[i], y2, z2, s2, st)
            lhs = np.linalg.norm(g1 - g2, axis=1)
            dz = np.sqrt(((s1 - s2) ** 2 * st.gamma_eff[:, None, :]).sum(axis=(1, 2)))
            rhs = self.lipschitz * (
                np.linalg.norm(y1 - y2, axis=1) + np.sqrt(((z1 - z2) ** 2).sum(axis=(1, 2))) + dz
            )
            ok &= bool(np.all(lhs <= rhs + 1e-9))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(rhs > 0, lhs / rhs, 0.0)
            worst = max(worst, float(r.max()))
        return ok, worst

    def check_square_integrable(self, bundle: PathBundle, X: np.ndarray | None = None) -> bool:
        """Condition (a) at desk scale: g(t, 0, 0, 0) finite at every node."""
        n = bundle.n_paths
        for i in range(bundle.N):
            st = _state(bundle, i, X)
            v = self(bundle.grid.nodes[i], np.zeros((n, self.m)), np.zeros((n, self.m, bundle.d)),
                     np.zeros((n, self.m, bundle.k)), st)
            if not np.all(np.isfinite(v)):
                return False
        return True


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomial basis in the forward state, fitted per default bucket."""

    degree: int = 0
    ridge: float = 0.0

    def __post_init__(self):
        if self.degree < 0 or self.ridge < 0:
            raise ValueError("degree and ridge must be nonnegative")


@dataclass(frozen=True)
class SolverConfig:
    """Scheme parameters. ``beta=None`` means 12(C^2 + 1) for the driver at hand."""

    beta: float | None = None
    picard_iters: int = 10
    theta: float = 1.0
    inner_tol: float = 1e-13
    inner_max_iter: int = 50
    method: Literal["projection", "moment"] = "projection"

    def __post_init__(self):
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.method not in ("projection", "moment"):
            raise ValueError(f"unknown method {self.method!r}")

    def beta_for(self, driver: DriverSpec) -> float:
        return self.beta if self.beta is not None else 12.0 * (driver.lipschitz**2 + 1.0)


@dataclass(eq=False)
class BsdeSolution:
    """Node fields of a solved BSDE.

    Y : (n, N+1, m); Z : (n, N+1, m, d); zeta : (n, N+1, m, k);
    driver_values : (n, N, m), the driver term actually used at each step.
    Z and zeta at the terminal node are zero.
    """

    Y: np.ndarray
    Z: np.ndarray
    zeta: np.ndarray
    driver_values: np.ndarray
    y0: float | np.ndarray
    y0_se: float | np.ndarray
    bundle: PathBundle
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.Y.shape[2]

    def scalar(self):
        """(Y, Z, zeta) with the m axis dropped, for m = 1."""
        if self.m != 1:
            raise ValueError("scalar() needs a one-dimensional solution")
        return self.Y[:, :, 0], self.Z[:, :, 0, :], self.zeta[:, :, 0, :]


def _state(bundle: PathBundle, i: int, X: np.ndarray | None) -> NodeState:
    return NodeState(
        t=float(bundle.grid.nodes[i]),
        i=i,
        x=None if X is None else X[:, i, :],
        h=bundle.H[:, i, :],
        gamma_eff=bundle.gamma_eff[:, i, :],
    )


def _monomial_powers(m: int, degree: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(m), deg):
            out.append(combo)
    return out


@dataclass
class _Scaler:
    mean: np.ndarray
    std: np.ndarray
    degree: int

    @classmethod
    def fit(cls, x: np.ndarray | None, degree: int) -> "_Scaler":
        if x is None or degree == 0 or x.shape[0] < 2:
            return cls(np.zeros(0), np.zeros(0), 0)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        if np.all(std <= 1e-12 * (1 + np.abs(mean))):
            return cls(np.zeros(0), np.zeros(0), 0)
        std = np.where(std <= 1e-12 * (1 + np.abs(mean)), 1.0, std)
        return cls(mean, std, degree)

    def features(self, x: np.ndarray | None, n: int) -> np.ndarray:
        if self.degree == 0 or x is None:
            return np.ones((n, 1))
        u = (x - self.mean) / self.std
        cols = [np.ones(n)]
        for combo in _monomial_powers(u.shape[1], self.degree):
            cols.append(np.prod(u[:, list(combo)], axis=1))
        return np.stack(cols, axis=1)


def _lstsq(A: np.ndarray, Y: np.ndarray, ridge: float) -> np.ndarray:
    """Least squares via equilibrated normal equations; ridge spares column 0."""
    scale = np.sqrt((A**2).mean(axis=0))
    scale = np.where(scale > 0, scale, 1.0)
    As = A / scale
    G = As.T @ As
    if ridge > 0:
        G[1:, 1:] += ridge * A.shape[0] * np.eye(G.shape[0] - 1)
    rhs = As.T @ Y
    try:
        c = np.linalg.solve(G, rhs)
        if not np.all(np.isfinite(c)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        c = np.linalg.lstsq(G, rhs, rcond=None)[0]
    return c / scale[:, None] if c.ndim == 2 else c / scale


@dataclass
class ConditionalFit:
    """Per-bucket regression coefficients at one node."""

    i: int
    coefs: dict  # bucket code -> (scaler, coefficients of shape (q, r))
    trailing: tuple

    def predict(self, codes: np.ndarray, x: np.ndarray | None) -> np.ndarray:
        n = codes.shape[0]
        out = np.zeros((n, int(np.prod(self.trailing, dtype=int))))
        for code in np.unique(codes):
            idx = np.flatnonzero(codes == code)
            if code not in self.coefs:
                log.warning("node %d: no samples in default bucket %d; fitted value set to 0", self.i, code)
                continue
            scaler, c = self.coefs[code]
            out[idx] = scaler.features(None if x is None else x[idx], idx.size) @ c
        return out.reshape((n,) + self.trailing)


def fit_conditional(values: np.ndarray, i: int, bundle: PathBundle, basis: RegressionBasis,
                    X: np.ndarray | None = None) -> ConditionalFit:
    """Regress ``values`` (one row per path) on the basis within each bucket at node i."""
    if not 0 <= i <= bundle.N:
        raise IndexError(f"node index {i} outside [0, {bundle.N}]")
    values = np.asarray(values, dtype=float)
    if values.shape[0] != bundle.n_paths:
        raise ValueError("need exactly one value per path")
    trailing = values.shape[1:]
    V = values.reshape(values.shape[0], -1)
    codes = bundle.bucket_codes(i)
    xi = None if X is None else X[:, i, :]
    coefs = {}
    for code in np.unique(codes):
        idx = np.flatnonzero(codes == code)
        scaler = _Scaler.fit(None if xi is None else xi[idx], basis.degree)
        if idx.size < basis.degree + 2:
            scaler = _Scaler.fit(None, 0)
        A = scaler.features(None if xi is None else xi[idx], idx.size)
        if A.shape[1] == 1:
            c = V[idx].mean(axis=0, keepdims=True)
        else:
            c = _lstsq(A, V[idx], basis.ridge)
        coefs[int(code)] = (scaler, c)
    return ConditionalFit(i, coefs, trailing)


def condition_expectation(values: np.ndarray, i: int, bundle: PathBundle, basis: RegressionBasis,
                          X: np.ndarray | None = None) -> np.ndarray:
    """Fitted E[values | G_{t_i}] on every path."""
    fit = fit_conditional(values, i, bundle, basis, X)
    return fit.predict(bundle.bucket_codes(i), None if X is None else X[:, i, :])


def _project(Yn: np.ndarray, i: int, bundle: PathBundle, basis: RegressionBasis, X: np.ndarray | None,
             method: str = "projection"):
    """One backward step: (continuation, Z_i, zeta_i, residual) from Y_{i+1} of shape (n, m).

    ``projection`` regresses Y_{i+1} jointly on phi, phi*dB and phi*dM within
    each bucket; the phi part is E[Y_{i+1} - Z dB - zeta dM | G_i]. ``moment``
    uses Z = E[Y dB]/dt, zeta = E[Y dM]/(gamma dt) and continuation E[Y].
    """
    n, m = Yn.shape
    d, k = bundle.d, bundle.k
    dt = bundle.grid.dt
    codes = bundle.bucket_codes(i)
    dB = bundle.dB[:, i, :]
    dM = bundle.dM[:, i, :]
    dH = np.diff(bundle.H[:, i:i + 2, :], axis=1)[:, 0, :]
    gam = bundle.gamma[i]
    xi = None if X is None else X[:, i, :]
    cont = np.zeros((n, m))
    Z = np.zeros((n, m, d))
    zeta = np.zeros((n, m, k))
    for code in np.unique(codes):
        idx = np.flatnonzero(codes == code)
        nb = idx.size
        h = bundle.H[idx[0], i, :]
        active = [j for j in range(k) if h[j] == 0 and gam[j] > 0]
        Y = Yn[idx]
        scaler = _Scaler.fit(None if xi is None else xi[idx], basis.degree)
        if method == "moment":
            phi = scaler.features(None if xi is None else xi[idx], nb)
            if nb < phi.shape[1] + 1:
                phi = np.ones((nb, 1))
            fit = (lambda V: phi @ (V.mean(axis=0, keepdims=True) if phi.shape[1] == 1
                                    else _lstsq(phi, V, basis.ridge)))
            cont[idx] = fit(Y)
            for l in range(d):
                Z[idx, :, l] = fit(Y * dB[idx, l:l + 1]) / dt
            for j in active:
                zeta[idx, :, j] = fit(Y * dM[idx, j:j + 1]) / (gam[j] * dt)
            continue
        for attempt in range(2):
            phi = scaler.features(None if xi is None else xi[idx], nb)
            q = phi.shape[1]
            cols = [phi, (phi[:, :, None] * dB[idx][:, None, :]).reshape(nb, q * d)]
            jump_layout = []
            for j in active:
                events = int(dH[idx, j].sum())
                if events >= q + 1 and nb - events >= q + 1:
                    cols.append(phi * dM[idx, j:j + 1])
                    jump_layout.append((j, q))
                elif events >= 1:
                    cols.append(dM[idx, j:j + 1])
                    jump_layout.append((j, 1))
            A = np.concatenate(cols, axis=1)
            if nb >= A.shape[1] + 1 or scaler.degree == 0:
                break
            scaler = _Scaler.fit(None, 0)
        if nb < A.shape[1] + 1:
            cont[idx] = Y.mean(axis=0)
            continue
        c = _lstsq(A, Y, basis.ridge)
        cont[idx] = phi @ c[:q]
        cB = c[q:q + q * d].reshape(q, d, m)
        Z[idx] = np.einsum("nq,qdm->nmd", phi, cB)
        pos = q + q * d
        for j, width in jump_layout:
            cj = c[pos:pos + width]
            zeta[idx, :, j] = (phi[:, :width] if width == q else np.ones((nb, 1))) @ cj
            pos += width
    resid = Yn - cont - np.einsum("nmd,nd->nm", Z, dB) - np.einsum("nmk,nk->nm", zeta, dM)
    return cont, Z, zeta, resid


def extract_martingale_coeffs(Y_next: np.ndarray, i: int, bundle: PathBundle, basis: RegressionBasis,
                              X: np.ndarray | None = None, method: str = "projection"):
    """(Z_i, zeta_i) for the increment from node i to i+1.

    ``Y_next`` has shape (n,) or (n, m); the outputs drop the m axis when the
    input did. zeta is zero wherever the default has occurred or gamma = 0.
    """
    if not 0 <= i < bundle.N:
        raise IndexError(f"node index {i} outside [0, {bundle.N})")
    Yn = np.asarray(Y_next, dtype=float)
    squeeze = Yn.ndim == 1
    _, Z, zeta, _ = _project(Yn[:, None] if squeeze else Yn, i, bundle, basis, X, method)
    return (Z[:, 0], zeta[:, 0]) if squeeze else (Z, zeta)


def _terminal(terminal, bundle, X):
    if isinstance(terminal, TerminalSpec):
        return terminal.evaluate(bundle.H[:, -1, :].astype(float), None if X is None else X[:, -1, :])
    xi = np.asarray(terminal, dtype=float)
    return xi[:, None] if xi.ndim == 1 else xi


def _pathwise_se(xi, driver_values, Z, zeta, bundle):
    dt = bundle.grid.dt
    total = xi + driver_values.sum(axis=1) * dt
    total -= np.einsum("nimd,nid->nm", Z[:, :-1], bundle.dB)
    total -= np.einsum("nimk,nik->nm", zeta[:, :-1], bundle.dM)
    n = total.shape[0]
    return total.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(total.shape[1])


def _finish(Y, Z, zeta, gvals, xi, bundle, meta):
    if not np.all(np.isfinite(Y)):
        raise NumericalError("non-finite Y in the backward scheme")
    y0 = Y[:, 0, :].mean(axis=0)
    se = _pathwise_se(xi, gvals, Z, zeta, bundle)
    if Y.shape[2] == 1:
        y0, se = float(y0[0]), float(se[0])
    return BsdeSolution(Y, Z, zeta, gvals, y0, se, bundle, meta)


def solve(driver: DriverSpec, terminal, bundle: PathBundle, basis: RegressionBasis = RegressionBasis(),
          config: SolverConfig = SolverConfig(), X: np.ndarray | None = None) -> BsdeSolution:
    """Backward theta-scheme.

    Y_i = C_i + (1 - theta) g(t_i, C_i, Z_i, zeta_i) dt + theta g(t_i, Y_i, Z_i, zeta_i) dt,
    with C_i the continuation value from the step projection; the implicit
    part is solved by fixed-point iteration.
    """
    dt = bundle.grid.dt
    theta = config.theta if driver.y_dependent else 0.0
    if theta * dt * driver.lipschitz >= 1:
        raise ValueError(f"theta*dt*C = {theta * dt * driver.lipschitz:.3g} >= 1; refine the grid")
    xi = _terminal(terminal, bundle, X)
    n, m = xi.shape
    N, d, k = bundle.N, bundle.d, bundle.k
    Y = np.empty((n, N + 1, m))
    Z = np.zeros((n, N + 1, m, d))
    zeta = np.zeros((n, N + 1, m, k))
    gvals = np.empty((n, N, m))
    Y[:, N] = xi
    t = bundle.grid.nodes
    inner_iters = 0
    for i in range(N - 1, -1, -1):
        cont, Zi, zi, _ = _project(Y[:, i + 1], i, bundle, basis, X, config.method)
        st = _state(bundle, i, X)
        Z[:, i], zeta[:, i] = Zi, zi
        g_expl = driver(t[i], cont, Zi, zi, st) if theta < 1 else 0.0
        if theta == 0:
            Yi = cont + g_expl * dt
            g_used = g_expl
        else:
            Yi = cont + driver(t[i], cont, Zi, zi, st) * dt
            for it in range(config.inner_max_iter):
                gY = driver(t[i], Yi, Zi, zi, st)
                Ynew = cont + (1 - theta) * g_expl * dt + theta * gY * dt
                delta = np.max(np.abs(Ynew - Yi))
                Yi = Ynew
                if delta <= config.inner_tol * (1 + np.max(np.abs(Ynew))):
                    break
            else:
                raise NumericalError(
                    f"inner fixed point did not converge at node {i} after {config.inner_max_iter} iterations "
                    f"(last update {delta:.3g})"
                )
            inner_iters = max(inner_iters, it + 1)
            g_used = (1 - theta) * g_expl + theta * driver(t[i], Yi, Zi, zi, st)
        if not np.all(np.isfinite(Yi)):
            raise NumericalError(f"non-finite Y at node {i}")
        Y[:, i] = Yi
        gvals[:, i] = g_used
    meta = {"N": N, "n_paths": n, "basis": {"degree": basis.degree, "ridge": basis.ridge},
            "theta": theta, "method": config.method, "driver": driver.name, "max_inner_iters": inner_iters,
            "condition_c": driver.satisfies_c}
    return _finish(Y, Z, zeta, gvals, xi, bundle, meta)


def solve_frozen(g0: np.ndarray, terminal, bundle: PathBundle, basis: RegressionBasis = RegressionBasis(),
                 X: np.ndarray | None = None, method: str = "projection") -> BsdeSolution:
    """Solve with a driver that does not depend on the unknowns.

    ``g0`` is an adapted process on the grid, shape (n, N) or (n, N, m).
    """
    xi = _terminal(terminal, bundle, X)
    n, m = xi.shape
    g0 = np.asarray(g0, dtype=float)
    if g0.ndim == 2:
        g0 = g0[:, :, None]
    N, d, k = bundle.N, bundle.d, bundle.k
    dt = bundle.grid.dt
    Y = np.empty((n, N + 1, m))
    Z = np.zeros((n, N + 1, m, d))
    zeta = np.zeros((n, N + 1, m, k))
    Y[:, N] = xi
    for i in range(N - 1, -1, -1):
        cont, Z[:, i], zeta[:, i], _ = _project(Y[:, i + 1], i, bundle, basis, X, method)
        Y[:, i] = cont + g0[:, i] * dt
    meta = {"N": N, "n_paths": n, "basis": {"degree": basis.degree, "ridge": basis.ridge},
            "method": method, "driver": "frozen"}
    return _finish(Y, Z, zeta, np.broadcast_to(g0, (n, N, m)).copy(), xi, bundle, meta)


def _field_energy(y, z, zeta, bundle: PathBundle) -> np.ndarray:
    """Per-path, per-node |y|^2 + |z|^2 + ||zeta||_tau^2 on nodes 0..N-1."""
    n, N = bundle.n_paths, bundle.N
    geff = bundle.gamma_eff[:, :N, :]
    out = np.zeros((n, N))
    if y is not None:
        y = np.asarray(y, float)[:, :N]
        out += (y**2).reshape(n, N, -1).sum(axis=2)
    if z is not None:
        z = np.asarray(z, float)[:, :N]
        out += (z**2).reshape(n, N, -1).sum(axis=2)
    if zeta is not None:
        zeta = np.asarray(zeta, float)[:, :N]
        if zeta.ndim == 4:
            out += (zeta**2 * geff[:, :, None, :]).sum(axis=(2, 3))
        else:
            out += (zeta**2 * geff).sum(axis=2)
    return out


def beta_norm(y, z, zeta, beta: float, bundle: PathBundle, squared: bool = False, per_path: bool = False):
    """Monte Carlo Riemann-sum version of E int (|y|^2 + |z|^2 + ||zeta||_tau^2) e^{beta s} ds.

    Fields are node arrays with paths first and nodes second; ``None`` means
    zero. Returns the square root unless ``squared``; ``per_path`` returns the
    per-path sums (squared) instead of their mean.
    """
    t = bundle.grid.nodes[:-1]
    w = np.exp(beta * t) * bundle.grid.dt
    pp = (_field_energy(y, z, zeta, bundle) * w).sum(axis=1)
    if per_path:
        return pp
    val = float(pp.mean())
    return val if squared else float(np.sqrt(val))


@dataclass
class PicardReport:
    distances: list
    ratios: list
    beta: float
    converged: bool
    y0: float | np.ndarray
    iterations: int

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0

    def to_dict(self) -> dict:
        return {"distances": self.distances, "ratios": self.ratios, "beta": self.beta,
                "converged": self.converged, "y0": np.asarray(self.y0).tolist(), "iterations": self.iterations,
                "max_ratio": self.max_ratio}


def _driver_on_fields(driver, Y, Z, zeta, bundle, X):
    n, N = bundle.n_paths, bundle.N
    out = np.empty((n, N, driver.m))
    t = bundle.grid.nodes
    for i in range(N):
        out[:, i] = driver(t[i], Y[:, i], Z[:, i], zeta[:, i], _state(bundle, i, X))
    return out


def picard_diagnostics(driver: DriverSpec, terminal, bundle: PathBundle, basis: RegressionBasis = RegressionBasis(),
                       config: SolverConfig = SolverConfig(), X: np.ndarray | None = None,
                       underflow: float = 1e-14) -> PicardReport:
    """Iterate the frozen-driver map from the zero triple and record beta-norm steps.

    distances[n] = ||F_{n+1} - F_n||_beta, ratios[n] = distances[n+1] / distances[n].
    """
    if config.picard_iters < 3:
        raise ValueError("picard_iters must be at least 3")
    beta = config.beta_for(driver)
    xi = _terminal(terminal, bundle, X)
    n, m = xi.shape
    N = bundle.N
    prev = (np.zeros((n, N + 1, m)), np.zeros((n, N + 1, m, bundle.d)), np.zeros((n, N + 1, m, bundle.k)))
    distances, ratios = [], []
    converged = False
    sol = None
    for it in range(config.picard_iters):
        g0 = _driver_on_fields(driver, *prev, bundle, X)
        sol = solve_frozen(g0, xi, bundle, basis, X, config.method)
        cur = (sol.Y, sol.Z, sol.zeta)
        dist = beta_norm(cur[0] - prev[0], cur[1] - prev[1], cur[2] - prev[2], beta, bundle)
        if distances and distances[-1] > 0:
            ratios.append(dist / distances[-1])
        distances.append(dist)
        prev = cur
        if dist < underflow:
            converged = True
            break
    return PicardReport(distances, ratios, beta, converged, sol.y0, len(distances))


def apriori_estimate(sol: BsdeSolution, xi: np.ndarray, g0: np.ndarray, beta: float) -> dict:
    """Both sides of the basic estimate for a frozen-driver solution.

    lhs = |y_0|^2 + E sum (beta/2 |y|^2 + |z|^2 + ||zeta||_tau^2) e^{beta t} dt
    rhs = E |xi|^2 e^{beta T} + (2/beta) E sum |g0|^2 e^{beta t} dt
    """
    b = sol.bundle
    n, N = b.n_paths, b.N
    t = b.grid.nodes
    dt = b.grid.dt
    w = np.exp(beta * t[:-1]) * dt
    y2 = (sol.Y[:, :N] ** 2).reshape(n, N, -1).sum(axis=2)
    rest = _field_energy(None, sol.Z, sol.zeta, b)
    y0sq = float((sol.Y[:, 0] ** 2).reshape(n, -1).sum(axis=1).mean())
    lhs = y0sq + float((((0.5 * beta) * y2 + rest) * w).sum(axis=1).mean())
    xi = np.asarray(xi, float).reshape(n, -1)
    g0 = np.asarray(g0, float).reshape(n, N, -1)
    rhs = float((xi**2).sum(axis=1).mean() * np.exp(beta * t[-1]))
    rhs += (2.0 / beta) * float((((g0**2).sum(axis=2)) * w).sum(axis=1).mean())
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else np.inf)}


def export_csv(sol: BsdeSolution, path, max_paths: int | None = None) -> None:
    """One row per (path, node): path, node, t, H^1..H^k, Y, Z_1..Z_d, zeta_1..zeta_k.

    ``path`` is a file path or an open text stream.
    """
    b = sol.bundle
    n = b.n_paths if max_paths is None else min(max_paths, b.n_paths)
    m, d, k = sol.m, b.d, b.k
    t = b.grid.nodes
    ycols = ["Y"] if m == 1 else [f"Y_{r + 1}" for r in range(m)]
    zcols = [f"Z_{l + 1}" if m == 1 else f"Z_{r + 1}_{l + 1}" for r in range(m) for l in range(d)]
    scols = [f"zeta_{j + 1}" if m == 1 else f"zeta_{r + 1}_{j + 1}" for r in range(m) for j in range(k)]
    header = ["path", "node", "t"] + [f"H{j + 1}" for j in range(k)] + ycols + zcols + scols
    fmt = "{:.17g}".format
    if hasattr(path, "write"):
        _write_rows(path, header, sol, b, n, t, fmt)
    else:
        with open(path, "w", newline="") as fh:
            _write_rows(fh, header, sol, b, n, t, fmt)


def _write_rows(fh, header, sol, b, n, t, fmt):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for p in range(n):
        for i in range(b.N + 1):
            row = [p, i, fmt(t[i])] + [int(h) for h in b.H[p, i]]
            row += [fmt(v) for v in sol.Y[p, i]]
            row += [fmt(v) for v in sol.Z[p, i].ravel()]
            row += [fmt(v) for v in sol.zeta[p, i].ravel()]
            w.writerow(row)
