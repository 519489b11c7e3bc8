"""Forward jump-diffusions driven by (dt, dB, dM), Ito-formula checks and
stochastic exponentials."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import NumericalError
from .kernel import DefaultModel, PathBundle, build_grid, simulate_bundle

__all__ = [
    "ForwardSdeSpec",
    "ExponentialSpec",
    "simulate_forward",
    "ito_residual",
    "ItoResidual",
    "ito_convergence",
    "exponential_log_increments",
    "stochastic_exponential",
]


def _const(value, shape):
    arr = np.asarray(value, dtype=float)

    def fn(t, x):
        return np.broadcast_to(arr, (x.shape[0],) + shape).copy()

    return fn


@dataclass(frozen=True)
class ForwardSdeSpec:
    """dX = drift(t, X) dt + sigma(t, X) dB + kappa(t, X) dM.

    Coefficient callables take ``t`` (float) and ``x`` of shape (n, m) and
    return arrays of shape (n, m), (n, m, d) and (n, m, k).
    """

    x0: np.ndarray
    drift: Callable
    sigma: Callable
    kappa: Callable
    C1: float = np.inf
    C2: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))

    @property
    def m(self) -> int:
        return self.x0.shape[0]

    @classmethod
    def constant(cls, x0, drift=0.0, sigma=0.0, kappa=0.0, d: int = 1, k: int = 1) -> "ForwardSdeSpec":
        """Scalar-state spec with constant coefficients."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        m = x0.shape[0]
        drift = np.broadcast_to(np.asarray(drift, float), (m,))
        sig = np.broadcast_to(np.asarray(sigma, float), (m, d))
        kap = np.broadcast_to(np.asarray(kappa, float), (m, k))
        bound = float(np.abs(sig).sum() + np.abs(kap).sum())
        return cls(x0, _const(drift, (m,)), _const(sig, (m, d)), _const(kap, (m, k)), C1=bound, C2=0.0)

    @classmethod
    def geometric(cls, x0: float, mu: float, nu: float, kap: float) -> "ForwardSdeSpec":
        """dX = X_- (mu dt + nu dB + kap dM), scalar with d = k = 1."""
        return cls(
            np.array([x0], float),
            lambda t, x: mu * x,
            lambda t, x: nu * x[:, :, None],
            lambda t, x: kap * x[:, :, None],
            C1=abs(nu) + abs(kap),
            C2=abs(nu) + abs(kap),
        )

    def check_bounds(self, rng: np.random.Generator, samples: int = 256, T: float = 1.0, scale: float = 10.0) -> bool:
        """Spot-check the declared growth and Lipschitz constants."""
        t = rng.uniform(0, T, samples)
        x = rng.normal(scale=scale, size=(samples, self.m))
        y = x + rng.normal(size=x.shape)
        ok = True
        for ti, xi, yi in zip(t, x, y):
            sx = self.sigma(ti, xi[None])[0]
            kx = self.kappa(ti, xi[None])[0]
            grow = np.linalg.norm(sx) + np.linalg.norm(kx)
            ok &= grow <= self.C1 * (1 + np.linalg.norm(xi)) + 1e-9
            sy = self.sigma(ti, yi[None])[0]
            ky = self.kappa(ti, yi[None])[0]
            lip = np.linalg.norm(sx - sy) + np.linalg.norm(kx - ky)
            ok &= lip <= self.C2 * np.linalg.norm(xi - yi) + 1e-9
        return bool(ok)


def simulate_forward(spec: ForwardSdeSpec, bundle: PathBundle) -> np.ndarray:
    """Euler scheme on the bundle's grid; returns X of shape (n_paths, N+1, m).

    Coefficients are evaluated at the left node, so the jump at a default
    node is kappa(t_i, X_i) times the jump of M.
    """
    n, N = bundle.n_paths, bundle.N
    t = bundle.grid.nodes
    dt = bundle.grid.dt
    X = np.empty((n, N + 1, spec.m))
    X[:, 0, :] = spec.x0
    for i in range(N):
        x = X[:, i, :]
        sig = spec.sigma(t[i], x)
        kap = spec.kappa(t[i], x)
        if sig.shape[2] != bundle.d or kap.shape[2] != bundle.k:
            raise ValueError(
                f"coefficient shapes {sig.shape}/{kap.shape} do not match bundle d={bundle.d}, k={bundle.k}"
            )
        X[:, i + 1, :] = (
            x
            + spec.drift(t[i], x) * dt
            + np.einsum("nmd,nd->nm", sig, bundle.dB[:, i, :])
            + np.einsum("nmk,nk->nm", kap, bundle.dM[:, i, :])
        )
        bad = ~np.isfinite(X[:, i + 1, :]).all(axis=1)
        if bad.any():
            p = int(np.flatnonzero(bad)[0])
            raise NumericalError(
                f"forward state became non-finite at node {i + 1} on {int(bad.sum())} paths "
                f"(first path {p}, previous state {X[p, i].tolist()})"
            )
    return X


@dataclass
class ItoResidual:
    """Pathwise residual of the Ito decomposition of exp(beta t) X_t^2."""

    residual: np.ndarray  # per path
    jump_terms: np.ndarray  # (n_paths, N), Delta f - f_x kappa, nonzero only at default nodes
    N: int

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.residual**2)))


def ito_residual(spec: ForwardSdeSpec, X: np.ndarray, bundle: PathBundle, beta: float) -> ItoResidual:
    """Compare f(T, X_T) - f(0, x0) against the discretised Ito expansion.

    f(t, x) = exp(beta t) x^2; the expansion sums, per step, the time
    derivative, f_x dX, the second-order Brownian term and the jump
    correction (f(x + kappa) - f(x) - f_x kappa) dH. Scalar state only.
    """
    if X.shape[2] != 1 or bundle.k != 1:
        raise ValueError("ito_residual is implemented for scalar state with one default time")
    t = bundle.grid.nodes
    dt = bundle.grid.dt
    x = X[:, :, 0]
    dX = np.diff(x, axis=1)
    dH = bundle.dH[:, :, 0]
    n, N = x.shape[0], bundle.N
    rhs = np.zeros(n)
    jumps = np.zeros((n, N))
    for i in range(N):
        e = np.exp(beta * t[i])
        xi = x[:, i]
        sig = spec.sigma(t[i], X[:, i, :])[:, 0, :]
        kap = spec.kappa(t[i], X[:, i, :])[:, 0, 0]
        jump = e * ((xi + kap) ** 2 - xi**2) - 2.0 * e * xi * kap
        jumps[:, i] = jump * dH[:, i]
        rhs += (
            beta * e * xi**2 * dt
            + 2.0 * e * xi * dX[:, i]
            + e * (sig**2).sum(axis=1) * dt
            + jumps[:, i]
        )
    lhs = np.exp(beta * t[-1]) * x[:, -1] ** 2 - x[:, 0] ** 2
    return ItoResidual(lhs - rhs, jumps, N)


def ito_convergence(
    spec: ForwardSdeSpec,
    model: DefaultModel,
    T: float,
    N: int,
    n_paths: int,
    seed: int,
    beta: float,
    d: int = 1,
) -> dict:
    """RMS residual at N and 2N steps, their ratio and the implied order."""
    out = {}
    for steps in (N, 2 * N):
        b = simulate_bundle(model, build_grid(T, steps), d, n_paths, seed)
        X = simulate_forward(spec, b)
        out[steps] = ito_residual(spec, X, b, beta).rms
    ratio = out[2 * N] / out[N] if out[N] > 0 else 0.0
    return {
        "N": N,
        "rms_N": out[N],
        "rms_2N": out[2 * N],
        "ratio": ratio,
        "order": float(-np.log2(ratio)) if ratio > 0 else np.inf,
    }


def _coeff_on(value, grid, width):
    t = grid.nodes[:-1]
    if callable(value):
        arr = np.asarray(value(t), dtype=float)
        arr = arr.reshape(len(t), -1) if arr.ndim > 0 else np.full((len(t), 1), float(arr))
    else:
        arr = np.broadcast_to(np.atleast_1d(np.asarray(value, float)), (len(t), width)).copy()
    if width is not None and arr.shape[1] not in (1, width):
        raise ValueError(f"coefficient has width {arr.shape[1]}, expected {width}")
    return np.broadcast_to(arr, (len(t), width)).copy()


@dataclass(frozen=True)
class ExponentialSpec:
    """Coefficients of a positive multiplicative process Q with Q_0 = 1.

    ``form="comparison"``: dQ = Q_-(a dt + b dB + c dM), needs c > -1.
    ``form="pricing"``:    dQ = -Q_-(a dt + b dB + c dM), needs c < 1.
    a is scalar, b is d-valued, c is k-valued; each may be a constant or a
    function of time.
    """

    a: object = 0.0
    b: object = 0.0
    c: object = 0.0
    form: Literal["pricing", "comparison"] = "comparison"

    def __post_init__(self):
        if self.form not in ("pricing", "comparison"):
            raise ValueError(f"unknown form {self.form!r}")

    def on_grid(self, bundle: PathBundle):
        """Coefficient arrays (N,), (N, d), (N, k) after sign conversion to comparison form."""
        a = _coeff_on(self.a, bundle.grid, 1)[:, 0]
        b = _coeff_on(self.b, bundle.grid, bundle.d)
        c = _coeff_on(self.c, bundle.grid, bundle.k)
        if self.form == "pricing":
            if np.any(c >= 1):
                raise ValueError(f"pricing form requires c < 1, got max {c.max():.6g}")
            return -a, -b, -c
        if np.any(c <= -1):
            raise ValueError(f"comparison form requires c > -1, got min {c.min():.6g}")
        return a, b, c


def exponential_log_increments(a, b, c, bundle: PathBundle) -> np.ndarray:
    """Per-step increments of log Q for dQ = Q_-(a dt + b dB + c dM).

    ``a`` broadcasts to (n, N), ``b`` to (n, N, d), ``c`` to (n, N, k).
    Returns (n, N).
    """
    dt = bundle.grid.dt
    n, N = bundle.n_paths, bundle.N
    a = np.broadcast_to(a, (n, N))
    b = np.broadcast_to(b, (n, N, bundle.d))
    c = np.broadcast_to(c, (n, N, bundle.k))
    if np.any(c <= -1):
        p, i, j = np.argwhere(c <= -1)[0]
        raise NumericalError(f"jump coefficient {c[p, i, j]:.6g} <= -1 at path {p}, node {i}, default {j + 1}")
    pre = bundle.pre_default[:, :-1, :]
    geff = np.where(pre, bundle.gamma[None, :-1, :], 0.0)
    dH = bundle.dH
    inc = a * dt
    inc = inc + np.einsum("nid,nid->ni", b, bundle.dB) - 0.5 * (b**2).sum(axis=2) * dt
    inc = inc - (c * geff).sum(axis=2) * dt
    inc = inc + (np.log1p(c) * dH).sum(axis=2)
    return inc


def stochastic_exponential(spec: ExponentialSpec, bundle: PathBundle, return_log: bool = False):
    """Closed-form Q on every path, shape (n_paths, N+1)."""
    a, b, c = spec.on_grid(bundle)
    inc = exponential_log_increments(a[None, :], b[None, :, :], c[None, :, :], bundle)
    logQ = np.zeros((bundle.n_paths, bundle.N + 1))
    np.cumsum(inc, axis=1, out=logQ[:, 1:])
    Q = np.exp(logQ)
    return (Q, logQ) if return_log else Q
