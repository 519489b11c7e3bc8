"""Linear BSDEs with default: adjoint pricing, market coefficients and replication."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .engine import DriverSpec
from .jump_ito import ExponentialSpec, _coeff_on, stochastic_exponential
from .kernel import PathBundle, TimeGrid
from .terminal import TerminalSpec

__all__ = [
    "LinearBsdeSpec",
    "MarketSpec",
    "adjoint_price",
    "linear_driver",
    "linear_value",
    "replication_strategy",
    "market_linear_coefficients",
    "asset_paths",
    "analytic_linear_price",
]


@dataclass(frozen=True)
class LinearBsdeSpec:
    """Coefficients of a linear generator and the claim it prices.

    ``form="pricing"`` is the market equation dY = (aY + bZ + c 1{pre} gamma zeta) dt
    + Z dB + zeta dM, i.e. generator g = -(a y + b z + c gamma_eff zeta), and
    needs c < 1. ``form="comparison"`` uses g = +(a y + b z + c gamma_eff zeta)
    and needs c > -1. Coefficients are constants or functions of time; b has
    d components and c has k components.
    """

    a: object = 0.0
    b: object = 0.0
    c: object = 0.0
    claim: TerminalSpec = field(default_factory=lambda: TerminalSpec.constant(1.0))
    form: Literal["pricing", "comparison"] = "pricing"
    gamma_max: float | None = None

    def __post_init__(self):
        if self.form not in ("pricing", "comparison"):
            raise ValueError(f"unknown form {self.form!r}")

    def coefficients(self, grid: TimeGrid, d: int, k: int):
        """(a (N,), b (N, d), c (N, k)) on the left nodes, validated."""
        a = _coeff_on(self.a, grid, 1)[:, 0]
        b = _coeff_on(self.b, grid, d)
        c = _coeff_on(self.c, grid, k)
        for name, arr in (("a", a), ("b", b), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"coefficient {name} is not finite")
        if self.form == "pricing" and np.any(c >= 1 - 1e-9):
            raise ValueError(f"pricing form needs every c < 1, got max {c.max():.6g}")
        if self.form == "comparison" and np.any(c <= -1 + 1e-9):
            raise ValueError(f"comparison form needs every c > -1, got min {c.min():.6g}")
        return a, b, c

    def exponential(self) -> ExponentialSpec:
        return ExponentialSpec(self.a, self.b, self.c, form=self.form)


def adjoint_price(spec: LinearBsdeSpec, bundle: PathBundle, X: np.ndarray | None = None):
    """Y_0 = E[Q_T xi] with the adjoint process of ``spec.form``.

    Returns (estimate, standard error) with SE = sample std / sqrt(n).
    """
    spec.coefficients(bundle.grid, bundle.d, bundle.k)
    Q = stochastic_exponential(spec.exponential(), bundle)
    xi = spec.claim.evaluate(bundle.H[:, -1, :].astype(float), None if X is None else X[:, -1, :])[:, 0]
    w = Q[:, -1] * xi
    n = w.shape[0]
    se = float(w.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(w.mean()), se


def linear_value(a, b, c, y, z, zeta, gamma_eff, sign: float = 1.0) -> np.ndarray:
    """sign * (a y + z . b + (gamma_eff zeta) . c) per path."""
    return sign * (a * y + z @ b + (gamma_eff * zeta) @ c)


def linear_driver(spec: LinearBsdeSpec, bundle: PathBundle) -> DriverSpec:
    """The linear generator as a DriverSpec on this bundle's grid.

    The Lipschitz constant is max(sup|a|, sup|b|, sup|c| sqrt(gamma_max)).
    """
    a, b, c = spec.coefficients(bundle.grid, bundle.d, bundle.k)
    sign = -1.0 if spec.form == "pricing" else 1.0
    gmax = spec.gamma_max if spec.gamma_max is not None else float(bundle.gamma.max(initial=0.0))
    C = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), np.abs(c).max(initial=0.0) * np.sqrt(gmax))
    quotient = sign * c

    def g(t, y, z, zeta, st):
        i = st.i
        return linear_value(a[i], b[i], c[i], y, z, zeta, st.gamma_eff, sign)

    return DriverSpec(
        g,
        lipschitz=float(C),
        satisfies_c=bool(np.all(quotient > -1 + 1e-9)),
        y_dependent=bool(np.any(a != 0)),
        name=f"linear[{spec.form}]",
    )


@dataclass(frozen=True)
class MarketSpec:
    """Three assets dS^i = S^i_-(mu_i dt + nu_i dB + kappa_i dM), one default, d = 1."""

    mu: tuple = (0.0, 0.0, 0.0)
    nu: tuple = (0.0, 1.0, 0.0)
    kappa: tuple = (0.0, 0.0, 1.0)
    claim: Callable | None = None  # G(H_T, S_T) with S_T of shape (n, 3)
    s0: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("mu", "nu", "kappa", "s0"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ValueError(f"{name} needs three entries")
            object.__setattr__(self, name, v)
        if any(kp < -1 for kp in self.kappa):
            raise ValueError("every kappa_i must be >= -1")

    @property
    def determinant(self) -> float:
        n1, n2, n3 = self.nu
        k1, k2, k3 = self.kappa
        return (n2 - n1) * (k3 - k1) - (k2 - k1) * (n3 - n1)

    def weights(self):
        """((a2, b2, c2), (a3, b3, c3)) so that theta^i = a_i Y + b_i Z + c_i 1{pre} zeta."""
        D = self.determinant
        if abs(D) < 1e-12:
            raise ValueError(f"singular market: determinant (nu2-nu1)(kap3-kap1)-(kap2-kap1)(nu3-nu1) = {D!r}")
        n1, n2, n3 = self.nu
        k1, k2, k3 = self.kappa
        w2 = ((k1 * (n3 - n1) - n1 * (k3 - k1)) / D, (k3 - k1) / D, -(n3 - n1) / D)
        D3 = (n3 - n1) * (k2 - k1) - (k3 - k1) * (n2 - n1)
        w3 = ((k1 * (n2 - n1) - n1 * (k2 - k1)) / D3, (k2 - k1) / D3, -(n2 - n1) / D3)
        return w2, w3


def replication_strategy(market: MarketSpec, y, z, zeta, pre_default=True):
    """Amounts (theta1, theta2, theta3) held in each asset.

    Inputs broadcast together; ``pre_default`` multiplies zeta so that the
    jump equation reads kappa_1 Y + ... = zeta 1{pre-default}.
    """
    (a2, b2, c2), (a3, b3, c3) = market.weights()
    y, z, zeta = (np.asarray(v, dtype=float) for v in (y, z, zeta))
    zp = zeta * np.asarray(pre_default, dtype=float)
    th2 = a2 * y + b2 * z + c2 * zp
    th3 = a3 * y + b3 * z + c3 * zp
    return y - th2 - th3, th2, th3


def market_linear_coefficients(market: MarketSpec, gamma: float):
    """(a, b, c) of the pricing-form linear BSDE implied by the market; needs gamma > 0."""
    if not gamma > 0:
        raise ValueError("the market-implied c divides by gamma, which must be positive")
    (a2, b2, c2), (a3, b3, c3) = market.weights()
    m1, m2, m3 = market.mu
    a = m1 + (m2 - m1) * a2 + (m3 - m1) * a3
    b = (m2 - m1) * b2 + (m3 - m1) * b3
    c = ((m2 - m1) * c2 + (m3 - m1) * c3) / gamma
    return a, b, c


def asset_paths(market: MarketSpec, bundle: PathBundle) -> np.ndarray:
    """Exact exponential asset prices, shape (n, N+1, 3); needs d = k = 1 and kappa_i > -1."""
    if bundle.d != 1 or bundle.k != 1:
        raise ValueError("the three-asset market uses d = k = 1")
    out = np.empty((bundle.n_paths, bundle.N + 1, 3))
    for i in range(3):
        spec = ExponentialSpec(market.mu[i], market.nu[i], market.kappa[i], form="comparison")
        out[:, :, i] = market.s0[i] * stochastic_exponential(spec, bundle)
    return out


def analytic_linear_price(a: float, c: float, gamma: float, T: float, xi_survive: float = 1.0,
                          xi_default: float = 0.0, grid: TimeGrid | None = None) -> float:
    """E[Q_T xi(H_T)] for constant coefficients, k = 1, pricing form.

    Uses Q_T = e^{-aT} (Brownian factor of unit mean) (1-c)^{H_T} e^{c gamma (tau ^ T)}.
    With ``grid`` the default time is rounded up to the grid as in the
    simulation and the compensator is the left Riemann sum, giving the
    exact discrete-time value.
    """
    if c >= 1:
        raise ValueError("c must be < 1")
    lam = (1.0 - c) * gamma
    if grid is None:
        surv = np.exp(-lam * T)
        dflt = 1.0 - surv if lam > 0 else 0.0
    else:
        t = grid.nodes
        surv = np.exp(-gamma * T) * np.exp(c * gamma * T)
        p = np.exp(-gamma * t[:-1]) - np.exp(-gamma * t[1:])
        dflt = float(np.sum(p * (1.0 - c) * np.exp(c * gamma * t[1:])))
    return float(np.exp(-a * T) * (xi_survive * surv + xi_default * dflt))
