"""Terminal payoffs phi(H_T, X_T)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["TerminalSpec"]


@dataclass(frozen=True)
class TerminalSpec:
    """Bounded payoff of the terminal default configuration and forward state.

    ``payoff(H_T, X_T)`` receives H_T of shape (n, k) and X_T of shape (n, m_x)
    (or None) and returns shape (n,) for scalar claims or (n, m).
    """

    payoff: Callable
    bound: float = np.inf
    name: str = "claim"

    def evaluate(self, H_T: np.ndarray, X_T: np.ndarray | None = None) -> np.ndarray:
        """Payoff as an (n, m) float array, checked against the declared bound."""
        val = np.asarray(self.payoff(H_T, X_T), dtype=float)
        if val.ndim == 0:
            val = np.full(H_T.shape[0], float(val))
        if val.ndim == 1:
            val = val[:, None]
        if not np.all(np.isfinite(val)):
            raise ValueError(f"terminal payoff {self.name!r} is not finite")
        if np.max(np.abs(val)) > self.bound * (1 + 1e-12):
            raise ValueError(f"terminal payoff {self.name!r} exceeds its declared bound {self.bound}")
        return val

    @classmethod
    def constant(cls, value: float) -> "TerminalSpec":
        return cls(lambda H, X: np.full(H.shape[0], float(value)), abs(float(value)), f"constant({value})")

    @classmethod
    def survival(cls, amount: float = 1.0) -> "TerminalSpec":
        """amount * 1{no default by T}."""
        return cls(lambda H, X: amount * (H.sum(axis=1) == 0), abs(amount), "survival")

    @classmethod
    def default_indicator(cls, j: int = 0, amount: float = 1.0) -> "TerminalSpec":
        """amount * H_T^j."""
        return cls(lambda H, X: amount * H[:, j].astype(float), abs(amount), f"default_indicator({j})")

    def shifted(self, delta: float) -> "TerminalSpec":
        base = self
        return TerminalSpec(lambda H, X: base.payoff(H, X) + delta, self.bound + abs(delta), f"{self.name}+{delta}")
