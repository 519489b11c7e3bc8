"""Time grids, default-time simulation and joint (B, H, M) path bundles."""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .rng import STREAM_BROWNIAN, STREAM_DEFAULTS, PathRNG

__all__ = [
    "TimeGrid",
    "DefaultModel",
    "PathBundle",
    "MartingaleReport",
    "build_grid",
    "simulate_defaults",
    "simulate_bundle",
    "martingale_check",
    "save_bundle",
    "load_bundle",
]

log = logging.getLogger(__name__)

Intensity = Union[float, Callable[[np.ndarray], np.ndarray]]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps."""

    T: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"number of steps N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t


def build_grid(T: float, N: int) -> TimeGrid:
    return TimeGrid(T, N)


@dataclass(frozen=True)
class DefaultModel:
    """k independent default times with deterministic intensities.

    Each intensity is either a nonnegative constant or a vectorised function
    of time. ``gamma_max`` is the declared upper bound; it defaults to the
    largest constant when every intensity is constant.
    """

    intensities: tuple
    gamma_max: float | None = None

    def __post_init__(self):
        ints = tuple(self.intensities) if isinstance(self.intensities, (list, tuple)) else (self.intensities,)
        object.__setattr__(self, "intensities", ints)
        if len(ints) == 0:
            raise ValueError("at least one default time is required")
        if self.gamma_max is None:
            if not all(np.isscalar(g) for g in ints):
                raise ValueError("gamma_max must be declared for time-dependent intensities")
            object.__setattr__(self, "gamma_max", float(max(ints)))
        for g in ints:
            if np.isscalar(g) and not (0 <= g <= self.gamma_max):
                raise ValueError(f"constant intensity {g} outside [0, {self.gamma_max}]")

    @classmethod
    def constant(cls, rates: float | Sequence[float]) -> "DefaultModel":
        rates = (rates,) if np.isscalar(rates) else tuple(rates)
        return cls(tuple(float(r) for r in rates))

    @property
    def k(self) -> int:
        return len(self.intensities)

    def _eval(self, j: int, t: np.ndarray) -> np.ndarray:
        g = self.intensities[j]
        if np.isscalar(g):
            return np.full(np.shape(t), float(g))
        return np.broadcast_to(np.asarray(g(t), dtype=float), np.shape(t)).copy()

    def gamma_on(self, grid: TimeGrid) -> np.ndarray:
        """Intensities at the grid nodes, shape (N+1, k); validated against the bound."""
        t = grid.nodes
        out = np.stack([self._eval(j, t) for j in range(self.k)], axis=1)
        if not np.all(np.isfinite(out)):
            raise ValueError("intensity is not finite on the grid")
        if np.any(out < 0) or np.any(out > self.gamma_max):
            raise ValueError(
                f"intensity outside [0, {self.gamma_max}] on the grid "
                f"(min {out.min():.6g}, max {out.max():.6g})"
            )
        return out

    def cumulative_hazard(self, grid: TimeGrid) -> np.ndarray:
        """Integrated intensity at the nodes, shape (N+1, k)."""
        t = grid.nodes
        left, right = t[:-1], t[1:]
        half = 0.5 * (right - left)
        mid = 0.5 * (right + left)
        pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        out = np.zeros((grid.N + 1, self.k))
        for j in range(self.k):
            if np.isscalar(self.intensities[j]):
                out[:, j] = float(self.intensities[j]) * t
            else:
                incr = (self._eval(j, pts) * _GL_WEIGHTS[None, :]).sum(axis=1) * half
                out[1:, j] = np.cumsum(incr)
        if np.any(np.diff(out, axis=0) < -1e-15):
            raise ValueError("cumulative hazard is not nondecreasing")
        return out


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Joint Brownian and default-indicator paths on a grid.

    Arrays
    ------
    dB : (n_paths, N, d) Brownian increments
    H : (n_paths, N+1, k) default indicators, int8
    dM : (n_paths, N, k) compensated increments
    gamma : (N+1, k) intensities at the nodes
    """

    grid: TimeGrid
    dB: np.ndarray
    H: np.ndarray
    dM: np.ndarray
    gamma: np.ndarray
    seed: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_paths(self) -> int:
        return self.H.shape[0]

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def d(self) -> int:
        return self.dB.shape[2]

    @property
    def k(self) -> int:
        return self.H.shape[2]

    @property
    def dH(self) -> np.ndarray:
        return np.diff(self.H, axis=1).astype(float)

    @property
    def pre_default(self) -> np.ndarray:
        """Boolean (n_paths, N+1, k): default j has not happened by node i."""
        return self.H == 0

    @property
    def gamma_eff(self) -> np.ndarray:
        """1{pre-default} * gamma at every node, shape (n_paths, N+1, k)."""
        if "gamma_eff" not in self._cache:
            self._cache["gamma_eff"] = np.where(self.pre_default, self.gamma[None, :, :], 0.0)
        return self._cache["gamma_eff"]

    @property
    def B(self) -> np.ndarray:
        out = np.zeros((self.n_paths, self.N + 1, self.d))
        np.cumsum(self.dB, axis=1, out=out[:, 1:])
        return out

    @property
    def M(self) -> np.ndarray:
        out = np.zeros((self.n_paths, self.N + 1, self.k))
        np.cumsum(self.dM, axis=1, out=out[:, 1:])
        return out

    def bucket_codes(self, i: int) -> np.ndarray:
        """Integer code of the default configuration at node i."""
        weights = 1 << np.arange(self.k)
        return (self.H[:, i, :].astype(np.int64) * weights).sum(axis=1)

    def default_nodes(self) -> np.ndarray:
        """First node where each indicator flips, N+1 when it never does."""
        flipped = self.H.astype(bool)
        first = np.argmax(flipped, axis=1)
        return np.where(flipped.any(axis=1), first, self.N + 1)

    def to_bytes(self) -> bytes:
        return _encode_bundle(self)


def simulate_defaults(
    model: DefaultModel,
    grid: TimeGrid,
    seed: int,
    n_paths: int,
    paths: np.ndarray | None = None,
) -> np.ndarray:
    """Default indicators by inverse cumulative hazard.

    ``tau_j`` falls in (t_{i-1}, t_i] exactly when Gamma_j(t_i) first reaches
    the path's unit exponential, so H flips at that node.

    Returns
    -------
    int8 array of shape (n_paths, N+1, k)
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    hazard = model.cumulative_hazard(grid)
    idx = np.arange(n_paths, dtype=np.uint64) if paths is None else np.asarray(paths, dtype=np.uint64)
    E = PathRNG(seed).exponentials(idx, STREAM_DEFAULTS, model.k)
    return (hazard[None, :, :] >= E[:, None, :]).astype(np.int8)


def _simulate_chunk(model, grid, gamma, d, seed, paths):
    H = simulate_defaults(model, grid, seed, len(paths), paths=paths)
    dB = PathRNG(seed).normals(paths, STREAM_BROWNIAN, grid.N * d).reshape(len(paths), grid.N, d)
    dB *= np.sqrt(grid.dt)
    return dB, H


def compensated_increments(H: np.ndarray, gamma: np.ndarray, dt: float) -> np.ndarray:
    """dM_i = (H_{i+1} - H_i) - 1{H_i = 0} gamma(t_i) dt."""
    dH = np.diff(H, axis=1).astype(float)
    comp = np.where(H[:, :-1, :] == 0, gamma[None, :-1, :] * dt, 0.0)
    return dH - comp


def simulate_bundle(
    model: DefaultModel,
    grid: TimeGrid,
    d: int,
    n_paths: int,
    seed: int,
    chunk_size: int = 50_000,
    workers: int = 1,
) -> PathBundle:
    """Simulate Brownian increments and default indicators for ``n_paths`` paths.

    Draws are keyed per path, so the result does not depend on ``chunk_size``
    or ``workers``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if d < 0:
        raise ValueError("Brownian dimension d must be nonnegative")
    gamma = model.gamma_on(grid)
    chunks = [
        np.arange(s, min(s + chunk_size, n_paths), dtype=np.uint64) for s in range(0, n_paths, chunk_size)
    ]

    def run(paths):
        return _simulate_chunk(model, grid, gamma, d, seed, paths)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    dB = np.concatenate([p[0] for p in parts], axis=0)
    H = np.concatenate([p[1] for p in parts], axis=0)
    dM = compensated_increments(H, gamma, grid.dt)
    return PathBundle(grid=grid, dB=dB, H=H, dM=dM, gamma=gamma, seed=int(seed))


@dataclass
class MartingaleReport:
    """Sample mean, standard error and z-score of each terminal component."""

    M_mean: np.ndarray
    M_se: np.ndarray
    M_z: np.ndarray
    B_mean: np.ndarray
    B_se: np.ndarray
    B_z: np.ndarray
    threshold: float = 4.0

    @property
    def flags(self) -> list[str]:
        out = [f"M{j + 1}" for j in np.flatnonzero(np.abs(self.M_z) > self.threshold)]
        out += [f"B{j + 1}" for j in np.flatnonzero(np.abs(self.B_z) > self.threshold)]
        return out

    @property
    def ok(self) -> bool:
        return not self.flags

    def to_dict(self) -> dict:
        return {
            "M_mean": self.M_mean.tolist(),
            "M_se": self.M_se.tolist(),
            "M_z": self.M_z.tolist(),
            "B_mean": self.B_mean.tolist(),
            "B_se": self.B_se.tolist(),
            "B_z": self.B_z.tolist(),
            "flags": self.flags,
        }


def _mean_se_z(x: np.ndarray):
    n = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean / np.where(se > 0, se, 1.0), np.where(mean == 0, 0.0, np.inf))
    return mean, se, z


def martingale_check(bundle: PathBundle, threshold: float = 4.0) -> MartingaleReport:
    M_T = bundle.dM.sum(axis=1)
    B_T = bundle.dB.sum(axis=1)
    return MartingaleReport(*_mean_se_z(M_T), *_mean_se_z(B_T), threshold=threshold)


# columnar binary layout: magic, header, then gamma | dB | H | dM as <f8
_MAGIC = b"DBSDEPB1"
_HEADER = struct.Struct("<8sqqqqQd")


def _encode_bundle(b: PathBundle) -> bytes:
    header = _HEADER.pack(_MAGIC, b.n_paths, b.N, b.d, b.k, b.seed, b.grid.T)
    cols = [b.gamma, b.dB, b.H, b.dM]
    return header + b"".join(np.ascontiguousarray(c, dtype="<f8").tobytes() for c in cols)


def save_bundle(bundle: PathBundle, path: str | Path) -> None:
    Path(path).write_bytes(_encode_bundle(bundle))


def load_bundle(path: str | Path) -> PathBundle:
    raw = Path(path).read_bytes()
    magic, n, N, d, k, seed, T = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a path bundle file")
    off = _HEADER.size
    shapes = [(N + 1, k), (n, N, d), (n, N + 1, k), (n, N, k)]
    cols = []
    for shape in shapes:
        size = int(np.prod(shape))
        cols.append(np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64))
        off += 8 * size
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after bundle payload")
    gamma, dB, H, dM = cols
    return PathBundle(build_grid(T, N), dB, H.astype(np.int8), dM, gamma, int(seed))
