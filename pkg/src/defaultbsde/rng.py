"""Counter-based random numbers keyed by (seed, path index).

Philox4x32-10 evaluated in numpy over whole arrays of counters, so the
draws for path ``p`` never depend on how many other paths are generated
alongside it or in which chunk.
"""

from __future__ import annotations

import numpy as np

__all__ = ["philox4x32", "PathRNG"]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

STREAM_DEFAULTS = 0
STREAM_BROWNIAN = 1


def philox4x32(counter: np.ndarray, key: tuple[int, int], rounds: int = 10) -> np.ndarray:
    """Apply the Philox4x32 bijection.

    Parameters
    ----------
    counter : array of shape (4, n), uint32
    key : pair of 32-bit integers

    Returns
    -------
    array of shape (4, n), uint32
    """
    c = np.asarray(counter, dtype=np.uint32)
    if c.shape[0] != 4:
        raise ValueError("counter must have leading dimension 4")
    c0, c1, c2, c3 = (c[j].astype(np.uint64) for j in range(4))
    k0 = np.uint32(key[0] & 0xFFFFFFFF)
    k1 = np.uint32(key[1] & 0xFFFFFFFF)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r > 0:
                k0 = np.uint32(k0 + _W0)
                k1 = np.uint32(k1 + _W1)
            p0 = _M0 * c0
            p1 = _M1 * c2
            hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
            hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
            c0, c1, c2, c3 = (
                hi1 ^ c1 ^ np.uint64(k0),
                lo1,
                hi0 ^ c3 ^ np.uint64(k1),
                lo0,
            )
    return np.stack([c0, c1, c2, c3]).astype(np.uint32)


def _to_unit_open(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    # 53-bit mantissa, shifted off zero so log() is always finite
    a = (hi >> np.uint32(5)).astype(np.float64)
    b = (lo >> np.uint32(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) / 9007199254740992.0


class PathRNG:
    """Per-path uniform/normal/exponential draws from a 64-bit seed.

    The counter for a draw is ``(block, stream, path_lo, path_hi)`` and the
    key is the seed split into two 32-bit words. Each counter yields two
    doubles in the open unit interval.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._key = (seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF)

    def uniforms(self, paths: np.ndarray, stream: int, count: int) -> np.ndarray:
        """Return an array of shape (len(paths), count) of U(0, 1) draws."""
        paths = np.asarray(paths, dtype=np.uint64)
        n_blocks = (count + 1) // 2
        n = paths.size
        blocks = np.arange(n_blocks, dtype=np.uint64)
        ctr = np.empty((4, n, n_blocks), dtype=np.uint32)
        ctr[0] = blocks[None, :].astype(np.uint32)
        ctr[1] = np.uint32(stream)
        ctr[2] = (paths & _MASK32).astype(np.uint32)[:, None]
        ctr[3] = (paths >> _SHIFT32).astype(np.uint32)[:, None]
        out = philox4x32(ctr.reshape(4, -1), self._key).reshape(4, n, n_blocks)
        u = np.empty((n, 2 * n_blocks))
        u[:, 0::2] = _to_unit_open(out[0], out[1])
        u[:, 1::2] = _to_unit_open(out[2], out[3])
        return u[:, :count]

    def normals(self, paths: np.ndarray, stream: int, count: int) -> np.ndarray:
        """Standard normals via Box-Muller, shape (len(paths), count)."""
        n_pairs = (count + 1) // 2
        u = self.uniforms(paths, stream, 2 * n_pairs)
        r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
        theta = 2.0 * np.pi * u[:, 1::2]
        z = np.empty((u.shape[0], 2 * n_pairs))
        z[:, 0::2] = r * np.cos(theta)
        z[:, 1::2] = r * np.sin(theta)
        return z[:, :count]

    def exponentials(self, paths: np.ndarray, stream: int, count: int) -> np.ndarray:
        """Unit-rate exponentials, shape (len(paths), count)."""
        return -np.log(self.uniforms(paths, stream, count))
