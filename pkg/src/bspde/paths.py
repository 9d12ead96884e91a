"""Uniform time grids and reproducible Brownian path ensembles.

Gaussian draws come from a counter-based generator (Philox-4x32-10): the
normal used for path ``m`` at step ``j`` is a pure function of
``(seed, m, j)``, so ensembles do not depend on generation order or on how
paths are split across threads.
"""

import struct
from dataclasses import dataclass

import numpy as np

from ._parallel import chunked_map
from .exceptions import InvalidArgument

_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint32(0x9E3779B9)
_PHILOX_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)

HEADER = struct.Struct("<dQQQ")


def philox4x32(counter, key, rounds=10):
    """Vectorised Philox-4x32 block function.

    ``counter`` is a sequence of four uint32 arrays (broadcastable) and
    ``key`` a pair of uint32 scalars. Returns four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint32) for c in counter)
    k0, k1 = np.uint32(key[0]), np.uint32(key[1])
    with np.errstate(over="ignore"):
        for _ in range(rounds):
            p0 = _PHILOX_M0 * c0.astype(np.uint64)
            p1 = _PHILOX_M1 * c2.astype(np.uint64)
            hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
            lo0 = (p0 & _MASK32).astype(np.uint32)
            hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
            lo1 = (p1 & _MASK32).astype(np.uint32)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _PHILOX_W0
            k1 = k1 + _PHILOX_W1
    return c0, c1, c2, c3


def _to_open_unit(a, b):
    # 53 random bits from two words, mapped into (0, 1)
    bits = (a >> np.uint32(5)).astype(np.float64) * 67108864.0 + (b >> np.uint32(6)).astype(np.float64)
    return (bits + 0.5) / 9007199254740992.0


def counter_normals(seed, paths, steps):
    """Standard normals indexed by ``(path, step)``; shape ``(len(paths), len(steps))``."""
    seed = _check_seed(seed)
    paths = np.asarray(paths, dtype=np.uint64)[:, None]
    steps = np.asarray(steps, dtype=np.uint64)[None, :]
    key = (seed & 0xFFFFFFFF, seed >> 32)
    x0, x1, x2, x3 = philox4x32(
        (steps.astype(np.uint32), (paths & _MASK32).astype(np.uint32),
         (paths >> np.uint64(32)).astype(np.uint32), np.uint32(0)),
        key,
    )
    u1 = _to_open_unit(x0, x1)
    u2 = _to_open_unit(x2, x3)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _check_seed(seed):
    if int(seed) != seed or not 0 <= int(seed) < 2**64:
        raise InvalidArgument(f"seed must be an unsigned 64-bit integer, got {seed}")
    return int(seed)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    horizon_T: float
    N: int

    @property
    def mesh(self):
        return self.horizon_T / self.N

    @property
    def nodes(self):
        # j * T / N, not accumulated sums
        return np.arange(self.N + 1) * self.horizon_T / self.N

    @property
    def deltas(self):
        return np.full(self.N, self.mesh)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and (self.horizon_T, self.N) == (other.horizon_T, other.N)

    def __hash__(self):
        return hash((self.horizon_T, self.N))


def make_grid(T, N):
    if int(N) != N or N < 1:
        raise InvalidArgument(f"N must be a positive integer, got {N}")
    if not T > 0:
        raise InvalidArgument(f"T must be positive, got {T}")
    grid = TimeGrid(float(T), int(N))
    if grid.mesh > 1.0:
        raise InvalidArgument(f"mesh T/N = {grid.mesh:g} exceeds 1", code="mesh_too_large")
    return grid


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    grid: TimeGrid
    M: int
    seed: int
    values: np.ndarray

    @property
    def N(self):
        return self.grid.N

    def increments(self, j):
        return increments(self, j)

    def dump(self, path):
        dump_ensemble(self, path)


def sample_ensemble(grid: TimeGrid, M, seed=0):
    """``M`` Brownian paths on ``grid``; ``values[m, j] = W_m(t_j)``."""
    if int(M) != M or M < 1:
        raise InvalidArgument(f"M must be a positive integer, got {M}")
    M = int(M)
    seed = _check_seed(seed)
    sqrt_dt = np.sqrt(grid.mesh)
    values = np.zeros((M, grid.N + 1))
    steps = np.arange(grid.N)

    def fill(lo, hi):
        dw = sqrt_dt * counter_normals(seed, np.arange(lo, hi), steps)
        np.cumsum(dw, axis=1, out=values[lo:hi, 1:])

    chunked_map(fill, M)
    values.setflags(write=False)
    return PathEnsemble(grid, M, seed, values)


def increments(ensemble: PathEnsemble, j):
    if int(j) != j or not 0 <= j < ensemble.grid.N:
        raise InvalidArgument(f"step index {j} outside [0, {ensemble.grid.N - 1}]", code="index_out_of_range")
    return ensemble.values[:, j + 1] - ensemble.values[:, j]


def dump_ensemble(ensemble: PathEnsemble, path):
    """Write header ``(T, N, M, seed)`` little-endian, then row-major float64 values."""
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(ensemble.grid.horizon_T, ensemble.grid.N, ensemble.M, ensemble.seed))
        fh.write(np.ascontiguousarray(ensemble.values, dtype="<f8").tobytes())


def load_ensemble(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    T, N, M, seed = HEADER.unpack_from(raw)
    body = raw[HEADER.size:]
    if len(body) != 8 * M * (N + 1):
        raise InvalidArgument(f"ensemble file {path} is truncated or malformed", code="bad_ensemble_file")
    values = np.frombuffer(body, dtype="<f8").reshape(M, N + 1).astype(float)
    values.setflags(write=False)
    return PathEnsemble(TimeGrid(T, N), M, seed, values)
