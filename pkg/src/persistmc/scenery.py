"""Random walk in random scenery: Z_n = sum_{i=1..n} xi_{S_i}."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from persistmc.rng import COORD_LIMIT, scenery_key, site_gaussians, site_normal
from persistmc.walks import WalkKind, WalkPath, heavy_steps


@dataclass
class ProcessPath:
    """Values Z_0..Z_T (Z_0 = 0) and a free-form description of their origin."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0 or self.values[0] != 0.0:
            raise ValueError("a process path is a 1d array starting with Z_0 = 0")

    @property
    def T(self) -> int:
        return self.values.size - 1


def rwrs_path(walk: WalkPath, master_seed: int, stream: int = 0) -> ProcessPath:
    """Z along ``walk``; each distinct site's scenery value is looked up once."""
    xi = site_gaussians(master_seed, walk.sites, stream)
    z = np.zeros(walk.T + 1)
    np.cumsum(xi[walk.site_ids], out=z[1:])
    meta = {"family": "rwrs", "walk": str(walk.kind) if walk.kind else None,
            "seed": int(master_seed), "stream": int(stream)}
    return ProcessPath(z, meta)


def conditional_covariance(walk: WalkPath, l: int, k: int) -> int:
    """E[Z_l Z_k | S] = sum_x N_l(x) N_k(x)."""
    if not 0 <= l <= k <= walk.T:
        raise IndexError(f"need 0 <= l <= k <= {walk.T}, got l={l}, k={k}")
    return int(np.dot(walk.local_time_vector(l), walk.local_time_vector(k)))


# -- batched kernel ------------------------------------------------------------

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_OFF32 = np.int64(1 << 31)


@nb.njit(cache=True)
def _rwrs_kernel(steps, heavy, dim, k0, k1, streams, out):
    """Fill out[r] with Z_0..Z_T for each row of step draws.

    In d = 1 scenery values are memoised per path in an open-addressing table
    (recurrent walks revisit most sites); in d = 2, 3 every step evaluates
    the Philox block directly, which is cheaper than a table miss.
    Returns 0 on success, 1 if a coordinate left the encodable range.
    """
    n, T = steps.shape
    moves = np.zeros((6, 3), dtype=np.int64)
    for j in range(dim):
        moves[j, j] = 1
        moves[dim + j, j] = -1
    bits = 1
    while (1 << bits) < 2 * (T + 1):
        bits += 1
    size = 1 << bits
    shift = np.uint64(64 - bits)
    mask = size - 1
    memo = dim == 1
    tkeys = np.empty(size if memo else 1, dtype=np.int64)
    tstamp = np.full(size if memo else 1, -1, dtype=np.int64)
    tval = np.empty(size if memo else 1, dtype=np.float64)
    for r in range(n):
        x = np.int64(0)
        y = np.int64(0)
        z = np.int64(0)
        acc = 0.0
        out[r, 0] = 0.0
        stream = streams[r]
        for i in range(T):
            s = steps[r, i]
            if heavy:
                x += np.int64(s)
            else:
                x += moves[s, 0]
                y += moves[s, 1]
                z += moves[s, 2]
            if not memo:
                xi = site_normal(k0, k1, x, y, z, stream)
            else:
                if x >= _OFF32 or x <= -_OFF32:
                    return 1
                h = np.int64((np.uint64(x) * _GOLD) >> shift)
                while True:
                    if tstamp[h] != r:
                        xi = site_normal(k0, k1, x, y, z, stream)
                        tstamp[h] = r
                        tkeys[h] = x
                        tval[h] = xi
                        break
                    if tkeys[h] == x:
                        xi = tval[h]
                        break
                    h = (h + 1) & mask
            acc += xi
            out[r, i + 1] = acc
    return 0


def rwrs_batch(kind: WalkKind, T: int, n: int, walk_rng: np.random.Generator,
               master_seed: int, first_stream: int) -> np.ndarray:
    """n RWRS paths of horizon T as an (n, T+1) array.

    Walk steps come from ``walk_rng``; the scenery of row r is keyed by the
    global replica index ``first_stream + r``.
    """
    if kind.name == "heavy":
        steps = heavy_steps(kind.alpha, walk_rng.random((n, T)))
    else:
        steps = walk_rng.integers(0, 2 * kind.dim, size=(n, T), dtype=np.uint8)
    if first_stream + n > 2**32:
        raise OverflowError("replica index exceeds the 32-bit scenery stream range")
    k0, k1 = scenery_key(master_seed)
    streams = np.arange(first_stream, first_stream + n, dtype=np.int64)
    out = np.empty((n, T + 1))
    status = _rwrs_kernel(steps, kind.name == "heavy", kind.dim, np.uint64(k0), np.uint64(k1),
                          streams, out)
    if status:
        raise OverflowError(f"walk left the scenery coordinate range (|x| < {COORD_LIMIT})")
    return out
