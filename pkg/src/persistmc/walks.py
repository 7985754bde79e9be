"""Lattice random walks: step laws, local times, self-intersection local time.

Three regimes are covered: symmetric heavy-tailed steps on Z (domain of
attraction of a symmetric alpha-stable law, 1 < alpha < 2), the simple
walk on Z (alpha = 2), and the simple walks on Z^2 and Z^3.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numba as nb
import numpy as np
from scipy.special import zeta

from persistmc.rng import WALK, StreamKey, derive_stream

HEAVY_TABLE_SIZE = 10**6
_SRW_DIMS = {"srw1": 1, "srw2": 2, "srw3": 3}


@dataclass(frozen=True)
class WalkKind:
    """One of ``heavy`` (needs ``alpha`` in (1, 2)), ``srw1``, ``srw2``, ``srw3``."""

    name: str
    alpha: float | None = None

    def __post_init__(self):
        if self.name == "heavy":
            if self.alpha is None or not 1.0 < float(self.alpha) < 2.0:
                raise ValueError(f"heavy-tailed walk needs alpha in (1, 2), got {self.alpha}")
        elif self.name in _SRW_DIMS:
            if self.alpha is not None:
                raise ValueError(f"{self.name} takes no alpha")
        else:
            raise ValueError(f"unknown walk kind {self.name!r}")

    @classmethod
    def parse(cls, text: str) -> "WalkKind":
        """Parse the CLI form ``heavy:ALPHA`` / ``srw1`` / ``srw2`` / ``srw3``."""
        if text.startswith("heavy:"):
            return cls("heavy", float(text.split(":", 1)[1]))
        return cls(text)

    def __str__(self):
        return f"heavy:{self.alpha:g}" if self.name == "heavy" else self.name

    @property
    def dim(self) -> int:
        return _SRW_DIMS.get(self.name, 1)

    @property
    def stable_index(self) -> float:
        """alpha of the limiting stable law (2 for finite-variance steps)."""
        return float(self.alpha) if self.name == "heavy" else 2.0

    @property
    def recurrent(self) -> bool:
        return self.name != "srw3"

    @property
    def hurst(self) -> float:
        """Scaling index of the RWRS built on this walk."""
        if self.dim == 1:
            return 1.0 - 1.0 / (2.0 * self.stable_index)
        return 0.5


# -- heavy-tailed step law --------------------------------------------------

def heavy_step_constant(alpha: float) -> float:
    """c_alpha with P[X = +-k] = c_alpha k^-(1+alpha), k >= 1."""
    return 1.0 / (2.0 * float(zeta(1.0 + alpha)))


@lru_cache(maxsize=8)
def heavy_cdf_table(alpha: float, size: int = HEAVY_TABLE_SIZE) -> np.ndarray:
    """cdf[k-1] = P[|X| <= k] for k = 1..size."""
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (1, 2), got {alpha}")
    k = np.arange(1, size + 1, dtype=np.float64)
    pmf = k ** -(1.0 + alpha) / zeta(1.0 + alpha)
    cdf = np.cumsum(pmf)
    cdf.setflags(write=False)
    return cdf


@nb.njit(cache=True, inline="always")
def heavy_step_from_uniform(u, cdf, alpha):
    """Map u in [0, 1) to a heavy-tailed step by inverting the cdf of |X|.

    The top half of [0, 1) gives the sign. Magnitudes beyond the table use the
    continuous Pareto density rounded to the nearest integer.
    """
    v = 2.0 * u
    sign = 1
    if v >= 1.0:
        v -= 1.0
        sign = -1
    size = cdf.shape[0]
    if v < cdf[size - 1]:
        # most of the mass sits on the first few magnitudes
        for k in range(8):
            if v < cdf[k]:
                return sign * (k + 1)
        lo = 8
        hi = size - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if v < cdf[mid]:
                hi = mid
            else:
                lo = mid + 1
        return sign * (lo + 1)
    w = (v - cdf[size - 1]) / (1.0 - cdf[size - 1])
    if w >= 1.0:
        w = 1.0 - 1.1102230246251565e-16
    mag = (size + 0.5) * (1.0 - w) ** (-1.0 / alpha)
    if mag > 4.0e18:
        mag = 4.0e18
    return sign * np.int64(mag + 0.5)


@nb.njit(cache=True)
def _heavy_steps(u, cdf, alpha, out):
    flat_u = u.ravel()
    flat_o = out.ravel()
    for i in range(flat_u.shape[0]):
        flat_o[i] = heavy_step_from_uniform(flat_u[i], cdf, alpha)


def heavy_steps(alpha: float, uniforms: np.ndarray) -> np.ndarray:
    """Heavy-tailed steps for an array of uniforms in [0, 1)."""
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    out = np.empty(uniforms.shape, dtype=np.int64)
    _heavy_steps(uniforms, heavy_cdf_table(float(alpha)), float(alpha), out)
    return out


def sample_heavy_step(alpha: float, state: np.random.Generator, size=None):
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (1, 2), got {alpha}")
    if size is None:
        return int(heavy_steps(alpha, np.array([state.random()]))[0])
    return heavy_steps(alpha, state.random(size))


# -- step generation ---------------------------------------------------------

def _unit_moves(dim: int) -> np.ndarray:
    eye = np.eye(dim, dtype=np.int64)
    return np.concatenate([eye, -eye])


def draw_steps(kind: WalkKind, T: int, state: np.random.Generator, n: int | None = None):
    """Raw step draws: direction codes (SRW, uint8) or heavy-tailed integers.

    Direction code j < dim means +e_j, otherwise -e_(j - dim).
    """
    shape = (T,) if n is None else (n, T)
    if kind.name == "heavy":
        return heavy_steps(kind.alpha, state.random(shape))
    return state.integers(0, 2 * kind.dim, size=shape, dtype=np.uint8)


def steps_to_increments(kind: WalkKind, steps: np.ndarray) -> np.ndarray:
    """Increments X_1..X_T as an integer array of shape (..., T, dim)."""
    if kind.name == "heavy":
        return steps[..., None].astype(np.int64)
    return _unit_moves(kind.dim)[steps]


# -- paths and local times ---------------------------------------------------

@dataclass
class WalkPath:
    """Positions S_0..S_T with local times and self-intersections over i = 1..T.

    ``self_intersections[n - 1]`` is V_n.
    """

    positions: np.ndarray
    local_times: dict = field(repr=False)
    self_intersections: np.ndarray = field(repr=False)
    kind: WalkKind | None = None

    @property
    def T(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @cached_property
    def _site_ids(self):
        sites, ids = np.unique(self.positions[1:], axis=0, return_inverse=True)
        return sites, ids.reshape(-1)

    @property
    def sites(self) -> np.ndarray:
        """Distinct sites visited at steps 1..T (rows)."""
        return self._site_ids[0]

    @property
    def site_ids(self) -> np.ndarray:
        """Index into ``sites`` of S_i, for i = 1..T."""
        return self._site_ids[1]

    def local_time_vector(self, n: int) -> np.ndarray:
        """N_n(x) for every x in ``sites`` (same order)."""
        if not 0 <= n <= self.T:
            raise IndexError(f"time {n} outside 0..{self.T}")
        return np.bincount(self.site_ids[:n], minlength=len(self.sites))

    def local_times_at(self, n: int) -> dict:
        counts = self.local_time_vector(n)
        return {tuple(int(c) for c in s): int(m) for s, m in zip(self.sites, counts) if m}


def _prior_counts(ids: np.ndarray) -> np.ndarray:
    """For each position i, how many j < i carry the same id."""
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    group_start = np.repeat(starts, np.diff(np.r_[starts, len(ids)]))
    prior = np.empty_like(ids)
    prior[order] = np.arange(len(ids)) - group_start
    return prior


def incremental_self_intersections(ids: np.ndarray) -> np.ndarray:
    """V_1..V_T via V_n = V_(n-1) + 2 N_(n-1)(S_n) + 1."""
    ids = np.asarray(ids, dtype=np.int64)
    return np.cumsum(2 * _prior_counts(ids) + 1)


def walk_from_positions(positions, kind: WalkKind | None = None) -> WalkPath:
    """Build a WalkPath (local times, V_n) from explicit positions S_0..S_T."""
    pos = np.asarray(positions, dtype=np.int64)
    if pos.ndim == 1:
        pos = pos[:, None]
    if pos.shape[0] < 1 or np.any(pos[0] != 0):
        raise ValueError("a walk path starts at the origin")
    visited = pos[1:]
    if len(visited):
        _, ids = np.unique(visited, axis=0, return_inverse=True)
        ids = ids.reshape(-1)
    else:
        ids = np.zeros(0, dtype=np.int64)
    local = Counter(map(tuple, visited.tolist()))
    return WalkPath(pos, dict(local), incremental_self_intersections(ids), kind)


def simulate_walk(kind: WalkKind, T: int, state: np.random.Generator) -> WalkPath:
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    inc = steps_to_increments(kind, draw_steps(kind, T, state))
    pos = np.zeros((T + 1, kind.dim), dtype=np.int64)
    np.cumsum(inc, axis=0, out=pos[1:])
    return walk_from_positions(pos, kind)


def pack_sites(positions: np.ndarray) -> np.ndarray:
    """Injective int64 code for lattice points (last axis = coordinates).

    1d walks use the coordinate itself; for d = 2, 3 coordinates must satisfy
    |x| < 2**31 and |x| < 2**20 respectively.
    """
    d = positions.shape[-1]
    if d == 1:
        return positions[..., 0].astype(np.int64)
    bits = 32 if d == 2 else 21
    off = np.int64(1 << (bits - 1))
    if np.abs(positions).max(initial=0) >= off:
        raise OverflowError("coordinates too large to pack")
    code = np.zeros(positions.shape[:-1], dtype=np.int64)
    for j in range(d):
        code = (code << bits) | (positions[..., j] + off)
    return code


def _final_self_intersection(codes: np.ndarray) -> np.ndarray:
    """V_T = sum_x N_T(x)^2 per row of packed site codes."""
    n, T = codes.shape
    s = np.sort(codes, axis=1)
    new = np.ones((n, T), dtype=bool)
    new[:, 1:] = s[:, 1:] != s[:, :-1]
    starts = np.flatnonzero(new)
    lengths = np.diff(np.r_[starts, n * T])
    return np.bincount(starts // T, weights=lengths.astype(np.float64) ** 2, minlength=n)


@dataclass(frozen=True)
class MeanEstimate:
    value: float
    se: float
    replicas: int


def mean_self_intersection(kind: WalkKind, T: int, replicas: int, seed: int,
                           batch: int = 256) -> MeanEstimate:
    """Monte Carlo estimate of E[V_T] with its standard error."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    vals = []
    for b, start in enumerate(range(0, replicas, batch)):
        m = min(batch, replicas - start)
        rng = derive_stream(StreamKey(seed, b, WALK))
        pos = np.cumsum(steps_to_increments(kind, draw_steps(kind, T, rng, n=m)), axis=1)
        vals.append(_final_self_intersection(pack_sites(pos)))
    v = np.concatenate(vals)
    se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
    return MeanEstimate(float(v.mean()), se, len(v))


# -- Green function at the origin --------------------------------------------

@nb.njit(cache=True)
def _origin_visits(steps, dim):
    n, T = steps.shape
    moves = np.zeros((2 * dim, 3), dtype=np.int64)
    for j in range(dim):
        moves[j, j] = 1
        moves[dim + j, j] = -1
    out = np.ones(n, dtype=np.int64)  # the visit at i = 0
    for r in range(n):
        x = 0
        y = 0
        z = 0
        c = 0
        for i in range(T):
            s = steps[r, i]
            x += moves[s, 0]
            y += moves[s, 1]
            z += moves[s, 2]
            c += (x | y | z) == 0
        out[r] += c
    return out


@dataclass(frozen=True)
class GreenEstimate:
    """Truncated G(0,0) estimate; the truncation bias is O(T^-1/2), downward."""

    value: float
    se: float
    T: int
    replicas: int

    @property
    def sigma2(self) -> float:
        """Limiting RWRS variance 2 G(0,0) - 1."""
        return 2.0 * self.value - 1.0


def green_at_origin(T: int, replicas: int, seed: int, kind: WalkKind = WalkKind("srw3"),
                    batch: int = 512) -> GreenEstimate:
    """Expected number of visits to 0 at times 0..T by the transient walk."""
    if kind.recurrent:
        raise ValueError(f"G(0,0) is infinite for the recurrent walk {kind}")
    if T == 0:
        return GreenEstimate(1.0, 0.0, 0, replicas)
    counts = []
    for b, start in enumerate(range(0, replicas, batch)):
        m = min(batch, replicas - start)
        rng = derive_stream(StreamKey(seed, b, WALK))
        counts.append(_origin_visits(draw_steps(kind, T, rng, n=m), kind.dim))
    c = np.concatenate(counts).astype(np.float64)
    return GreenEstimate(float(c.mean()), float(c.std(ddof=1) / np.sqrt(len(c))), T, len(c))


SRW2_SIGMA2 = 2.0 / np.pi  # (pi sqrt(det Sigma))^-1 with Sigma = I/2
