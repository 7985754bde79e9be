"""Per-path statistics: persistence, running maximum, argmax, occupation time,
and the exponential / logarithmic functionals of exp(Z)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.special import logsumexp, ndtr

from persistmc.scenery import ProcessPath


@dataclass(frozen=True)
class PathStats:
    max_1_to_T: float
    tau: int
    occupation: int
    phi_value_from0: float
    phi_value_from1: float
    boundary: float = 0.0
    psi_values: dict = field(default_factory=dict)

    @property
    def persists(self) -> bool:
        """max_{1<=k<=T} Z_k <= boundary."""
        return self.persists_at(self.boundary)

    def persists_at(self, a: float) -> bool:
        return bool(self.max_1_to_T <= a)

    def psi_value(self, x: float) -> float:
        return self.psi_values[x]


def _values(z) -> np.ndarray:
    v = z.values if isinstance(z, ProcessPath) else np.asarray(z, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a single path Z_0..Z_T")
    if not np.all(np.isfinite(v)):
        raise ValueError("path contains non-finite values")
    if v[0] != 0.0:
        raise ValueError("a path must start at Z_0 = 0")
    return v


def psi_integrand(z: np.ndarray, x: float) -> float:
    """log(sum_{k<[x]} e^{Z_k} + (x - [x]) e^{Z_[x]})."""
    T = z.size - 1
    if not 1.0 <= x <= T:
        raise ValueError(f"psi point {x} outside [1, {T}]")
    m = int(np.floor(x))
    frac = x - m
    if frac == 0.0:
        return float(logsumexp(z[:m]))
    return float(logsumexp(np.append(z[:m], z[m]), b=np.append(np.ones(m), frac)))


def compute_stats(z, boundary: float = 0.0, psi_points=()) -> PathStats:
    v = _values(z)
    T = v.size - 1
    tail = v[1:]
    max1 = float(tail.max()) if T else -np.inf
    tau = int(np.argmax(v))  # first index attaining the maximum over 0..T
    occ = int(np.count_nonzero(tail > 0.0))
    lse1 = float(logsumexp(tail)) if T else -np.inf
    phi0 = float(np.exp(-np.logaddexp(0.0, lse1)))
    with np.errstate(over="ignore"):
        phi1 = float(np.exp(-lse1))  # inf once every Z_l, l >= 1, is below about -709
    psi = {x: psi_integrand(v, x) for x in psi_points}
    return PathStats(max1, tau, occ, phi0, phi1, float(boundary), psi)


# -- batch kernel ---------------------------------------------------------------

@nb.njit(cache=True)
def _batch_stats(z, grid, max1, max1_prev, tau, occ, lse1, lse1_prev):
    n = z.shape[0]
    G = grid.shape[0]
    for r in range(n):
        m1 = -np.inf
        best = 0.0
        arg = 0
        pos = 0
        # running log-sum-exp of Z_1..Z_k kept as (shift, scaled sum)
        sh = -np.inf
        sc = 0.0
        g = 0
        prev_m1 = -np.inf
        prev_lse = -np.inf
        for k in range(1, grid[G - 1] + 1):
            v = z[r, k]
            if k == grid[g]:
                prev_m1 = m1
                prev_lse = sh + np.log(sc) if sc > 0.0 else -np.inf
            if v > m1:
                m1 = v
            if v > best:
                best = v
                arg = k
            if v > 0.0:
                pos += 1
            if v > sh:
                sc = sc * np.exp(sh - v) + 1.0
                sh = v
            else:
                sc += np.exp(v - sh)
            if k == grid[g]:
                max1[r, g] = m1
                max1_prev[r, g] = prev_m1
                tau[r, g] = arg
                occ[r, g] = pos
                lse1[r, g] = sh + np.log(sc)
                lse1_prev[r, g] = prev_lse
                g += 1


@dataclass
class BatchStats:
    """Per-replica statistics at each horizon of ``grid`` (arrays of shape (n, G)).

    ``max1[r, g]`` = max_{1..T} Z, ``max1_prev`` the same over 1..T-1,
    ``lse1`` = log sum_{1..T} e^Z and ``lse1_prev`` over 1..T-1.
    """

    grid: np.ndarray
    max1: np.ndarray
    max1_prev: np.ndarray
    tau: np.ndarray
    occ: np.ndarray
    lse1: np.ndarray
    lse1_prev: np.ndarray

    @property
    def phi0(self):
        return np.exp(-np.logaddexp(0.0, self.lse1))

    @property
    def phi1(self):
        with np.errstate(over="ignore"):
            return np.exp(-self.lse1)

    @property
    def psi(self):
        """Psi integrand at the integer points x = T: log sum_{0..T-1} e^Z."""
        return np.logaddexp(0.0, self.lse1_prev)

    @property
    def sup(self):
        """max_{0..T} Z."""
        return np.maximum(self.max1, 0.0)


def batch_stats(z: np.ndarray, grid) -> BatchStats:
    """One pass over each row of ``z`` (shape (n, >= max(grid)+1))."""
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 1 or grid.size == 0 or grid[0] < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing horizons >= 1")
    if z.shape[1] <= grid[-1]:
        raise ValueError("paths shorter than the largest horizon")
    if not np.all(np.isfinite(z[:, : grid[-1] + 1])):
        raise ValueError("paths contain non-finite values")
    n, G = z.shape[0], grid.size
    out = [np.empty((n, G)), np.empty((n, G)), np.empty((n, G), dtype=np.int64),
           np.empty((n, G), dtype=np.int64), np.empty((n, G)), np.empty((n, G))]
    _batch_stats(np.ascontiguousarray(z), grid, *out)
    return BatchStats(grid, *out)


# -- boundary shift --------------------------------------------------------------

@dataclass(frozen=True)
class ShiftRow:
    T: int
    p_a: float
    p_prev_b: float
    factor: float
    bound: float
    ratio_to_zero: float
    joint_se: float
    violated: bool


def boundary_shift_check(T, n, hits_a, hits_prev_b, a: float, b: float = 0.0,
                         hits_zero=None, joint_hits=None, n_se: float = 3.0) -> list[ShiftRow]:
    """Check p(T, a) >= P[N(0,1) <= a - b] p(T-1, b) on each horizon.

    ``hits_a[i]`` counts paths with max_{1..T} Z <= a, ``hits_prev_b[i]``
    those with max_{1..T-1} Z <= b.  With ``joint_hits`` (paths satisfying
    both) the standard error of the difference uses the shared-sample
    covariance; otherwise the two estimates are treated as independent.
    """
    if b < 0:
        raise ValueError("the one-step bound needs b >= 0")
    factor = float(ndtr(a - b))
    rows = []
    for i, t in enumerate(T):
        m = float(n[i])
        pa = hits_a[i] / m
        pb = hits_prev_b[i] / m
        if joint_hits is not None:
            pj = joint_hits[i] / m
            var = (pa * (1 - pa) + factor**2 * pb * (1 - pb) - 2 * factor * (pj - pa * pb)) / m
        else:
            var = (pa * (1 - pa) + factor**2 * pb * (1 - pb)) / m
        se = float(np.sqrt(max(var, 0.0)))
        bound = factor * pb
        p0 = hits_zero[i] / m if hits_zero is not None else np.nan
        ratio = pa / p0 if hits_zero is not None and p0 > 0 else np.nan
        rows.append(ShiftRow(int(t), pa, pb, factor, bound, float(ratio), se,
                             bool(pa < bound - n_se * se)))
    return rows
