"""Stationary Gaussian sequences with nonnegative correlations.

User tables must be nonnegative.  Fractional Gaussian noise with H < 1/2 has
negative correlations; it is still sampled exactly, for exploratory runs.

Samples are exact: the covariance is embedded in a circulant matrix whose
eigenvalues come from one FFT, and each complex FFT of coloured white noise
yields two independent sequences (real and imaginary parts).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from persistmc.scenery import ProcessPath

ELL_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "1": lambda t: np.ones_like(np.asarray(t, dtype=np.float64)),
    "log": lambda t: np.log(np.asarray(t, dtype=np.float64)),
    "sqrt-log": lambda t: np.sqrt(np.log(np.asarray(t, dtype=np.float64))),
}

SPECTRUM_TOLERANCE = 1e-9


class EmbeddingError(ValueError):
    """The circulant embedding has a materially negative eigenvalue."""


def fgn_correlation(H: float, j):
    """Correlation of unit-variance fractional Gaussian noise at lag ``j``."""
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst index must lie in (0, 1), got {H}")
    j = np.abs(np.asarray(j, dtype=np.float64))
    h2 = 2.0 * H
    r = 0.5 * (np.abs(j + 1.0) ** h2 - 2.0 * j ** h2 + np.abs(j - 1.0) ** h2)
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class CorrelationSpec:
    """Correlation function r plus the (H, K, ell) of sum_{i,j<=n} r(i-j) ~ K n^2H ell(n)."""

    r: Callable
    hurst: float
    K: float = 1.0
    ell: str = "1"
    label: str = ""

    def __post_init__(self):
        if self.ell not in ELL_FUNCTIONS:
            raise ValueError(f"ell must be one of {sorted(ELL_FUNCTIONS)}, got {self.ell!r}")
        if not 0.0 < self.hurst < 1.0:
            raise ValueError(f"Hurst index must lie in (0, 1), got {self.hurst}")

    @classmethod
    def fgn(cls, H: float) -> "CorrelationSpec":
        fgn_correlation(H, 0)
        return cls(_FgnCorrelation(H), H, 1.0, "1", f"fgn(H={H:g})")

    @classmethod
    def from_table(cls, values, hurst: float, K: float = 1.0, ell: str = "1",
                   label: str = "table") -> "CorrelationSpec":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0 or values[0] != 1.0:
            raise ValueError("a correlation table starts with r(0) = 1")
        if np.any(values < 0):
            raise ValueError("correlations must be nonnegative")
        return cls(_TableCorrelation(tuple(values)), hurst, K, ell, label)

    @classmethod
    def from_csv(cls, path, hurst: float, K: float = 1.0, ell: str = "1") -> "CorrelationSpec":
        """Read ``j,r`` rows with j = 0, 1, 2, ... (an optional header is skipped)."""
        lags, vals = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    j, r = int(row[0]), float(row[1])
                except ValueError:
                    if not lags:
                        continue  # header
                    raise
                lags.append(j)
                vals.append(r)
        if lags != list(range(len(lags))):
            raise ValueError(f"{path}: lags must run 0, 1, 2, ... without gaps")
        return cls.from_table(vals, hurst, K, ell, label=f"table({Path(path).name})")

    def correlations(self, n: int) -> np.ndarray:
        """r(0), ..., r(n-1)."""
        return np.asarray(self.r(np.arange(n)), dtype=np.float64)

    def ell_at(self, t):
        return ELL_FUNCTIONS[self.ell](t)


class _FgnCorrelation:
    def __init__(self, H):
        self.H = H

    def __call__(self, j):
        return fgn_correlation(self.H, j)

    def __eq__(self, other):
        return isinstance(other, _FgnCorrelation) and other.H == self.H

    def __hash__(self):
        return hash(("fgn", self.H))


class _TableCorrelation:
    """r(j) from a table, held at its last value beyond the table."""

    def __init__(self, values):
        self.values = np.asarray(values)

    def __call__(self, j):
        j = np.minimum(np.abs(np.asarray(j)), self.values.size - 1)
        return self.values[j]

    def __eq__(self, other):
        return isinstance(other, _TableCorrelation) and np.array_equal(other.values, self.values)

    def __hash__(self):
        return hash(("table", self.values.tobytes()))


def variance_sum(spec: CorrelationSpec, n: int) -> float:
    """sum_{i,j=1..n} r(i-j) = n + 2 sum_{j<n} (n-j) r(j)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    r = spec.correlations(n)
    j = np.arange(1, n)
    return float(n + 2.0 * np.dot(n - j, r[1:]))


def covariance_matrix(spec: CorrelationSpec, n: int) -> np.ndarray:
    r = spec.correlations(n)
    idx = np.arange(n)
    return r[np.abs(idx[:, None] - idx[None, :])]


def partial_sum_covariance(spec: CorrelationSpec, T: int) -> np.ndarray:
    """Cov(Z_i, Z_j) for i, j = 0..T where Z_n = X_1 + ... + X_n."""
    c = np.zeros((T + 1, T + 1))
    c[1:, 1:] = np.cumsum(np.cumsum(covariance_matrix(spec, T), axis=0), axis=1)
    return c


@dataclass
class CirculantSampler:
    """Draws X_1..X_T for one (spec, T); the spectral square root is shared."""

    spec: CorrelationSpec
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("length T must be >= 1")
        n = self.T + 1  # one spare lag keeps the FFT length 2T
        r = self.spec.correlations(n)
        row = np.concatenate([r, r[-2:0:-1]])
        lam = np.fft.fft(row).real
        top = lam.max()
        worst = int(np.argmin(lam))
        if lam[worst] < -SPECTRUM_TOLERANCE * top:
            raise EmbeddingError(
                f"circulant embedding of size {row.size} has eigenvalue "
                f"lambda[{worst}] = {lam[worst]:.6g} (max {top:.6g})")
        self.size = row.size
        self.min_eigenvalue = float(lam[worst])
        self.sqrt_eig = np.sqrt(np.clip(lam, 0.0, None) / row.size)

    def sample(self, state: np.random.Generator, n: int) -> np.ndarray:
        """n independent sequences as an (n, T) array."""
        pairs = (n + 1) // 2
        noise = state.standard_normal((2, pairs, self.size))
        w = np.empty((pairs, self.size), dtype=np.complex128)
        w.real = noise[0]
        w.imag = noise[1]
        w *= self.sqrt_eig
        y = np.fft.fft(w, axis=1)[:, : self.T]
        out = np.empty((2 * pairs, self.T))
        out[0::2] = y.real
        out[1::2] = y.imag
        return out[:n]


def generate_stationary(spec: CorrelationSpec, T: int, state: np.random.Generator) -> np.ndarray:
    """One exact sample X_1..X_T."""
    return CirculantSampler(spec, T).sample(state, 1)[0]


def cumulative_paths(x) -> np.ndarray:
    """Z_0 = 0, Z_n = Z_(n-1) + X_n along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    z = np.zeros(x.shape[:-1] + (x.shape[-1] + 1,))
    np.cumsum(x, axis=-1, out=z[..., 1:])
    return z


def partial_sums(x, meta: dict | None = None) -> ProcessPath:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("partial_sums takes a single sequence; use cumulative_paths for batches")
    return ProcessPath(cumulative_paths(x), dict(meta or {"family": "lrd"}))


def lrd_batch(sampler: CirculantSampler, n: int, state: np.random.Generator) -> np.ndarray:
    return cumulative_paths(sampler.sample(state, n))
