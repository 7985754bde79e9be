"""Replicated simulation and the estimators built on it.

A run draws ``replicas`` paths up to the largest horizon of a grid and
evaluates every statistic on the nested prefixes, so estimates at different
horizons, boundaries and tail thresholds share their samples.  Replicas are
split into fixed-size batches; batch ``b`` owns stream ``b`` of the master
seed and the batch tallies are added in batch order, which makes the result
independent of how many worker processes ran the batches.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

from persistmc.functionals import BatchStats, ShiftRow, batch_stats, boundary_shift_check
from persistmc.gaussian import CirculantSampler, CorrelationSpec, lrd_batch
from persistmc.rng import NOISE, WALK, StreamKey, derive_stream
from persistmc.scenery import rwrs_batch
from persistmc.walks import WalkKind

log = logging.getLogger(__name__)

WILSON_Z = 1.959963984540054


class FitError(ValueError):
    pass


# -- processes ----------------------------------------------------------------

@lru_cache(maxsize=16)
def _sampler(spec: CorrelationSpec, T: int) -> CirculantSampler:
    return CirculantSampler(spec, T)


@dataclass(frozen=True)
class ProcessSpec:
    """Either an LRD Gaussian partial-sum process or an RWRS."""

    family: str
    corr: CorrelationSpec | None = None
    walk: WalkKind | None = None

    def __post_init__(self):
        if self.family == "lrd" and self.corr is None:
            raise ValueError("lrd process needs a correlation spec")
        if self.family == "rwrs" and self.walk is None:
            raise ValueError("rwrs process needs a walk kind")
        if self.family not in ("lrd", "rwrs"):
            raise ValueError(f"unknown process family {self.family!r}")

    @classmethod
    def fgn(cls, H: float) -> "ProcessSpec":
        return cls("lrd", corr=CorrelationSpec.fgn(H))

    @classmethod
    def rwrs(cls, walk: str | WalkKind) -> "ProcessSpec":
        return cls("rwrs", walk=WalkKind.parse(walk) if isinstance(walk, str) else walk)

    @property
    def hurst(self) -> float:
        return self.corr.hurst if self.family == "lrd" else self.walk.hurst

    @property
    def theta(self) -> float:
        """Persistence exponent predicted by the matching theorem."""
        return 1.0 - self.hurst

    @property
    def params(self) -> str:
        if self.family == "lrd":
            return f"{self.corr.label};K={self.corr.K:g};ell={self.corr.ell}"
        return f"walk={self.walk}"

    def scale_ell(self, t):
        """Slowly varying factor of the natural scaling T^H ell(T)."""
        t = np.asarray(t, dtype=np.float64)
        if self.family == "lrd":
            return self.corr.ell_at(t)
        if self.walk.dim == 2:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.sqrt(np.log(t))
        return np.ones_like(t)

    def persistence_ell(self, t):
        """Slowly varying factor multiplying T^-theta in the persistence theorem."""
        if self.family == "lrd":
            return self.corr.ell_at(t)
        return np.ones_like(np.asarray(t, dtype=np.float64))

    def paths(self, n: int, T: int, seed: int, batch: int, first_replica: int) -> np.ndarray:
        """n paths Z_0..Z_T for batch number ``batch``."""
        if self.family == "lrd":
            rng = derive_stream(StreamKey(seed, batch, NOISE))
            return lrd_batch(_sampler(self.corr, T), n, rng)
        rng = derive_stream(StreamKey(seed, batch, WALK))
        return rwrs_batch(self.walk, T, n, rng, seed, first_replica)

    def describe(self) -> dict:
        d = {"process": self.family, "params": self.params, "hurst": self.hurst,
             "theta": self.theta}
        if self.family == "rwrs":
            d["walk"] = str(self.walk)
            d["stable_index"] = self.walk.stable_index
            d["dim"] = self.walk.dim
        return d


# -- batched runs ---------------------------------------------------------------

def default_batch_size(T_max: int) -> int:
    b = 2**22 // max(T_max, 1)
    return int(max(16, min(4096, b - b % 2)))


@dataclass
class RunPlan:
    grid: tuple
    replicas: int
    seed: int
    boundaries: tuple = (0.0,)
    tail_ns: tuple | None = None  # one tuple of thresholds per horizon
    batch_size: int | None = None

    def __post_init__(self):
        self.grid = tuple(int(t) for t in self.grid)
        if not self.grid or self.grid[0] < 1 or any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly increasing horizons >= 1")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        self.boundaries = tuple(sorted({0.0, *(float(a) for a in self.boundaries)}))
        if self.tail_ns is None:
            self.tail_ns = tuple((1, 2, math.ceil(t**0.1), t + 1) for t in self.grid)
        self.tail_ns = tuple(tuple(int(n) for n in ns) for ns in self.tail_ns)
        if len(self.tail_ns) != len(self.grid) or len({len(ns) for ns in self.tail_ns}) != 1:
            raise ValueError("tail_ns needs the same number of thresholds for every horizon")
        for t, ns in zip(self.grid, self.tail_ns):
            if any(not 1 <= n <= t + 1 for n in ns):
                raise ValueError(f"tail thresholds for T={t} must lie in [1, T+1]")
        if self.batch_size is None:
            self.batch_size = default_batch_size(self.grid[-1])

    @property
    def n_batches(self) -> int:
        return -(-self.replicas // self.batch_size)


@dataclass
class Tally:
    """Per-horizon counters, sums and centred second moments over a set of replicas.

    ``x_m2`` is the sum of squared deviations from the mean; two tallies
    combine with the pairwise update of Chan, Golub and LeVeque.
    """

    n: int
    hits: np.ndarray         # [G, A]   max_{1..T} Z <= a
    hits_prev: np.ndarray    # [G, A]   max_{1..T-1} Z <= a
    joint: np.ndarray        # [G, A, A] both of the above (a_i at T, a_j at T-1)
    tau_lt: np.ndarray       # [G, K]
    occ_lt: np.ndarray       # [G, K]
    phi0: np.ndarray
    phi0_m2: np.ndarray
    phi1: np.ndarray
    phi1_m2: np.ndarray
    psi: np.ndarray
    psi_m2: np.ndarray
    sup: np.ndarray
    sup_m2: np.ndarray
    exp_neg_sup: np.ndarray
    violations: dict = field(default_factory=dict)

    def __add__(self, other: "Tally") -> "Tally":
        kw = {}
        na, nb = self.n, other.n
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if f.name == "violations":
                kw[f.name] = {k: a.get(k, 0) + b.get(k, 0) for k in sorted(set(a) | set(b))}
            elif f.name.endswith("_m2"):
                base = f.name[:-3]
                with np.errstate(invalid="ignore"):
                    delta = getattr(other, base) / nb - getattr(self, base) / na
                    kw[f.name] = a + b + delta**2 * (na * nb / (na + nb))
            else:
                kw[f.name] = a + b
        return Tally(**kw)


def _m2(x: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return ((x - x.mean(axis=0)) ** 2).sum(axis=0)


def tally_batch(st: BatchStats, plan: RunPlan) -> Tally:
    a = np.asarray(plan.boundaries)
    ns = np.asarray(plan.tail_ns)                        # [G, K]
    below = st.max1[:, :, None] <= a                     # [n, G, A]
    below_prev = st.max1_prev[:, :, None] <= a
    joint = np.einsum("rga,rgb->gab", below.astype(np.int64), below_prev.astype(np.int64))
    tau_lt = st.tau[:, :, None] < ns[None]               # [n, G, K]
    occ_lt = st.occ[:, :, None] < ns[None]
    persist = (st.max1 <= 0.0)[:, :, None]
    phi0, phi1, psi, sup = st.phi0, st.phi1, st.psi, st.sup
    bound = np.exp(-sup)
    viol = {
        "persist_without_tau_lt": int(np.count_nonzero(persist & ~tau_lt)),
        "persist_without_occ_lt": int(np.count_nonzero(persist & ~occ_lt)),
        "phi1_below_phi0": int(np.count_nonzero(phi1 < phi0)),
        "phi0_above_exp_neg_sup": int(np.count_nonzero(phi0 > bound * (1 + 1e-12))),
        "phi0_outside_unit": int(np.count_nonzero((phi0 <= 0) | (phi0 > 1))),
    }
    return Tally(
        n=st.max1.shape[0],
        hits=below.sum(axis=0), hits_prev=below_prev.sum(axis=0), joint=joint,
        tau_lt=tau_lt.sum(axis=0), occ_lt=occ_lt.sum(axis=0),
        phi0=phi0.sum(axis=0), phi0_m2=_m2(phi0),
        phi1=phi1.sum(axis=0), phi1_m2=_m2(phi1),
        psi=psi.sum(axis=0), psi_m2=_m2(psi),
        sup=sup.sum(axis=0), sup_m2=_m2(sup),
        exp_neg_sup=bound.sum(axis=0), violations=viol,
    )


def _run_batch(args) -> Tally:
    process, plan, b = args
    first = b * plan.batch_size
    n = min(plan.batch_size, plan.replicas - first)
    z = process.paths(n, plan.grid[-1], plan.seed, b, first)
    return tally_batch(batch_stats(z, plan.grid), plan)


def simulate(process: ProcessSpec, plan: RunPlan, workers: int = 1, progress=None) -> "GridResult":
    """Run all batches of ``plan`` and fold their tallies in batch order."""
    jobs = [(process, plan, b) for b in range(plan.n_batches)]
    total = None
    if workers <= 1:
        results = map(_run_batch, jobs)
        for i, t in enumerate(results):
            total = t if total is None else total + t
            if progress:
                progress(i + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, t in enumerate(pool.map(_run_batch, jobs, chunksize=1)):
                total = t if total is None else total + t
                if progress:
                    progress(i + 1, len(jobs))
    return GridResult(process, plan, total)


# -- estimates ------------------------------------------------------------------

def wilson_interval(hits: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class PersistenceEstimate:
    T: int
    a: float
    hits: int
    n: int
    p_hat: float
    ci_low: float
    ci_high: float

    @classmethod
    def from_counts(cls, T: int, a: float, hits: int, n: int) -> "PersistenceEstimate":
        lo, hi = wilson_interval(int(hits), int(n))
        p = float(hits) / float(n)
        return cls(int(T), float(a), int(hits), int(n), p, min(lo, p), max(hi, p))

    @property
    def low_count(self) -> bool:
        """True when no replica persisted; rerun with more replicas."""
        return self.hits == 0

    def covers(self, p: float) -> bool:
        return self.ci_low <= p <= self.ci_high


@dataclass(frozen=True)
class PhiEstimate:
    T: int
    n: int
    mean_from0: float
    se_from0: float
    mean_from1: float
    se_from1: float
    scaled_from0: float
    scaled_from1: float
    psi_mean: float
    psi_se: float


@dataclass(frozen=True)
class SupExpectationEstimate:
    T: int
    n: int
    mean_sup: float
    se_sup: float
    kappa_hat: float
    se: float


@dataclass(frozen=True)
class TailRow:
    T: int
    threshold: int
    n: int
    p_tau_lt: float
    p_occ_lt: float
    p_persist: float


def _mean_se(s, m2, n):
    m = s / n
    var = m2 / max(n - 1, 1)
    return float(m), float(math.sqrt(var / n)) if np.isfinite(var) else math.nan


@dataclass
class GridResult:
    process: ProcessSpec
    plan: RunPlan
    tally: Tally

    def _a_index(self, a: float) -> int:
        try:
            return self.plan.boundaries.index(float(a))
        except ValueError:
            raise KeyError(f"boundary {a} was not part of the run") from None

    def persistence(self, a: float = 0.0) -> list[PersistenceEstimate]:
        i = self._a_index(a)
        return [PersistenceEstimate.from_counts(t, a, self.tally.hits[g, i], self.tally.n)
                for g, t in enumerate(self.plan.grid)]

    def persistence_prev(self, b: float = 0.0) -> list[PersistenceEstimate]:
        """Estimates of p(T-1, b) on the same samples (T-1 = 0 gives 1)."""
        i = self._a_index(b)
        return [PersistenceEstimate.from_counts(t - 1, b, self.tally.hits_prev[g, i], self.tally.n)
                for g, t in enumerate(self.plan.grid)]

    def phi(self) -> list[PhiEstimate]:
        tl, n, H = self.tally, self.tally.n, self.process.hurst
        out = []
        for g, t in enumerate(self.plan.grid):
            m0, s0 = _mean_se(tl.phi0[g], tl.phi0_m2[g], n)
            m1, s1 = _mean_se(tl.phi1[g], tl.phi1_m2[g], n)
            mp, sp = _mean_se(tl.psi[g], tl.psi_m2[g], n)
            scale = t ** (1.0 - H) / float(self.process.scale_ell(t))
            out.append(PhiEstimate(t, n, m0, s0, m1, s1, m0 * scale, m1 * scale, mp, sp))
        return out

    def sup(self) -> list[SupExpectationEstimate]:
        tl, n, H = self.tally, self.tally.n, self.process.hurst
        out = []
        for g, t in enumerate(self.plan.grid):
            m, s = _mean_se(tl.sup[g], tl.sup_m2[g], n)
            with np.errstate(divide="ignore", invalid="ignore"):
                norm = t**H * float(self.process.scale_ell(t))
            k = m / norm if norm > 0 else float("nan")
            out.append(SupExpectationEstimate(t, n, m, s, k, s / norm if norm > 0 else float("nan")))
        return out

    def mean_exp_neg_sup(self) -> list[float]:
        return [float(v / self.tally.n) for v in self.tally.exp_neg_sup]

    def tails(self) -> list[TailRow]:
        tl, n = self.tally, self.tally.n
        i0 = self._a_index(0.0)
        rows = []
        for g, t in enumerate(self.plan.grid):
            for k, m in enumerate(self.plan.tail_ns[g]):
                rows.append(TailRow(t, m, n, float(tl.tau_lt[g, k] / n), float(tl.occ_lt[g, k] / n),
                                    float(tl.hits[g, i0] / n)))
        return rows

    def boundary_shift(self, a: float, b: float = 0.0) -> list[ShiftRow]:
        ia, ib, i0 = self._a_index(a), self._a_index(b), self._a_index(0.0)
        tl = self.tally
        return boundary_shift_check(self.plan.grid, [tl.n] * len(self.plan.grid),
                                    tl.hits[:, ia], tl.hits_prev[:, ib], a, b,
                                    hits_zero=tl.hits[:, i0], joint_hits=tl.joint[:, ia, ib])

    @property
    def violations(self) -> dict:
        return dict(self.tally.violations)


# -- thin single-purpose wrappers -------------------------------------------------

def estimate_persistence(process: ProcessSpec, T: int, a: float, n_replicas: int, seed: int,
                         workers: int = 1) -> PersistenceEstimate:
    if n_replicas < 100:
        raise ValueError("use at least 100 replicas")
    res = simulate(process, RunPlan((T,), n_replicas, seed, (a,)), workers)
    est = res.persistence(a)[0]
    if est.low_count:
        warnings.warn(f"no persisting replica at T={T}, a={a}; increase the replica count")
    return est


def estimate_phi(process: ProcessSpec, grid, n_replicas: int, seed: int,
                 workers: int = 1) -> list[PhiEstimate]:
    grid = list(grid)
    head = []
    if grid and grid[0] == 0:
        # only the l = 0 term: Z_0 = 0
        head = [PhiEstimate(0, n_replicas, 1.0, 0.0, math.inf, 0.0, 0.0, math.inf, math.nan, math.nan)]
        grid = grid[1:]
    if not grid:
        return head
    return head + simulate(process, RunPlan(grid, n_replicas, seed), workers).phi()


def estimate_sup_expectation(process: ProcessSpec, grid, n_replicas: int, seed: int,
                             workers: int = 1) -> list[SupExpectationEstimate]:
    return simulate(process, RunPlan(grid, n_replicas, seed), workers).sup()


def estimate_tail_tau_N(process: ProcessSpec, T: int, n_values, n_replicas: int, seed: int,
                        workers: int = 1) -> list[TailRow]:
    plan = RunPlan((T,), n_replicas, seed, tail_ns=(tuple(n_values),))
    return simulate(process, plan, workers).tails()


# -- exponent fits ----------------------------------------------------------------

@dataclass(frozen=True)
class ExponentFit:
    theta_hat: float
    intercept: float
    stderr: float
    grid: tuple
    weights: tuple
    residuals: tuple
    log_correction: str = "none"
    drift: float | None = None
    theta_theory: float | None = None

    @property
    def in_band(self) -> bool | None:
        if self.drift is None or self.theta_theory is None:
            return None
        return abs(self.theta_theory - self.theta_hat) <= self.drift


def fit_exponent(estimates, log_correction: str = "none", ell=None, c: float = 1.0,
                 theta: float | None = None) -> ExponentFit:
    """Weighted least squares of log p_hat on log T; the slope is -theta_hat.

    Weights are inverse delta-method variances (1 - p)/(n p), floored at
    (1/n)^2.  ``ell`` (a callable) is divided out of p before fitting.  With
    ``log_correction="sqrt-log-band"`` the fit also carries the corridor
    half-width c sqrt(log T_max)/log T_max around theta_hat.
    """
    if log_correction not in ("none", "sqrt-log-band"):
        raise ValueError(f"unknown log correction {log_correction!r}")
    usable = [e for e in estimates if e.p_hat > 0]
    if len(usable) < len(estimates):
        warnings.warn(f"dropped {len(estimates) - len(usable)} zero-hit horizon(s) from the fit")
    if len({e.T for e in usable}) < 2:
        raise FitError("need at least two distinct horizons with hits to fit an exponent")
    if any(e.hits < 30 for e in usable):
        warnings.warn("some horizons have fewer than 30 hits; the delta-method weights are unreliable")
    T = np.array([e.T for e in usable], dtype=np.float64)
    p = np.array([e.p_hat for e in usable])
    n = np.array([e.n for e in usable], dtype=np.float64)
    x = np.log(T)
    y = np.log(p)
    if ell is not None:
        y = y - np.log(ell(T))
    var = np.maximum((1.0 - p) / (n * p), (1.0 / n) ** 2)
    w = 1.0 / var
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    m = len(x)
    inflate = 1.0
    if m > 2:
        inflate = max(1.0, math.sqrt(float(np.sum(w * resid**2)) / (m - 2)))
    stderr = inflate / math.sqrt(sxx)
    drift = None
    if log_correction == "sqrt-log-band":
        lt = math.log(T.max())
        drift = c * math.sqrt(lt) / lt
    return ExponentFit(float(-slope), float(intercept), float(stderr),
                       tuple((int(t), float(q)) for t, q in zip(T, p)),
                       tuple(float(v) for v in w), tuple(float(r) for r in resid),
                       log_correction, drift, theta)


def log_slope(T, values) -> tuple[float, float]:
    """Ordinary least-squares slope of log(values) on log(T) and its standard error."""
    x = np.log(np.asarray(T, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    if len(x) < 2:
        raise FitError("need at least two points")
    xm = x.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - y.mean())) / sxx
    resid = y - y.mean() - slope * (x - xm)
    se = math.sqrt(np.sum(resid**2) / (len(x) - 2) / sxx) if len(x) > 2 else float("nan")
    return float(slope), se
