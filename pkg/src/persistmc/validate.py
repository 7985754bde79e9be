"""Invariant suite behind ``persistmc validate``.

Each check has a stable identifier (``RNG-03``, ``SCN-04`` ...).  Quick
checks are deterministic identities and small Monte Carlo runs; the full
tier adds the larger statistical checks.  A check fails by raising
:class:`CheckFailed` (or any exception) with a message naming what broke.
"""
from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import comb, ndtr
from scipy.stats import ks_2samp

from persistmc import io as rio
from persistmc.estimation import (PersistenceEstimate, ProcessSpec, RunPlan, estimate_persistence,
                                  fit_exponent, simulate, wilson_interval)
from persistmc.functionals import batch_stats, compute_stats
from persistmc.gaussian import (CorrelationSpec, EmbeddingError, CirculantSampler, fgn_correlation,
                                generate_stationary, partial_sum_covariance, partial_sums,
                                variance_sum)
from persistmc.rng import (StreamKey, WALK, derive_stream, sample_standard_gaussian,
                           site_gaussian, site_gaussians)
from persistmc.scenery import conditional_covariance, rwrs_batch, rwrs_path
from persistmc.walks import (WalkKind, draw_steps, green_at_origin, heavy_step_constant,
                             mean_self_intersection, sample_heavy_step, simulate_walk,
                             steps_to_increments, walk_from_positions)

KINDS = ("srw1", "srw2", "srw3", "heavy:1.5")
WATSON_G = 1.516386059151978


class CheckFailed(AssertionError):
    pass


def expect(cond, msg: str) -> None:
    if not cond:
        raise CheckFailed(msg)


@dataclass(frozen=True)
class CheckResult:
    id: str
    title: str
    ok: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.ok else "FAIL"
        return f"{tag} {self.id} {self.title}" + (f": {self.detail}" if self.detail else "")


@dataclass(frozen=True)
class Context:
    seed: int
    quick: bool

    def rng(self, stream: int) -> np.random.Generator:
        return derive_stream(StreamKey(self.seed, 10_000 + stream, 7))

    def size(self, quick: int, full: int) -> int:
        return quick if self.quick else full


_REGISTRY: list = []


def check(cid: str, title: str, full_only: bool = False):
    def deco(fn):
        _REGISTRY.append((cid, title, full_only, fn))
        return fn
    return deco


# -- random streams and scenery -------------------------------------------------------

@check("RNG-01", "same stream key gives the same stream")
def _rng_det(ctx):
    a = derive_stream(StreamKey(1, 0, 0)).random(100)
    b = derive_stream(StreamKey(1, 0, 0)).random(100)
    expect(np.array_equal(a, b), "outputs differ")
    g = derive_stream(StreamKey(1, 0, 0))
    x = sample_standard_gaussian(g)
    expect(x == sample_standard_gaussian(derive_stream(StreamKey(1, 0, 0))), "gaussian not repeatable")


@check("RNG-02", "distinct seeds give distinct streams")
def _rng_distinct(ctx):
    a = derive_stream(StreamKey(1, 0, 0)).integers(0, 2**63)
    b = derive_stream(StreamKey(2, 0, 0)).integers(0, 2**63)
    expect(a != b, "first outputs coincide")


@check("RNG-03", "sibling streams are uncorrelated")
def _rng_xcorr(ctx):
    n = ctx.size(10**5, 10**6)
    a = derive_stream(StreamKey(1, 0, 0)).standard_normal(n)
    b = derive_stream(StreamKey(1, 1, 0)).standard_normal(n)
    rho = np.corrcoef(a, b)[0, 1]
    expect(abs(rho) < 4 / math.sqrt(n), f"rho={rho:.5f}")
    return f"rho={rho:.2e}"


def _moments(x, label):
    n = x.size
    m, v = x.mean(), x.var(ddof=1)
    expect(abs(m) < 4 / math.sqrt(n), f"{label} mean {m:.5f}")
    expect(abs(v - 1) < 6 / math.sqrt(n), f"{label} variance {v:.5f}")
    return f"mean={m:.4f} var={v:.4f}"


@check("RNG-04", "stream normals have unit moments")
def _rng_moments(ctx):
    return _moments(derive_stream(StreamKey(ctx.seed, 3, 0)).standard_normal(ctx.size(10**5, 10**6)),
                    "stream")


@check("RNG-05", "scenery is independent of visit order")
def _scn_order(ctx):
    sites = np.array([[5, -3], [0, 0], [5, -3], [-7, 2], [1, 1]])
    fwd = site_gaussians(ctx.seed, sites)
    rev = site_gaussians(ctx.seed, sites[::-1])[::-1]
    expect(np.array_equal(fwd, rev), "order changed a value")
    expect(fwd[0] == fwd[2] == site_gaussian(ctx.seed, (5, -3)), "revisit re-drew")


@check("RNG-06", "scenery values have unit moments")
def _scn_moments(ctx):
    n = ctx.size(10**5, 10**6)
    coords = np.stack([np.arange(n) - n // 2, np.arange(n) % 7, np.zeros(n, dtype=np.int64)], axis=1)
    return _moments(site_gaussians(ctx.seed, coords), "scenery")


@check("RNG-07", "scenery at neighbouring sites is uncorrelated across seeds")
def _scn_indep(ctx):
    n = ctx.size(2 * 10**4, 10**6)
    a = np.empty(n)
    b = np.empty(n)
    for s in range(n):
        a[s], b[s] = site_gaussians(s, [[0], [1]])
    rho = np.corrcoef(a, b)[0, 1]
    expect(abs(rho) < 4 / math.sqrt(n), f"rho={rho:.5f}")
    return f"rho={rho:.2e}"


@check("RNG-08", "out-of-range coordinates are rejected")
def _scn_range(ctx):
    try:
        site_gaussian(0, (2**31, 0))
    except OverflowError:
        return
    raise CheckFailed("no error for |x| = 2**31")


# -- walks ----------------------------------------------------------------------------

@check("WLK-01", "hand-counted walk examples")
def _wlk_examples(ctx):
    w = walk_from_positions([0, 1, 0])
    expect(w.local_times == {(1,): 1, (0,): 1} and w.self_intersections[-1] == 2, "S=(0,1,0)")
    w = walk_from_positions([0, 1, 0, 1])
    expect(int(w.self_intersections[2]) == 5, f"V_3={w.self_intersections[2]}")
    expect(conditional_covariance(w, 2, 3) == 3, "sum N_2 N_3 != 3")
    expect(conditional_covariance(w, 3, 3) == 5 and conditional_covariance(w, 0, 3) == 0, "edge cases")
    for kind in KINDS:
        expect(simulate_walk(WalkKind.parse(kind), 1, ctx.rng(1)).self_intersections[0] == 1, "V_1 != 1")


def _sample_walks(ctx, kind, n, T, stream):
    rng = ctx.rng(stream)
    return [simulate_walk(WalkKind.parse(kind), T, rng) for _ in range(n)]


@check("WLK-02", "local-time and self-intersection invariants")
def _wlk_invariants(ctx):
    n, T = ctx.size(100, 1000), ctx.size(200, 1000)
    for i, kind in enumerate(KINDS):
        for w in _sample_walks(ctx, kind, n, T, 20 + i):
            expect(sum(w.local_times.values()) == T, f"{kind}: sum N_T != T")
            V = w.self_intersections
            m = np.arange(1, T + 1)
            expect(np.all(V >= m) and np.all(V <= m * m), f"{kind}: n <= V_n <= n^2 broken")
            ids = w.site_ids
            for k in (1, T // 3, T):
                counts = np.bincount(ids[:k])
                expect(int(np.dot(counts, counts)) == V[k - 1], f"{kind}: V_{k} mismatch")
            prev = w.local_time_vector(T // 2)
            expect(np.all(w.local_time_vector(T) >= prev), f"{kind}: local time decreased")


@check("WLK-03", "nonnegative conditional covariances on random (l, k) pairs")
def _wlk_slepian(ctx):
    n, T = ctx.size(50, 1000), ctx.size(200, 1000)
    for i, kind in enumerate(KINDS):
        rng = ctx.rng(40 + i)
        for w in _sample_walks(ctx, kind, n, T, 30 + i):
            for _ in range(100):
                l, k = sorted(rng.integers(0, T + 1, size=2))
                Nl, Nk = w.local_time_vector(l), w.local_time_vector(k)
                expect(np.dot(Nl, Nk) >= 0 and np.dot(Nl, Nk - Nl) >= 0, f"{kind}: l={l}, k={k}")


@check("WLK-04", "heavy-tail step constant")
def _wlk_constant(ctx):
    # zeta(2.5) from partial sums plus the integral tail bound
    K = 10**6
    s = np.sum(np.arange(1, K + 1, dtype=np.float64) ** -2.5) + (K + 0.5) ** -1.5 / 1.5
    c = heavy_step_constant(1.5)
    expect(abs(c - 1 / (2 * s)) < 1e-9, f"c={c}")
    expect(abs(c - 0.37275) < 1e-4, f"c={c:.6f} vs 0.37275")
    return f"c={c:.6f}"


@check("WLK-05", "heavy-tail step symmetry and tail mass", full_only=True)
def _wlk_heavy(ctx):
    n = 10**7
    x = sample_heavy_step(1.5, ctx.rng(5), size=n)
    sd = x.std()
    expect(abs(x.mean()) < 4 * sd / math.sqrt(n), f"mean {x.mean():.4f}")
    c = heavy_step_constant(1.5)
    ratio = np.mean(np.abs(x) > 100) * 100**1.5 / (2 * c / 1.5)
    expect(0.8 <= ratio <= 1.25, f"tail ratio {ratio:.3f}")
    expect(not np.any(x == 0), "zero step drawn")
    return f"tail ratio={ratio:.3f}"


@check("WLK-06", "Green function edge cases")
def _wlk_green(ctx):
    expect(green_at_origin(0, 10, ctx.seed).value == 1.0, "T=0 must give 1")
    try:
        green_at_origin(10, 10, ctx.seed, kind=WalkKind("srw2"))
    except ValueError:
        return
    raise CheckFailed("recurrent walk accepted")


@check("WLK-07", "self-intersection growth rates", full_only=True)
def _wlk_growth(ctx):
    Ts = [2**10, 2**12, 2**14]
    est = [mean_self_intersection(WalkKind("srw1"), t, 4000, ctx.seed) for t in Ts]
    slope = np.polyfit(np.log(Ts), np.log([e.value for e in est]), 1)[0]
    expect(abs(slope - 1.5) <= 0.1, f"srw1 slope {slope:.3f}")
    e12, e14 = (mean_self_intersection(WalkKind("srw3"), t, 2000, ctx.seed) for t in Ts[1:])
    r = (e14.value / Ts[2]) / (e12.value / Ts[1])
    expect(abs(r - 1) <= 0.1, f"srw3 V_T/T ratio {r:.3f}")
    return f"slope={slope:.3f} ratio={r:.3f}"


@check("WLK-08", "Green function of the 3d walk", full_only=True)
def _wlk_green3(ctx):
    T = 10**4
    g = green_at_origin(T, 2 * 10**4, ctx.seed)
    # remaining return probability beyond T, from the local limit theorem
    tail = 2 * (3 / (2 * math.pi)) ** 1.5 / math.sqrt(T)
    target = WATSON_G - tail
    expect(abs(g.value - target) < 0.01 + 3 * g.se, f"G_T={g.value:.4f} target {target:.4f}")
    return f"G_T={g.value:.4f}+-{g.se:.4f} sigma2={g.sigma2:.4f}"


# -- scenery ----------------------------------------------------------------------------

@check("SCN-01", "increments equal the scenery at the current site")
def _scn_increments(ctx):
    for i, kind in enumerate(KINDS):
        w = simulate_walk(WalkKind.parse(kind), 300, ctx.rng(50 + i))
        z = rwrs_path(w, ctx.seed, stream=3).values
        xi = site_gaussians(ctx.seed, w.positions[1:].reshape(300, -1), 3)
        # Z is a running double sum, so the difference recovers xi up to rounding
        tol = 4 * np.finfo(float).eps * max(1.0, np.abs(z).max())
        expect(np.all(np.abs(np.diff(z) - xi) <= tol), f"{kind}: increments differ")
        expect(np.array_equal(np.cumsum(xi), z[1:]), f"{kind}: Z is not the running sum of xi")
        N = w.local_times
        direct = sum(c * site_gaussian(ctx.seed, np.atleast_1d(np.asarray(s)), 3) for s, c in N.items())
        expect(abs(direct - z[-1]) < 1e-9 * max(1, abs(z[-1])), f"{kind}: sum N_T(x) xi_x mismatch")
    w = walk_from_positions([0, 1, 0, 1])
    z = rwrs_path(w, ctx.seed).values
    x0, x1 = site_gaussian(ctx.seed, (0,)), site_gaussian(ctx.seed, (1,))
    expect(abs(z[3] - (2 * x1 + x0)) < 1e-12, "Z_3 != 2 xi_1 + xi_0")


@check("SCN-02", "batched and per-path assembly agree")
def _scn_batch(ctx):
    for kind in KINDS:
        k = WalkKind.parse(kind)
        rng_a = derive_stream(StreamKey(ctx.seed, 5, WALK))
        zb = rwrs_batch(k, 100, 8, rng_a, ctx.seed, 40)
        rng_b = derive_stream(StreamKey(ctx.seed, 5, WALK))
        steps = draw_steps(k, 100, rng_b, n=8)
        pos = np.cumsum(steps_to_increments(k, steps), axis=1)
        for r in range(8):
            p = np.concatenate([np.zeros((1,) + pos.shape[2:], dtype=pos.dtype), pos[r]])
            z = rwrs_path(walk_from_positions(p, k), ctx.seed, stream=40 + r).values
            expect(np.array_equal(z, zb[r]), f"{kind}: row {r} differs")


def _scenery_replicas(w, m, seed, first=0):
    """m scenery replicas of Z along a fixed walk: an (m, T) array."""
    coords = w.sites
    D = len(coords)
    xi = site_gaussians(seed, np.tile(coords, (m, 1)), np.repeat(np.arange(first, first + m), D))
    return np.cumsum(xi.reshape(m, D)[:, w.site_ids], axis=1)


@check("SCN-03", "conditional variance of Z_T equals V_T")
def _scn_condvar(ctx):
    m = 10**5
    for i, kind in enumerate(("srw1", "srw3")):
        w = simulate_walk(WalkKind(kind), 64, ctx.rng(60 + i))
        counts = np.array(list(w.local_times.values()), dtype=np.float64)
        coords = w.sites.reshape(len(w.sites), -1)
        zt = np.zeros(m)
        for j, c in enumerate(counts):
            zt += c * site_gaussians(ctx.seed, np.repeat(coords[j:j + 1], m, axis=0), np.arange(m))
        V = w.self_intersections[-1]
        expect(abs(zt.var() / V - 1) < 0.02, f"{kind}: var/V_T = {zt.var() / V:.4f}")


@check("SCN-04", "association bound E[(max_k Z_k)^2 | S] <= V_T")
def _scn_assoc(ctx):
    walks, m, T = ctx.size(20, 100), ctx.size(500, 2000), 128
    worst = 0.0
    for i, kind in enumerate(KINDS):
        for j, w in enumerate(_sample_walks(ctx, kind, walks, T, 70 + i)):
            z = _scenery_replicas(w, m, ctx.seed + j)
            mx2 = z.max(axis=1) ** 2
            se = mx2.std(ddof=1) / math.sqrt(m)
            V = w.self_intersections[-1]
            expect(mx2.mean() <= V + 3 * se, f"{kind} walk {j}: {mx2.mean():.1f} > V_T={V}")
            worst = max(worst, mx2.mean() / V)
    return f"max ratio={worst:.3f}"


@check("SCN-05", "time reversal preserves the law of max, Z_T and N_T", full_only=True)
def _scn_reversal(ctx):
    n, T = 20000, 64
    for i, kind in enumerate(KINDS):
        k = WalkKind.parse(kind)
        a = rwrs_batch(k, T, n, derive_stream(StreamKey(ctx.seed, 80 + i, WALK)), ctx.seed, 0)
        b = rwrs_batch(k, T, n, derive_stream(StreamKey(ctx.seed, 90 + i, WALK)), ctx.seed, n)
        rb = b[:, ::-1] - b[:, -1:]
        for name, f in (("max", lambda z: z.max(axis=1)), ("final", lambda z: z[:, -1]),
                        ("occupation", lambda z: (z[:, 1:] > 0).sum(axis=1))):
            p = ks_2samp(f(a), f(rb)).pvalue
            expect(p > 0.01 / 3, f"{kind} {name}: KS p={p:.2e}")


@check("SCN-06", "Z_1 has unit variance")
def _scn_z1(ctx):
    n = ctx.size(10**5, 10**6)
    z = rwrs_batch(WalkKind("srw2"), 1, n, ctx.rng(95), ctx.seed, 0)[:, 1]
    return _moments(z, "Z_1")


# -- stationary Gaussian sequences -------------------------------------------------------

@check("GSN-01", "FGN correlation values")
def _gsn_corr(ctx):
    expect(fgn_correlation(0.5, 1) == 0.0, "H=0.5 lag 1")
    expect(abs(fgn_correlation(0.75, 1) - (2**1.5 - 2) / 2) < 1e-15, "H=0.75 lag 1")
    expect(all(fgn_correlation(h, 0) == 1.0 for h in (0.1, 0.5, 0.9)), "r(0) != 1")
    try:
        fgn_correlation(1.0, 1)
    except ValueError:
        return
    raise CheckFailed("H=1 accepted")


@check("GSN-02", "variance sums")
def _gsn_varsum(ctx):
    for n in (1, 10, 100, 1000):
        expect(variance_sum(CorrelationSpec.fgn(0.5), n) == n, f"H=0.5 n={n}")
        v = variance_sum(CorrelationSpec.fgn(0.75), n)
        expect(abs(v / n**1.5 - 1) < 1e-10, f"H=0.75 n={n}: {v}")


@check("GSN-03", "covariance of the reversed path equals the original")
def _gsn_reverse(ctx):
    specs = [CorrelationSpec.fgn(h) for h in (0.3, 0.5, 0.6, 0.75, 0.9)]
    specs.append(CorrelationSpec.from_table([1.0, 0.5, 0.3, 0.2, 0.1], 0.6))
    for spec in specs:
        for T in (1, 7, 64, 256):
            c = partial_sum_covariance(spec, T)
            idx = np.arange(T + 1)
            rev = c[T - idx][:, T - idx] - c[T - idx][:, [T]] - c[[T]][:, T - idx] + c[T, T]
            err = np.max(np.abs(rev - c)) / max(1.0, np.max(np.abs(c)))
            expect(err < 1e-12, f"{spec.label} T={T}: rel err {err:.2e}")
            if spec.hurst >= 0.5:
                expect(np.all(spec.correlations(T + 1) >= 0), f"{spec.label}: negative r")


@check("GSN-04", "empirical covariance matches r(|i-j|)")
def _gsn_cov(ctx):
    # z-scores use the exact sd of a mean-zero sample covariance, sqrt((1 + r^2)/m);
    # 5 sd keeps the family-wise error small over the 2080 distinct entries
    m, T = ctx.size(2 * 10**4, 2 * 10**5), 64
    worst = (0.0, 0.0)
    for i, H in enumerate((0.5, 0.6, 0.75, 0.9)):
        spec = CorrelationSpec.fgn(H)
        x = CirculantSampler(spec, T).sample(ctx.rng(100 + i), m)
        emp = x.T @ x / m
        idx = np.arange(T)
        R = spec.correlations(T)[np.abs(idx[:, None] - idx[None, :])]
        err = np.abs(emp - R)
        z = np.max(err / np.sqrt((1 + R**2) / m))
        expect(z < 5, f"H={H}: max z-score {z:.2f}")
        worst = max(worst, (z, err.max()))
    return f"max z={worst[0]:.2f} max error={worst[1]:.4f}"


@check("GSN-05", "invalid correlation tables are rejected")
def _gsn_invalid(ctx):
    for bad in ([1.0, -0.1], [0.9, 0.1]):
        try:
            CorrelationSpec.from_table(bad, 0.6)
        except ValueError:
            continue
        raise CheckFailed(f"table {bad} accepted")
    spec = CorrelationSpec.from_table([1.0, 1.0, 0.0], 0.6)
    try:
        CirculantSampler(spec, 16)
    except EmbeddingError as exc:
        expect("eigenvalue" in str(exc), "error does not name the eigenvalue")
        return
    raise CheckFailed("indefinite embedding accepted")


@check("GSN-06", "partial sums")
def _gsn_partial(ctx):
    expect(np.array_equal(partial_sums([1.0, -1.0]).values, [0.0, 1.0, 0.0]), "X=(1,-1)")
    expect(np.array_equal(partial_sums([]).values, [0.0]), "empty X")
    x = generate_stationary(CorrelationSpec.fgn(0.7), 50, ctx.rng(110))
    expect(abs(partial_sums(x).values[-1] - math.fsum(x)) < 1e-12, "Z_T != sum X")


@check("GSN-07", "lag-one sample correlations", full_only=True)
def _gsn_lag1(ctx):
    x = generate_stationary(CorrelationSpec.fgn(0.5), 10**6, ctx.rng(120))
    r = np.corrcoef(x[:-1], x[1:])[0, 1]
    expect(abs(r) < 0.004, f"H=0.5 r(1)={r:.5f}")
    s = CirculantSampler(CorrelationSpec.fgn(0.75), 2**14)
    rng = ctx.rng(121)
    num = 0.0
    for _ in range(10):
        y = s.sample(rng, 1000)
        num += np.sum(y[:, :-1] * y[:, 1:]) / (y.shape[1] - 1)
    r1 = num / 10**4
    expect(abs(r1 - fgn_correlation(0.75, 1)) < 0.003, f"H=0.75 r(1)={r1:.5f}")
    return f"r1={r1:.5f}"


# -- path functionals ------------------------------------------------------------------

@check("FUN-01", "hand-computed path statistics")
def _fun_examples(ctx):
    s = compute_stats([0.0, -1.0, -2.0])
    expect(s.persists and s.tau == 0 and s.occupation == 0, "Z=(0,-1,-2) flags")
    expect(abs(s.phi_value_from0 - 1 / (1 + math.exp(-1) + math.exp(-2))) < 1e-15, "phi0")
    s = compute_stats([0.0, 2.0, -1.0])
    expect(not s.persists and s.tau == 1 and s.occupation == 1, "Z=(0,2,-1) flags")
    s = compute_stats(np.zeros(9), psi_points=(1.0, 4.0, 8.0))
    expect(abs(s.phi_value_from0 - 1 / 9) < 1e-15, "zero path phi0")
    expect(all(abs(s.psi_value(x) - math.log(x)) < 1e-14 for x in (1.0, 4.0, 8.0)), "zero path psi")
    try:
        compute_stats([0.0, np.nan])
    except ValueError:
        return
    raise CheckFailed("NaN accepted")


def _naive(z):
    T = len(z) - 1
    mx = max(z[1:])
    tau = min(k for k in range(T + 1) if z[k] == max(z))
    occ = sum(1 for v in z[1:] if v > 0)
    e = [math.exp(v) for v in z]
    return mx, tau, occ, 1 / math.fsum(e), 1 / math.fsum(e[1:])


@check("FUN-02", "one-pass statistics equal naive recomputation")
def _fun_onepass(ctx):
    rng = ctx.rng(130)
    for i in range(ctx.size(200, 1000)):
        T = int(rng.integers(1, 129))
        z = np.concatenate([[0.0], np.cumsum(rng.standard_normal(T) * rng.uniform(0.1, 5))])
        if i % 10 == 0:
            z = np.round(z)  # ties
        mx, tau, occ, p0, p1 = _naive(list(z))
        s = compute_stats(z)
        b = batch_stats(z[None, :], [T])
        for got in ((s.max_1_to_T, s.tau, s.occupation, s.phi_value_from0, s.phi_value_from1),
                    (b.max1[0, 0], b.tau[0, 0], b.occ[0, 0], b.phi0[0, 0], b.phi1[0, 0])):
            expect(got[0] == mx and got[1] == tau and got[2] == occ, f"path {i}: max/tau/occ")
            expect(abs(got[3] - p0) <= 1e-12 * p0 and abs(got[4] - p1) <= 1e-12 * p1, f"path {i}: phi")


@check("FUN-03", "per-path sandwich, monotonicity and phi bounds")
def _fun_sandwich(ctx):
    grid = [1, 2, 5, 16, 64, 128]
    for i, proc in enumerate([ProcessSpec.fgn(0.75), ProcessSpec.rwrs("srw1"), ProcessSpec.rwrs("heavy:1.5")]):
        z = proc.paths(2000, 128, ctx.seed, 200 + i, 0)
        st = batch_stats(z, grid)
        persist = st.max1 <= 0
        expect(not np.any(persist & (st.tau != 0)), f"{proc.params}: persist without tau=0")
        expect(not np.any(persist & (st.occ != 0)), f"{proc.params}: persist without N=0")
        expect(np.all(np.diff(st.max1, axis=1) >= 0), f"{proc.params}: max decreased in T")
        expect(np.all(st.phi1 >= st.phi0), f"{proc.params}: phi1 < phi0")
        up = np.exp(-st.sup)
        lo = up / (np.asarray(grid) + 1)
        expect(np.all(st.phi0 <= up * (1 + 1e-12)) and np.all(st.phi0 >= lo * (1 - 1e-12)),
               f"{proc.params}: phi0 outside its bounds")
        expect(np.all((st.phi0 > 0) & (st.phi0 <= 1)), f"{proc.params}: phi0 outside (0, 1]")
        for a, b in ((-0.5, 0.0), (0.0, 1.0)):
            expect(np.all((st.max1 <= a) <= (st.max1 <= b)), "persistence not monotone in a")


# -- estimation ----------------------------------------------------------------------------

@check("EST-01", "Wilson interval coverage on a Bernoulli stub")
def _est_wilson(ctx):
    reps, n, p = 10**4, 1000, 0.3
    hits = ctx.rng(140).binomial(n, p, size=reps)
    cover = np.mean([lo <= p <= hi for lo, hi in (wilson_interval(int(h), n) for h in hits)])
    expect(0.93 <= cover <= 0.97, f"coverage {cover:.4f}")
    return f"coverage={cover:.4f}"


def _synthetic(p_of_T, Ts, n=10**12):
    return [PersistenceEstimate.from_counts(t, 0.0, round(p_of_T(t) * n), n) for t in Ts]


@check("EST-02", "exponent fit on synthetic power laws")
def _est_fit(ctx):
    Ts = [2**k for k in range(6, 13)]
    exact = [PersistenceEstimate(t, 0.0, 10**9, 10**18, t**-0.25, t**-0.25, t**-0.25) for t in Ts]
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        f = fit_exponent(exact)
    expect(abs(f.theta_hat - 0.25) < 1e-10, f"theta_hat={f.theta_hat}")
    f = fit_exponent(_synthetic(lambda t: t**-0.25 * math.log(t) ** 0.5, Ts), "sqrt-log-band",
                     theta=0.25)
    expect(f.theta_hat < 0.25 and f.in_band, f"theta_hat={f.theta_hat:.4f} drift={f.drift:.4f}")
    try:
        fit_exponent(_synthetic(lambda t: 0.5, [64]))
    except ValueError:
        return
    raise CheckFailed("single horizon accepted")


@check("EST-03", "Sparre-Andersen probabilities inside Wilson intervals")
def _est_sparre(ctx):
    n = ctx.size(10**5, 10**6)
    res = simulate(ProcessSpec.fgn(0.5), RunPlan(range(1, 7), n, ctx.seed))
    for e in res.persistence(0.0):
        exact = comb(2 * e.T, e.T, exact=True) / 4**e.T
        # six shared-sample intervals: a 99.99% Wilson interval each
        lo, hi = wilson_interval(e.hits, e.n, z=3.9)
        expect(lo <= exact <= hi, f"T={e.T}: {exact} not in [{lo:.5f}, {hi:.5f}]")


@check("EST-04", "shared-sample inequalities and monotonicity")
def _est_shared(ctx):
    for i, proc in enumerate([ProcessSpec.fgn(0.75), ProcessSpec.rwrs("srw2")]):
        plan = RunPlan((4, 16, 64), ctx.size(5000, 50000), ctx.seed + i, (-0.5, 0.0, 1.0),
                       tail_ns=((1, 2, 5), (1, 2, 17), (1, 2, 65)))
        res = simulate(proc, plan)
        expect(not any(res.violations.values()), f"{proc.params}: {res.violations}")
        for a in plan.boundaries:
            p = [e.p_hat for e in res.persistence(a)]
            expect(all(y <= x for x, y in zip(p, p[1:])), f"{proc.params}: not monotone in T")
        for g in range(3):
            h = [res.tally.hits[g, res._a_index(a)] for a in (-0.5, 0.0, 1.0)]
            expect(h == sorted(h), f"{proc.params}: not monotone in a")
        for r in res.tails():
            expect(r.p_persist <= r.p_tau_lt and r.p_persist <= r.p_occ_lt, "tail sandwich")
            if r.threshold == r.T + 1:
                expect(r.p_tau_lt == 1.0 and r.p_occ_lt == 1.0, "n = T+1 tails must be 1")
        for ph, b in zip(res.phi(), res.mean_exp_neg_sup()):
            expect(ph.mean_from0 <= b, "mean phi0 above mean exp(-sup)")


@check("EST-05", "results do not depend on the worker count")
def _est_workers(ctx):
    plan = RunPlan((8, 32), 3000, ctx.seed, (0.0, 1.0), batch_size=256)
    a = simulate(ProcessSpec.rwrs("heavy:1.5"), plan, workers=1)
    b = simulate(ProcessSpec.rwrs("heavy:1.5"), plan, workers=2)
    for f in ("hits", "joint", "phi0", "psi", "sup_m2", "tau_lt"):
        expect(np.array_equal(getattr(a.tally, f), getattr(b.tally, f)), f"{f} differs")


@check("EST-06", "single-step horizon: p(1, a) = Phi(a), E[max(0, Z_1)] = 1/sqrt(2 pi)")
def _est_t1(ctx):
    n = ctx.size(10**5, 10**6)
    for i, proc in enumerate([ProcessSpec.fgn(0.75), ProcessSpec.rwrs("srw3")]):
        res = simulate(proc, RunPlan((1,), n, ctx.seed + 7 * i, (0.0, 1.0)))
        for a in (0.0, 1.0):
            e = res.persistence(a)[0]
            p = float(ndtr(a))
            expect(abs(e.p_hat - p) < 4 * math.sqrt(p * (1 - p) / n), f"{proc.params} a={a}: {e.p_hat:.4f}")
        s = res.sup()[0]
        target = 1 / math.sqrt(2 * math.pi)
        expect(abs(s.mean_sup - target) < 4 * s.se_sup, f"{proc.params}: E[sup]={s.mean_sup:.4f}")


@check("EST-07", "zero-hit estimates are flagged")
def _est_zero(ctx):
    import warnings
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        e = estimate_persistence(ProcessSpec.fgn(0.6), 4, -40.0, 200, ctx.seed)
    expect(e.hits == 0 and e.low_count and e.ci_low == 0.0 and e.ci_high > 0, str(e))
    expect(any("replica" in str(x.message) for x in w), "no warning issued")


@check("EST-08", "boundary-shift lower bound at small horizons")
def _est_shift(ctx):
    res = simulate(ProcessSpec.fgn(0.5), RunPlan((1, 2, 4, 8), ctx.size(10**5, 10**6), ctx.seed, (0.0, 1.0)))
    for a in (0.0, 1.0):
        bad = [r.T for r in res.boundary_shift(a, 0.0) if r.violated]
        expect(not bad, f"a={a}: violated at T={bad}")
    p41 = res.persistence(1.0)[2]
    expect(p41.ci_high >= ndtr(1.0) * 0.3125, "p(4,1) below Phi(1) p(3,0)")


@check("CLI-01", "output files round-trip and are worker-independent")
def _cli_roundtrip(ctx):
    from persistmc.cli import main

    with tempfile.TemporaryDirectory() as d:
        args = ["persistence", "--process", "rwrs", "--walk", "srw1", "--tmin", "2", "--tmax", "5",
                "--replicas", "4000", "--seed", str(ctx.seed), "--boundary", "1", "--batch-size", "512"]
        with contextlib.redirect_stdout(io.StringIO()):
            expect(main(args + ["--out", f"{d}/a", "--workers", "1"]) == 0, "run failed")
            expect(main(args + ["--out", f"{d}/b", "--workers", "2"]) == 0, "run failed")
        for name in ("persistence.csv", "persistence.json"):
            expect(Path(d, "a", name).read_bytes() == Path(d, "b", name).read_bytes(), f"{name} differs")
        header, rows = rio.read_csv(Path(d, "a", "persistence.csv"))
        res = simulate(ProcessSpec.rwrs("srw1"), RunPlan((4, 8, 16, 32), 4000, ctx.seed, (0.0, 1.0),
                                                         batch_size=512))
        mem = [vars(e) for a in (0.0, 1.0) for e in res.persistence(a)]
        got = [{k: r[k] for k in mem[0]} for r in rows]
        expect(got == mem, "CSV rows differ from the in-memory estimates")
        expect(header["config"]["seed"] == ctx.seed, "config missing from header")
        doc = rio.read_json(Path(d, "a", "persistence.json"))
        expect(rio.render_json(doc) == Path(d, "a", "persistence.json").read_text(), "JSON round-trip")


def run_suite(quick: bool = False, seed: int = 0, only=None) -> list[CheckResult]:
    ctx = Context(seed, quick)
    out = []
    for cid, title, full_only, fn in _REGISTRY:
        if (quick and full_only) or (only and cid not in only):
            continue
        t0 = time.perf_counter()
        try:
            detail = fn(ctx) or ""
            ok = True
        except Exception as exc:  # any failure is reported under the check id
            detail, ok = f"{type(exc).__name__}: {exc}", False
        out.append(CheckResult(cid, title, ok, detail, time.perf_counter() - t0))
    return out


def check_ids(quick: bool = False) -> list[str]:
    return [cid for cid, _, full_only, _ in _REGISTRY if not (quick and full_only)]
