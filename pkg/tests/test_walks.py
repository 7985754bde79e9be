import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from persistmc.rng import StreamKey, derive_stream
from persistmc.walks import (SRW2_SIGMA2, WalkKind, green_at_origin, heavy_cdf_table,
                             heavy_step_constant, heavy_steps, incremental_self_intersections,
                             mean_self_intersection, pack_sites, sample_heavy_step, simulate_walk,
                             walk_from_positions)


def rng(i=0):
    return derive_stream(StreamKey(123, i, 0))


# -- kinds ------------------------------------------------------------------

@pytest.mark.parametrize("text,dim,alpha,hurst", [
    ("srw1", 1, 2.0, 0.75), ("srw2", 2, 2.0, 0.5), ("srw3", 3, 2.0, 0.5), ("heavy:1.5", 1, 1.5, 2 / 3),
])
def test_kind_parse(text, dim, alpha, hurst):
    k = WalkKind.parse(text)
    assert str(k) == text and k.dim == dim and k.stable_index == alpha
    assert k.hurst == pytest.approx(hurst)


@pytest.mark.parametrize("bad", ["heavy:2", "heavy:1", "heavy:0.5", "srw4", "levy"])
def test_kind_rejects(bad):
    with pytest.raises(ValueError):
        WalkKind.parse(bad)


# -- heavy-tailed steps --------------------------------------------------------

def _zeta_oracle(s, K=200000):
    # partial sum plus the midpoint integral estimate of the remainder
    return float(np.sum(np.arange(1, K + 1, dtype=np.float64) ** -s) + (K + 0.5) ** (1 - s) / (s - 1))


def test_heavy_constant():
    c = heavy_step_constant(1.5)
    assert c == pytest.approx(1 / (2 * _zeta_oracle(2.5)), rel=1e-9)
    assert abs(c - 0.37275) < 1e-4


@pytest.mark.parametrize("alpha", [1.0, 2.0, -1.0])
def test_heavy_alpha_range(alpha):
    with pytest.raises(ValueError):
        sample_heavy_step(alpha, rng())


def test_heavy_pmf_small_magnitudes():
    n = 4 * 10**6
    x = sample_heavy_step(1.5, rng(1), size=n)
    c = heavy_step_constant(1.5)
    assert not np.any(x == 0)
    for k in (1, 2, 3, 5, 10):
        for s in (k, -k):
            p = c * k**-2.5
            got = np.count_nonzero(x == s) / n
            assert abs(got - p) < 5 * math.sqrt(p * (1 - p) / n), (s, got, p)


def test_heavy_symmetry_and_tail():
    n = 10**7
    x = sample_heavy_step(1.5, rng(2), size=n)
    assert abs(x.mean()) < 4 * x.std() / math.sqrt(n)
    c = heavy_step_constant(1.5)
    ratio = np.mean(np.abs(x) > 100) * 100**1.5 / (2 * c / 1.5)
    assert 0.8 <= ratio <= 1.25


def test_heavy_table_is_cdf():
    cdf = heavy_cdf_table(1.5)
    assert np.all(np.diff(cdf) > 0) and cdf[-1] < 1
    assert cdf[0] == pytest.approx(2 * heavy_step_constant(1.5))


def test_heavy_beyond_table_uses_pareto_tail():
    cdf = heavy_cdf_table(1.5)
    # uniforms mapping beyond the table give magnitudes above its end
    v = (cdf[-1] + 1) / 2
    x = heavy_steps(1.5, np.array([v / 2, 0.5 + v / 2]))
    assert x[0] > len(cdf) and x[1] == -x[0]


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True), st.floats(0.0, 1.0, exclude_max=True))
def test_heavy_inverse_cdf_monotone(u, v):
    a, b = heavy_steps(1.5, np.array([u, v]))
    assert a != 0 and b != 0
    # within a half of [0, 1) the magnitude is nondecreasing in u
    if (u < 0.5) == (v < 0.5) and u <= v:
        assert abs(a) <= abs(b)
    assert (a > 0) == (u < 0.5)


# -- walk paths -------------------------------------------------------------------

def test_two_step_example():
    w = walk_from_positions([0, 1, 0])
    assert w.local_times == {(1,): 1, (0,): 1}
    assert list(w.self_intersections) == [1, 2]


def test_revisiting_example():
    w = walk_from_positions([0, 1, 0, 1])
    assert w.self_intersections[2] == 5
    assert w.local_times_at(2) == {(0,): 1, (1,): 1}
    assert w.local_times_at(3) == {(0,): 1, (1,): 2}


def test_walk_must_start_at_origin():
    with pytest.raises(ValueError):
        walk_from_positions([1, 2])


@pytest.mark.parametrize("kind", ["srw1", "srw2", "srw3"])
def test_simple_steps_are_unit(kind):
    k = WalkKind(kind)
    w = simulate_walk(k, 5000, rng(3))
    d = np.diff(w.positions, axis=0)
    assert np.all(np.abs(d).sum(axis=1) == 1)
    # each of the 2d directions equally likely
    codes = [tuple(r) for r in d]
    counts = np.array([codes.count(tuple(v)) for v in np.concatenate([np.eye(k.dim), -np.eye(k.dim)]).astype(int)])
    p = 1 / (2 * k.dim)
    assert np.all(np.abs(counts / 5000 - p) < 5 * math.sqrt(p * (1 - p) / 5000))


def test_simulate_walk_needs_positive_horizon():
    with pytest.raises(ValueError):
        simulate_walk(WalkKind("srw1"), 0, rng())


def _naive_V(pos):
    T = len(pos) - 1
    return [sum(1 for i in range(1, n + 1) for j in range(1, n + 1) if pos[i] == pos[j]) for n in range(1, T + 1)]


positions_1d = st.lists(st.integers(-3, 3), min_size=1, max_size=40).map(lambda xs: [0] + xs)
positions_2d = st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 2)), min_size=1, max_size=30).map(
    lambda xs: [(0, 0)] + xs)


@settings(max_examples=150, deadline=None)
@given(st.one_of(positions_1d, positions_2d))
def test_walk_invariants_on_arbitrary_paths(pos):
    w = walk_from_positions(pos)
    T = len(pos) - 1
    keys = [tuple(np.atleast_1d(p)) for p in pos]
    V = w.self_intersections
    assert list(V) == _naive_V(keys)
    assert sum(w.local_times.values()) == T
    n = np.arange(1, T + 1)
    assert np.all(V >= n) and np.all(V <= n * n)
    for m in range(T + 1):
        N = w.local_time_vector(m)
        assert N.sum() == m
        assert int(np.dot(N, N)) == (V[m - 1] if m else 0)
        if m:
            assert np.all(N >= w.local_time_vector(m - 1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=60))
def test_incremental_V_matches_recount(ids):
    ids = np.array(ids)
    V = incremental_self_intersections(ids)
    for n in range(1, len(ids) + 1):
        c = np.bincount(ids[:n])
        assert V[n - 1] == int(np.dot(c, c))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.integers(-2**19, 2**19)] * 3), min_size=2, max_size=20, unique=True))
def test_pack_sites_injective(sites):
    codes = pack_sites(np.array(sites, dtype=np.int64))
    assert len(set(codes.tolist())) == len(sites)


@pytest.mark.parametrize("kind", ["srw1", "srw2", "srw3", "heavy:1.5"])
def test_conditional_covariance_preconditions(kind):
    g = rng(4)
    for _ in range(20):
        w = simulate_walk(WalkKind.parse(kind), 300, g)
        for _ in range(100):
            l, k = sorted(g.integers(0, 301, size=2))
            Nl, Nk = w.local_time_vector(l), w.local_time_vector(k)
            assert np.dot(Nl, Nk) >= 0 and np.dot(Nl, Nk - Nl) >= 0


# -- self-intersection means ------------------------------------------------------------

def _exact_mean_V_srw1(T):
    tot = Fraction(0)
    for steps in itertools.product((-1, 1), repeat=T):
        pos = np.cumsum(steps)
        _, c = np.unique(pos, return_counts=True)
        tot += int(np.dot(c, c))
    return tot / 2**T


def test_mean_V_T1_exact():
    e = mean_self_intersection(WalkKind("srw2"), 1, 50, seed=1)
    assert e.value == 1.0 and e.se == 0.0


@pytest.mark.parametrize("T", [3, 10])
def test_mean_V_against_enumeration(T):
    exact = float(_exact_mean_V_srw1(T))
    e = mean_self_intersection(WalkKind("srw1"), T, 20000, seed=2)
    assert abs(e.value - exact) < 4 * e.se


def test_mean_V_srw1_growth():
    Ts = [2**10, 2**12, 2**14]
    vals = [mean_self_intersection(WalkKind("srw1"), t, 3000, seed=3).value for t in Ts]
    slope = np.polyfit(np.log(Ts), np.log(vals), 1)[0]
    assert abs(slope - 1.5) <= 0.1


def test_mean_V_srw3_linear():
    a = mean_self_intersection(WalkKind("srw3"), 2**12, 1500, seed=4).value / 2**12
    b = mean_self_intersection(WalkKind("srw3"), 2**14, 1500, seed=4).value / 2**14
    assert abs(b / a - 1) < 0.1


# -- Green function ---------------------------------------------------------------------

def _exact_green_truncated(T):
    """sum_{n<=T} P[S_n = 0] for the 3d simple walk, by exact multinomial counts."""
    tot = Fraction(1)
    for m in range(1, T // 2 + 1):
        s = sum((math.factorial(m) // (math.factorial(i) * math.factorial(j) * math.factorial(m - i - j))) ** 2
                for i in range(m + 1) for j in range(m - i + 1))
        tot += Fraction(math.comb(2 * m, m) * s, 6 ** (2 * m))
    return float(tot)


def test_green_against_exact_truncation():
    T = 200
    g = green_at_origin(T, 200000, seed=5)
    exact = _exact_green_truncated(T)
    assert abs(g.value - exact) < 4 * g.se
    assert g.sigma2 == pytest.approx(2 * g.value - 1)


def test_green_near_lattice_constant():
    g = green_at_origin(10**5, 10**5, seed=6)
    assert abs(g.value - 1.516) < 0.01
    assert abs(g.sigma2 - 2.033) < 0.02


def test_green_edge_cases():
    assert green_at_origin(0, 10, seed=0).value == 1.0
    with pytest.raises(ValueError):
        green_at_origin(10, 10, seed=0, kind=WalkKind("srw1"))


def test_srw2_variance_constant():
    assert SRW2_SIGMA2 == pytest.approx(1 / (math.pi * math.sqrt(0.25)))
