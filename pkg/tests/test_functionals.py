import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.special import ndtr

from persistmc.functionals import batch_stats, boundary_shift_check, compute_stats, psi_integrand
from persistmc.scenery import ProcessPath


def test_negative_path_example():
    s = compute_stats([0.0, -1.0, -2.0])
    assert s.persists and s.tau == 0 and s.occupation == 0
    assert s.phi_value_from0 == pytest.approx(0.66524, abs=1e-5)
    assert s.phi_value_from0 == pytest.approx(1 / (1 + math.exp(-1) + math.exp(-2)), rel=1e-15)


def test_positive_excursion_example():
    s = compute_stats(ProcessPath([0.0, 2.0, -1.0]))
    assert not s.persists and s.tau == 1 and s.occupation == 1
    assert s.persists_at(2.0) and not s.persists_at(1.9)


@pytest.mark.parametrize("T", [1, 5, 40])
def test_zero_path(T):
    s = compute_stats(np.zeros(T + 1), psi_points=tuple(float(x) for x in range(1, T + 1)))
    assert s.phi_value_from0 == pytest.approx(1 / (T + 1), rel=1e-14)
    assert s.phi_value_from1 == pytest.approx(1 / T, rel=1e-14)
    for x in range(1, T + 1):
        assert s.psi_value(float(x)) == pytest.approx(math.log(x), abs=1e-14)
    assert s.persists and s.tau == 0


def test_psi_fractional_point():
    z = np.array([0.0, 1.0, -0.5, 2.0])
    want = math.log(1 + math.e + 0.25 * math.exp(-0.5))
    assert psi_integrand(z, 2.25) == pytest.approx(want, rel=1e-14)
    with pytest.raises(ValueError):
        psi_integrand(z, 3.5)
    with pytest.raises(ValueError):
        psi_integrand(z, 0.5)


@pytest.mark.parametrize("bad", [[0.0, np.nan], [0.0, np.inf], [1.0, 0.0], []])
def test_invalid_paths(bad):
    with pytest.raises(ValueError):
        compute_stats(bad)


def test_large_values_are_stable():
    s = compute_stats([0.0, 800.0, 900.0])
    assert 0 < s.phi_value_from0 < 1e-300 or s.phi_value_from0 == pytest.approx(math.exp(-900 - math.log1p(math.exp(-100))))
    s = compute_stats([0.0, -900.0])
    assert s.phi_value_from0 == pytest.approx(1.0)


def _naive(z):
    T = len(z) - 1
    m = max(z)
    return dict(max1=max(z[1:]), tau=z.index(m), occ=sum(v > 0 for v in z[1:]),
                phi0=1 / math.fsum(math.exp(v) for v in z),
                phi1=1 / math.fsum(math.exp(v) for v in z[1:]))


paths = st.lists(st.floats(-30, 30, allow_nan=False).map(lambda v: round(v, 1)), min_size=1, max_size=128).map(
    lambda xs: [0.0] + xs)


@settings(max_examples=300, deadline=None)
@given(paths)
def test_one_pass_equals_naive(z):
    n = _naive(z)
    s = compute_stats(z)
    assert s.max_1_to_T == n["max1"] and s.tau == n["tau"] and s.occupation == n["occ"]
    assert s.phi_value_from0 == pytest.approx(n["phi0"], rel=1e-12)
    assert s.phi_value_from1 == pytest.approx(n["phi1"], rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(paths)
def test_per_path_invariants(z):
    s = compute_stats(z)
    T = len(z) - 1
    top = max(0.0, s.max_1_to_T)
    assert 0 < s.phi_value_from0 <= 1
    assert s.phi_value_from1 >= s.phi_value_from0
    assert s.phi_value_from0 <= math.exp(-top) * (1 + 1e-12)
    assert s.phi_value_from0 >= math.exp(-top) / (T + 1) * (1 - 1e-12)
    if s.persists_at(0.0):
        assert s.tau == 0 and s.occupation == 0
    for a, b in ((-1.0, 0.0), (0.0, 0.5), (0.5, 3.0)):
        assert s.persists_at(a) <= s.persists_at(b)


@settings(max_examples=100, deadline=None)
@given(paths, st.data())
def test_batch_kernel_matches_single_path(z, data):
    T = len(z) - 1
    grid = sorted(data.draw(st.sets(st.integers(1, T), min_size=1, max_size=5)))
    b = batch_stats(np.array([z]), grid)
    for g, t in enumerate(grid):
        s = compute_stats(z[: t + 1])
        assert b.max1[0, g] == s.max_1_to_T and b.tau[0, g] == s.tau and b.occ[0, g] == s.occupation
        assert b.phi0[0, g] == pytest.approx(s.phi_value_from0, rel=1e-12)
        assert b.phi1[0, g] == pytest.approx(s.phi_value_from1, rel=1e-12)
        assert b.sup[0, g] == max(0.0, s.max_1_to_T)
        prev = max(z[1:t], default=-math.inf)
        assert b.max1_prev[0, g] == prev
        if t >= 1:
            assert b.psi[0, g] == pytest.approx(psi_integrand(np.array(z[: t + 1]), float(t)), rel=1e-12, abs=1e-12)


def test_batch_kernel_nested_prefix_monotonicity():
    rng = np.random.default_rng(0)
    z = np.zeros((300, 129))
    z[:, 1:] = np.cumsum(rng.standard_normal((300, 128)), axis=1)
    b = batch_stats(z, [1, 2, 8, 64, 128])
    assert np.all(np.diff(b.max1, axis=1) >= 0)
    assert np.all(np.diff(b.occ, axis=1) >= 0)
    assert np.all(b.max1_prev[:, 1:] >= b.max1[:, :-1])


def test_batch_kernel_input_checks():
    z = np.zeros((2, 5))
    for grid in ([0], [3, 2], [5], []):
        with pytest.raises(ValueError):
            batch_stats(z, grid)
    z[1, 2] = np.nan
    with pytest.raises(ValueError):
        batch_stats(z, [4])


def test_shift_check_half_factor():
    rows = boundary_shift_check([5], [1000], [400], [700], a=0.0, b=0.0)
    assert rows[0].factor == 0.5 and rows[0].bound == pytest.approx(0.35) and not rows[0].violated
    rows = boundary_shift_check([5], [100000], [30000], [70000], a=0.0, b=0.0)
    assert rows[0].violated


def test_shift_check_oracle_value():
    # p(3, 0) = 0.3125 for i.i.d. Gaussian increments; the bound at a = 1 is 0.2629
    rows = boundary_shift_check([4], [10**6], [300000], [312500], a=1.0, b=0.0)
    assert rows[0].bound == pytest.approx(ndtr(1.0) * 0.3125) and rows[0].bound == pytest.approx(0.2629, abs=1e-4)


def test_shift_check_joint_variance_reduces_se():
    ind = boundary_shift_check([8], [10**4], [3000], [2500], a=1.0, hits_zero=[2000])
    joint = boundary_shift_check([8], [10**4], [3000], [2500], a=1.0, joint_hits=[2400], hits_zero=[2000])
    assert joint[0].joint_se < ind[0].joint_se
    assert ind[0].ratio_to_zero == pytest.approx(1.5)
    with pytest.raises(ValueError):
        boundary_shift_check([8], [10], [1], [1], a=1.0, b=-1.0)
