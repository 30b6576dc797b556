import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import poisson

from frogbound.prob import ParameterError, RngStream, chisquare_counts, parse_threshold, poisson_pmf
from frogbound.rde import (
    EmpiricalDist,
    estimate_bootstrap,
    iterate_B,
    rde_summary,
    sample_rde,
    sample_rde_many,
    sample_theta,
    sample_theta_many,
)
from frogbound.tree import ModelParams

D1 = parse_threshold("delta:1")
D2 = parse_threshold("delta:2")


def test_empirical_dist_validation():
    with pytest.raises(ParameterError):
        EmpiricalDist(np.array([], dtype=int))
    with pytest.raises(ParameterError):
        EmpiricalDist(np.array([1, -1]))
    e = EmpiricalDist(np.array([3, 0, 1, 1]))
    assert e.samples.tolist() == [0, 1, 1, 3]
    assert e.cdf([0, 1, 2, 3]).tolist() == [0.25, 0.75, 0.75, 1.0]
    assert rde_summary(e, 3)["cdf_3"] == 1.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=50), st.randoms(use_true_random=False))
def test_iterate_b_depends_only_on_multiset(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    p = ModelParams(2, D2, 2.0)
    a = iterate_B(EmpiricalDist(np.array(xs)), p, 1000, RngStream(1))
    b = iterate_B(EmpiricalDist(np.array(ys)), p, 1000, RngStream(1))
    assert np.array_equal(a.samples, b.samples)


def test_iterate_b_trivial_and_errors():
    p = ModelParams(2, D1, 0.0)
    out = iterate_B(EmpiricalDist.point(0), p, 1000, RngStream(0))
    assert np.all(out.samples == 0)
    with pytest.raises(ParameterError):
        iterate_B(EmpiricalDist.point(0), p, 10, RngStream(0))


def test_iterate_b_monotone_under_shift():
    p = ModelParams(2, D2, 3.0)
    pi = EmpiricalDist(np.random.default_rng(0).poisson(2.0, 5000))
    n = 50_000
    a = iterate_B(pi, p, n, RngStream(1))
    b = iterate_B(pi.shifted(1), p, n, RngStream(2))
    ks = np.arange(30)
    fa, fb = a.cdf(ks), b.cdf(ks)
    band = 3 * np.sqrt((fa * (1 - fa) + fb * (1 - fb)) / n)
    assert np.all(fb <= fa + band + 1e-12)


def test_rde_base_case():
    assert sample_rde(ModelParams(2, D1, 5.0), 0, RngStream(0)) == 0
    assert np.all(sample_rde_many(ModelParams(2, D2, 5.0), 0, 100, RngStream(0)) == 0)
    with pytest.raises(ParameterError):
        sample_rde_many(ModelParams(2, D1, 1.0), -1, 1, RngStream(0))


def test_rde_first_level_is_thinned_poisson():
    x = sample_rde_many(ModelParams(2, D1, 3.0), 1, 100_000, RngStream(3))
    assert chisquare_counts(x, lambda k: poisson_pmf(k, 1.0)) > 0.001


def test_rde_monotone_in_depth_small():
    p = ModelParams(2, D2, 30.0)
    prev = None
    for k in range(4):
        m, se = EmpiricalDist(sample_rde_many(p, k, 2000, RngStream(4).child(k))).capped_mean(10)
        if prev is not None:
            assert m >= prev[0] - 3 * math.hypot(se, prev[1])
        prev = (m, se)


def test_fixed_point_consistency_subcritical():
    # far below the recurrence region the recursion settles within a few levels
    p = ModelParams(2, D1, 0.5)
    a = EmpiricalDist(sample_rde_many(p, 8, 50_000, RngStream(5)))
    b = iterate_B(a, p, 50_000, RngStream(6))
    ks = np.arange(40)
    assert np.max(np.abs(a.cdf(ks) - b.cdf(ks))) <= 0.01 + 3 * math.sqrt(0.5 / 50_000)


def test_theta_deterministic_cases():
    t = sample_theta(2, 1 / 3, 3.0, 0.0, RngStream(0), n=4)
    assert t.theta == pytest.approx(3.0 / 3 * 2.0**-3)
    assert sample_theta(3, 0.5, 0.0, 0.0, RngStream(1)).theta == 0.0
    with pytest.raises(ParameterError):
        sample_theta(2, 0.5, 1.0, -1.0, RngStream(0))


def test_theta_lower_bound_and_shape():
    n, th = sample_theta_many(2, 1 / 3, 4.0, 1.0, 20000, RngStream(2))
    assert np.all(th >= 4.0 / 3 * np.power(2.0, 1 - n) - 1e-12)
    t = sample_theta(2, 1 / 3, 4.0, 1.0, RngStream(3))
    assert t.activation.size == t.n


def _theta_oracle(mu, lam, cutoff=50):
    # N = 1, d = 2: Theta = mu/3 + lam/2 + A lam/2 and A = 0 iff no particle from v or v' hits the nerve
    x = np.arange(cutoff + 1)
    px, pw = poisson.pmf(x, mu), poisson.pmf(x, lam)
    p_empty = float(np.sum(px * (2 / 3) ** x) * np.sum(pw * 0.5**x))
    # mass beyond the cutoff changes the result by less than this
    slack = poisson.sf(cutoff, mu) + poisson.sf(cutoff, lam)
    base = math.exp(-mu / 3 - lam / 2)
    return base * (p_empty + (1 - p_empty) * math.exp(-lam / 2)), slack


def test_theta_moment_against_enumeration():
    exact, slack = _theta_oracle(3.0, 1.0)
    _, th = sample_theta_many(2, 1.0, 3.0, 1.0, 10**6, RngStream(4))
    e = np.exp(-th)
    se = e.std() / math.sqrt(e.size)
    assert abs(e.mean() - exact) <= 4 * se + slack


def test_bootstrap_examples():
    r = estimate_bootstrap(2, D1, 0.0, 0.0, 10_000, RngStream(0))
    assert r.estimate == 1.0 and r.verdict == "fail"
    r = estimate_bootstrap(2, D1, 6.0, 1.5, 100_000, RngStream(1))
    assert r.verdict == "pass"
    with pytest.raises(ParameterError):
        estimate_bootstrap(2, D1, 1.0, 1.0, 100, RngStream(0))


def test_neg_exp_moment_monotone():
    prev = None
    for mu in (1.0, 3.0, 6.0):
        r = estimate_bootstrap(2, D2, mu, 1.0, 50_000, RngStream(7))
        if prev is not None:
            assert r.estimate <= prev.estimate + 4 * math.hypot(r.std_error, prev.std_error)
        prev = r
    lo = estimate_bootstrap(2, D2, 3.0, 0.5, 50_000, RngStream(8))
    hi = estimate_bootstrap(2, D2, 3.0, 2.0, 50_000, RngStream(9))
    assert hi.estimate <= lo.estimate + 4 * math.hypot(hi.std_error, lo.std_error)
