import math

import numpy as np
import pytest

from frogbound.prob import ParameterError, RngStream, ThresholdSpec, chisquare_counts, parse_threshold
from frogbound.ssfm import (
    all_strings,
    alpha,
    estimate_activation,
    lemma_a_exponent,
    sample_first_visit_activation,
    sample_lazy_nb_path,
    simulate_ssfm,
    simulate_ssfm_many,
    verify_lemma_A,
)
from frogbound.tree import ModelParams


def test_alpha_examples():
    assert alpha(parse_threshold("delta:1"), 5) == 1
    assert alpha(parse_threshold("delta:2"), 2) == pytest.approx(1 / 3)
    assert alpha(parse_threshold("pmf:1=0.5,inf=0.5"), 2) == pytest.approx(0.5)


def test_alpha_monte_carlo_small():
    tau = parse_threshold("delta:2")
    x = sample_first_visit_activation(tau, 2, 10**5, RngStream(1))
    assert abs(x.mean() - 1 / 3) <= 4 * math.sqrt(2 / 9 / 10**5)


def test_lazy_path_first_step():
    hits = 0
    reps = 20000
    rng = RngStream(2)
    for r in range(reps):
        p = sample_lazy_nb_path(2, 1, 1, rng)
        hits += p.vertices[1] == ()
    p = hits / reps
    assert abs(p - 1 / 3) <= 4 * math.sqrt(2 / 9 / reps)


def test_lazy_path_invariants_and_dwell_law():
    dwell = []
    rng = RngStream(3)
    for _ in range(3000):
        p = sample_lazy_nb_path(2, 3, 200, rng)
        assert len(set(p.vertices)) == len(p.vertices)
        for u, w in zip(p.vertices, p.vertices[1:]):
            assert abs(len(u) - len(w)) == 1
        if p.termination == "root":
            assert p.vertices[-1] == ()
            dwell += p.dwell[1:-1]
        else:
            dwell += p.dwell[1:-1]
    d = np.array(dwell) - 1
    assert chisquare_counts(d, lambda k: (1 / 3) ** k * (2 / 3)) > 0.001


def test_lazy_path_bad_caps():
    with pytest.raises(ParameterError):
        sample_lazy_nb_path(2, 1, 0, RngStream(0))


def test_ssfm_no_frogs_no_visits():
    s = simulate_ssfm(ModelParams(2, parse_threshold("delta:1"), 0.0), 30, 10**5, RngStream(0))
    assert s.visits == 0


def test_ssfm_never_activating():
    s = simulate_ssfm(ModelParams(2, ThresholdSpec.never(), 50.0), 30, 10**5, RngStream(0))
    assert s.visits == 0


def test_ssfm_deterministic_and_capped():
    p = ModelParams(2, parse_threshold("delta:1"), 3.0)
    a = [s.visits for s in simulate_ssfm_many(p, 20, 20, 20000, RngStream(4))]
    b = [s.visits for s in simulate_ssfm_many(p, 20, 20, 20000, RngStream(4))]
    assert a == b
    c = simulate_ssfm_many(p, 20, 20, 20000, RngStream(4), visit_cap=3)
    assert all(s.visits <= 3 for s in c)
    assert all(s.visits == min(x, 3) or "visit" in s.caps_hit for s, x in zip(c, a))


def test_ssfm_depth_cap_monotone_in_mean():
    p = ModelParams(2, parse_threshold("delta:1"), 1.0)
    lo = np.mean([s.visits for s in simulate_ssfm_many(p, 300, 4, 10**5, RngStream(5))])
    hi = np.mean([s.visits for s in simulate_ssfm_many(p, 300, 12, 10**5, RngStream(6))])
    assert hi >= lo - 0.5


def test_activation_single_nerve():
    est = estimate_activation((0,), 1, 2, 3.0, 0.0, 10**6, RngStream(7))
    assert abs(est.p_exact - math.exp(-1)) <= 0.005
    assert est.p_variant == 1.0


def test_activation_probabilities_sum_to_one():
    for n in (1, 2, 3):
        total, var = 0.0, 0.0
        for i, a in enumerate(all_strings(n)):
            est = estimate_activation(a, n, 2, 1.0, 1.0, 20000, RngStream(8).child(n).child(i))
            total += est.p_exact
            var += est.se_exact**2
        assert abs(total - 1) <= 4 * math.sqrt(var) + 1e-9


def test_lemma_a_exponent_example():
    got = lemma_a_exponent((0, 1), 2, 2, 1.0, 1.0)
    assert got == pytest.approx(1 / 6 + 1 / 4 + 1 / 4)
    assert lemma_a_exponent((1, 1), 2, 2, 5.0, 2.0) == 0


def test_verify_lemma_a_small_grid():
    grid = [{"d": 2, "n": 2, "a": "all", "mu": 1.0, "lambda": 1.0}, {"d": 2, "n": 1, "a": [0], "mu": 3.0, "lambda": 0.0}]
    rows = verify_lemma_A(grid, 50000, RngStream(9))
    assert len(rows) == 5
    for r in rows:
        assert abs(r["z"]) <= 4, r
        if set(r["a"]) == {"1"}:
            assert r["predicted_ratio"] == 1
    with pytest.raises(ParameterError):
        verify_lemma_A([], 10, RngStream(0))


def test_estimate_activation_rejects_bad_string():
    with pytest.raises(ParameterError):
        estimate_activation((0, 2), 2, 2, 1.0, 1.0, 10, RngStream(0))
