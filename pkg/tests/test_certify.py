import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frogbound.certify import (
    CERT_FIELDS,
    bit_flips,
    c_n,
    certify,
    constant_one,
    dead_mu_exponent,
    enumerate_claims,
    enumeration_rows,
    evaluate_F,
    flips,
    h_dual,
    h_exact,
    h_histogram,
    iter_strings,
    min_h,
    s_n_upper,
    scaled_h,
    scaled_h_dual,
    seed_lambda,
)
from frogbound.prob import ParameterError, parse_threshold


def test_h_table_d2_n2():
    got = [h_exact(a, 2, 2) for a in [(0, 0), (1, 0), (0, 1), (1, 1)]]
    assert got == [1, Fraction(3, 2), 1, 1]
    assert h_exact((1, 0, 1), 3, 2) == Fraction(3, 2)


@pytest.mark.parametrize("d,n", [(2, 1), (2, 5), (3, 3), (4, 2)])
def test_h_all_zero_is_one(d, n):
    assert h_exact((0,) * ((d - 1) * n), n, d) == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 3), st.integers(1, 5), st.data())
def test_h_formula_equals_path_assembly(d, n, data):
    a = data.draw(st.lists(st.integers(0, 1), min_size=(d - 1) * n, max_size=(d - 1) * n))
    assert h_exact(a, n, d) == h_dual(a, n, d)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.data())
def test_h_symmetric_in_slots(n, data):
    d = 3
    a = data.draw(st.lists(st.integers(0, 1), min_size=2 * n, max_size=2 * n))
    b = list(a)
    y = data.draw(st.integers(0, n - 1))
    b[2 * y], b[2 * y + 1] = b[2 * y + 1], b[2 * y]
    assert h_exact(a, n, d) == h_exact(b, n, d)


def test_bit_flips_examples():
    assert bit_flips((0, 0, 0), 3, 2) == 0
    assert bit_flips((1, 0, 1), 3, 2) == 2
    with pytest.raises(ParameterError):
        bit_flips((1, 0), 3, 2)


def test_vectorized_matches_rationals():
    for d, n in [(2, 4), (3, 2)]:
        rows = list(enumeration_rows(n, d))
        H = np.concatenate([scaled_h(B, n, d) for _, B in iter_strings(n, d)])
        F = np.concatenate([flips(B) for _, B in iter_strings(n, d)])
        for row, hv, fv in zip(rows, H, F):
            assert Fraction(int(round(hv)), d ** (n + 1)) == row.h
            assert fv == row.f
            assert row.dead_mu_exponent == dead_mu_exponent(row.a, n, d)


def test_dual_vectorized():
    for d, n in [(2, 6), (3, 4)]:
        for _, B in iter_strings(n, d):
            assert np.array_equal(scaled_h(B, n, d).round(), scaled_h_dual(B, n, d).round())


def test_f_distribution_is_binomial():
    for d in (2, 3):
        for n in range(1, 5):
            L = (d - 1) * n
            F = np.concatenate([flips(B) for _, B in iter_strings(n, d)])
            counts = np.bincount(F, minlength=L)
            assert counts.tolist() == [2 * math.comb(L - 1, k) for k in range(L)]


def test_constant_one():
    for d in (2, 3, 4):
        for n in range(1, 9):
            assert constant_one(n, d) == 1


def test_min_h_is_one_on_monotone_strings():
    for n in range(1, 8):
        m, a, count = min_h(n, 2)
        assert m == 1 and count == n + 1
        mono = [tuple([0] * k + [1] * (n - k)) for k in range(n + 1)]
        assert all(h_exact(s, n, 2) == 1 for s in mono)


def test_claims_d2_small():
    rep = enumerate_claims(2, 2, [1.0])
    hb = {c["n"]: c for c in rep.verdicts("hb")}
    assert hb[1]["verdict"] == "holds" and hb[1]["equality"]
    assert hb[2]["verdict"] == "violated"
    expected = (3 * math.exp(-1) + math.exp(-1.5)) / 4 - math.exp(-1) * (1 + math.exp(-0.25)) / 2
    assert hb[2]["margin"] == pytest.approx(expected, rel=1e-12)
    hc = {c["n"]: c for c in rep.verdicts("hc")}
    assert hc[1]["verdict"] == "holds"
    assert hc[2]["verdict"] == "violated" and hc[2]["witnesses"] == ["01"]
    assert all(c["verdict"] == "holds" for c in rep.verdicts("hexpand") + rep.verdicts("constant1") + rep.verdicts("hmin"))
    assert len(rep.digest()) == 64


def test_claims_budget_and_names():
    with pytest.raises(ParameterError):
        enumerate_claims(2, 25, [1.0])
    with pytest.raises(ParameterError):
        enumerate_claims(2, 2, [1.0], ["nonsense"])


def test_s_n_upper_examples():
    assert s_n_upper(1, 2, 1.3, "exact", 0.7) == pytest.approx(2 * math.exp(-1.3))
    assert c_n(2, 2, 2.0) == pytest.approx(3 + math.exp(-1))
    assert s_n_upper(1, 2, 2.0, "paper", 2.0) == pytest.approx(2 * math.exp(-2))
    with pytest.raises(ParameterError):
        s_n_upper(2, 2, 0.5, "exact", 1.0)
    with pytest.raises(ParameterError):
        s_n_upper(2, 2, 0.5, "other", 0.5)


def test_exact_bracket_never_exceeds_enumeration():
    for n in range(1, 7):
        for lam in (0.5, 1.0, 3.0):
            direct = sum(math.exp(-lam * float(h_exact(a, n, 2))) for a in itertools.product((0, 1), repeat=n))
            assert direct <= s_n_upper(n, 2, lam, "exact", lam) * (1 + 1e-12)


def test_seed_lambda_examples():
    assert seed_lambda(0.0, 2, 0.5) == 0.0
    assert seed_lambda(6.0, 2, 1.0) == pytest.approx(2.0, rel=1e-9)
    xs = [seed_lambda(mu, 2, 1 / 3) for mu in (1, 2, 5, 10, 50)]
    assert xs == sorted(xs)


def test_certify_closed_form():
    mu0 = 3 * (1 + math.log(2))
    for mode in ("paper", "exact"):
        c = certify(2, parse_threshold("delta:1"), mode, 12)
        assert c.verdict == "certified"
        assert c.mu0 == pytest.approx(mu0, rel=1e-6)
        assert c.lambda0 == pytest.approx(mu0 / 3, rel=1e-6)
        assert tuple(c.to_dict()) == CERT_FIELDS


def test_certify_delta2_both_modes():
    for mode in ("paper", "exact"):
        c = certify(2, parse_threshold("delta:2"), mode, 12)
        assert c.verdict == "certified-modulo-hypothesis"
        assert c.head + c.tail <= math.exp(-1) * (1 + 1e-9)
        assert c.tail_hypothesis
        assert seed_lambda(c.mu0, 2, c.alpha) >= c.lambda0 * (1 - 1e-12)


def test_certificate_finer_head_does_not_exceed_record():
    for mode in ("paper", "exact"):
        c = certify(2, parse_threshold("delta:2"), mode, 12)
        head, _, _ = evaluate_F(2, c.alpha, mode, c.mu0, c.lambda0, 16)
        assert head <= c.head + c.tail


def test_small_truncation_finds_nothing():
    # the tail bound alone exceeds exp(-1) when K is too small
    c = certify(2, parse_threshold("delta:2"), "exact", 8)
    assert c.verdict == "not-found" and c.lambda0 is None


def test_certify_rejects_bad_input():
    with pytest.raises(ParameterError):
        parse_threshold("pmf:1=0.0,inf=1.0")
    with pytest.raises(ParameterError):
        certify(2, parse_threshold("delta:1"), "exact", 0)
    with pytest.raises(ParameterError):
        certify(2, parse_threshold("delta:2"), "exact", 1)


def test_certify_not_found_when_never_summable():
    c = certify(2, parse_threshold("pmf:1=0.001,inf=0.999"), "paper", 4, mu_max=64)
    assert c.verdict == "not-found" and c.mu0 is None
    assert c.details["surface"]


def test_histogram_counts_all_strings():
    for n in (3, 6):
        assert sum(c for _, c in h_histogram(n, 2)) == 2**n
