"""Exact h_n / f_n combinatorics, claim checks by enumeration, and the (lambda0, mu0) certificate search.

Throughout, ``H = h * d^(n+1)`` is an integer, which keeps every
enumeration exact while staying vectorized.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np

from .gadget import nerve_positions, walk_halting_law
from .prob import ParameterError, ThresholdSpec

MAX_ENUM_BITS = 24
SLACK = 1e-12
CHUNK = 1 << 16
CLAIMS = ("hc", "hb", "Sb", "hexpand", "constant1", "hmin")
MAX_WITNESSES = 16


class SoundnessError(RuntimeError):
    """Exact mode met a string with h < 1; the certificate would be unsound."""

    def __init__(self, n: int, d: int, witness: tuple[int, ...], h: Fraction):
        super().__init__(f"min h_{n} < 1 at d={d}: a={''.join(map(str, witness))}, h={h}")
        self.witness, self.h = witness, h


def _check_string(a, n: int, d: int) -> tuple[int, ...]:
    if d < 2 or n < 1:
        raise ParameterError("need d >= 2 and n >= 1")
    a = tuple(int(b) for b in a)
    if len(a) != (d - 1) * n or any(b not in (0, 1) for b in a):
        raise ParameterError(f"a must be a 0/1 string of length (d-1)n = {(d - 1) * n}")
    return a


# ---------------------------------------------------------------------------
# single strings, exact rationals

def h_exact(a, n: int, d: int) -> Fraction:
    """1 + sum_{dead x, live y} d^-|x-y|-1 + sum_{live y} (d^-y - d^(y-n-1))."""
    a = _check_string(a, n, d)
    y = nerve_positions(n, d).tolist()
    D = Fraction(d)
    h = Fraction(1)
    for q, bq in enumerate(a):
        if bq:
            h += D ** -y[q] - D ** (y[q] - n - 1)
            continue
        for p, bp in enumerate(a):
            if bp:
                h += D ** (-abs(y[q] - y[p]) - 1)
    return h


def h_dual(a, n: int, d: int) -> Fraction:
    """h rebuilt from halting laws found by path counting on the gadget graph.

    Root-return exponents come from v' (d^-n) and from every live nerve; each
    dead nerve contributes the probability that a v' or live-nerve particle
    halts there.
    """
    a = _check_string(a, n, d)
    law = _path_laws(d, n)
    live = [q for q, b in enumerate(a) if b]
    dead = [q for q, b in enumerate(a) if not b]
    h = law["vp"][0] + sum(law[q][0] for q in live)
    for x in dead:
        h += law["vp"][2 + x] + sum(law[q][2 + x] for q in live)
    return h


@lru_cache(maxsize=None)
def _path_laws(d: int, n: int) -> dict:
    out = {"vp": walk_halting_law(d, n, "vp")}
    for q, y in enumerate(nerve_positions(n, d).tolist()):
        out[q] = walk_halting_law(d, n, ("nerve", y, q - (y - 1) * (d - 1)))
    return out


def bit_flips(a, n: int, d: int) -> int:
    """Adjacent unequal pairs of the string read left to right."""
    a = _check_string(a, n, d)
    return sum(1 for u, v in zip(a, a[1:]) if u != v)


def dead_mu_exponent(a, n: int, d: int) -> Fraction:
    """sum over dead nerves (x, j) of d^(x-n)/(d+1), i.e. g_n / mu."""
    a = _check_string(a, n, d)
    y = nerve_positions(n, d).tolist()
    return sum((Fraction(d) ** (y[q] - n) / (d + 1) for q, b in enumerate(a) if not b), Fraction(0))


@dataclass(frozen=True)
class EnumerationRow:
    a: tuple[int, ...]
    h: Fraction
    f: int
    dead_mu_exponent: Fraction


def enumeration_rows(n: int, d: int):
    """Every string of length (d-1)n with exact h, f and dead-nerve exponent."""
    L = (d - 1) * n
    if L > 16:
        raise ParameterError("exact rows are limited to (d-1)n <= 16; use the vectorized enumeration")
    for k in range(1 << L):
        a = tuple((k >> (L - 1 - i)) & 1 for i in range(L))
        yield EnumerationRow(a, h_exact(a, n, d), bit_flips(a, n, d), dead_mu_exponent(a, n, d))


# ---------------------------------------------------------------------------
# vectorized integer enumeration

def _bits(L: int, start: int, stop: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.int64)
    return ((idx[:, None] >> np.arange(L - 1, -1, -1)) & 1).astype(np.float64)


def _check_budget(n: int, d: int):
    if d < 2 or n < 1:
        raise ParameterError("need d >= 2 and n >= 1")
    if (d - 1) * n > MAX_ENUM_BITS:
        raise ParameterError(f"enumeration budget exceeded: (d-1)n = {(d - 1) * n} > {MAX_ENUM_BITS}")


@lru_cache(maxsize=None)
def _hexpand_matrices(n: int, d: int):
    y = nerve_positions(n, d)
    W = np.power(float(d), n - np.abs(y[:, None] - y[None, :])).astype(np.float64)
    live = (np.power(float(d), n + 1 - y) - np.power(float(d), y)).astype(np.float64)
    return W, live


@lru_cache(maxsize=None)
def _dual_matrices(n: int, d: int):
    scale = Fraction(d) ** (n + 1)
    law = _path_laws(d, n)
    L = (d - 1) * n

    def ints(row):
        vals = [p * scale for p in row]
        assert all(v.denominator == 1 for v in vals)
        return [float(v) for v in vals]

    vp = ints(law["vp"])
    nerves = [ints(law[q]) for q in range(L)]
    base = vp[0]
    root_from = np.array([r[0] for r in nerves])
    vp_to = np.array(vp[2:])
    cross = np.array([r[2:] for r in nerves])  # cross[p, x]: live p halting at x
    return base, root_from, vp_to, cross


def scaled_h(B: np.ndarray, n: int, d: int) -> np.ndarray:
    """H = h * d^(n+1) for each row of the 0/1 matrix ``B`` (float64 holding exact integers)."""
    W, live = _hexpand_matrices(n, d)
    return d ** (n + 1) + np.einsum("ij,ij->i", 1 - B, B @ W) + B @ live


def scaled_h_dual(B: np.ndarray, n: int, d: int) -> np.ndarray:
    base, root_from, vp_to, cross = _dual_matrices(n, d)
    return base + B @ root_from + (1 - B) @ vp_to + np.einsum("ij,ij->i", 1 - B, B @ cross)


def flips(B: np.ndarray) -> np.ndarray:
    return np.count_nonzero(B[:, 1:] != B[:, :-1], axis=1)


def iter_strings(n: int, d: int, chunk: int = CHUNK):
    """Yield ``(start, B)`` chunks covering all strings in lexicographic order."""
    _check_budget(n, d)
    L = (d - 1) * n
    total = 1 << L
    for s in range(0, total, chunk):
        yield s, _bits(L, s, min(total, s + chunk))


def _as_string(k: int, L: int) -> tuple[int, ...]:
    return tuple((k >> (L - 1 - i)) & 1 for i in range(L))


@lru_cache(maxsize=64)
def h_histogram(n: int, d: int) -> tuple[tuple[int, int], ...]:
    """Sorted ``(H, count)`` pairs over all strings of length (d-1)n."""
    acc: dict[int, int] = {}
    for _, B in iter_strings(n, d):
        vals, counts = np.unique(scaled_h(B, n, d).round().astype(np.int64), return_counts=True)
        for v, c in zip(vals.tolist(), counts.tolist()):
            acc[v] = acc.get(v, 0) + c
    return tuple(sorted(acc.items()))


def min_h(n: int, d: int) -> tuple[Fraction, tuple[int, ...], int]:
    """Minimum of h_n, one minimizing string and the number of minimizers."""
    best, where, count = None, None, 0
    for s, B in iter_strings(n, d):
        H = scaled_h(B, n, d).round().astype(np.int64)
        m = int(H.min())
        hits = np.flatnonzero(H == m)
        if best is None or m < best:
            best, where, count = m, s + int(hits[0]), hits.size
        elif m == best:
            count += hits.size
    return Fraction(best, d ** (n + 1)), _as_string(where, (d - 1) * n), count


def c_n(n: int, d: int, lam0: float) -> float:
    """sum over strings of exp(-lam0 (h - 1))."""
    hist = h_histogram(n, d)
    scale = d ** (n + 1)
    H = np.array([v for v, _ in hist], dtype=np.float64)
    C = np.array([c for _, c in hist], dtype=np.float64)
    return float(np.sum(C * np.exp(-lam0 * (H - scale) / scale)))


# ---------------------------------------------------------------------------
# exact exponential polynomials: sum of coeff * exp(-lambda * rate)

def _expoly_sub(p: dict, q: dict) -> dict:
    out = dict(p)
    for r, c in q.items():
        out[r] = out.get(r, Fraction(0)) - c
    return {r: c for r, c in out.items() if c != 0}


def _expoly_eval(p: dict, lam: float, dps: int = 50):
    with mpmath.workdps(dps):
        L = mpmath.mpf(lam)
        total = mpmath.mpf(0)
        for r, c in p.items():
            total += mpmath.mpf(c.numerator) / c.denominator * mpmath.exp(-L * r.numerator / r.denominator)
        return total


def _moment_expoly(n: int, d: int) -> dict:
    """Exact E[exp(-lambda h_n)] for a uniform string."""
    L = (d - 1) * n
    scale = d ** (n + 1)
    return {Fraction(v, scale): Fraction(c, 1 << L) for v, c in h_histogram(n, d)}


def _hb_expoly(n: int, d: int) -> dict:
    """The bit-flip bound exp(-lambda) 2^(1-L) (1 + exp(-lambda/d^2))^(L-1), expanded."""
    L = (d - 1) * n
    return {1 + Fraction(k, d * d): Fraction(math.comb(L - 1, k), 1 << (L - 1)) for k in range(L)}


# ---------------------------------------------------------------------------
# claim report

@dataclass
class ClaimReport:
    d: int
    n_max: int
    lambdas: list[float]
    claims: list[str]
    cells: list[dict] = field(default_factory=list)
    method: str = "exact enumeration"

    def to_dict(self) -> dict:
        return {
            "d": self.d, "n_max": self.n_max, "lambdas": list(self.lambdas),
            "claims": list(self.claims), "method": self.method, "cells": self.cells,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def verdicts(self, claim: str) -> list[dict]:
        return [c for c in self.cells if c["claim"] == claim]


def _fmt(a) -> str:
    return "".join(map(str, a))


def _margin_cell(claim, n, lam, margin: dict) -> dict:
    if not margin:
        return {"claim": claim, "n": n, "lambda": lam, "verdict": "holds", "equality": True,
                "margin": 0.0, "margin_text": "0"}
    val = _expoly_eval(margin, lam)
    return {
        "claim": claim, "n": n, "lambda": lam,
        "verdict": "holds" if val <= 0 else "violated", "equality": False,
        "margin": float(val), "margin_text": mpmath.nstr(val, 30),
    }


def _hc_cell(n: int, d: int) -> dict:
    """Per-string check of h >= 1 + f/d^2, as H d^2 >= d^(n+1) (d^2 + f)."""
    L = (d - 1) * n
    scale = d ** (n + 1)
    fails, witnesses, worst = 0, [], None
    for s, B in iter_strings(n, d):
        H = scaled_h(B, n, d).round().astype(np.int64)
        f = flips(B)
        slack = H * d * d - scale * (d * d + f)
        bad = np.flatnonzero(slack < 0)
        fails += bad.size
        for k in bad[: MAX_WITNESSES - len(witnesses)].tolist():
            witnesses.append(_fmt(_as_string(s + k, L)))
        if bad.size:
            k = int(bad[np.argmin(slack[bad])])
            m = Fraction(int(slack[k]), scale * d * d)
            if worst is None or m < worst[0]:
                worst = (m, _fmt(_as_string(s + k, L)))
    cell = {"claim": "hc", "n": n, "lambda": None, "verdict": "violated" if fails else "holds",
            "violations": fails}
    if fails:
        cell["witnesses"] = witnesses
        cell["worst_margin"] = str(worst[0])
        cell["worst_witness"] = worst[1]
    return cell


def _hexpand_cell(n: int, d: int) -> dict:
    L = (d - 1) * n
    bad = []
    for s, B in iter_strings(n, d):
        diff = np.flatnonzero(scaled_h(B, n, d).round() != scaled_h_dual(B, n, d).round())
        bad += [_fmt(_as_string(s + k, L)) for k in diff[:MAX_WITNESSES].tolist()]
    cell = {"claim": "hexpand", "n": n, "lambda": None, "verdict": "violated" if bad else "holds"}
    if bad:
        cell["witnesses"] = bad[:MAX_WITNESSES]
    return cell


def constant_one(n: int, d: int) -> Fraction:
    """d^-n + sum over nerves of d^(x-n-1); equals 1."""
    D = Fraction(d)
    return D ** -n + (d - 1) * sum(D ** (x - n - 1) for x in range(1, n + 1))


def _constant1_cell(n: int, d: int) -> dict:
    value = constant_one(n, d)
    sums_ok = sum(walk_halting_law(d, n, "vp")) == 1 and sum(walk_halting_law(d, n, "v")) == 1
    ok = value == 1 and sums_ok
    return {"claim": "constant1", "n": n, "lambda": None, "verdict": "holds" if ok else "violated",
            "value": str(value)}


def _hmin_cell(n: int, d: int) -> dict:
    m, a, count = min_h(n, d)
    return {"claim": "hmin", "n": n, "lambda": None, "verdict": "holds" if m >= 1 else "violated",
            "min_h": str(m), "argmin": _fmt(a), "minimizers": count}


def enumerate_claims(d: int, n_max: int, lambdas, claims=CLAIMS) -> ClaimReport:
    """Check the listed claims for every n <= n_max by full enumeration.

    hc: h >= 1 + f/d^2 per string. hb: E[exp(-lambda h)] against the bit-flip
    bound. Sb: the same bound summed over strings. hexpand: closed form of h
    against the path-counting assembly. constant1: the unit identity. hmin:
    min h >= 1. Margins are exact exponential polynomials, printed at 50 digits.
    """
    claims = [c.strip() for c in claims]
    unknown = set(claims) - set(CLAIMS) - {"lemmaA"}
    if unknown:
        raise ParameterError(f"unknown claims: {sorted(unknown)}")
    if n_max < 1:
        raise ParameterError("n_max must be >= 1")
    _check_budget(n_max, d)
    lambdas = [float(x) for x in lambdas]
    report = ClaimReport(d, n_max, lambdas, claims)
    for n in range(1, n_max + 1):
        if "constant1" in claims:
            report.cells.append(_constant1_cell(n, d))
        if "hexpand" in claims:
            report.cells.append(_hexpand_cell(n, d))
        if "hmin" in claims:
            report.cells.append(_hmin_cell(n, d))
        if "hc" in claims:
            report.cells.append(_hc_cell(n, d))
        if "hb" in claims or "Sb" in claims:
            margin = _expoly_sub(_moment_expoly(n, d), _hb_expoly(n, d))
            hc = _hc_cell(n, d) if "hb" in claims else None
            for lam in lambdas:
                if "hb" in claims:
                    cell = _margin_cell("hb", n, lam, margin)
                    if cell["verdict"] == "violated":
                        cell["witnesses"] = hc.get("witnesses", [])
                    report.cells.append(cell)
                if "Sb" in claims:
                    scaled = {r: c * (1 << ((d - 1) * n)) for r, c in margin.items()}
                    report.cells.append(_margin_cell("Sb", n, lam, scaled))
    return report


# ---------------------------------------------------------------------------
# certificate

def s_n_upper(n: int, d: int, lam: float, mode: str, lambda0: float) -> float:
    """Upper bound on s_n at lambda.

    paper: exp(-lambda) 2 (1 + exp(-lambda/d^2))^((d-1)n - 1).
    exact: exp(-lambda) c_n(lambda0), valid for lambda >= lambda0 because min h >= 1,
    which is re-checked here.
    """
    L = (d - 1) * n
    if mode == "paper":
        return math.exp(-lam) * 2 * (1 + math.exp(-lam / d**2)) ** (L - 1)
    if mode != "exact":
        raise ParameterError("mode must be 'paper' or 'exact'")
    if lam < lambda0:
        raise ParameterError("exact mode needs lambda >= lambda0")
    _guard_min_h(n, d)
    return math.exp(-lam) * c_n(n, d, lambda0)


@lru_cache(maxsize=None)
def _guard_min_h(n: int, d: int):
    m, a, _ = min_h(n, d)
    if m < 1:
        raise SoundnessError(n, d, a, m)


def seed_lambda(mu: float, d: int, alpha: float) -> float:
    """Largest lambda0 with sum_n exp(-(mu/(d+1)) d^(1-n)) (1-alpha)^(n-1) alpha <= exp(-lambda0).

    Terms are summed until the exponent drops below 1e-17; the rest is
    bounded by the geometric tail (1-alpha)^n.
    """
    if mu < 0 or not 0 < alpha <= 1:
        raise ParameterError("need mu >= 0 and alpha in (0, 1]")
    if mu == 0:
        return 0.0
    total, n = 0.0, 1
    while True:
        e = mu / (d + 1) * float(d) ** (1 - n)
        total += math.exp(-e) * (1 - alpha) ** (n - 1) * alpha
        if alpha == 1 or e < 1e-17 or (1 - alpha) ** n == 0:
            break
        n += 1
    tail = (1 - alpha) ** n
    return max(-math.log(min(1.0, (total + tail) * (1 + SLACK))), 0.0)


def _bracket(n: int, d: int, lam0: float, mode: str) -> float:
    if mode == "paper":
        return 2 * (1 + math.exp(-lam0 / d**2)) ** ((d - 1) * n - 1)
    _guard_min_h(n, d)
    return c_n(n, d, lam0)


def evaluate_F(d: int, alpha: float, mode: str, mu: float, lam0: float, K: int) -> tuple[float, float, float | None]:
    """Head (n <= K, with slack) and tail bound of F(mu, lam0); also gamma in exact mode.

    Returns an infinite tail when the tail series does not converge.
    """
    head = 0.0
    for n in range(1, K + 1):
        w = (1 - alpha) ** (n - 1) * alpha
        if w == 0:
            break
        head += math.exp(-mu / (d + 1) * float(d) ** (1 - n)) * _bracket(n, d, lam0, mode) * w
    head *= 1 + SLACK
    if alpha == 1:
        return head, 0.0, None
    if mode == "paper":
        q = 1 + math.exp(-lam0 / d**2)
        r = q ** (d - 1) * (1 - alpha)
        if r >= 1:
            return head, math.inf, None
        return head, 2 * alpha / (q * (1 - alpha)) * r ** (K + 1) / (1 - r) * (1 + SLACK), None
    lo = max(2, math.ceil(K / 2))
    if lo > K:
        return head, math.inf, None
    cs = {n: c_n(n, d, lam0) for n in range(lo - 1, K + 1)}
    gamma = max(cs[n] / cs[n - 1] for n in range(lo, K + 1))
    g = gamma * (1 - alpha)
    if g >= 1:
        return head, math.inf, gamma
    tail = cs[K] * alpha * (1 - alpha) ** (K - 1) * g / (1 - g) * (1 + SLACK)
    return head, tail, gamma


CERT_FIELDS = ("d", "tau", "alpha", "mode", "lambda0", "mu0", "K", "head", "tail",
               "tail_hypothesis", "claims_digest", "verdict")


@dataclass
class Certificate:
    d: int
    tau: str
    alpha: float
    mode: str
    lambda0: float | None
    mu0: float | None
    K: int
    head: float | None
    tail: float | None
    tail_hypothesis: str | None
    claims_digest: str
    verdict: str
    details: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in CERT_FIELDS}


def _hypothesis_text(mode: str, alpha: float, K: int, gamma, report: ClaimReport) -> str | None:
    if alpha == 1:
        return None
    if mode == "exact":
        return (f"H({K}): c_n(lambda0) <= c_{K}(lambda0) * gamma^(n-{K}) for n > {K}, "
                f"gamma = {gamma!r} = max of c_n/c_(n-1) over {max(2, math.ceil(K / 2))} <= n <= {K}")
    bad = sorted({c["n"] for c in report.cells if c["claim"] == "hb" and c["verdict"] == "violated"})
    text = "bit-flip bound E[exp(-lambda h_n)] <= exp(-lambda) 2^(1-L) (1+exp(-lambda/d^2))^(L-1) for all n"
    if bad:
        text += f"; enumeration at lambda0 finds it violated at n in {bad}"
    return text


def certify(d: int, tau: ThresholdSpec, mode: str, K: int, mu_max: float = 1e6, rel_tol: float = 1e-12) -> Certificate:
    """Smallest mu0 (to ``rel_tol``) satisfying the bootstrap summability and seed conditions.

    lambda0 is always the seed value ``seed_lambda(mu0)``: every bracketed
    factor decreases in lambda0, so this choice is optimal, and F(mu,
    seed_lambda(mu)) decreases in mu, so bisection finds the smallest mu0.
    """
    if K < 1:
        raise ParameterError("K must be >= 1")
    if mode not in ("paper", "exact"):
        raise ParameterError("mode must be 'paper' or 'exact'")
    alpha = float(tau.alpha(d))
    if not alpha > 0:
        raise ParameterError("alpha must be positive")
    if mode == "exact":
        _check_budget(K, d)
        if alpha < 1 and K < 2:
            raise ParameterError("exact mode needs K >= 2 when alpha < 1")
    target = math.exp(-1)
    n_claims = min(K, MAX_ENUM_BITS // (d - 1))

    def F(mu):
        lam0 = seed_lambda(mu, d, alpha)
        head, tail, gamma = evaluate_F(d, alpha, mode, mu, lam0, K)
        return head + tail, lam0, head, tail, gamma

    surface = []
    lo, hi = 0.0, 1.0
    while True:
        val, lam0, *_ = F(hi)
        surface.append({"mu": hi, "lambda0": lam0, "F": val})
        if val <= target:
            break
        lo, hi = hi, 2 * hi
        if hi > mu_max:
            report = enumerate_claims(d, n_claims, [], ("hexpand", "constant1", "hmin"))
            return Certificate(d, tau.to_string(), alpha, mode, None, None, K, None, None, None,
                               report.digest(), "not-found", {"surface": surface, "claims": report.to_dict()})
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if F(mid)[0] <= target:
            hi = mid
        else:
            lo = mid
    val, lam0, head, tail, gamma = F(hi)
    lambdas = [lam0]
    report = enumerate_claims(d, n_claims, lambdas, CLAIMS)
    hyp = _hypothesis_text(mode, alpha, K, gamma, report)
    verdict = "certified" if hyp is None else "certified-modulo-hypothesis"
    return Certificate(
        d, tau.to_string(), alpha, mode, lam0, hi, K, head, tail, hyp, report.digest(), verdict,
        {"F": val, "gamma": gamma, "surface": surface, "claims": report.to_dict()},
    )
