"""Random-variate kernel and Poisson-order utilities.

Everything random in the package flows through :class:`RngStream`, a thin
wrapper around a numpy ``Generator`` whose state is a pure function of
``(root_seed, stream_id, *children)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

INF = math.inf
# stand-in for an infinite threshold inside integer arrays
INF_THRESHOLD = np.iinfo(np.int64).max


class ParameterError(ValueError):
    """Raised for out-of-range or malformed model parameters."""


class UnsupportedInput(ValueError):
    """Raised when an input is valid in principle but cannot be handled."""


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by ``(root_seed, stream_id)``.

    Child streams extend the key; distinct keys never share state.
    """

    root_seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()
    gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.root_seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ParameterError("root_seed and stream_id must be 64-bit unsigned integers")
        ss = np.random.SeedSequence(self.root_seed, spawn_key=(self.stream_id, *self.path))
        object.__setattr__(self, "gen", np.random.Generator(np.random.PCG64(ss)))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.root_seed, self.stream_id, (*self.path, int(index)))

    def replica(self, index: int) -> "RngStream":
        """Stream for replica ``index``; independent of any other replica's."""
        return RngStream(self.root_seed, int(index), self.path)


def as_stream(rng: RngStream | int | None) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(0 if rng is None else int(rng))


# ---------------------------------------------------------------------------
# threshold laws

@dataclass(frozen=True)
class ThresholdSpec:
    """Law of the activation threshold: atoms ``(value, prob)``; value may be ``inf``."""

    atoms: tuple[tuple[float | int, Fraction], ...]
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if not self.atoms:
            raise ParameterError("threshold law needs at least one atom")
        seen = set()
        for value, prob in self.atoms:
            if value != INF and (int(value) != value or value < 1):
                raise ParameterError(f"threshold values must be positive integers or inf, got {value!r}")
            if value in seen:
                raise ParameterError(f"duplicate threshold atom {value!r}")
            seen.add(value)
            if not 0 <= prob <= 1:
                raise ParameterError(f"atom probability {prob} outside [0, 1]")
        total = sum(p for _, p in self.atoms)
        if abs(total - 1) > Fraction(1, 10**12):
            raise ParameterError(f"threshold probabilities sum to {float(total)!r}, not 1")
        if self.strict and self.mass_at_infinity >= 1:
            raise ParameterError("threshold law must put mass < 1 at infinity")

    @classmethod
    def delta(cls, k: int) -> "ThresholdSpec":
        return cls(((int(k), Fraction(1)),))

    @classmethod
    def never(cls) -> "ThresholdSpec":
        """All mass at infinity: nothing ever activates. Outside the model's
        parameter space; only for degenerate checks."""
        return cls(((INF, Fraction(1)),), strict=False)

    @classmethod
    def from_pmf(cls, pmf: Mapping[float | int, float | Fraction | str]) -> "ThresholdSpec":
        return cls(tuple((v if v == INF else int(v), Fraction(p)) for v, p in pmf.items()))

    @property
    def mass_at_infinity(self) -> Fraction:
        return sum((p for v, p in self.atoms if v == INF), Fraction(0))

    def alpha_exact(self, d: int) -> Fraction:
        """Activation probability sum_k tau(k) (d+1)^(1-k); the inf atom contributes 0."""
        return sum((p / Fraction(d + 1) ** (int(v) - 1) for v, p in self.atoms if v != INF), Fraction(0))

    def alpha(self, d: int) -> float:
        return float(self.alpha_exact(d))

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` thresholds; infinite ones are ``INF_THRESHOLD``."""
        values = np.array([INF_THRESHOLD if v == INF else int(v) for v, _ in self.atoms], dtype=np.int64)
        if len(values) == 1:
            return np.full(size, values[0], dtype=np.int64)
        probs = np.array([float(p) for _, p in self.atoms])
        return values[gen.choice(len(values), size=size, p=probs / probs.sum())]

    def to_string(self) -> str:
        if len(self.atoms) == 1 and self.atoms[0][0] != INF:
            return f"delta:{int(self.atoms[0][0])}"
        parts = []
        for v, p in self.atoms:
            key = "inf" if v == INF else str(int(v))
            parts.append(f"{key}={_fraction_text(p)}")
        return "pmf:" + ",".join(parts)

    def __str__(self) -> str:
        return self.to_string()


def _fraction_text(p: Fraction) -> str:
    f = float(p)
    return repr(f) if Fraction(f) == p else f"{p.numerator}/{p.denominator}"


_ATOM = re.compile(r"^\s*(inf|\d+)\s*=\s*([0-9.eE+\-/]+)\s*$")


def parse_threshold(spec: str) -> ThresholdSpec:
    """Parse ``delta:K`` or ``pmf:k1=p1,k2=p2[,inf=p]``."""
    kind, sep, body = spec.strip().partition(":")
    if not sep:
        raise ParameterError(f"threshold spec {spec!r}: expected 'delta:K' or 'pmf:...'")
    kind = kind.strip().lower()
    if kind == "delta":
        try:
            k = int(body)
        except ValueError:
            raise ParameterError(f"threshold spec {spec!r}: delta needs an integer") from None
        return ThresholdSpec.delta(k)
    if kind == "pmf":
        atoms = []
        for item in body.split(","):
            m = _ATOM.match(item)
            if not m:
                raise ParameterError(f"threshold spec {spec!r}: bad atom {item!r}")
            key, prob = m.groups()
            try:
                p = Fraction(prob)
            except (ValueError, ZeroDivisionError):
                raise ParameterError(f"threshold spec {spec!r}: bad probability {prob!r}") from None
            atoms.append((INF if key == "inf" else int(key), p))
        return ThresholdSpec(tuple(atoms))
    raise ParameterError(f"threshold spec {spec!r}: unknown kind {kind!r}")


def _check_mean(mean: float) -> float:
    mean = float(mean)
    if not math.isfinite(mean) or mean < 0:
        raise ParameterError(f"Poisson mean must be finite and >= 0, got {mean!r}")
    return mean


# ---------------------------------------------------------------------------
# samplers

def sample_poisson(mean: float, rng: RngStream, size: int | None = None):
    """Poisson variate(s); numpy uses inversion below mean 10 and PTRS rejection above."""
    mean = _check_mean(mean)
    out = rng.gen.poisson(mean, size=size)
    return int(out) if size is None else out


def sample_geometric(p: float, support_from: int, rng: RngStream, size: int | None = None):
    """Geometric variate on {1,2,...} (``support_from=1``) or {0,1,...} (``support_from=0``)."""
    p = float(p)
    if not 0 < p <= 1:
        raise ParameterError(f"geometric parameter must lie in (0, 1], got {p!r}")
    if support_from not in (0, 1):
        raise ParameterError("support_from must be 0 or 1")
    out = rng.gen.geometric(p, size=size) - (1 - support_from)
    return int(out) if size is None else out


def poisson_thin(total_mean: float, probs: Sequence[float], rng: RngStream) -> list[int]:
    """Split Poi(total_mean) individuals into independent classes with the given probabilities."""
    total_mean = _check_mean(total_mean)
    probs = [float(p) for p in probs]
    if any(not 0 <= p <= 1 for p in probs):
        raise ParameterError("thinning probabilities must lie in [0, 1]")
    s = math.fsum(probs)
    if s > 1 + 1e-12:
        raise ParameterError(f"thinning probabilities sum to {s!r} > 1")
    total = rng.gen.poisson(total_mean)
    if total == 0:
        return [0] * len(probs)
    rest = max(0.0, 1.0 - s)
    counts = rng.gen.multinomial(total, probs + [rest] if rest > 0 else probs)
    return [int(c) for c in counts[: len(probs)]]


def poisson_thin_many(total_mean: float, probs: Sequence[float], rng: RngStream, size: int) -> np.ndarray:
    """Vectorized :func:`poisson_thin`; returns an array of shape (size, len(probs))."""
    total_mean = _check_mean(total_mean)
    probs = [float(p) for p in probs]
    s = math.fsum(probs)
    if s > 1 + 1e-12 or any(not 0 <= p <= 1 for p in probs):
        raise ParameterError("invalid thinning probabilities")
    totals = rng.gen.poisson(total_mean, size=size)
    rest = max(0.0, 1.0 - s)
    counts = rng.gen.multinomial(totals, probs + [rest])
    return counts[:, : len(probs)]


# ---------------------------------------------------------------------------
# domination by a Poisson law

def dominates_poisson(neg_exp_moment: float, lam: float) -> bool:
    """Whether Poi(Theta) dominates Poi(lam), given E[exp(-Theta)]."""
    if not 0 <= neg_exp_moment <= 1:
        raise ParameterError("E[exp(-Theta)] must lie in [0, 1]")
    if not (lam >= 0 and math.isfinite(lam)):
        raise ParameterError("lambda must be finite and >= 0")
    return neg_exp_moment <= math.exp(-lam)


def mu_for_domination(
    c: float,
    d: int,
    x_pmf: Mapping[int, float] | Sequence[float],
    lam: float,
    *,
    tail_mass: float | None = None,
    rel_tol: float = 1e-9,
) -> float:
    """Smallest mu with sum_x exp(-c mu d^-x) P(X=x) <= exp(-lam).

    ``x_pmf`` lists the probabilities of a finitely supported X. Missing mass
    is accepted only when ``tail_mass`` bounds it; that mass is charged at its
    worst case (factor 1).
    """
    if c <= 0 or d < 2 or lam < 0:
        raise ParameterError("need c > 0, d >= 2, lambda >= 0")
    items = sorted(x_pmf.items()) if isinstance(x_pmf, Mapping) else list(enumerate(x_pmf))
    xs = np.array([x for x, _ in items], dtype=float)
    ps = np.array([float(p) for _, p in items])
    if np.any(ps < 0) or np.any(xs < 0):
        raise ParameterError("pmf must be nonnegative on {0,1,...}")
    missing = 1.0 - math.fsum(ps)
    if missing > 1e-12:
        if tail_mass is None:
            raise UnsupportedInput("pmf has missing mass and no tail bound was given")
        missing = max(missing, float(tail_mass))
    else:
        missing = 0.0
    target = math.exp(-lam)
    if lam == 0:
        return 0.0
    if missing >= target:
        raise UnsupportedInput("tail mass alone exceeds exp(-lambda); no mu works")

    def lhs(mu):
        return math.fsum(ps * np.exp(-c * mu * np.power(float(d), -xs))) + missing

    hi = max(lam / c, 1.0)
    while lhs(hi) > target:
        hi *= 2
    lo = 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if lhs(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def neg_exp_moment_mc(
    sampler: Callable[[RngStream, int], np.ndarray], reps: int, rng: RngStream
) -> tuple[float, float]:
    """Monte Carlo mean of exp(-Theta) and its standard error."""
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    theta = np.asarray(sampler(rng, reps), dtype=float)
    vals = np.exp(-theta)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.inf
    return mean, se


# ---------------------------------------------------------------------------
# small statistics helpers used across modules

def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def poisson_pmf(k: np.ndarray, mean: float) -> np.ndarray:
    from scipy.stats import poisson

    return poisson.pmf(k, mean)


def chisquare_counts(samples, pmf: Callable[[np.ndarray], np.ndarray], min_expected: float = 5.0) -> float:
    """Chi-square goodness-of-fit p-value of integer samples against ``pmf``.

    Cells with small expected counts are pooled into the upper tail.
    """
    from scipy.stats import chisquare

    samples = np.asarray(samples)
    n = samples.size
    top = int(samples.max()) if n else 0
    ks = np.arange(top + 1)
    probs = pmf(ks)
    obs = np.bincount(samples, minlength=top + 1).astype(float)
    exp = probs * n
    # pool the right tail into the last kept cell, left-to-right
    cells_o, cells_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            cells_o.append(acc_o)
            cells_e.append(acc_e)
            acc_o = acc_e = 0.0
    acc_e += n * max(0.0, 1.0 - probs.sum())
    if cells_e:
        cells_o[-1] += acc_o
        cells_e[-1] += acc_e
    else:
        cells_o, cells_e = [acc_o], [acc_e]
    if len(cells_o) < 2:
        return 1.0
    cells_e = np.array(cells_e)
    cells_e *= n / cells_e.sum()
    return float(chisquare(cells_o, cells_e).pvalue)
