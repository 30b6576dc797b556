"""Recursive distributional equation for V': direct sampling, population dynamics, and Theta."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gadget import nerve_positions, run_gadget_batch, sample_operator
from .prob import ParameterError, RngStream, ThresholdSpec, mean_se
from .tree import ModelParams

__all__ = [
    "EmpiricalDist",
    "sample_rde",
    "sample_rde_many",
    "iterate_B",
    "ThetaParams",
    "sample_theta",
    "sample_theta_many",
    "BootstrapEstimate",
    "estimate_bootstrap",
    "rde_summary",
]

MIN_POPULATION = 1000


@dataclass(frozen=True)
class EmpiricalDist:
    """A multiset of nonnegative integers, stored sorted so that order never matters."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=np.int64).ravel())
        if s.size == 0:
            raise ParameterError("empirical distribution needs at least one sample")
        if s[0] < 0:
            raise ParameterError("samples must be nonnegative")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def point(cls, value: int, size: int = 1) -> "EmpiricalDist":
        return cls(np.full(size, value, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.samples.size)

    def mean(self) -> float:
        return float(self.samples.mean())

    def var(self) -> float:
        return float(self.samples.var())

    def cdf(self, ks) -> np.ndarray:
        """P(X <= k) for each k."""
        return np.searchsorted(self.samples, np.asarray(ks), side="right") / self.size

    def capped_mean(self, cap: int) -> tuple[float, float]:
        return mean_se(np.minimum(self.samples, cap))

    def draw(self, gen: np.random.Generator, m: int) -> np.ndarray:
        """``m`` draws with replacement."""
        return self.samples[gen.integers(0, self.size, size=m)]

    def shifted(self, k: int) -> "EmpiricalDist":
        return EmpiricalDist(self.samples + k)


def _gadget_root_halts(params: ModelParams, m: int, counts, gen: np.random.Generator) -> np.ndarray:
    """Root halts of ``m`` gadgets whose v' and nerve counts come from ``counts(k)``."""
    n = gen.geometric(params.alpha, size=m)
    x_v = gen.poisson(params.mu, size=m)
    return run_gadget_batch(params.d, n, x_v, counts(m), counts, gen).root_halts


def _rde_level(params: ModelParams, k: int, m: int, gen: np.random.Generator) -> np.ndarray:
    if k == 0 or m == 0:
        return np.zeros(m, dtype=np.int64)
    return _gadget_root_halts(params, m, lambda j: _rde_level(params, k - 1, j, gen), gen)


def sample_rde_many(params: ModelParams, k: int, size: int, rng: RngStream, chunk: int = 1024) -> np.ndarray:
    """``size`` independent samples of V'^(k).

    Every count fed into a gadget is a fresh independent sample of the
    previous level, drawn only when the gadget needs it (v' always, a nerve
    once it is activated), so the samples are exact. The cost grows
    geometrically in ``k``.
    """
    if k < 0:
        raise ParameterError("recursion depth must be >= 0")
    gen = rng.gen
    parts = [_rde_level(params, k, min(chunk, size - s), gen) for s in range(0, size, chunk)]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def sample_rde(params: ModelParams, k: int, rng: RngStream) -> int:
    """One sample of V'^(k)."""
    return int(sample_rde_many(params, k, 1, rng)[0])


def iterate_B(pi: EmpiricalDist, params: ModelParams, population_size: int, rng: RngStream) -> EmpiricalDist:
    """Population-dynamics step: ``population_size`` independent samples of B(pi).

    v' and nerve counts are drawn from ``pi`` with replacement.
    """
    if not isinstance(pi, EmpiricalDist):
        raise ParameterError("pi must be an EmpiricalDist")
    if population_size < MIN_POPULATION:
        raise ParameterError(f"population_size must be >= {MIN_POPULATION}")
    gen = rng.gen
    return EmpiricalDist(_gadget_root_halts(params, population_size, lambda j: pi.draw(gen, j), gen))


def rde_summary(dist: EmpiricalDist, atoms: int = 20) -> dict:
    row = {"size": dist.size, "mean": dist.mean(), "variance": dist.var()}
    for k, c in enumerate(dist.cdf(np.arange(atoms + 1))):
        row[f"cdf_{k}"] = float(c)
    return row


# ---------------------------------------------------------------------------
# Theta and the bootstrap step

def theta_value(d: int, mu: float, lam: float, n: int, activation) -> float:
    y = nerve_positions(n, d).astype(float)
    a = np.asarray(activation, dtype=float)
    return mu / (d + 1) * d ** (1.0 - n) + lam * d ** (-float(n)) + lam * float(a @ np.power(float(d), -y))


@dataclass
class ThetaParams:
    d: int
    alpha: float
    mu: float
    lam: float
    n: int
    activation: np.ndarray = field(repr=False)
    theta: float


def sample_theta(d: int, alpha: float, mu: float, lam: float, rng: RngStream, n: int | None = None) -> ThetaParams:
    """One gadget with Poi(lam) counts at v' and the nerves, and its Theta.

    Pass ``n`` to condition on the spine length instead of drawing N ~ Geo(alpha).
    """
    if lam < 0 or mu < 0:
        raise ParameterError("mu and lambda must be >= 0")
    pois = lambda s, k: s.gen.poisson(lam, size=k)
    if n is None:
        g = sample_operator(d, mu, pois, rng, alpha=alpha)
    else:
        g = sample_operator(d, mu, pois, rng, n=n)
    return ThetaParams(d, alpha, mu, lam, g.n, g.activation, theta_value(d, mu, lam, g.n, g.activation))


def sample_theta_many(
    d: int, alpha: float, mu: float, lam: float, size: int, rng: RngStream, n: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Theta samples; returns ``(N, Theta)`` arrays."""
    if lam < 0 or mu < 0:
        raise ParameterError("mu and lambda must be >= 0")
    if not 0 < alpha <= 1:
        raise ParameterError("alpha must lie in (0, 1]")
    gen = rng.gen
    ns = np.full(size, n, dtype=np.int64) if n is not None else gen.geometric(alpha, size=size)
    x_v = gen.poisson(mu, size=size)
    w_vp = gen.poisson(lam, size=size)
    batch = run_gadget_batch(d, ns, x_v, w_vp, lambda k: gen.poisson(lam, size=k), gen)
    nf = ns.astype(float)
    theta = mu / (d + 1) * np.power(float(d), 1 - nf) + lam * np.power(float(d), -nf) + lam * batch.nerve_weight
    return ns, theta


@dataclass
class BootstrapEstimate:
    estimate: float
    std_error: float
    target: float  # e^{-lambda-1}
    verdict: str  # pass | fail | inconclusive
    reps: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def estimate_bootstrap(
    d: int, tau: ThresholdSpec, mu: float, lam: float, reps: int, rng: RngStream, chunk: int = 200_000
) -> BootstrapEstimate:
    """Monte Carlo check of E[exp(-Theta)] <= exp(-lambda-1).

    The verdict is inconclusive when the target lies inside the 4-sigma band.
    """
    if reps < 10_000:
        raise ParameterError("reps must be >= 10^4")
    alpha = tau.alpha(d)
    total = total_sq = 0.0
    for b, s in enumerate(range(0, reps, chunk)):
        _, theta = sample_theta_many(d, alpha, mu, lam, min(chunk, reps - s), rng.child(b))
        e = np.exp(-theta)
        total += float(e.sum())
        total_sq += float((e * e).sum())
    est = total / reps
    var = max(total_sq / reps - est * est, 0.0)
    se = math.sqrt(var / (reps - 1)) if reps > 1 else 0.0
    target = math.exp(-lam - 1)
    if est + 4 * se < target or (se == 0 and est <= target):
        verdict = "pass"
    elif est - 4 * se > target:
        verdict = "fail"
    else:
        verdict = "inconclusive"
    return BootstrapEstimate(est, se, target, verdict, reps)
