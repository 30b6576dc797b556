"""Self-similar threshold frog model and activation statistics of the spine gadget."""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .gadget import SpineSystem, nerve_positions, run_gadgets, sample_operator
from .prob import INF_THRESHOLD, ParameterError, RngStream, ThresholdSpec
from .tree import ModelParams

__all__ = [
    "alpha",
    "sample_first_visit_activation",
    "LazyNbPath",
    "sample_lazy_nb_path",
    "SsfmSample",
    "simulate_ssfm",
    "SpineSystem",
    "sample_operator",
    "ActivationEstimate",
    "estimate_activation",
    "lemma_a_exponent",
    "verify_lemma_A",
    "all_strings",
]


def alpha(tau: ThresholdSpec, d: int) -> float:
    """Probability that the first visitor of a fresh vertex activates it."""
    if d < 2:
        raise ParameterError("d must be >= 2")
    return tau.alpha(d)


def sample_first_visit_activation(tau: ThresholdSpec, d: int, size: int, rng: RngStream) -> np.ndarray:
    """Whether a fresh vertex activates under its first visitor: 1 + G >= T, G ~ Geo0(d/(d+1))."""
    gen = rng.gen
    dwell = gen.geometric(d / (d + 1), size=size)  # 1 + Geo0 lives on {1, 2, ...}
    return dwell >= tau.sample(gen, size)


# ---------------------------------------------------------------------------
# lazy non-backtracking walk on the d-ary tree

@dataclass
class LazyNbPath:
    vertices: list[tuple[int, ...]]
    dwell: list[int]
    termination: str  # "root" or "cap"

    @property
    def length(self) -> int:
        return len(self.vertices) - 1


def sample_lazy_nb_path(d: int, start_depth: int, max_steps: int, rng: RngStream) -> LazyNbPath:
    """Walk from the vertex ``(0,)*start_depth`` until it reaches the root or ``max_steps`` ticks pass.

    Vertices are child-index tuples. ``dwell[k]`` is the number of ticks
    spent at ``vertices[k]``; the start vertex is left at time 1, so its
    dwell is 1.
    """
    if max_steps < 1 or start_depth < 0 or d < 2:
        raise ParameterError("need max_steps >= 1, start_depth >= 0, d >= 2")
    gen = rng.gen
    start = (0,) * start_depth
    vertices, dwell = [start], [1]
    on_path = {start}
    u = start
    for t in range(1, max_steps + 1):
        if u != start and gen.random() < 1 / (d + 1):
            dwell[-1] += 1
            continue
        nbrs = [u + (k,) for k in range(d)]
        if u:
            nbrs.append(u[:-1])
        nbrs = [w for w in nbrs if w not in on_path]
        u = nbrs[int(gen.integers(len(nbrs)))]
        vertices.append(u)
        dwell.append(1)
        on_path.add(u)
        if not u:
            return LazyNbPath(vertices, dwell, "root")
    return LazyNbPath(vertices, dwell, "cap")


# ---------------------------------------------------------------------------
# the self-similar model on the tree

@dataclass
class SsfmSample:
    visits: int
    caps_hit: tuple[str, ...] = ()
    vertices: int = 0


class _Uniforms:
    """Buffered uniforms; scalar numpy calls dominate otherwise."""

    def __init__(self, gen: np.random.Generator, chunk: int = 8192):
        self.gen, self.chunk = gen, chunk
        self.buf, self.pos = gen.random(chunk), 0

    def __call__(self) -> float:
        if self.pos == self.chunk:
            self.buf, self.pos = self.gen.random(self.chunk), 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


def _threshold_sampler(tau: ThresholdSpec):
    values = [INF_THRESHOLD if v == math.inf else int(v) for v, _ in tau.atoms]
    cum = list(itertools.accumulate(float(p) for _, p in tau.atoms))
    if len(values) == 1:
        return lambda u: values[0]
    return lambda u: values[min(np.searchsorted(cum, u * cum[-1], side="right"), len(values) - 1)]


def simulate_ssfm(
    params: ModelParams,
    depth_cap: int,
    step_cap: int,
    rng: RngStream,
    visit_cap: int | None = None,
) -> SsfmSample:
    """One sample of the root-visit total V' of the self-similar model.

    Frogs never enter vertices deeper than ``depth_cap``; the run stops after
    ``step_cap`` vertex entries or frog moves, or once ``visit_cap`` root
    visits are seen. Every cap can only lower the count.

    Activated frogs are processed first-in first-out. Which frog reaches a
    fresh vertex first does not affect the law: the entrant always continues
    with fresh randomness and later entrants are killed.
    """
    if depth_cap < 1 or step_cap < 1:
        raise ParameterError("caps must be >= 1")
    d, mu = params.d, params.mu
    gen = rng.gen
    unif = _Uniforms(gen)
    threshold = _threshold_sampler(params.tau)
    log_stay = math.log(1 / (d + 1))
    depth = [0]
    parent = [-1]
    children: dict[tuple[int, int], int] = {}
    queue: deque[tuple[int, int]] = deque()
    visits = 0
    steps = 0
    caps: set[str] = set()

    def enter(p: int, k: int) -> None:
        # a frog moves away from the root into child k of p
        nonlocal steps
        if depth[p] + 1 > depth_cap:
            caps.add("depth")
            return
        if (p, k) in children:
            return  # only-one rule
        x = len(depth)
        children[(p, k)] = x
        depth.append(depth[p] + 1)
        parent.append(p)
        while True:
            steps += 1
            dwell = 1 + int(math.log(1.0 - unif()) / log_stay)
            if dwell >= threshold(unif()):
                released = int(gen.poisson(mu))
                if released:
                    queue.append((x, released))
            k = min(int(unif() * d), d - 1)
            if depth[x] + 1 > depth_cap:
                caps.add("depth")
                return
            nxt = len(depth)
            children[(x, k)] = nxt
            depth.append(depth[x] + 1)
            parent.append(x)
            x = nxt

    enter(0, min(int(unif() * d), d - 1))
    while queue:
        x, count = queue.popleft()
        for _ in range(count):
            if steps >= step_cap:
                caps.add("step")
                return SsfmSample(visits, tuple(sorted(caps)), len(depth))
            steps += 1
            if unif() < 1 / (d + 1):
                came, w = x, parent[x]
                while True:
                    steps += 1
                    if w == 0:
                        visits += 1
                        break
                    if unif() < 1 / d:
                        came, w = w, parent[w]
                        continue
                    # uniform over the d-1 children other than the one we came from
                    came_slot = next(k for k in range(d) if children.get((w, k)) == came)
                    k = min(int(unif() * (d - 1)), d - 2)
                    enter(w, k if k < came_slot else k + 1)
                    break
            else:
                enter(x, min(int(unif() * d), d - 1))
            if visit_cap is not None and visits >= visit_cap:
                caps.add("visit")
                return SsfmSample(visits, tuple(sorted(caps)), len(depth))
    return SsfmSample(visits, tuple(sorted(caps)), len(depth))


def simulate_ssfm_many(
    params: ModelParams,
    reps: int,
    depth_cap: int,
    step_cap: int,
    rng: RngStream,
    visit_cap: int | None = None,
) -> list[SsfmSample]:
    """``reps`` independent samples; replica ``r`` uses stream ``rng.replica(r)``."""
    return [simulate_ssfm(params, depth_cap, step_cap, rng.replica(r), visit_cap) for r in range(reps)]


# ---------------------------------------------------------------------------
# activation statistics

def all_strings(length: int):
    return [tuple(a) for a in itertools.product((0, 1), repeat=length)]


@dataclass
class ActivationEstimate:
    a: tuple[int, ...]
    n: int
    d: int
    mu: float
    lam: float
    reps: int
    p_exact: float  # P(A = a | N = n)
    se_exact: float
    p_variant: float  # P(A^a | N = n)
    se_variant: float

    @property
    def ratio(self) -> float:
        return self.p_exact / self.p_variant if self.p_variant > 0 else math.nan


def _poisson_source(gen: np.random.Generator, lam: float):
    return lambda k: gen.poisson(lam, size=k)


def estimate_activation(
    a, n: int, d: int, mu: float, lam: float, reps: int, rng: RngStream, chunk: int = 200_000
) -> ActivationEstimate:
    """Estimate P(A = a | N = n) and P(A^a | N = n) with Poi(lam) at v' and the nerves."""
    a = tuple(int(b) for b in a)
    L = (d - 1) * n
    if len(a) != L or any(b not in (0, 1) for b in a):
        raise ParameterError(f"a must be a 0/1 string of length (d-1)n = {L}")
    mask = np.array(a, dtype=bool)
    hit_exact = hit_variant = 0
    for which, stream in ((0, rng.child(0)), (1, rng.child(1))):
        gen = stream.gen
        done = 0
        while done < reps:
            m = min(chunk, reps - done)
            x_v = gen.poisson(mu, size=m)
            w_vp = gen.poisson(lam, size=m)
            if which == 0:
                _, act = run_gadgets(d, n, x_v, w_vp, _poisson_source(gen, lam), gen)
                hit_exact += int(np.sum(np.all(act == mask, axis=1)))
            else:
                _, act = run_gadgets(d, n, x_v, w_vp, _poisson_source(gen, lam), gen, dead=~mask)
                hit_variant += int(np.sum(np.all(act[:, mask], axis=1)))
            done += m
    p1, p2 = hit_exact / reps, hit_variant / reps
    return ActivationEstimate(
        a, n, d, mu, lam, reps,
        p1, math.sqrt(p1 * (1 - p1) / reps),
        p2, math.sqrt(p2 * (1 - p2) / reps),
    )


def lemma_a_exponent(a, n: int, d: int, mu: float, lam: float) -> float:
    """Sum over empty nerves (x, j) of the Poisson mean of particles reaching them."""
    a = np.asarray(a, dtype=float)
    y = nerve_positions(n, d).astype(float)
    dist = np.abs(y[:, None] - y[None, :])
    cross = np.power(float(d), -dist - 1) @ a  # sum over live (y,i) of d^-|y-x|-1
    m = mu / (d + 1) * np.power(float(d), y - n) + lam * np.power(float(d), y - n - 1) + lam * cross
    return float(np.sum((1 - a) * m))


def verify_lemma_A(grid, reps: int, rng: RngStream) -> list[dict]:
    """Compare estimated P(A=a)/P(A^a) with the closed form on every grid cell.

    Each cell is a mapping with keys ``d, n, a, mu, lambda``; ``a`` may be
    ``"all"`` to expand into every string. The z-score tests
    P(A=a) - R P(A^a) = 0 with R the predicted ratio.
    """
    cells = []
    for cell in grid:
        d, n = int(cell["d"]), int(cell["n"])
        strings = all_strings((d - 1) * n) if cell.get("a", "all") == "all" else [tuple(cell["a"])]
        for a in strings:
            cells.append((d, n, a, float(cell["mu"]), float(cell["lambda"])))
    if not cells:
        raise ParameterError("empty grid")
    rows = []
    for idx, (d, n, a, mu, lam) in enumerate(cells):
        est = estimate_activation(a, n, d, mu, lam, reps, rng.child(idx))
        predicted = math.exp(-lemma_a_exponent(a, n, d, mu, lam))
        diff = est.p_exact - predicted * est.p_variant
        se = math.hypot(est.se_exact, predicted * est.se_variant)
        z = diff / se if se > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
        rows.append(
            {
                "d": d, "n": n, "a": "".join(map(str, a)), "mu": mu, "lambda": lam, "reps": reps,
                "p_exact": est.p_exact, "se_exact": est.se_exact,
                "p_variant": est.p_variant, "se_variant": est.se_variant,
                "predicted_ratio": predicted, "estimated_ratio": est.ratio, "z": z,
                "verdict": "holds" if abs(z) <= 4 else "violated",
            }
        )
    return rows
