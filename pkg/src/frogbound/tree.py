"""Threshold frog model on the d-ary tree, simulated in synchronous ticks.

A block of replicas is advanced together: all frogs of all replicas live in
one position array and every tick is a handful of numpy operations. Each
block owns one random stream, so results never depend on how blocks are
scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .prob import ParameterError, RngStream, ThresholdSpec

# replicas r in [b*BLOCK, (b+1)*BLOCK) share the stream rng.replica(b)
BLOCK = 4096
# proxy runs grow millions of vertices per replica, so they use small blocks
PROXY_BLOCK = 2
# a smaller cap drops enough frogs to kill off supercritical clouds
PROXY_POPULATION_CAP = 20_000
# vertex fields are int32; a threshold this large is never met within any horizon
_INF32 = np.iinfo(np.int32).max


@dataclass(frozen=True)
class ModelParams:
    d: int
    tau: ThresholdSpec
    mu: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ParameterError(f"d must be an integer >= 2, got {self.d!r}")
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise ParameterError(f"mu must be finite and >= 0, got {self.mu!r}")
        if not isinstance(self.tau, ThresholdSpec):
            raise ParameterError("tau must be a ThresholdSpec")

    @property
    def alpha(self) -> float:
        return self.tau.alpha(self.d)


@dataclass
class VisitTrajectory:
    """Root arrivals of one replica, stored sparsely (ticks with A_s > 0)."""

    times: np.ndarray
    arrivals: np.ndarray
    last_tick: int
    caps_hit: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        """V at the last simulated tick (equal to V_horizon)."""
        return int(self.arrivals.sum())

    def dense(self, horizon: int) -> np.ndarray:
        a = np.zeros(horizon, dtype=np.int64)
        keep = self.times <= horizon
        a[self.times[keep] - 1] = self.arrivals[keep]
        return a

    def cumulative(self, horizon: int) -> np.ndarray:
        return np.cumsum(self.dense(horizon))


class _Vertices:
    """Append-only vertex table; children are created on first entry."""

    def __init__(self, d: int, capacity: int):
        self.d = d
        self.size = 0
        self._alloc(max(capacity, 16))

    def _alloc(self, cap: int):
        old = self.size
        def grow(name, fill, shape=()):
            arr = np.full((cap, *shape), fill, dtype=np.int32 if fill is not False else bool)
            if old:
                arr[:old] = getattr(self, name)[:old]
            setattr(self, name, arr)
        grow("parent", -1)
        grow("depth", 0)
        grow("owner", 0)
        grow("visits", 0)
        grow("threshold", _INF32)
        grow("dormant", 0)
        grow("activated", False)
        grow("children", -1, (self.d,))
        self.capacity = cap

    def add(self, parent, depth, owner, threshold, dormant) -> np.ndarray:
        k = len(depth)
        if self.size + k > self.capacity:
            self._alloc(max(2 * self.capacity, self.size + k))
        ids = np.arange(self.size, self.size + k)
        self.parent[ids] = parent
        self.depth[ids] = depth
        self.owner[ids] = owner
        self.threshold[ids] = np.minimum(threshold, _INF32)
        self.dormant[ids] = dormant
        self.size += k
        return ids


def simulate_tfm_block(
    params: ModelParams,
    reps: int,
    horizon: int,
    depth_cap: int,
    population_cap: int | None,
    rng: RngStream,
    stop_at: int | None = None,
) -> list[VisitTrajectory]:
    """Advance ``reps`` independent replicas of the model with one stream.

    Each tick every active frog steps to a uniform neighbor (the root has its
    ``d`` children only). Arrivals then add to visit counts; a nonroot vertex
    whose count reaches its threshold releases its dormant frogs, which first
    move on the next tick. Frogs stepping below ``depth_cap`` are killed.
    Frogs released beyond ``population_cap`` per replica are dropped. With
    ``stop_at``, a replica is frozen once its root count reaches that value.
    """
    if horizon < 1 or depth_cap < 1 or reps < 1:
        raise ParameterError("need horizon >= 1, depth_cap >= 1, reps >= 1")
    d, mu, tau = params.d, params.mu, params.tau
    gen = rng.gen
    V = _Vertices(d, 4 * reps)
    V.add(np.full(reps, -1), np.zeros(reps), np.arange(reps), np.full(reps, _INF32), np.zeros(reps))
    pos = np.arange(reps, dtype=np.int64)
    cum = np.zeros(reps, dtype=np.int64)
    last = np.zeros(reps, dtype=np.int64)
    flags = {name: np.zeros(reps, dtype=bool) for name in ("depth", "population", "horizon", "stopped")}
    ev_t, ev_r, ev_a = [], [], []

    for t in range(1, horizon + 1):
        if pos.size == 0:
            break
        last[np.unique(V.owner[pos])] = t
        dep = V.depth[pos]
        at_root = dep == 0
        choice = gen.integers(0, np.where(at_root, d, d + 1))
        up = choice == d
        new = np.empty_like(pos)
        new[up] = V.parent[pos[up]]
        dn = np.flatnonzero(~up)
        src, k = pos[dn], choice[dn]
        deep = dep[dn] + 1 > depth_cap
        if deep.any():
            flags["depth"][V.owner[src[deep]]] = True
        child = V.children[src, k]
        miss = (child < 0) & ~deep
        if miss.any():
            keys = src[miss] * d + k[miss]
            uk, inv = np.unique(keys, return_inverse=True)
            par = uk // d
            m = uk.size
            ids = V.add(par, V.depth[par] + 1, V.owner[par], tau.sample(gen, m), gen.poisson(mu, size=m))
            V.children[par, uk % d] = ids
            child[miss] = ids[inv]
        child[deep] = -1
        new[dn] = child
        pos = new[new >= 0]

        verts, counts = np.unique(pos, return_counts=True)
        V.visits[verts] += counts
        at = verts < reps
        if at.any():
            r, a = verts[at], counts[at]
            cum[r] += a
            ev_t.append(np.full(r.size, t))
            ev_r.append(r)
            ev_a.append(a)

        cand = verts[~at]
        newly = cand[~V.activated[cand] & (V.visits[cand] >= V.threshold[cand])]
        if newly.size:
            V.activated[newly] = True
            spawn = np.repeat(newly, V.dormant[newly])
            if population_cap is not None and spawn.size:
                alive = np.bincount(V.owner[pos], minlength=reps)
                allowed = np.maximum(population_cap - alive, 0)
                o = V.owner[spawn]
                order = np.argsort(o, kind="stable")
                so = o[order]
                rank = np.arange(so.size) - np.searchsorted(so, so, side="left")
                keep = np.zeros(spawn.size, dtype=bool)
                keep[order] = rank < allowed[so]
                if not keep.all():
                    flags["population"][np.unique(o[~keep])] = True
                spawn = spawn[keep]
            pos = np.concatenate([pos, spawn])

        if stop_at is not None and pos.size:
            done = cum >= stop_at
            if done.any():
                gone = done[V.owner[pos]]
                flags["stopped"][V.owner[pos[gone]]] = True
                pos = pos[~gone]
    if pos.size:
        flags["horizon"][np.unique(V.owner[pos])] = True

    if ev_t:
        T, R, A = (np.concatenate(x) for x in (ev_t, ev_r, ev_a))
    else:
        T = R = A = np.zeros(0, dtype=np.int64)
    order = np.argsort(R, kind="stable")
    T, R, A = T[order], R[order], A[order]
    bounds = np.searchsorted(R, np.arange(reps + 1))
    out = []
    for r in range(reps):
        lo, hi = bounds[r], bounds[r + 1]
        caps = tuple(name for name, f in flags.items() if f[r])
        out.append(VisitTrajectory(T[lo:hi].copy(), A[lo:hi].copy(), int(last[r]), caps))
    return out


def simulate_tfm(
    params: ModelParams,
    horizon: int,
    depth_cap: int,
    population_cap: int | None,
    rng: RngStream,
    stop_at: int | None = None,
) -> VisitTrajectory:
    """Simulate one replica and return its root-visit trajectory."""
    return simulate_tfm_block(params, 1, horizon, depth_cap, population_cap, rng, stop_at)[0]


def _block_job(args):
    params, reps, horizon, depth_cap, population_cap, rng, stop_at = args
    return simulate_tfm_block(params, reps, horizon, depth_cap, population_cap, rng, stop_at)


def simulate_tfm_many(
    params: ModelParams,
    reps: int,
    horizon: int,
    depth_cap: int,
    population_cap: int | None,
    rng: RngStream,
    stop_at: int | None = None,
    workers: int = 1,
    block: int = BLOCK,
) -> list[VisitTrajectory]:
    """``reps`` replicas in blocks; the output does not depend on ``workers``."""
    jobs = []
    for b, start in enumerate(range(0, reps, block)):
        jobs.append((params, min(block, reps - start), horizon, depth_cap, population_cap, rng.replica(b), stop_at))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_job, jobs))
    else:
        parts = [_block_job(j) for j in jobs]
    return [traj for part in parts for traj in part]


def recurrence_proxy(
    params: ModelParams,
    m: int,
    horizon: int,
    depth_cap: int,
    reps: int,
    rng: RngStream,
    population_cap: int | None = PROXY_POPULATION_CAP,
    workers: int = 1,
) -> tuple[float, float]:
    """Estimate P(V_horizon >= m) under the capped dynamics, with its standard error."""
    if m <= 0:
        return 1.0, 0.0
    trajs = simulate_tfm_many(
        params, reps, horizon, depth_cap, population_cap, rng, stop_at=m, workers=workers, block=PROXY_BLOCK
    )
    hits = np.array([tr.total >= m for tr in trajs], dtype=float)
    p = float(hits.mean())
    return p, math.sqrt(p * (1 - p) / reps)


@dataclass
class ProxyConfig:
    m: int = 50
    horizon: int = 10_000
    depth_cap: int = 30
    reps: int = 200
    population_cap: int | None = PROXY_POPULATION_CAP


@dataclass
class SearchConfig:
    mu_min: float = 0.0
    mu_max: float = 100.0
    p_lo: float = 0.05
    p_hi: float = 0.95
    iterations: int = 6


@dataclass
class MuCBracket:
    found: bool
    mu_lo: float | None
    mu_hi: float | None
    curve: list[tuple[float, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "found": self.found,
            "mu_lo": self.mu_lo,
            "mu_hi": self.mu_hi,
            "curve": [{"mu": m, "p": p, "se": s} for m, p, s in self.curve],
        }


def estimate_mu_c(
    d: int,
    tau: ThresholdSpec,
    proxy: ProxyConfig,
    search: SearchConfig,
    rng: RngStream,
    workers: int = 1,
) -> MuCBracket:
    """Empirical bracket for the critical density from the recurrence proxy.

    Every evaluation reuses the same stream (common random numbers), which
    keeps the proxy curve close to monotone. The bracket is an indicator,
    not a proof.
    """
    if not 0 < search.p_lo < search.p_hi < 1:
        raise ParameterError("need 0 < p_lo < p_hi < 1")
    cache: dict[float, tuple[float, float]] = {}

    def proxy_at(mu: float) -> float:
        if mu not in cache:
            params = ModelParams(d, tau, mu)
            cache[mu] = recurrence_proxy(
                params, proxy.m, proxy.horizon, proxy.depth_cap, proxy.reps, rng.child(0),
                proxy.population_cap, workers,
            )
        return cache[mu][0]

    def curve():
        return sorted((mu, p, se) for mu, (p, se) in cache.items())

    lo, hi = float(search.mu_min), float(search.mu_max)
    if not hi > lo:
        return MuCBracket(False, None, None, curve())
    if proxy_at(lo) > search.p_lo or proxy_at(hi) < search.p_hi:
        return MuCBracket(False, None, None, curve())
    # two bisections: largest mu seen with proxy <= p_lo, smallest with proxy >= p_hi
    a, b = lo, hi
    for _ in range(search.iterations):
        mid = 0.5 * (a + b)
        if proxy_at(mid) <= search.p_lo:
            a = mid
        else:
            b = mid
    mu_lo = a
    a, b = mu_lo, hi
    for _ in range(search.iterations):
        mid = 0.5 * (a + b)
        if proxy_at(mid) >= search.p_hi:
            b = mid
        else:
            a = mid
    return MuCBracket(True, mu_lo, b, curve())
