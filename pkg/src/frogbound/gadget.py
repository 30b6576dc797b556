"""The spine gadget behind the operator B.

Graph for spine length ``n``: the root, spine vertices ``1..n`` (``n`` is v),
the leaf v' hanging below v, and ``d-1`` leaf nerves on every spine vertex.
Particles walk non-backtracking and halt at the first leaf they reach.

Leaves are indexed ``0`` (root), ``1`` (v'), ``2 + q`` for nerve ``q``,
where ``q = (y-1)*(d-1) + i`` for spine position ``y`` and slot ``i``.
Sources are indexed the same way except that row ``0`` is v.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

from .prob import ParameterError, RngStream

ROOT, VPRIME = 0, 1
SOURCE_V = 0


def nerve_index(y: int, i: int, d: int) -> int:
    return (y - 1) * (d - 1) + i


def nerve_positions(n: int, d: int) -> np.ndarray:
    """Spine position y of every nerve, in nerve order."""
    return np.repeat(np.arange(1, n + 1), d - 1)


def _check(d: int, n: int):
    if d < 2 or n < 1:
        raise ParameterError(f"need d >= 2 and n >= 1, got d={d}, n={n}")


# ---------------------------------------------------------------------------
# halting laws

def _graph(d: int, n: int) -> dict:
    adj: dict = {"root": ["s1"]}
    for y in range(1, n + 1):
        up = "root" if y == 1 else f"s{y - 1}"
        down = "vp" if y == n else f"s{y + 1}"
        adj[f"s{y}"] = [up, down] + [("nerve", y, i) for i in range(d - 1)]
        for i in range(d - 1):
            adj[("nerve", y, i)] = [f"s{y}"]
    adj["vp"] = [f"s{n}"]
    return adj


def _leaf_index(node, d: int) -> int:
    if node == "root":
        return ROOT
    if node == "vp":
        return VPRIME
    _, y, i = node
    return 2 + nerve_index(y, i, d)


def walk_halting_law(d: int, n: int, source) -> list[Fraction]:
    """Halting law of one particle, by exhaustive non-backtracking path counting.

    ``source`` is ``"v"``, ``"vp"`` or ``("nerve", y, i)``. This walks the
    explicit graph and serves as the independent check of :func:`halting_law`.
    """
    _check(d, n)
    adj = _graph(d, n)
    law = [Fraction(0)] * (2 + (d - 1) * n)
    start = f"s{n}" if source == "v" else source
    stack = [(start, None, Fraction(1))]
    while stack:
        node, prev, p = stack.pop()
        if prev is not None and len(adj[node]) == 1:
            law[_leaf_index(node, d)] += p
            continue
        options = [u for u in adj[node] if u != prev]
        for u in options:
            stack.append((u, node, p / len(options)))
    return law


def halting_law(d: int, n: int, source) -> list[Fraction]:
    """Closed-form halting law (exact) for a particle started at ``source``."""
    _check(d, n)
    D = Fraction(d)
    L = (d - 1) * n
    law = [Fraction(0)] * (2 + L)
    if source == "v":
        law[ROOT] = D ** (1 - n) / (d + 1)
        law[VPRIME] = Fraction(1, d + 1)
        for y in range(1, n + 1):
            for i in range(d - 1):
                law[2 + nerve_index(y, i, d)] = D ** (y - n) / (d + 1)
        return law
    if source == "vp":
        law[ROOT] = D ** -n
        for x in range(1, n + 1):
            for j in range(d - 1):
                law[2 + nerve_index(x, j, d)] = D ** (x - n - 1)
        return law
    _, y, i = source
    law[ROOT] = D ** -y
    law[VPRIME] = D ** (y - n - 1)
    for x in range(1, n + 1):
        for j in range(d - 1):
            if (x, j) != (y, i):
                law[2 + nerve_index(x, j, d)] = D ** (-abs(y - x) - 1)
    return law


@lru_cache(maxsize=512)
def halting_table(d: int, n: int) -> np.ndarray:
    """Float matrix of halting laws: row 0 is v, row 1 is v', row 2+q nerve q."""
    rows = [halting_law(d, n, "v"), halting_law(d, n, "vp")]
    rows += [halting_law(d, n, ("nerve", y, i)) for y in range(1, n + 1) for i in range(d - 1)]
    table = np.array([[float(p) for p in row] for row in rows])
    table /= table.sum(axis=1, keepdims=True)
    table.setflags(write=False)
    return table


# ---------------------------------------------------------------------------
# explicit-particle realization

@dataclass
class SpineSystem:
    """One realization of the gadget with per-particle halting leaves."""

    n: int
    d: int
    count_at_v: int
    count_at_vprime: int
    nerve_counts: np.ndarray
    activation: np.ndarray
    root_halts: int
    dest_v: np.ndarray = field(repr=False)
    dest_vprime: np.ndarray = field(repr=False)
    dest_nerves: list = field(repr=False)

    @property
    def total_particles(self) -> int:
        return self.count_at_v + self.count_at_vprime + int(self.nerve_counts.sum())

    def root_weight(self) -> float:
        """sum over activated nerves of d^-y."""
        y = nerve_positions(self.n, self.d)
        return float(np.sum(self.activation * np.power(float(self.d), -y.astype(float))))


def activation_closure(
    n: int,
    d: int,
    dest_v: np.ndarray,
    dest_vprime: np.ndarray,
    dest_nerves: list,
    order_rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, int]:
    """Least activated set and root-halt count from pre-sampled halting leaves.

    Pending particles are processed one at a time; ``order_rng`` shuffles the
    pending pool before every pick, which must not change the outcome.
    """
    L = (d - 1) * n
    activated = np.zeros(L, dtype=bool)
    pending = list(dest_v) + list(dest_vprime)
    root = 0
    while pending:
        if order_rng is not None:
            k = int(order_rng.integers(len(pending)))
            pending[k], pending[-1] = pending[-1], pending[k]
        leaf = int(pending.pop())
        if leaf == ROOT:
            root += 1
        elif leaf >= 2 and not activated[leaf - 2]:
            activated[leaf - 2] = True
            pending.extend(dest_nerves[leaf - 2])
    return activated, root


def sample_operator(
    d: int,
    mu: float,
    pi_sampler: Callable[[RngStream, int], np.ndarray],
    rng: RngStream,
    *,
    n: int | None = None,
    alpha: float | None = None,
) -> SpineSystem:
    """Build one gadget, sample every particle's halting leaf, and close the activation.

    Give either a fixed spine length ``n`` or ``alpha``, from which N ~ Geo(alpha).
    ``pi_sampler(rng, k)`` returns ``k`` i.i.d. counts for v' and the nerves.
    """
    if (n is None) == (alpha is None):
        raise ParameterError("give exactly one of n and alpha")
    if n is None:
        if not 0 < alpha <= 1:
            raise ParameterError(f"alpha must lie in (0, 1], got {alpha!r}")
        n = int(rng.gen.geometric(alpha))
    _check(d, n)
    if mu < 0:
        raise ParameterError("mu must be >= 0")
    gen = rng.gen
    L = (d - 1) * n
    table = halting_table(d, n)
    x_v = int(gen.poisson(mu))
    counts = np.asarray(pi_sampler(rng, L + 1), dtype=np.int64)
    w_vp, nerve_counts = int(counts[0]), counts[1:]
    leaves = np.arange(2 + L)
    dest_v = gen.choice(leaves, size=x_v, p=table[0])
    dest_vp = gen.choice(leaves, size=w_vp, p=table[1])
    dest_nerves = [gen.choice(leaves, size=int(c), p=table[2 + q]) for q, c in enumerate(nerve_counts)]
    activation, root = activation_closure(n, d, dest_v, dest_vp, dest_nerves)
    return SpineSystem(n, d, x_v, w_vp, nerve_counts, activation, root, dest_v, dest_vp, dest_nerves)


# ---------------------------------------------------------------------------
# vectorized engine

def run_gadgets(
    d: int,
    n: int,
    x_v: np.ndarray,
    w_vprime: np.ndarray,
    nerve_source: Callable[[int], np.ndarray],
    gen: np.random.Generator,
    dead: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run many gadgets of spine length ``n`` at once.

    Particle counts are split over leaves by multinomial draws per source, so
    the cost does not grow with the number of particles. Nerve counts are
    drawn from ``nerve_source(k)`` only for nerves that get activated, which
    leaves the law unchanged. Nerves flagged in ``dead`` hold no particles.

    Returns ``(root_halts, activated)`` with shapes ``(M,)`` and ``(M, (d-1)n)``.
    """
    table = halting_table(d, n)
    L = (d - 1) * n
    x_v = np.asarray(x_v, dtype=np.int64)
    w_vprime = np.asarray(w_vprime, dtype=np.int64)
    hits = gen.multinomial(x_v, table[0]) + gen.multinomial(w_vprime, table[1])
    root = hits[:, ROOT].astype(np.int64)
    activated = hits[:, 2:] > 0
    released = np.zeros_like(activated)
    if dead is not None:
        released[:, np.asarray(dead, dtype=bool)] = True
    while True:
        fresh = activated & ~released
        cols = np.flatnonzero(fresh.any(axis=0))
        if cols.size == 0:
            break
        for q in cols:
            rows = np.flatnonzero(fresh[:, q])
            released[rows, q] = True
            w = np.asarray(nerve_source(rows.size), dtype=np.int64)
            h = gen.multinomial(w, table[2 + q])
            root[rows] += h[:, ROOT]
            activated[rows] |= h[:, 2:] > 0
    return root, activated


@dataclass
class GadgetBatch:
    """Per-gadget summaries from :func:`run_gadget_batch`."""

    n: np.ndarray
    root_halts: np.ndarray
    nerve_weight: np.ndarray  # sum of A_{y,i} d^-y
    activated: np.ndarray  # number of activated nerves


def run_gadget_batch(
    d: int,
    n_values: np.ndarray,
    x_v: np.ndarray,
    w_vprime: np.ndarray,
    nerve_source: Callable[[int], np.ndarray],
    gen: np.random.Generator,
) -> GadgetBatch:
    """Like :func:`run_gadgets` but with a spine length per gadget."""
    n_values = np.asarray(n_values, dtype=np.int64)
    M = n_values.size
    root = np.zeros(M, dtype=np.int64)
    weight = np.zeros(M)
    count = np.zeros(M, dtype=np.int64)
    x_v = np.asarray(x_v, dtype=np.int64)
    w_vprime = np.asarray(w_vprime, dtype=np.int64)
    for n in np.unique(n_values):
        idx = np.flatnonzero(n_values == n)
        r, act = run_gadgets(d, int(n), x_v[idx], w_vprime[idx], nerve_source, gen)
        root[idx] = r
        weight[idx] = act @ np.power(float(d), -nerve_positions(int(n), d).astype(float))
        count[idx] = act.sum(axis=1)
    return GadgetBatch(n_values, root, weight, count)
