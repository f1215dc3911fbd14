"""Multi-type ERM tree simulation and the equivalent cherry/pendant urn.

The ERM tree grows leaf by leaf: a uniformly random leaf becomes a
branch-point of its own type and receives two new leaves whose types are
drawn from that type's branching row.  The urn chain tracks only the
cherry/pendant census of the same process: cherry balls have weight 2 and
pendant balls weight 1, and one leaf is added per step.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate

import numpy as np

from .exceptions import ParameterError, StateError
from .orders import IndexOrder, generic_lex, paper_k2, type_pairs
from .tree import TypedTree

__all__ = ["ErmParams", "simulate_erm", "UrnState", "UrnRun", "simulate_urn",
           "initial_urn_state", "simulate_urn_ensemble", "default_ball_order"]

ROW_SUM_TOL = 1e-12


class ErmParams:
    """Branching probabilities q_i^{j1j2} of a multi-type ERM tree.

    ``q[i][(j1, j2)]`` (1-based types, j1 <= j2) is the probability that a
    splitting leaf of type i receives children of types {j1, j2}.  Rows
    must sum to 1.  For k=2 the derived constants are exposed:
    c1 = 2 q1_11 + q1_12, c2 = 2 q2_11 + q2_12, c1' = 2 - c2, c2' = 2 - c1.

    ``has_absorbing_type`` flags q_i^{ii} = 1 for some i (the model theory
    assumes this does not happen; simulation still works).
    """

    def __init__(self, k: int, q):
        self.k = int(k)
        self.pairs = type_pairs(self.k)
        self.pair_pos = {p: i for i, p in enumerate(self.pairs)}
        table = np.zeros((self.k, len(self.pairs)))
        if isinstance(q, dict):
            for i, row in q.items():
                for pair, val in row.items():
                    j1, j2 = sorted(pair)
                    table[i - 1, self.pair_pos[(j1, j2)]] += val
        else:
            table[:] = np.asarray(q, dtype=float)
        if np.any(table < -ROW_SUM_TOL) or np.any(table > 1 + ROW_SUM_TOL):
            raise ParameterError("branch probabilities must lie in [0, 1]")
        sums = table.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL * 10:
            bad = int(np.argmax(np.abs(sums - 1.0))) + 1
            raise ParameterError(
                f"row {bad} of q sums to {sums[bad - 1]!r}, expected 1")
        self.q = np.clip(table, 0.0, 1.0)
        self._cum = np.cumsum(self.q, axis=1)
        self._cum[:, -1] = 1.0

    def prob(self, i: int, j1: int, j2: int) -> float:
        a, b = sorted((j1, j2))
        return float(self.q[i - 1, self.pair_pos[(a, b)]])

    def row(self, i: int) -> np.ndarray:
        return self.q[i - 1]

    @property
    def has_absorbing_type(self) -> bool:
        return any(self.prob(i, i, i) == 1.0 for i in range(1, self.k + 1))

    def sample_pair(self, i: int, u: float) -> tuple[int, int]:
        """Child-type pair for a splitting type-i leaf from a uniform draw."""
        return self.pairs[int(np.searchsorted(self._cum[i - 1], u, side="right"))]

    # k=2 derived constants ------------------------------------------------

    def _c(self, i):
        return 2.0 * self.prob(i, 1, 1) + self.prob(i, 1, 2)

    @property
    def c1(self) -> float:
        self._need_k2()
        return self._c(1)

    @property
    def c2(self) -> float:
        self._need_k2()
        return self._c(2)

    @property
    def c1_prime(self) -> float:
        self._need_k2()
        return 2.0 * self.prob(2, 2, 2) + self.prob(2, 1, 2)

    @property
    def c2_prime(self) -> float:
        self._need_k2()
        return 2.0 * self.prob(1, 2, 2) + self.prob(1, 1, 2)

    def _need_k2(self):
        if self.k != 2:
            raise ParameterError("c constants are defined for k=2 only")

    def swapped(self) -> "ErmParams":
        """Parameters with type labels 1 and 2 interchanged (k=2)."""
        self._need_k2()
        return ErmParams(2, {1: {(1, 1): self.prob(2, 2, 2), (1, 2): self.prob(2, 1, 2),
                                 (2, 2): self.prob(2, 1, 1)},
                             2: {(1, 1): self.prob(1, 2, 2), (1, 2): self.prob(1, 1, 2),
                                 (2, 2): self.prob(1, 1, 1)}})

    def __repr__(self):
        rows = {i: {p: round(float(self.q[i - 1, c]), 6)
                    for c, p in enumerate(self.pairs)} for i in range(1, self.k + 1)}
        return f"ErmParams(k={self.k}, q={rows})"


def simulate_erm(params: ErmParams, n: int, initial_type: int = 1,
                 seed=None) -> TypedTree:
    """Grow a multi-type ERM tree to exactly ``n`` leaves.

    Each step picks a leaf uniformly at random, turns it into a
    branch-point of its own type, and attaches two fresh leaves with types
    drawn from the branching row.  Discrete tree (no times).  Reproducible
    for a fixed seed.
    """
    if n < 1:
        raise ParameterError("leaf target must be >= 1")
    if not 1 <= initial_type <= params.k:
        raise ParameterError(f"initial type {initial_type} outside 1..{params.k}")
    rng = np.random.default_rng(seed)
    types = [initial_type]
    parents = [-1]
    leaf_ids = [0]
    # draws in blocks; one uniform picks the leaf, another the child pair
    while len(leaf_ids) < n:
        u = rng.random(2)
        li = int(u[0] * len(leaf_ids))
        node = leaf_ids[li]
        j1, j2 = params.sample_pair(types[node], u[1])
        c1, c2 = len(types), len(types) + 1
        types.append(j1)
        types.append(j2)
        parents.append(node)
        parents.append(node)
        # swap-remove the split leaf, append the two children
        leaf_ids[li] = leaf_ids[-1]
        leaf_ids[-1] = c1
        leaf_ids.append(c2)
    return TypedTree(types, parents, params.k)


# ---------------------------------------------------------------------------
# Urn chain
# ---------------------------------------------------------------------------


def default_ball_order(k: int) -> IndexOrder:
    return paper_k2() if k == 2 else generic_lex(k)


@dataclass(frozen=True)
class UrnState:
    """Ball counts of the cherry/pendant urn at one step."""

    counts: np.ndarray
    order: IndexOrder
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if len(self.counts) != self.order.n_balls:
            raise StateError("urn count vector does not match ball order")
        if np.any(self.counts < 0):
            raise StateError("negative ball count")

    @property
    def weights(self) -> np.ndarray:
        return self.order.ball_weights()

    @property
    def n_leaves(self) -> int:
        """Total weight equals the leaf count of the underlying tree."""
        return int(self.weights @ self.counts)


@dataclass(frozen=True)
class UrnRun:
    """Final urn state plus optional snapshots (step, counts) along the way."""

    final: UrnState
    snapshots: list


def initial_urn_state(params: ErmParams, initial_type: int = 1,
                      seed=None) -> UrnState:
    """Urn state after the first growth step of a 1-leaf tree: one cherry
    with branch type = initial type and a sampled child pair (2 leaves)."""
    rng = np.random.default_rng(seed)
    order = default_ball_order(params.k)
    j1, j2 = params.sample_pair(initial_type, rng.random())
    counts = np.zeros(order.n_balls, dtype=np.int64)
    counts[order.cherry_pos[(initial_type, j1, j2)]] = 1
    return UrnState(counts, order)


def _apply_cherry_draw(params, order, counts, ball, u_side, u_pair):
    ell, j1, j2 = ball
    picked, sibling = (j1, j2) if u_side < 0.5 else (j2, j1)
    d1, d2 = params.sample_pair(picked, u_pair)
    counts[order.cherry_pos[ball]] -= 1
    counts[order.cherry_pos[(picked, d1, d2)]] += 1
    counts[order.n_cherries + order.pendant_pos[(ell, sibling)]] += 1


def _apply_pendant_draw(params, order, counts, ball, u_pair):
    ell, m = ball
    d1, d2 = params.sample_pair(m, u_pair)
    counts[order.n_cherries + order.pendant_pos[ball]] -= 1
    counts[order.cherry_pos[(m, d1, d2)]] += 1


def simulate_urn(params: ErmParams, steps: int, initial: UrnState,
                 seed=None, snapshot_every: int | None = None) -> UrnRun:
    """Run the cherry/pendant urn for ``steps`` draws.

    Each draw selects a ball with probability proportional to weight
    (2 for cherries, 1 for pendants).  A drawn cherry picks one of its two
    leaves uniformly; that leaf becomes a branch-point with a fresh
    sampled cherry and the sibling becomes a pendant whose top type is the
    old branch-point type.  A drawn pendant's leaf becomes a branch-point
    with a fresh cherry.  Exactly one leaf is added per step.
    """
    if initial.counts.sum() == 0:
        raise StateError("empty urn")
    order = initial.order
    rng = np.random.default_rng(seed)
    counts = initial.counts.copy()
    weights = order.ball_weights()
    nc = order.n_cherries
    snapshots = []
    for s in range(steps):
        w = weights * counts
        cw = list(accumulate(w))
        total = cw[-1]
        b = bisect_right(cw, rng.random() * total)
        ball = order.balls[b]
        if b < nc:
            _apply_cherry_draw(params, order, counts, ball,
                               rng.random(), rng.random())
        else:
            _apply_pendant_draw(params, order, counts, ball, rng.random())
        if snapshot_every and (s + 1) % snapshot_every == 0:
            snapshots.append((initial.step + s + 1, counts.copy()))
    return UrnRun(UrnState(counts, order, initial.step + steps), snapshots)


def simulate_urn_ensemble(params: ErmParams, steps: int, n_reps: int,
                          initial_type: int = 1, seed=None) -> np.ndarray:
    """Vectorized urn ensemble: ``n_reps`` independent chains advanced in
    lockstep for ``steps`` draws each, starting from an independently
    sampled initial cherry per replicate.

    Returns the (n_reps, n_balls) matrix of final counts.  Used for
    Monte Carlo checks at sizes where per-replicate Python loops would be
    too slow.
    """
    rng = np.random.default_rng(seed)
    order = default_ball_order(params.k)
    nc, nb = order.n_cherries, order.n_balls
    weights = order.ball_weights()
    counts = np.zeros((n_reps, nb), dtype=np.int64)

    # initial cherry per replicate
    row = params.row(initial_type)
    pair_idx = rng.choice(len(row), size=n_reps, p=row / row.sum())
    for pi, (j1, j2) in enumerate(params.pairs):
        sel = pair_idx == pi
        counts[sel, order.cherry_pos[(initial_type, j1, j2)]] = 1

    # per ball type: enumerate outcomes (probability, delta vector)
    outcomes = []
    for b, ball in enumerate(order.balls):
        offs = []
        if b < nc:
            ell, j1, j2 = ball
            for picked, sibling in ((j1, j2), (j2, j1)):
                for (d1, d2), p in zip(params.pairs, params.row(picked)):
                    if p == 0:
                        continue
                    delta = np.zeros(nb, dtype=np.int64)
                    delta[order.cherry_pos[ball]] -= 1
                    delta[order.cherry_pos[(picked, d1, d2)]] += 1
                    delta[nc + order.pendant_pos[(ell, sibling)]] += 1
                    offs.append((0.5 * p, delta))
        else:
            ell, m = ball
            for (d1, d2), p in zip(params.pairs, params.row(m)):
                if p == 0:
                    continue
                delta = np.zeros(nb, dtype=np.int64)
                delta[nc + order.pendant_pos[ball]] -= 1
                delta[order.cherry_pos[(m, d1, d2)]] += 1
                offs.append((p, delta))
        probs = np.array([p for p, _ in offs])
        probs = np.cumsum(probs / probs.sum())
        deltas = np.stack([d for _, d in offs])
        outcomes.append((probs, deltas))

    for _ in range(steps):
        w = counts * weights
        cum = np.cumsum(w, axis=1)
        u = rng.random(n_reps) * cum[:, -1]
        drawn = (cum <= u[:, None]).sum(axis=1)
        u2 = rng.random(n_reps)
        for b in range(nb):
            sel = np.flatnonzero(drawn == b)
            if sel.size == 0:
                continue
            probs, deltas = outcomes[b]
            oi = np.searchsorted(probs, u2[sel], side="right")
            oi = np.minimum(oi, len(probs) - 1)
            np.add.at(counts, (sel[:, None], np.arange(nb)[None, :]), deltas[oi])
    return counts
