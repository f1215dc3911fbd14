"""Multi-type birth-death simulation, pruning to ancestral trees,
extinction-probability ODEs, and the reconstructed-process rates.

A full tree is stored as lineage segments: each node covers one lineage
between consecutive events, with a birth and an end time.  A birth event
ends the parent segment and starts two child segments, the first being
the parent's continuation (same type) and the second the new offspring.
Pruning away the lineages with no extant descendants yields a TypedTree
whose nodes sit at event times: both-sides-survive births become binary
nodes, offspring-only births become unary type-change nodes, and
parent-only births leave no trace.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate

import numpy as np

from . import numerics
from .exceptions import (DegenerateTypeError, NumericalError, ParameterError,
                         ResourceError, TreeStructureError)
from .tree import TypedTree, parse_newick, write_newick

__all__ = ["BdParams", "FullTree", "simulate_bd", "prune_to_ancestral",
           "ExtinctionTable", "extinction_probabilities", "AncestralRates",
           "ancestral_rates", "simulate_reconstructed",
           "full_tree_to_newick", "full_tree_from_newick"]

INTERNAL, DEAD, EXTANT = 0, 1, 2


class BdParams:
    """Rates of a multi-type birth-death process.

    ``b[i][j]`` (1-based in the constructor dict form) is the rate at
    which a type-i lineage produces a type-j offspring while itself
    continuing as type i; ``d[i]`` is the death rate of type i.
    """

    def __init__(self, k: int, b, d):
        self.k = int(k)
        self.b = np.zeros((self.k, self.k))
        if isinstance(b, dict):
            for i, row in b.items():
                for j, val in row.items():
                    self.b[i - 1, j - 1] = val
        else:
            self.b[:] = np.asarray(b, dtype=float)
        self.d = np.zeros(self.k)
        if isinstance(d, dict):
            for i, val in d.items():
                self.d[i - 1] = val
        else:
            self.d[:] = np.asarray(d, dtype=float)
        if (np.any(self.b < 0) or np.any(self.d < 0)
                or not np.all(np.isfinite(self.b)) or not np.all(np.isfinite(self.d))):
            raise ParameterError("birth/death rates must be finite and >= 0")

    def total_birth(self, i: int) -> float:
        return float(self.b[i - 1].sum())

    def __repr__(self):
        return f"BdParams(k={self.k}, b={self.b.tolist()}, d={self.d.tolist()})"


@dataclass
class FullTree:
    """Full birth-death tree with extinct lineages kept as death marks."""

    k: int
    horizon: float
    node_types: np.ndarray
    parents: np.ndarray
    t_birth: np.ndarray
    t_end: np.ndarray
    status: np.ndarray        # INTERNAL / DEAD / EXTANT per segment

    @property
    def n_nodes(self) -> int:
        return len(self.node_types)

    @property
    def extant(self) -> np.ndarray:
        return np.flatnonzero(self.status == EXTANT)

    @property
    def n_extant(self) -> int:
        return int(np.count_nonzero(self.status == EXTANT))

    def children(self) -> list[list[int]]:
        ch = [[] for _ in range(self.n_nodes)]
        for i, p in enumerate(self.parents):
            if p >= 0:
                ch[p].append(i)
        return ch

    def trajectory(self):
        """Step-function population counts: (times, counts) with counts[j]
        the per-type population immediately after times[j]."""
        events = []  # (time, type_index, delta)
        for i in range(self.n_nodes):
            events.append((float(self.t_birth[i]), self.node_types[i] - 1, 1))
            if self.status[i] in (INTERNAL, DEAD):
                events.append((float(self.t_end[i]), self.node_types[i] - 1, -1))
        events.sort(key=lambda e: e[0])
        times, counts = [], []
        z = np.zeros(self.k, dtype=int)
        pos = 0
        while pos < len(events):
            t = events[pos][0]
            while pos < len(events) and events[pos][0] == t:
                _, ti, dz = events[pos]
                z[ti] += dz
                pos += 1
            times.append(t)
            counts.append(z.copy())
        return np.array(times), np.array(counts)

    def z_at(self, t: float) -> np.ndarray:
        times, counts = self.trajectory()
        j = int(np.searchsorted(times, t, side="right")) - 1
        if j < 0:
            return np.zeros(self.k, dtype=int)
        return counts[j]


def simulate_bd(bd: BdParams, T: float, initial_type: int = 1, seed=None,
                max_lineages: int = 1_000_000) -> FullTree:
    """Gillespie simulation of the multi-type birth-death process on [0, T].

    Each type-i lineage waits Exp(sum_j b_ij + d_i); the event is a death
    or a birth of an offspring of type j (the parent continues as type i).
    Both extinct and surviving lineages are kept in the returned tree.
    """
    if T < 0:
        raise ParameterError("horizon T must be >= 0")
    if not 1 <= initial_type <= bd.k:
        raise ParameterError(f"initial type {initial_type} outside 1..{bd.k}")
    rng = np.random.default_rng(seed)
    k = bd.k
    rate = [float(bd.b[i].sum() + bd.d[i]) for i in range(k)]
    # per type: cumulative event table, death first then births by j
    cum_event = []
    for i in range(k):
        weights = [bd.d[i]] + list(bd.b[i])
        cum_event.append(list(accumulate(weights)))

    types = [initial_type]
    parents = [-1]
    tb = [0.0]
    te = [0.0]
    status = [EXTANT]
    pools = [[] for _ in range(k)]
    pools[initial_type - 1].append(0)
    total_rate = rate[initial_type - 1]
    n_live = 1

    t = 0.0
    while total_rate > 0 and n_live > 0:
        t += -math.log(rng.random()) / total_rate
        if t >= T:
            break
        # pick lineage type proportional to count * rate, then a member
        u = rng.random() * total_rate
        acc = 0.0
        ti = k - 1
        for i in range(k):
            acc += len(pools[i]) * rate[i]
            if u < acc:
                ti = i
                break
        pool = pools[ti]
        li = int(rng.random() * len(pool))
        node = pool[li]
        pool[li] = pool[-1]
        pool.pop()
        total_rate -= rate[ti]
        n_live -= 1
        te[node] = t
        ev = bisect_right(cum_event[ti], rng.random() * cum_event[ti][-1])
        if ev == 0:
            status[node] = DEAD
            continue
        status[node] = INTERNAL
        j = ev - 1  # offspring type index
        for child_type in (ti, j):
            cid = len(types)
            types.append(child_type + 1)
            parents.append(node)
            tb.append(t)
            te.append(T)
            status.append(EXTANT)
            pools[child_type].append(cid)
            total_rate += rate[child_type]
            n_live += 1
        if n_live > max_lineages:
            raise ResourceError(f"live lineages exceeded cap {max_lineages}")
    for i in range(len(types)):
        if status[i] == EXTANT:
            te[i] = T
    return FullTree(k, float(T), np.array(types, dtype=np.int32),
                    np.array(parents, dtype=np.int64), np.array(tb),
                    np.array(te), np.array(status, dtype=np.int8))


def prune_to_ancestral(full: FullTree) -> TypedTree | None:
    """Ancestral tree of a full birth-death tree: keep the lineages with
    extant descendants at the horizon.

    Both-survive births become binary nodes, offspring-only births become
    unary type-change nodes, parent-only births vanish.  Returns None when
    nothing survives (flagged empty result, not an error).
    """
    n = full.n_nodes
    ch = full.children()
    survives = np.zeros(n, dtype=bool)
    for i in range(n - 1, -1, -1):  # children have larger ids than parents
        if full.status[i] == EXTANT:
            survives[i] = True
        elif full.status[i] == INTERNAL:
            survives[i] = any(survives[c] for c in ch[i])
    root = int(np.flatnonzero(full.parents == -1)[0])
    if not survives[root]:
        return None

    types, parents, times = [], [], []

    def emit(ty, tm, parent):
        types.append(ty)
        parents.append(parent)
        times.append(tm)
        return len(types) - 1

    stack = [(root, -1)]
    while stack:
        u, parent = stack.pop()
        while True:
            if full.status[u] == EXTANT:
                emit(int(full.node_types[u]), full.horizon, parent)
                break
            cont, off = ch[u]
            sc, so = survives[cont], survives[off]
            if sc and so:
                me = emit(int(full.node_types[u]), float(full.t_end[u]), parent)
                stack.append((off, me))
                u, parent = cont, me
            elif so:  # parent side extinct: unary type-change node
                parent = emit(int(full.node_types[u]), float(full.t_end[u]), parent)
                u = off
            else:     # offspring extinct: no node
                u = cont

    return TypedTree(types, parents, full.k, times)


# ---------------------------------------------------------------------------
# Extinction probabilities
# ---------------------------------------------------------------------------


class ExtinctionTable:
    """Dense-in-t extinction probabilities p_i(t, T) on a grid.

    Stores values and time derivatives on the grid and interpolates with
    cubic Hermite polynomials between grid points.  p(T, T) = 0 exactly.
    """

    def __init__(self, bd: BdParams, T: float, ts, p):
        self.bd = bd
        self.T = float(T)
        self.ts = np.asarray(ts, dtype=float)
        self.p = np.asarray(p, dtype=float)
        if np.any(np.diff(self.ts) <= 0) and len(self.ts) > 1:
            raise NumericalError("extinction grid must be strictly increasing")
        over = max(0.0, float(np.max(self.p - 1.0, initial=0.0)),
                   float(np.max(-self.p, initial=0.0)))
        if over > 1e-9:
            raise NumericalError(f"extinction probabilities leave [0,1] by {over:.2e}")
        self.p = np.clip(self.p, 0.0, 1.0)
        self.dpdt = np.array([-self.rhs_s(row) for row in self.p])

    def rhs_s(self, p):
        """dp_i/ds = d_i - (B_i + d_i) p_i + sum_j b_ij p_i p_j in the
        time-to-horizon variable s = T - t (so dp_i/dt = -rhs_s)."""
        b, d = self.bd.b, self.bd.d
        return d - (b.sum(axis=1) + d) * p + (b @ p) * p

    def at(self, t) -> np.ndarray:
        """Interpolated p(t, T); vectorized over t."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        if np.any(tt < self.ts[0] - 1e-9) or np.any(tt > self.T + 1e-9):
            raise NumericalError("extinction table queried outside its range")
        tt = np.clip(tt, self.ts[0], self.T)
        if len(self.ts) == 1:
            out = np.repeat(self.p[:1], len(tt), axis=0)
            return out[0] if scalar else out
        j = np.clip(np.searchsorted(self.ts, tt, side="right") - 1, 0, len(self.ts) - 2)
        h = self.ts[j + 1] - self.ts[j]
        s = (tt - self.ts[j]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s ** 2 * (3 - 2 * s)
        h11 = s ** 2 * (s - 1)
        out = (h00[:, None] * self.p[j] + h10[:, None] * (h[:, None] * self.dpdt[j])
               + h01[:, None] * self.p[j + 1] + h11[:, None] * (h[:, None] * self.dpdt[j + 1]))
        out = np.clip(out, 0.0, 1.0)
        return out[0] if scalar else out

    def to_csv(self) -> str:
        head = "t," + ",".join(f"p_{i}" for i in range(1, self.bd.k + 1))
        rows = [head]
        for t, row in zip(self.ts, self.p):
            rows.append(",".join([repr(float(t))] + [repr(float(v)) for v in row]))
        return "\n".join(rows) + "\n"


def extinction_probabilities(bd: BdParams, T: float, n_grid: int = 201,
                             tol: float = 1e-9) -> ExtinctionTable:
    """Solve the extinction ODE backward from p(T, T) = 0.

    Integrates in s = T - t (forward in s) with adaptive RK, local
    tolerance ``tol``, and returns a dense table on a uniform t grid.
    """
    if T < 0:
        raise ParameterError("horizon T must be >= 0")
    if T == 0:
        return ExtinctionTable(bd, 0.0, [0.0], [np.zeros(bd.k)])
    b, d = bd.b, bd.d
    btot = b.sum(axis=1)

    def rhs_s(_s, q):
        return d - (btot + d) * q + (b @ q) * q

    s_eval = np.linspace(0.0, T, n_grid)
    _, _, qs = numerics.integrate_ode(rhs_s, np.zeros(bd.k), (0.0, T),
                                      tol=tol, t_eval=s_eval)
    # s grid ascending -> t grid descending; flip to ascending t
    ts = (T - s_eval)[::-1]
    return ExtinctionTable(bd, T, ts, qs[::-1])


# ---------------------------------------------------------------------------
# Ancestral (reconstructed) process rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AncestralRates:
    """Reconstructed-process rates and split probabilities at one time."""

    t: float
    birth: np.ndarray        # q_i^{ij}(t), k x k
    mutation: np.ndarray     # q_i^j(t), zero diagonal
    total: np.ndarray        # q_i(t)
    weights: np.ndarray      # a_i(t) = q_i / sum q_l
    split_prob: np.ndarray   # p_i^{ij}(t)
    mut_prob: np.ndarray     # p_i^j(t)


def ancestral_rates(bd: BdParams, table: ExtinctionTable, t: float) -> AncestralRates:
    """Rates of the pruned-process at time t:

        q_i^{ij}(t) = b_i^{ij} (1 - p_j),
        q_i^{j}(t)  = b_i^{ij} (1 - p_j) p_i / (1 - p_i)   for j != i,

    with p = p(t, T) from the extinction table, plus the per-type weights
    and branch/mutation split probabilities.
    """
    p = table.at(t)
    k = bd.k
    if np.any(p > 1.0 - 1e-12):
        bad = int(np.argmax(p)) + 1
        raise DegenerateTypeError(
            f"type {bad} is extinct by T almost surely at t={t}; "
            "surviving-lineage rates are undefined")
    birth = bd.b * (1.0 - p)[None, :]
    mut = birth * (p / (1.0 - p))[:, None]
    np.fill_diagonal(mut, 0.0)
    total = birth.sum(axis=1) + mut.sum(axis=1)
    denom = birth.sum(axis=1) - np.diag(bd.b) * p * (1.0 - p)
    # identical to total * (1 - p); checked to guard the formula transcription
    if np.max(np.abs(denom - total * (1.0 - p))) > 1e-9 * max(1.0, float(np.max(denom))):
        raise NumericalError("ancestral rate identities violated")
    wsum = total.sum()
    weights = total / wsum if wsum > 0 else np.full(k, 1.0 / k)
    with np.errstate(invalid="ignore", divide="ignore"):
        split = birth * (1.0 - p)[:, None] / denom[:, None]
        mutp = mut * (1.0 - p)[:, None] / denom[:, None]
    split = np.nan_to_num(split)
    mutp = np.nan_to_num(mutp)
    return AncestralRates(float(t), birth, mut, total, weights, split, mutp)


def simulate_reconstructed(bd: BdParams, T: float, initial_type: int = 1,
                           seed=None, table: ExtinctionTable | None = None,
                           max_lineages: int = 1_000_000) -> TypedTree:
    """Direct simulation of the reconstructed ancestral process: a
    time-inhomogeneous pure birth process with mutations, run by thinning
    against per-type upper bounds on the total event rate.

    Serves as the distributional oracle for ``prune_to_ancestral``.
    """
    if T <= 0:
        raise ParameterError("horizon T must be > 0")
    if table is None:
        table = extinction_probabilities(bd, T, n_grid=513)
    rng = np.random.default_rng(seed)
    k = bd.k

    # per-type rate bound over [0, T] from a refined grid of the table
    tgrid = np.linspace(table.ts[0], T, 4 * len(table.ts))
    pgrid = table.at(tgrid)
    with np.errstate(divide="ignore", invalid="ignore"):
        qtots = []
        for p in pgrid:
            birth = bd.b * (1.0 - p)[None, :]
            mut = birth * (p / np.maximum(1.0 - p, 1e-300))[:, None]
            np.fill_diagonal(mut, 0.0)
            qtots.append(birth.sum(axis=1) + mut.sum(axis=1))
    bound = np.max(np.array(qtots), axis=0) * 1.05 + 1e-12

    types_arr, parents_arr, times_arr = [], [], []
    pending = [[] for _ in range(k)]        # per type: list of parent node ids
    pending[initial_type - 1].append(-1)
    n_live = 1
    total_bound = float(bound[initial_type - 1])

    t = 0.0
    while total_bound > 0:
        t += -math.log(rng.random()) / total_bound
        if t >= T:
            break
        u = rng.random() * total_bound
        acc = 0.0
        ti = k - 1
        for i in range(k):
            acc += len(pending[i]) * bound[i]
            if u < acc:
                ti = i
                break
        rates = ancestral_rates(bd, table, t)
        q_i = float(rates.total[ti])
        if q_i > bound[ti] * (1 + 1e-9):
            raise NumericalError("thinning bound violated; refine the table grid")
        if rng.random() * bound[ti] >= q_i:
            continue  # thinned
        pool = pending[ti]
        li = int(rng.random() * len(pool))
        parent = pool[li]
        pool[li] = pool[-1]
        pool.pop()
        total_bound -= bound[ti]
        n_live -= 1
        # event node carries the pre-event type
        node = len(types_arr)
        types_arr.append(ti + 1)
        parents_arr.append(parent)
        times_arr.append(t)
        u2 = rng.random() * q_i
        acc2 = 0.0
        outcome = None
        for j in range(k):
            acc2 += float(rates.birth[ti, j])
            if u2 < acc2:
                outcome = ("birth", j)
                break
        if outcome is None:
            for j in range(k):
                if j == ti:
                    continue
                acc2 += float(rates.mutation[ti, j])
                if u2 < acc2:
                    outcome = ("mut", j)
                    break
        if outcome is None:  # numerical edge: attribute to the largest rate
            j = int(np.argmax(rates.birth[ti]))
            outcome = ("birth", j)
        if outcome[0] == "birth":
            j = outcome[1]
            for ct in (ti, j):
                pending[ct].append(node)
                total_bound += bound[ct]
                n_live += 1
        else:
            j = outcome[1]
            pending[j].append(node)
            total_bound += bound[j]
            n_live += 1
        if n_live > max_lineages:
            raise ResourceError(f"live lineages exceeded cap {max_lineages}")

    for i in range(k):
        for parent in pending[i]:
            types_arr.append(i + 1)
            parents_arr.append(parent)
            times_arr.append(T)
    return TypedTree(types_arr, parents_arr, k, times_arr)


# ---------------------------------------------------------------------------
# Full-tree Newick round trip (death marks as [&extinct=1])
# ---------------------------------------------------------------------------


def full_tree_to_newick(full: FullTree) -> str:
    ann = []
    for i in range(full.n_nodes):
        a = {"type": int(full.node_types[i])}
        if full.status[i] == DEAD:
            a["extinct"] = 1
        ann.append(a)
    root = int(np.flatnonzero(full.parents == -1)[0])
    return write_newick(full.parents, ann, full.t_end, root)


def full_tree_from_newick(text: str, k: int | None = None) -> FullTree:
    parents, annotations, lengths, root = parse_newick(text)
    n = len(parents)
    ch = [[] for _ in range(n)]
    for i, p in enumerate(parents):
        if p >= 0:
            ch[p].append(i)
    types = np.zeros(n, dtype=np.int32)
    for i in range(n):
        if "type" not in annotations[i]:
            raise TreeStructureError(f"full-tree node {i} lacks a type annotation")
        types[i] = annotations[i]["type"]
    kk = int(types.max()) if k is None else int(k)
    t_end = np.zeros(n)
    order = [root]
    seen = 0
    while seen < len(order):
        i = order[seen]
        seen += 1
        base = 0.0 if parents[i] < 0 else t_end[parents[i]]
        t_end[i] = base + (0.0 if np.isnan(lengths[i]) else lengths[i])
        order.extend(ch[i])
    t_birth = np.array([0.0 if parents[i] < 0 else t_end[parents[i]] for i in range(n)])
    status = np.empty(n, dtype=np.int8)
    tips = [i for i in range(n) if not ch[i]]
    horizon = max(t_end[i] for i in tips)
    for i in range(n):
        if ch[i]:
            if len(ch[i]) != 2:
                raise TreeStructureError("full birth-death trees must be binary")
            status[i] = INTERNAL
        elif annotations[i].get("extinct"):
            status[i] = DEAD
        else:
            if abs(t_end[i] - horizon) > 1e-9 * max(1.0, horizon):
                raise TreeStructureError(
                    f"extant tip {i} does not end at the horizon {horizon}")
            status[i] = EXTANT
    return FullTree(kk, float(horizon), types, np.array(parents, dtype=np.int64),
                    t_birth, t_end, status)
