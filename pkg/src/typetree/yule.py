"""Multi-type Yule trees with mutations: simulation, moment ODEs, and
long-run cherry/pendant fractions.

Rate schedules are constant or piecewise constant, which keeps Gillespie
simulation exact (segment by segment) and makes the limiting rates well
defined (final segment).  A birth event of type (i; j1, j2) replaces a
type-i lineage by lineages of types j1 and j2 under a branch-point typed
i; a mutation (i -> j) inserts a unary node carrying the old type i.

Index orders are the generic lexicographic ones from
:mod:`typetree.orders`: cherry pairs (j1, j2) with j1 <= j2 for each
branch type, pendants (ell, m) row-major.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate

import numpy as np

from . import numerics
from .exceptions import (ConditionError, IrreducibilityError, NumericalError,
                         ParameterError, ResourceError)
from .orders import type_pairs
from .tree import TypedTree

__all__ = ["RateSchedule", "YuleParams", "simulate_yule", "MomentMatrices",
           "build_moment_matrices", "YuleMoments", "moments_ode",
           "mean_leaves_ode", "mean_cherries_ode", "mean_pendants_ode",
           "LimitFractions", "limit_fractions"]


@dataclass(frozen=True)
class RateSchedule:
    """Piecewise-constant nonnegative rate: ``values[i]`` applies on
    [breakpoints[i-1], breakpoints[i]); the last value extends to
    infinity and defines the limiting rate."""

    breakpoints: tuple = ()
    values: tuple = (0.0,)

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        if len(vals) != len(bp) + 1:
            raise ParameterError("need len(values) == len(breakpoints) + 1")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ParameterError("breakpoints must be strictly increasing")
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ParameterError("rates must be finite and >= 0")

    @classmethod
    def constant(cls, value: float) -> "RateSchedule":
        return cls((), (float(value),))

    def at(self, t: float) -> float:
        return self.values[bisect_right(self.breakpoints, t)]

    @property
    def limit(self) -> float:
        return self.values[-1]

    @property
    def is_constant(self) -> bool:
        return len(self.values) == 1 or len(set(self.values)) == 1


def _as_schedule(v) -> RateSchedule:
    if isinstance(v, RateSchedule):
        return v
    if isinstance(v, dict):
        return RateSchedule(tuple(v.get("breakpoints", ())), tuple(v["values"]))
    return RateSchedule.constant(float(v))


class YuleParams:
    """Birth-rate schedules q_i^{j1j2}(t) (j1 <= j2) and mutation-rate
    schedules q_i^j(t) (j != i) of a multi-type Yule tree with mutations.

    ``birth`` maps ``(i, j1, j2)`` (or ``{i: {(j1, j2): rate}}``) to a rate
    or RateSchedule; ``mutation`` maps ``(i, j)`` likewise.  Missing
    entries are zero.
    """

    def __init__(self, k: int, birth=None, mutation=None):
        self.k = int(k)
        self.pairs = type_pairs(self.k)
        self.pair_pos = {p: i for i, p in enumerate(self.pairs)}
        self.birth = {(i, j1, j2): RateSchedule.constant(0.0)
                      for i in range(1, self.k + 1) for (j1, j2) in self.pairs}
        self.mutation = {(i, j): RateSchedule.constant(0.0)
                         for i in range(1, self.k + 1)
                         for j in range(1, self.k + 1) if j != i}
        for key, val in _flatten(birth, 3):
            i, j1, j2 = key
            if not (1 <= i <= self.k and 1 <= j1 <= self.k and 1 <= j2 <= self.k):
                raise ParameterError(f"birth key {key} outside 1..{self.k}")
            j1, j2 = min(j1, j2), max(j1, j2)
            self.birth[(i, j1, j2)] = _as_schedule(val)
        for key, val in _flatten(mutation, 2):
            i, j = key
            if i == j:
                raise ParameterError("mutation rates need i != j")
            if not (1 <= i <= self.k and 1 <= j <= self.k):
                raise ParameterError(f"mutation key {key} outside 1..{self.k}")
            self.mutation[(i, j)] = _as_schedule(val)

    # rate lookups --------------------------------------------------------

    def birth_rate(self, i, j1, j2, t=None) -> float:
        s = self.birth[(i, min(j1, j2), max(j1, j2))]
        return s.limit if t is None else s.at(t)

    def mut_rate(self, i, j, t=None) -> float:
        s = self.mutation[(i, j)]
        return s.limit if t is None else s.at(t)

    def birth_total(self, i, t=None) -> float:
        """r_i(t): total birth rate of a type-i lineage."""
        return sum(self.birth_rate(i, j1, j2, t) for (j1, j2) in self.pairs)

    def total_rate(self, i, t=None) -> float:
        """q_i(t): total event rate (births + mutations) of type i."""
        return self.birth_total(i, t) + sum(
            self.mut_rate(i, j, t) for j in range(1, self.k + 1) if j != i)

    @property
    def is_constant(self) -> bool:
        return all(s.is_constant for s in self.birth.values()) and \
            all(s.is_constant for s in self.mutation.values())

    def breakpoints(self) -> list[float]:
        bps = set()
        for s in list(self.birth.values()) + list(self.mutation.values()):
            bps.update(s.breakpoints)
        return sorted(bps)

    def __repr__(self):
        return f"YuleParams(k={self.k})"


def _flatten(spec, arity):
    if spec is None:
        return
    for key, val in spec.items():
        if isinstance(key, tuple) and len(key) == arity:
            yield key, val
        elif isinstance(val, dict) and not ("values" in val or "breakpoints" in val):
            for sub, v in val.items():
                sub = sub if isinstance(sub, tuple) else (sub,)
                yield (key, *sub), v
        else:
            raise ParameterError(f"cannot interpret rate key {key!r}")


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def simulate_yule(yp: YuleParams, stop, initial_type: int = 1, seed=None,
                  max_lineages: int = 1_000_000) -> TypedTree:
    """Simulate the multi-type Yule tree with mutations.

    ``stop``: either ``('time', T)`` / a float T (run on [0, T]) or
    ``('leaves', n)`` (stop at the event that creates the n-th leaf).
    Gillespie is exact: rates are re-read at every piecewise-constant
    segment boundary.  Returns a timed TypedTree; unary nodes carry the
    pre-mutation type.
    """
    mode, value = _parse_stop(stop)
    if not 1 <= initial_type <= yp.k:
        raise ParameterError(f"initial type {initial_type} outside 1..{yp.k}")
    rng = np.random.default_rng(seed)
    k = yp.k
    seg_bounds = [b for b in yp.breakpoints() if b > 0]

    types_arr, parents_arr, times_arr = [], [], []
    pending = [[] for _ in range(k)]
    pending[initial_type - 1].append(-1)
    n_live = 1

    t = 0.0
    seg_idx = 0
    while True:
        seg_end = seg_bounds[seg_idx] if seg_idx < len(seg_bounds) else math.inf
        # per-type outcome tables for this segment
        rate = [yp.total_rate(i + 1, t) for i in range(k)]
        outcomes = []
        for i in range(1, k + 1):
            evs = [("birth", p, yp.birth_rate(i, *p, t)) for p in yp.pairs]
            evs += [("mut", j, yp.mut_rate(i, j, t))
                    for j in range(1, k + 1) if j != i]
            evs = [(kind, pay, r) for kind, pay, r in evs if r > 0]
            cum = list(accumulate(r for _, _, r in evs))
            outcomes.append((evs, cum))
        while True:
            total = sum(len(pending[i]) * rate[i] for i in range(k))
            if mode == "time" and total <= 0:
                t = value
                break
            if total <= 0:
                raise ConditionError("all rates are zero; leaf target unreachable")
            t_next = t + (-math.log(rng.random()) / total)
            if mode == "time" and t_next >= value:
                t = value
                break
            if t_next >= seg_end:
                t = seg_end
                break
            t = t_next
            u = rng.random() * total
            acc = 0.0
            ti = k - 1
            for i in range(k):
                acc += len(pending[i]) * rate[i]
                if u < acc:
                    ti = i
                    break
            pool = pending[ti]
            li = int(rng.random() * len(pool))
            parent = pool[li]
            pool[li] = pool[-1]
            pool.pop()
            n_live -= 1
            node = len(types_arr)
            types_arr.append(ti + 1)
            parents_arr.append(parent)
            times_arr.append(t)
            evs, cum = outcomes[ti]
            ei = bisect_right(cum, rng.random() * cum[-1])
            ei = min(ei, len(evs) - 1)
            kind, payload = evs[ei][0], evs[ei][1]
            if kind == "birth":
                j1, j2 = payload
                pending[j1 - 1].append(node)
                pending[j2 - 1].append(node)
                n_live += 2
            else:
                pending[payload - 1].append(node)
                n_live += 1
            if n_live > max_lineages:
                raise ResourceError(f"live lineages exceeded cap {max_lineages}")
            if mode == "leaves" and n_live >= value:
                break
        if mode == "time" and t >= value:
            break
        if mode == "leaves" and n_live >= value:
            break
        seg_idx += 1

    for i in range(k):
        for parent in pending[i]:
            types_arr.append(i + 1)
            parents_arr.append(parent)
            times_arr.append(t)
    return TypedTree(types_arr, parents_arr, k, times_arr)


def _parse_stop(stop):
    if isinstance(stop, (int, float)) and not isinstance(stop, bool):
        return "time", float(stop)
    if isinstance(stop, tuple) and len(stop) == 2 and stop[0] in ("time", "leaves"):
        mode, value = stop
        if mode == "time":
            value = float(value)
            if value < 0:
                raise ParameterError("stop time must be >= 0")
        else:
            value = int(value)
            if value < 1:
                raise ParameterError("leaf target must be >= 1")
        return mode, value
    raise ParameterError("stop must be a time T, ('time', T), or ('leaves', n)")


# ---------------------------------------------------------------------------
# Moment matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentMatrices:
    """The linear ODE blocks for leaf, cherry, and pendant means.

    ``B`` is k x k (leaf means), ``A`` is m x m with m = k(k+1)/2 (the
    within-block cherry dynamics; identical for every branch type),
    ``q_cherry[ell-1]`` is the length-m inflow vector of branch type ell,
    ``C`` is k^2 x k^2 (pendants), ``U`` is k^2 x k*m (cherry-to-pendant
    inflow).  Index orders are generic lexicographic.
    """

    k: int
    B: np.ndarray
    A: np.ndarray
    q_cherry: np.ndarray
    C: np.ndarray
    U: np.ndarray


def build_moment_matrices(yp: YuleParams, t=None) -> MomentMatrices:
    """Evaluate the moment-ODE matrices at time ``t`` (``None``: limits)."""
    k = yp.k
    pairs = yp.pairs
    m = len(pairs)
    q = np.array([yp.total_rate(i, t) for i in range(1, k + 1)])
    r = np.array([yp.birth_total(i, t) for i in range(1, k + 1)])
    mut = np.zeros((k, k))
    for i in range(1, k + 1):
        for j in range(1, k + 1):
            if i != j:
                mut[i - 1, j - 1] = yp.mut_rate(i, j, t)

    B = np.zeros((k, k))
    for l2 in range(1, k + 1):
        B[l2 - 1, l2 - 1] = (yp.birth_rate(l2, l2, l2, t)
                             - sum(yp.birth_rate(l2, a, b, t) for (a, b) in pairs
                                   if a != l2 and b != l2)
                             - sum(mut[l2 - 1, j] for j in range(k) if j != l2 - 1))
        for l1 in range(1, k + 1):
            if l1 == l2:
                continue
            B[l1 - 1, l2 - 1] = (2 * yp.birth_rate(l2, l1, l1, t) + mut[l2 - 1, l1 - 1]
                                 + sum(yp.birth_rate(l2, j, l1, t) for j in range(1, l1))
                                 + sum(yp.birth_rate(l2, l1, j, t) for j in range(l1 + 1, k + 1)))

    A = np.zeros((m, m))
    for row, (i, j) in enumerate(pairs):
        for col, (mm, nn) in enumerate(pairs):
            if (mm, nn) == (i, j):
                A[row, col] = -(q[i - 1] + q[j - 1])
            elif i == j:
                A[row, col] = ((mm == i) * mut[nn - 1, i - 1]
                               + (nn == i) * mut[mm - 1, i - 1])
            else:
                A[row, col] = ((mm == i) * mut[nn - 1, j - 1]
                               + (mm == j) * mut[nn - 1, i - 1]
                               + (nn == i) * mut[mm - 1, j - 1]
                               + (nn == j) * mut[mm - 1, i - 1])

    q_cherry = np.array([[yp.birth_rate(l, a, b, t) for (a, b) in pairs]
                         for l in range(1, k + 1)])

    n_pend = k * k
    C = np.zeros((n_pend, n_pend))
    for l in range(1, k + 1):
        for mm in range(1, k + 1):
            row = (l - 1) * k + (mm - 1)
            C[row, row] = -q[mm - 1]
            for j in range(1, k + 1):
                if j != mm:
                    C[row, (l - 1) * k + (j - 1)] = mut[j - 1, mm - 1]

    U = np.zeros((n_pend, k * m))
    for l in range(1, k + 1):
        for mm in range(1, k + 1):
            row = (l - 1) * k + (mm - 1)
            for col, (i, j) in enumerate(pairs):
                val = 0.0
                if i == j == mm:
                    val = 2 * r[mm - 1]
                elif j == mm and i < mm:
                    val = r[i - 1]
                elif i == mm and j > mm:
                    val = r[j - 1]
                U[row, (l - 1) * m + col] = val
    return MomentMatrices(k, B, A, q_cherry, C, U)


def _joint_generator(mats: MomentMatrices) -> np.ndarray:
    """Block generator of the joint linear system d/dt [nu; mu; gamma]."""
    k, m = mats.k, mats.A.shape[0]
    d = k + k * m + k * k
    M = np.zeros((d, d))
    M[:k, :k] = mats.B
    for l in range(k):
        sl = slice(k + l * m, k + (l + 1) * m)
        M[sl, sl] = mats.A
        M[sl, l] = mats.q_cherry[l]
    gs = slice(k + k * m, d)
    M[gs, gs] = mats.C
    M[gs, k:k + k * m] = mats.U
    return M


@dataclass(frozen=True)
class YuleMoments:
    """Mean leaf/cherry/pendant counts at one time."""

    t: float
    nu: np.ndarray       # length k
    mu: np.ndarray       # k x m, row = branch type
    gamma: np.ndarray    # length k^2, (ell, m) lexicographic

    @property
    def rho(self) -> float:
        return float(self.nu.sum())


def moments_ode(yp: YuleParams, t: float, initial_type: int = 1,
                method: str = "auto", tol: float = 1e-9) -> YuleMoments:
    """Integrate the coupled (nu, mu, gamma) system from a single type-i
    lineage at time 0 (nu(0) = e_i, mu(0) = gamma(0) = 0).

    ``method``: 'expm' propagates the exact matrix exponential segment by
    segment (exact for piecewise-constant schedules), 'rk' uses adaptive
    Runge-Kutta at tolerance ``tol``; 'auto' = 'expm'.
    """
    if t < 0:
        raise ParameterError("t must be >= 0")
    if not 1 <= initial_type <= yp.k:
        raise ParameterError(f"initial type {initial_type} outside 1..{yp.k}")
    k = yp.k
    m = len(yp.pairs)
    d = k + k * m + k * k
    y = np.zeros(d)
    y[initial_type - 1] = 1.0
    if method == "auto":
        method = "expm"

    bounds = [b for b in yp.breakpoints() if 0 < b < t] + [t]
    t0 = 0.0
    for t1 in bounds:
        M = _joint_generator(build_moment_matrices(yp, t0))
        if method == "expm":
            y = numerics.matrix_exp(M * (t1 - t0)) @ y
        elif method == "rk":
            _, _, ys = numerics.integrate_ode(lambda _s, v: M @ v, y, (t0, t1),
                                              tol=tol, t_eval=[t1])
            y = ys[-1]
        else:
            raise ParameterError(f"unknown method {method!r}")
        t0 = t1
    nu = y[:k]
    mu = y[k:k + k * m].reshape(k, m)
    gamma = y[k + k * m:]
    return YuleMoments(float(t), nu, mu, gamma)


def mean_leaves_ode(yp: YuleParams, t: float, initial_type: int = 1,
                    method: str = "auto") -> tuple[np.ndarray, float]:
    """Leaf-mean vector nu(t) and total rho(t)."""
    mom = moments_ode(yp, t, initial_type, method=method)
    return mom.nu, mom.rho


def mean_cherries_ode(yp: YuleParams, t: float, initial_type: int = 1,
                      method: str = "auto") -> np.ndarray:
    """Cherry means mu_ell(t), shape (k, k(k+1)/2)."""
    return moments_ode(yp, t, initial_type, method=method).mu


def mean_pendants_ode(yp: YuleParams, t: float, initial_type: int = 1,
                      method: str = "auto") -> np.ndarray:
    """Pendant means gamma(t), length k^2, (ell, m) lexicographic."""
    return moments_ode(yp, t, initial_type, method=method).gamma


# ---------------------------------------------------------------------------
# Limiting fractions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitFractions:
    """Long-run per-leaf fractions: cherries w (k x m), pendants w_star
    (k^2), growth rate lam, and leaf-type fractions u (sum 1)."""

    lam: float
    u: np.ndarray
    w: np.ndarray
    w_star: np.ndarray

    def __post_init__(self):
        total = 2.0 * float(self.w.sum()) + float(self.w_star.sum())
        if abs(total - 1.0) > 1e-9:
            raise NumericalError(
                f"fraction identity 2*sum(w) + sum(w*) = {total!r}, expected 1")
        if np.any(self.w < -1e-12) or np.any(self.w_star < -1e-12):
            raise NumericalError("negative limiting fraction")


def _b_irreducible(B: np.ndarray) -> bool:
    k = B.shape[0]
    adj = [[j for j in range(k) if j != i and B[j, i] > 0] for i in range(k)]
    radj = [[j for j in range(k) if j != i and B[i, j] > 0] for i in range(k)]

    def full(a):
        seen = {0}
        stack = [0]
        while stack:
            x = stack.pop()
            for y in a[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return len(seen) == k

    return full(adj) and full(radj)


def limit_fractions(yp: YuleParams, tol: float = 1e-9) -> LimitFractions:
    """Limiting cherry/pendant fractions of leaves:

        w_ell  = -u_ell (A - lam I)^{-1} q_(ell),
        w_star = -(C - lam I)^{-1} U w,

    with lam, u the Perron root/right eigenvector (sum(u) = 1) of the
    limiting leaf-mean matrix B.  Raises IrreducibilityError when the
    limiting B is reducible.
    """
    mats = build_moment_matrices(yp, t=None)
    B = mats.B
    if not _b_irreducible(B):
        raise IrreducibilityError(
            "limiting leaf-mean matrix B is reducible; long-run fractions "
            "are not defined by the Perron theory")
    lam, u = numerics.perron_pair(B, tol=tol)
    if np.max(np.abs(B @ u - lam * u)) > tol * max(1.0, float(np.max(np.abs(B)))):
        raise NumericalError("Perron pair residual exceeds tolerance")
    if lam < -1e-12:
        raise ConditionError("Perron root of B is negative; fractions need lam >= 0")
    k, m = yp.k, len(yp.pairs)
    AmL = mats.A - lam * np.eye(m)
    w = np.empty((k, m))
    for l in range(k):
        w[l] = -u[l] * numerics.solve_linear(AmL, mats.q_cherry[l])
    CmL = mats.C - lam * np.eye(k * k)
    w_star = -numerics.solve_linear(CmL, mats.U @ w.reshape(-1))
    return LimitFractions(float(lam), u, np.maximum(w, 0.0) if np.all(w > -1e-12) else w,
                          np.maximum(w_star, 0.0) if np.all(w_star > -1e-12) else w_star)
