"""Parameter inference from cherry/pendant fractions, and the
weight-monotonicity comparison of two-type Yule models.

ERM branching probabilities are the within-block cherry fractions of the
strong-law limit.  For continuous-time models, mutation rates solve the
pendant balance system (C - lam I) w* + U w = 0 (linear in the mutation
rates once the total birth rates r and lam are known), after which the
per-type birth-rate vectors follow from (A - lam I) w_ell + u_ell q_(ell)
= 0 with u_ell recovered from the fractions themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .erm import ErmParams
from .exceptions import ConditionError, InferenceError, NumericalError
from .tree import Census
from .yule import YuleParams, build_moment_matrices

__all__ = ["ErmEstimate", "infer_erm", "reconstruction_solvable",
           "YuleEstimate", "infer_yule", "PEstimate",
           "estimate_p_cladogenetic", "estimate_p_anagenetic",
           "closed_form_w", "ComparisonReport", "compare_models"]


# ---------------------------------------------------------------------------
# ERM inference
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErmEstimate:
    params: ErmParams
    block_totals: tuple      # type-1-rooted and type-2-rooted cherry mass


def _cherry_vector(x) -> np.ndarray:
    """Accept a Census, a 10-vector, or a 6-vector in paper k=2 order."""
    if isinstance(x, Census):
        if x.k != 2:
            raise InferenceError("ERM inference is defined for k=2 censuses")
        return x.reordered("paper_k2").x_vector()[:6]
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 10:
        return arr[:6]
    if arr.size == 6:
        return arr
    raise InferenceError("expected a Census, a 10-vector, or a 6-vector")


def infer_erm(x) -> ErmEstimate:
    """Recover q_i^{j1j2} from cherry counts or fractions.

    The estimates are the within-block fractions

        q1 = (x1, x2, x3)/(x1+x2+x3),  q2^{22,12,11} = (x4, x5, x6)/(x4+x5+x6)

    in the paper k=2 cherry order (C1_11, C1_12, C1_22, C2_22, C2_12, C2_11).
    Raises InferenceError when a branch-point-type block has zero total.
    """
    v = _cherry_vector(x)
    b1, b2 = float(v[:3].sum()), float(v[3:6].sum())
    if b1 <= 0:
        raise InferenceError("no cherries with branch-point type 1; "
                             "q_1 row is not identifiable")
    if b2 <= 0:
        raise InferenceError("no cherries with branch-point type 2; "
                             "q_2 row is not identifiable")
    q1 = v[:3] / b1
    q2 = v[3:6] / b2
    params = ErmParams(2, {1: {(1, 1): q1[0], (1, 2): q1[1], (2, 2): q1[2]},
                           2: {(2, 2): q2[0], (1, 2): q2[1], (1, 1): q2[2]}})
    return ErmEstimate(params, (b1, b2))


SOLVABILITY_THRESHOLD = 1.0 / math.sqrt(2.0)


def reconstruction_solvable(x, tol: float = 1e-9):
    """Root-type reconstruction solvability for Markov-propagation models.

    Evaluates |sqrt(v1/(v1+v2+v3)) + sqrt(v4/(v4+v5+v6)) - 1| against
    1/sqrt(2).  Returns ``(verdict, value)`` with verdict in
    {'solvable', 'not_solvable', 'boundary'}.
    """
    v = _cherry_vector(x)
    b1, b2 = float(v[:3].sum()), float(v[3:6].sum())
    if b1 <= 0 or b2 <= 0:
        raise InferenceError("solvability criterion needs both cherry blocks nonzero")
    value = abs(math.sqrt(v[0] / b1) + math.sqrt(v[3] / b2) - 1.0)
    if abs(value - SOLVABILITY_THRESHOLD) <= tol:
        return "boundary", value
    return ("solvable" if value > SOLVABILITY_THRESHOLD else "not_solvable"), value


# ---------------------------------------------------------------------------
# Continuous-time (Yule) inference
# ---------------------------------------------------------------------------


@dataclass
class YuleEstimate:
    """Recovered limiting rates with diagnostics."""

    birth: np.ndarray            # k x m, row ell = q_(ell)
    mutation: np.ndarray         # k x k, zero diagonal
    u: np.ndarray                # leaf-type fractions used in stage 2
    lam: float
    stage1_residual: float
    warnings: list = field(default_factory=list)

    def to_params(self, pairs) -> YuleParams:
        k = self.mutation.shape[0]
        birth = {(l + 1, a, b): max(float(self.birth[l, c]), 0.0)
                 for l in range(k) for c, (a, b) in enumerate(pairs)}
        mut = {(i + 1, j + 1): max(float(self.mutation[i, j]), 0.0)
               for i in range(k) for j in range(k) if i != j}
        return YuleParams(k, birth, mut)


def leaf_fractions_from_w(w: np.ndarray, w_star: np.ndarray) -> np.ndarray:
    """u_ell from the fraction vectors: every type-ell leaf sits in a
    cherry (twice for same-type pairs) or is a pendant."""
    k, m = w.shape
    pairs = [(a, b) for a in range(1, k + 1) for b in range(a, k + 1)]
    u = np.zeros(k)
    for ell in range(1, k + 1):
        tot = 0.0
        for c, (a, b) in enumerate(pairs):
            mult = (a == ell) + (b == ell)
            tot += mult * float(w[:, c].sum())
        tot += float(w_star.reshape(k, k)[:, ell - 1].sum())
        u[ell - 1] = tot
    return u


def infer_yule(w, w_star, r, lam: float | None = None,
               tol: float = 1e-8) -> YuleEstimate:
    """Invert the limiting fractions into birth and mutation rates.

    Args:
        w: cherry fractions, shape (k, k(k+1)/2).
        w_star: pendant fractions, length k^2, (ell, m) lexicographic.
        r: limiting total birth rate per type (scalar = same for all).
        lam: Perron growth rate; may be omitted when r is type independent
            (then lam = r).

    Stage 1 solves the linear pendant-balance system for the mutation
    rates (least squares; the k^2 x k(k-1) system is overdetermined and
    the residual is reported).  Stage 2 computes u from the fractions and
    reads off q_(ell) = -(A - lam I) w_ell / u_ell.
    """
    w = np.asarray(w, dtype=float)
    w_star = np.asarray(w_star, dtype=float).ravel()
    k = w.shape[0]
    m = w.shape[1]
    if m != k * (k + 1) // 2 or w_star.size != k * k:
        raise InferenceError("fraction vector shapes do not match k")
    total = 2.0 * float(w.sum()) + float(w_star.sum())
    if abs(total - 1.0) > 1e-6 or np.any(w < -1e-9) or np.any(w_star < -1e-9):
        raise InferenceError(
            f"inconsistent fractions: 2*sum(w) + sum(w*) = {total!r}")
    r = np.asarray(r, dtype=float).ravel()
    if r.size == 1:
        r = np.full(k, float(r[0]))
    if r.size != k:
        raise InferenceError("r must be scalar or length k")
    if lam is None:
        if np.max(np.abs(r - r[0])) > 1e-12:
            raise InferenceError("lam is required unless r is type independent")
        lam = float(r[0])

    # stage 1: mutation rates from (C - lam I) w* + U(r) w = 0
    unknowns = [(i, j) for i in range(k) for j in range(k) if i != j]  # q_{i+1}^{j+1}
    upos = {x: c for c, x in enumerate(unknowns)}
    ws = w_star.reshape(k, k)
    design = np.zeros((k * k, len(unknowns)))
    rhs = np.zeros(k * k)
    wflat = w.reshape(-1)
    U = _u_matrix(k, r)
    uw = U @ wflat
    for ell in range(k):
        for mm in range(k):
            row = ell * k + mm
            rhs[row] = -((-r[mm] - lam) * ws[ell, mm] + uw[row])
            for i in range(k):
                if i != mm:
                    design[row, upos[(mm, i)]] += -ws[ell, mm]   # -q_m^i w*_{ell m}
            for j in range(k):
                if j != mm:
                    design[row, upos[(j, mm)]] += ws[ell, j]     # +q_j^m w*_{ell j}
    sol, _res, rank, sv = np.linalg.lstsq(design, rhs, rcond=None)
    if rank < len(unknowns):
        ns = _null_space(design)
        err = InferenceError(
            f"mutation rates not identifiable: stage-1 rank {rank} < {len(unknowns)}")
        err.null_space = ns
        raise err
    resid = float(np.linalg.norm(design @ sol - rhs))
    warnings = []
    mutation = np.zeros((k, k))
    for (i, j), c in upos.items():
        if sol[c] < -1e-8:
            warnings.append(f"recovered mutation rate q_{i+1}^{j+1} = {sol[c]:.3e} < 0")
        mutation[i, j] = sol[c]

    # stage 2: birth-rate vectors from the cherry balance
    yp_probe = YuleParams(k,
                          {(ell + 1, a, b): 0.0 for ell in range(k)
                           for (a, b) in [(a, b) for a in range(1, k + 1)
                                          for b in range(a, k + 1)]},
                          {(i + 1, j + 1): max(float(mutation[i, j]), 0.0)
                           for i in range(k) for j in range(k) if i != j})
    pairs = yp_probe.pairs
    mats = build_moment_matrices(yp_probe, t=None)
    # A built from mutation rates only, then add the birth part of q_i to
    # the diagonal: diag entries are -(q_i + q_j) with q_i = r_i + mut_i.
    A = mats.A.copy()
    mut_tot = mutation.sum(axis=1)
    for row, (a, b) in enumerate(pairs):
        A[row, row] = -((r[a - 1] + mut_tot[a - 1]) + (r[b - 1] + mut_tot[b - 1]))
    u = leaf_fractions_from_w(w, w_star)
    birth = np.empty((k, m))
    for ell in range(k):
        if u[ell] <= 1e-12:
            raise InferenceError(f"leaf fraction u_{ell+1} vanishes; "
                                 "birth rates of that type are not identifiable")
        birth[ell] = -(A - lam * np.eye(m)) @ w[ell] / u[ell]
    for ell in range(k):
        if np.any(birth[ell] < -1e-8):
            warnings.append(f"recovered birth vector for type {ell+1} has "
                            f"negative entries (min {birth[ell].min():.3e})")
    est = YuleEstimate(birth, mutation, u, float(lam), resid, warnings)
    est.pairs = pairs
    return est


def _u_matrix(k, r):
    """U(r): pendant inflow from cherries, in terms of total birth rates."""
    pairs = [(a, b) for a in range(1, k + 1) for b in range(a, k + 1)]
    m = len(pairs)
    U = np.zeros((k * k, k * m))
    for ell in range(1, k + 1):
        for mm in range(1, k + 1):
            row = (ell - 1) * k + (mm - 1)
            for c, (i, j) in enumerate(pairs):
                if i == j == mm:
                    U[row, (ell - 1) * m + c] = 2 * r[mm - 1]
                elif j == mm and i < mm:
                    U[row, (ell - 1) * m + c] = r[i - 1]
                elif i == mm and j > mm:
                    U[row, (ell - 1) * m + c] = r[j - 1]
    return U


def _null_space(M, rtol=1e-10):
    _u, s, vt = np.linalg.svd(M)
    cutoff = rtol * (s[0] if len(s) else 1.0)
    return vt[np.sum(s > cutoff):].T


# ---------------------------------------------------------------------------
# Special-case p estimators (k = 2, symmetric change models)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PEstimate:
    p: float
    estimates: tuple
    spread: float
    alternate: float | None = None   # second quadratic branch when ambiguous


def estimate_p_cladogenetic(w1, tol: float = 1e-9) -> PEstimate:
    """Type-change probability of the symmetric cladogenetic model from
    the type-1 cherry fractions (w1_11, w1_12, w1_22):

        p = 1 - sqrt(6 w11) = sqrt(6 w22) = (1 +- sqrt(1 - 12 w12))/2.

    The quadratic branch is resolved toward the other two estimators; the
    returned p is the average, with the max pairwise spread attached.
    """
    w11, w12, w22 = (float(v) for v in np.asarray(w1, dtype=float).ravel())
    for name, v in (("w1_11", w11), ("w1_12", w12), ("w1_22", w22)):
        if v < -tol or v > 1.0 / 6.0 + 1e-6:
            raise InferenceError(f"{name} = {v!r} outside [0, 1/6]")
    disc = 1.0 - 12.0 * w12
    if disc < -tol:
        raise InferenceError(f"1 - 12*w1_12 = {disc!r} < 0: inconsistent input")
    e1 = 1.0 - math.sqrt(max(6.0 * w11, 0.0))
    e2 = math.sqrt(max(6.0 * w22, 0.0))
    root = math.sqrt(max(disc, 0.0))
    anchor = 0.5 * (e1 + e2)
    lo, hi = 0.5 * (1.0 - root), 0.5 * (1.0 + root)
    if abs(lo - anchor) <= abs(hi - anchor):
        e3, alt = lo, hi
    else:
        e3, alt = hi, lo
    alternate = alt if abs(abs(lo - anchor) - abs(hi - anchor)) < 1e-12 and lo != hi else None
    ests = (e1, e2, e3)
    spread = max(ests) - min(ests)
    return PEstimate(sum(ests) / 3.0, ests, spread, alternate)


def estimate_p_anagenetic(w, w_star, tol: float = 1e-9) -> PEstimate:
    """Relative mutation rate of the symmetric anagenetic model from the
    cherry fractions w (2 x 3) and pendant fractions w_star
    ((1,1),(1,2),(2,1),(2,2) order), via the four ratio estimators."""
    w = np.asarray(w, dtype=float)
    ws = np.asarray(w_star, dtype=float).ravel()
    if w.shape != (2, 3) or ws.size != 4:
        raise InferenceError("anagenetic estimator needs k=2 fraction vectors")
    w1_11, w1_12, w1_22 = w[0]
    w2_11, w2_12, w2_22 = w[1]
    p1_1, p1_2, p2_1, p2_2 = ws
    numerators = (2 * w1_11 + w1_12 - 2 * p1_1,
                  w1_12 + 2 * w1_22 - 2 * p1_2,
                  2 * w2_22 + w2_12 - 2 * p2_2,
                  w2_12 + 2 * w2_11 - 2 * p2_1)
    if max(abs(v) for v in numerators) < 1e-12:
        return PEstimate(0.0, (0.0, 0.0, 0.0, 0.0), 0.0)
    denominators = (p1_1 - p1_2, p1_2 - p1_1, p2_2 - p2_1, p2_1 - p2_2)
    if min(abs(d) for d in denominators) < tol:
        raise InferenceError(
            "pendant fractions are nearly symmetric; the ratio estimators "
            "are undefined")
    ests = tuple(n / d for n, d in zip(numerators, denominators))
    spread = max(ests) - min(ests)
    return PEstimate(sum(ests) / 4.0, ests, spread)


# ---------------------------------------------------------------------------
# Model comparison (k = 2, no mutations)
# ---------------------------------------------------------------------------


def closed_form_w(p1, p2, a1: float) -> np.ndarray:
    """Closed-form limiting cherry fractions of a two-type mutation-free
    Yule model with splitting probabilities p1, p2 (each (p_11, p_12,
    p_22)) and type-1 weight a1, valid under the splitting-probability
    balance p1_11 + p2_22 = 1 + p1_22 + p2_11.

    Returns shape (2, 3): rows = branch-point type.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    x = p1[0] - p1[2]
    d1 = 2 * p1[0] * a1 + a1 - 2 * p1[2] * a1 - p1[0] + p1[2] + 1
    d2 = 2 * p1[0] * a1 - a1 - 2 * p1[2] * a1 - p1[0] + p1[2] + 2
    d3 = 2 * p1[0] * a1 - 3 * a1 - 2 * p1[2] * a1 - p1[0] + p1[2] + 3
    dens = np.array([d1, d2, d3])
    w1 = a1 * p1 * x / dens
    w2 = (1 - a1) * p2 * (1 - x) / dens
    return np.vstack([w1, w2])


def _splitting_data(yp: YuleParams):
    if yp.k != 2:
        raise ConditionError("comparison is defined for k=2 models")
    for (i, j), s in yp.mutation.items():
        if s.limit != 0.0:
            raise ConditionError("comparison requires mutation-free models")
    q = np.array([yp.birth_total(1), yp.birth_total(2)])
    if np.any(q <= 0):
        raise ConditionError("both types need positive limiting birth rates")
    p = np.array([[yp.birth_rate(i, a, b) / q[i - 1] for (a, b) in yp.pairs]
                  for i in (1, 2)])
    a1 = q[0] / q.sum()
    return p, float(a1)


@dataclass(frozen=True)
class ComparisonReport:
    a1: tuple
    p: np.ndarray
    w_a: np.ndarray
    w_b: np.ndarray
    direction: str               # '<', '>', or 'equal' comparing a1 values
    orderings_hold: bool


def compare_models(yp_a: YuleParams, yp_b: YuleParams,
                   tol: float = 1e-9) -> ComparisonReport:
    """Compare the limiting cherry fractions of two mutation-free k=2
    models that share splitting probabilities and satisfy the
    splitting-probability balance: the model with the larger type-1
    weight a1 has larger type-1 and smaller type-2 fractions."""
    pa, a1a = _splitting_data(yp_a)
    pb, a1b = _splitting_data(yp_b)
    if np.max(np.abs(pa - pb)) > 1e-9:
        raise ConditionError(
            "models have different splitting probabilities; the comparison "
            "orders weights at fixed splitting probabilities")
    for p in (pa, pb):
        balance = p[0, 0] + p[1, 2] - (1.0 + p[0, 2] + p[1, 0])
        if abs(balance) > tol:
            raise ConditionError(
                f"splitting-probability balance violated by {balance!r}")
    wa = closed_form_w(pa[0], pa[1], a1a)
    wb = closed_form_w(pb[0], pb[1], a1b)
    if abs(a1a - a1b) <= 1e-12:
        direction = "equal"
        holds = bool(np.max(np.abs(wa - wb)) <= 1e-9)
    else:
        direction = "<" if a1a < a1b else ">"
        lo_w, hi_w = (wa, wb) if a1a < a1b else (wb, wa)
        pos = pa > 0
        holds = bool(np.all(lo_w[0][pos[0]] < hi_w[0][pos[0]])
                     and np.all(lo_w[1][pos[1]] > hi_w[1][pos[1]])
                     and np.allclose(wa[~pos], 0.0, atol=1e-12)
                     and np.allclose(wb[~pos], 0.0, atol=1e-12))
    if not holds:
        raise NumericalError("monotonicity of the closed-form fractions failed; "
                             "inputs violate the comparison's hypotheses")
    return ComparisonReport((a1a, a1b), pa, wa, wb, direction, holds)
