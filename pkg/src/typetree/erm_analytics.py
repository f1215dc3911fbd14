"""Exact finite-n cherry moments and Polya-urn asymptotics for k=2 ERM trees.

Three layers:

* exact moments - closed forms (log-gamma arithmetic) and recurrence
  iteration for leaf means, cherry means, and cherry variances.  The
  variance engine iterates the exact one-step joint-moment update of the
  Markov pair (N1(n), C(n)) from n=1, so no transcribed initial case
  tables are needed.
* urn structure - the generating matrix A of the cherry/pendant urn built
  column by column from the replacement rules, its spectrum, and the
  Perron pair.
* limit laws - the almost-sure limit vector v1 (closed form cross-checked
  against the numeric Perron eigenvector), the critical covariance Sigma
  at c1 - c2 = 3/2, and the subcritical covariance Sigma' by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

from . import numerics
from .erm import ErmParams, default_ball_order
from .exceptions import ConditionError, IrreducibilityError, NumericalError, ParameterError
from .orders import IndexOrder

__all__ = [
    "MomentReport", "mean_leaves", "mean_cherries", "var_cherries",
    "moment_report", "variance_growth_exponents",
    "UrnSpec", "replacement_distribution", "urn_matrix", "expected_spectrum",
    "reachable_balls", "urn_irreducible", "limit_fractions_erm",
    "v1_closed_form", "clt_b_matrix", "clt_covariance_critical",
    "clt_covariance_subcritical",
]

STAR_TOL = 1e-9          # distance from the excluded c1-c2 values {-2, 2}
PAPER_CHERRY_ORDER = [(1, 1, 1), (1, 1, 2), (1, 2, 2), (2, 2, 2), (2, 1, 2), (2, 1, 1)]


def _require_k2(params: ErmParams):
    if params.k != 2:
        raise ParameterError("finite-n ERM analytics are implemented for k=2")


def _star_holds(params: ErmParams) -> bool:
    d = params.c1 - params.c2
    return abs(d - 2.0) > STAR_TOL and abs(d + 2.0) > STAR_TOL


def _nu1_2(params: ErmParams, initial_type: int) -> float:
    return params.c1 if initial_type == 1 else params.c2


# ---------------------------------------------------------------------------
# Leaf means
# ---------------------------------------------------------------------------


def mean_leaves(params: ErmParams, n: int, initial_type: int = 1,
                method: str = "auto") -> tuple[float, float]:
    """Expected leaf counts (nu1(n), nu2(n)) of a k=2 ERM tree.

    ``method``: 'closed_form' (needs condition (*): c1 - c2 not in {-2, 2}),
    'recurrence', or 'auto' (closed form when valid, recurrence otherwise).
    """
    _require_k2(params)
    if n < 1:
        raise ParameterError("n must be >= 1")
    if initial_type not in (1, 2):
        raise ParameterError("initial_type must be 1 or 2")
    if n == 1:
        nu1 = 1.0 if initial_type == 1 else 0.0
        return nu1, 1.0 - nu1
    if n == 2:
        nu1 = _nu1_2(params, initial_type)
        return nu1, 2.0 - nu1

    if method == "auto":
        method = "closed_form" if _star_holds(params) else "recurrence"
    if method == "closed_form":
        if not _star_holds(params):
            raise ConditionError(
                "closed form needs c1 - c2 outside {-2, 2}; use method='recurrence'")
        nu1 = _nu1_closed(params, n, initial_type)
    elif method == "recurrence":
        nu1 = _nu1_recurrence(params, initial_type, n)[n]
    else:
        raise ParameterError(f"unknown method {method!r}")
    return nu1, n - nu1


def _nu1_closed(params, n, initial_type):
    # nu1(n) = c2 n/(2-d) + K Gamma(n-1+d)/Gamma(n) with K fixed by nu1(2);
    # solving the recurrence gives Gamma(d+1) in K's denominator (the
    # analogous cherry constant genuinely carries Gamma(d+2) instead).
    c1, c2 = params.c1, params.c2
    d = c1 - c2
    nu2 = _nu1_2(params, initial_type)
    gr = numerics.gamma_ratio(d, n)  # Gamma(n-1+d)/Gamma(n)
    return (c2 * n / (2 - d)
            - (2 * c2 - (2 - d) * nu2) * gr / ((2 - d) * gamma_fn(d + 1)))


def _nu1_recurrence(params, initial_type, n_max):
    """nu1(m) for m = 1..n_max as an array (index = m)."""
    c1, c2 = params.c1, params.c2
    out = np.empty(n_max + 1)
    out[0] = np.nan
    out[1] = 1.0 if initial_type == 1 else 0.0
    if n_max >= 2:
        out[2] = _nu1_2(params, initial_type)
        v = out[2]
        for m in range(2, n_max):
            v = c2 + (m + c1 - c2 - 1.0) * v / m
            out[m + 1] = v
    return out


# ---------------------------------------------------------------------------
# Cherry means
# ---------------------------------------------------------------------------


def mean_cherries(params: ErmParams, n: int, initial_type: int = 1,
                  method: str = "auto") -> np.ndarray:
    """Expected cherry counts, ordered (C1_11, C1_12, C1_22, C2_22, C2_12, C2_11).

    Closed form requires condition (*); the recurrence

        mu(n+1) = (n-2)/n mu(n) + q_i^{j1j2} nu_i(n)/n

    is iterated from n=1 otherwise and is valid for all parameters.
    """
    _require_k2(params)
    if n < 1:
        raise ParameterError("n must be >= 1")
    if method == "auto":
        method = "closed_form" if (_star_holds(params) and n >= 3) else "recurrence"
    if method == "closed_form":
        if not _star_holds(params):
            raise ConditionError(
                "closed form needs c1 - c2 outside {-2, 2}; use method='recurrence'")
        if n < 3:
            method = "recurrence"
    if method == "closed_form":
        swapped = params.swapped()
        other = 3 - initial_type
        mu = [
            _mu1_closed(params, (1, 1), n, initial_type),
            _mu1_closed(params, (1, 2), n, initial_type),
            _mu1_closed(params, (2, 2), n, initial_type),
            _mu1_closed(swapped, (1, 1), n, other),   # C2_22 under the swap
            _mu1_closed(swapped, (1, 2), n, other),   # C2_12
            _mu1_closed(swapped, (2, 2), n, other),   # C2_11
        ]
        return np.array(mu)
    if method != "recurrence":
        raise ParameterError(f"unknown method {method!r}")
    return _mu_recurrence(params, n, initial_type)


def _mu1_closed(params, pair, n, initial_type):
    """Closed-form E[C_1^{pair}(n)] for n >= 3."""
    c1, c2 = params.c1, params.c2
    d = c1 - c2
    q = params.prob(1, *pair)
    nu2 = _nu1_2(params, initial_type)
    mu3 = q * nu2 / 2.0
    cn = (2 * c2 - (2 - d) * nu2) * numerics.gamma_ratio(d, n) / ((2 - d) * gamma_fn(d + 2))
    return ((3 * (2 - d) * (2 * mu3 - q * nu2) + n * (n - 1) * (n - 2) * q * c2)
            / (3 * (2 - d) * (n - 1) * (n - 2))) - q * cn


def _mu_recurrence(params, n, initial_type):
    nu1 = _nu1_recurrence(params, initial_type, max(n, 1))
    mu = np.zeros(6)
    qrow = np.array([params.prob(e, a, b) for (e, a, b) in PAPER_CHERRY_ORDER])
    which = np.array([e for (e, _, _) in PAPER_CHERRY_ORDER])
    for m in range(1, n):
        nu = np.where(which == 1, nu1[m], m - nu1[m])
        mu = (m - 2.0) / m * mu + qrow * nu / m
    return mu


# ---------------------------------------------------------------------------
# Cherry variances (exact joint-moment recursion)
# ---------------------------------------------------------------------------


def _category_moments(params, target):
    """Per-category one-step moments of (dN1, dC) for the pair chain.

    Categories: picked leaf of type t in {1,2}, inside or outside a
    target-type cherry.  Moments: E[dN1], E[dC], E[dN1^2], E[dN1 dC], E[dC^2].
    """
    i_t, j1_t, j2_t = target
    out = {}
    for t in (1, 2):
        for inside in (True, False):
            e = np.zeros(5)
            for (d1, d2), p in zip(params.pairs, params.row(t)):
                dn1 = (d1 == 1) + (d2 == 1) - (t == 1)
                dc = (1 if (t == i_t and (d1, d2) == (j1_t, j2_t)) else 0) - (1 if inside else 0)
                e += p * np.array([dn1, dc, dn1 * dn1, dn1 * dc, dc * dc])
            out[(t, inside)] = e
    return out


def _pair_chain_step_matrices(params, target):
    """T0, T1 with moment update m(n+1) = (T0 + T1/n) m(n),
    m = (1, E N1, E C, E N1^2, E N1 C, E C^2)."""
    j1_t, j2_t = target[1], target[2]
    a1 = (j1_t == 1) + (j2_t == 1)   # type-1 leaves per target cherry
    a2 = 2 - a1
    cm = _category_moments(params, target)
    A = np.empty(5)
    B = np.empty(5)
    D = np.empty(5)
    for j in range(5):
        A[j] = cm[(1, False)][j] - cm[(2, False)][j]
        B[j] = (a1 * (cm[(1, True)][j] - cm[(1, False)][j])
                + a2 * (cm[(2, True)][j] - cm[(2, False)][j]))
        D[j] = cm[(2, False)][j]
    T0 = np.eye(6)
    T1 = np.zeros((6, 6))
    # E'[N1] and E'[C]
    T0[1, 0] = D[0]; T1[1, 1] = A[0]; T1[1, 2] = B[0]
    T0[2, 0] = D[1]; T1[2, 1] = A[1]; T1[2, 2] = B[1]
    # E'[N1^2]
    T0[3, 0] = D[2]; T0[3, 1] = 2 * D[0]
    T1[3, 1] = A[2]; T1[3, 2] = B[2]; T1[3, 3] = 2 * A[0]; T1[3, 4] = 2 * B[0]
    # E'[N1 C]
    T0[4, 0] = D[3]; T0[4, 1] = D[1]; T0[4, 2] = D[0]
    T1[4, 1] = A[3]; T1[4, 2] = B[3]; T1[4, 3] = A[1]
    T1[4, 4] = A[0] + B[1]; T1[4, 5] = B[0]
    # E'[C^2]
    T0[5, 0] = D[4]; T0[5, 2] = 2 * D[1]
    T1[5, 1] = A[4]; T1[5, 2] = B[4]; T1[5, 4] = 2 * A[1]; T1[5, 5] = 2 * B[1]
    return T0, T1


def _pair_chain_moments(params, target, n, initial_type):
    T0, T1 = _pair_chain_step_matrices(params, target)
    x = 1.0 if initial_type == 1 else 0.0
    m = np.array([1.0, x, 0.0, x, 0.0, 0.0])
    for nn in range(1, n):
        m = T0 @ m + (T1 @ m) / nn
    return m


def var_cherries(params: ErmParams, n: int, initial_type: int = 1) -> np.ndarray:
    """Exact cherry-count variances at n leaves, paper cherry order.

    Iterates the exact one-step update of the joint moments of
    (N1(n), C(n)) for each cherry type from the deterministic 1-leaf
    state.  Unconditional in the parameters (no (*) needed).
    """
    _require_k2(params)
    if n < 1:
        raise ParameterError("n must be >= 1")
    out = np.empty(6)
    for c, target in enumerate(PAPER_CHERRY_ORDER):
        m = _pair_chain_moments(params, target, n, initial_type)
        out[c] = m[5] - m[2] ** 2
    return np.maximum(out, 0.0)


VAR_ASYMPTOTICS_EXCLUDED = (-2.0, -1.0, 0.0, 1.0, 1.5, 2.0)


def variance_growth_exponents(params: ErmParams) -> tuple[float, float, float] | None:
    """Growth exponents (1, c1-c2-1, 2(c1-c2-1)) of the cherry variances,
    or None when c1 - c2 hits an excluded value and the asymptotic
    statement does not apply."""
    _require_k2(params)
    d = params.c1 - params.c2
    if any(abs(d - v) <= STAR_TOL for v in VAR_ASYMPTOTICS_EXCLUDED):
        return None
    return (1.0, d - 1.0, 2.0 * (d - 1.0))


@dataclass(frozen=True)
class MomentReport:
    """Exact leaf/cherry moments of one model at one tree size."""

    n: int
    nu: np.ndarray                        # (nu1, nu2)
    mu: np.ndarray                        # paper cherry order, 6 entries
    sigma2: np.ndarray                    # matching variances
    method: str
    var_exponents: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=float))
        if self.n >= 3 and abs(self.mu.sum() - self.n / 3.0) > 1e-9:
            raise NumericalError(
                f"cherry means sum to {self.mu.sum()!r}, expected n/3 = {self.n / 3.0!r}")
        if np.any(self.sigma2 < -1e-12):
            raise NumericalError("negative variance")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "method": self.method,
            "nu": [float(v) for v in self.nu],
            "mu": {f"C{e}_{a}{b}": float(self.mu[i])
                   for i, (e, a, b) in enumerate(PAPER_CHERRY_ORDER)},
            "sigma2": {f"C{e}_{a}{b}": float(self.sigma2[i])
                       for i, (e, a, b) in enumerate(PAPER_CHERRY_ORDER)},
            "var_exponents": list(self.var_exponents) if self.var_exponents else None,
        }


def moment_report(params: ErmParams, n: int, initial_type: int = 1,
                  method: str = "auto") -> MomentReport:
    used = method
    if method == "auto":
        used = "closed_form" if (_star_holds(params) and n >= 3) else "recurrence"
    nu = mean_leaves(params, n, initial_type, method=used if n >= 3 else "recurrence")
    mu = mean_cherries(params, n, initial_type, method=used)
    s2 = var_cherries(params, n, initial_type)
    return MomentReport(n, np.array(nu), mu, s2, used,
                        variance_growth_exponents(params))


# ---------------------------------------------------------------------------
# Urn structure
# ---------------------------------------------------------------------------


def replacement_distribution(params: ErmParams, ball, order: IndexOrder):
    """Outcomes [(probability, delta)] of drawing ``ball``; delta is the
    signed ball-count change including removal of the drawn ball."""
    nb, nc = order.n_balls, order.n_cherries
    out = []
    if len(ball) == 3:
        ell, j1, j2 = ball
        for picked, sibling in ((j1, j2), (j2, j1)):
            for (d1, d2), p in zip(params.pairs, params.row(picked)):
                if p == 0:
                    continue
                delta = np.zeros(nb)
                delta[order.cherry_pos[ball]] -= 1
                delta[order.cherry_pos[(picked, d1, d2)]] += 1
                delta[nc + order.pendant_pos[(ell, sibling)]] += 1
                out.append((0.5 * p, delta))
    else:
        ell, m = ball
        for (d1, d2), p in zip(params.pairs, params.row(m)):
            if p == 0:
                continue
            delta = np.zeros(nb)
            delta[nc + order.pendant_pos[ball]] -= 1
            delta[order.cherry_pos[(m, d1, d2)]] += 1
            out.append((p, delta))
    return out


@dataclass
class UrnSpec:
    """Generating matrix of the cherry/pendant urn with its eigenstructure.

    ``support`` lists the ball indices the spec describes (the whole space
    or a closed reachable subset); A, weights, eigen data are restricted
    to it.  v1 satisfies a.v1 = 1; u1.v1 = u2.v2 = 1.  v2/u2 are None when
    the second eigenvalue is complex or repeated.
    """

    order: IndexOrder
    support: np.ndarray
    weights: np.ndarray
    A: np.ndarray
    eigenvalues: np.ndarray
    lam1: float
    v1: np.ndarray
    u1: np.ndarray
    lam2: float | None
    v2: np.ndarray | None
    u2: np.ndarray | None

    def embed(self, vec: np.ndarray) -> np.ndarray:
        """Lift a support-sized vector to the full ball space (zeros off)."""
        full = np.zeros(self.order.n_balls)
        full[self.support] = vec
        return full


def expected_spectrum(params: ErmParams) -> np.ndarray:
    """The k=2 eigenvalue multiset {1, c1-c2-1, -1, -1, -2 x6}."""
    _require_k2(params)
    return np.sort(np.array([1.0, params.c1 - params.c2 - 1.0,
                             -1.0, -1.0, -2.0, -2.0, -2.0, -2.0, -2.0, -2.0]))


def _build_A(params, order, support):
    m = len(support)
    pos = {b: i for i, b in enumerate(support)}
    A = np.zeros((m, m))
    weights = order.ball_weights()
    for cj, j in enumerate(support):
        ball = order.balls[j]
        for p, delta in replacement_distribution(params, ball, order):
            nz = np.flatnonzero(delta)
            for i in nz:
                if i in pos:
                    A[pos[i], cj] += weights[j] * p * delta[i]
                elif delta[i] > 0:
                    raise IrreducibilityError(
                        "support is not closed under the replacement rules")
    return A


def urn_matrix(params: ErmParams, support=None, tol: float = 1e-9) -> UrnSpec:
    """Generating matrix A = (a_j E[xi_ji]) built from the replacement
    rules, plus spectrum and normalized eigenpairs.

    ``support``: optional closed subset of ball indices (default: all).
    For k=2 on the full space the spectrum is verified against
    {1, c1-c2-1, -1, -1, -2 x6} within ``tol``.
    """
    order = default_ball_order(params.k)
    if support is None:
        support = np.arange(order.n_balls)
    support = np.asarray(sorted(support), dtype=int)
    A = _build_A(params, order, support)
    weights = order.ball_weights()[support]
    eig = numerics.eigen_decompose(A, tol=tol)
    values = eig.values

    if params.k == 2 and len(support) == order.n_balls:
        exp = expected_spectrum(params)
        got = np.sort(values.real)
        if np.max(np.abs(got - exp)) > 1e-7 or np.max(np.abs(values.imag)) > 1e-7:
            raise NumericalError("urn spectrum does not match the k=2 multiset")

    i1 = int(np.argmax(values.real))
    lam1 = float(values[i1].real)
    v1, u1 = eig.pair(i1)
    v1, u1 = v1.real, u1.real
    s = weights @ v1
    v1, u1 = v1 / s, u1 * s
    if np.sum(v1) < 0:
        v1, u1 = -v1, -u1

    lam2 = v2 = u2 = None
    rest = [i for i in range(len(values)) if i != i1]
    if rest:
        j = max(rest, key=lambda i: values[i].real)
        cand = values[j]
        gap = min(abs(values[i] - cand) for i in range(len(values)) if i != j)
        if abs(cand.imag) <= tol and gap > tol:
            lam2 = float(cand.real)
            v2, u2 = eig.pair(j)
            v2, u2 = v2.real, u2.real
    return UrnSpec(order, support, weights, A, values, lam1, v1, u1, lam2, v2, u2)


def reachable_balls(params: ErmParams, initial_type: int = 1) -> np.ndarray:
    """Ball indices reachable from the initial cherry distribution."""
    order = default_ball_order(params.k)
    start = [order.cherry_pos[(initial_type, j1, j2)]
             for (j1, j2), p in zip(params.pairs, params.row(initial_type)) if p > 0]
    edges = {}
    for b, ball in enumerate(order.balls):
        outs = set()
        for _, delta in replacement_distribution(params, ball, order):
            outs.update(np.flatnonzero(delta > 0).tolist())
        edges[b] = outs
    seen = set(start)
    queue = list(start)
    while queue:
        b = queue.pop()
        for nb in edges[b]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return np.array(sorted(seen), dtype=int)


def urn_irreducible(params: ErmParams, support) -> bool:
    """Condition (*): the ball digraph restricted to ``support`` is
    strongly connected (every ball can eventually produce every other)."""
    order = default_ball_order(params.k)
    support = sorted(support)
    pos = {b: i for i, b in enumerate(support)}
    fwd = {i: set() for i in range(len(support))}
    bwd = {i: set() for i in range(len(support))}
    for b in support:
        for _, delta in replacement_distribution(params, order.balls[b], order):
            for t in np.flatnonzero(delta > 0):
                if int(t) in pos:
                    fwd[pos[b]].add(pos[int(t)])
                    bwd[pos[int(t)]].add(pos[b])

    def bfs(adj):
        seen = {0}
        queue = [0]
        while queue:
            x = queue.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        return len(seen) == len(support)

    return bfs(fwd) and bfs(bwd)


def v1_closed_form(params: ErmParams) -> np.ndarray:
    """The displayed k=2 limit vector v1 in paper order (needs c1-c2 != 2)."""
    _require_k2(params)
    c1, c2 = params.c1, params.c2
    if abs(2.0 - c1 + c2) < STAR_TOL:
        raise ConditionError("v1 closed form undefined at c1 - c2 = 2")
    q = params.prob
    vec = np.array([
        q(1, 1, 1) * c2, q(1, 1, 2) * c2, q(1, 2, 2) * c2,
        q(2, 2, 2) * (2 - c1), q(2, 1, 2) * (2 - c1), q(2, 1, 1) * (2 - c1),
        c1 * c2 / 2.0, (2 - c1) * c2 / 2.0,
        (2 - c1) * (2 - c2) / 2.0, (2 - c1) * c2 / 2.0,
    ])
    return vec / (3.0 * (2.0 - c1 + c2))


@dataclass(frozen=True)
class LimitFractionsErm:
    """Strong-law limit of the urn fractions X(n)/n."""

    v1: np.ndarray          # full ball space, zeros off the reachable set
    support: np.ndarray
    irreducible_full: bool
    order: IndexOrder

    @property
    def cherries(self) -> np.ndarray:
        return self.v1[:self.order.n_cherries]

    @property
    def pendants(self) -> np.ndarray:
        return self.v1[self.order.n_cherries:]


def limit_fractions_erm(params: ErmParams, initial_type: int = 1,
                        tol: float = 1e-9) -> LimitFractionsErm:
    """Almost-sure limit v1 of X(n)/n, from the Perron eigenvector of the
    (possibly reachability-restricted) urn matrix.

    For k=2 the closed-form display is also evaluated and must agree with
    the numeric eigenvector within ``tol`` wherever both are defined.
    Raises IrreducibilityError when the reachable ball set is not
    strongly connected (condition (*) fails even after restriction).
    """
    order = default_ball_order(params.k)
    support = reachable_balls(params, initial_type)
    if len(support) == 0:
        raise IrreducibilityError("no reachable cherries: empty restriction")
    if not urn_irreducible(params, support):
        raise IrreducibilityError(
            "urn is reducible on its reachable ball set; the strong law "
            "does not apply (condition (*) fails)")
    spec = urn_matrix(params, support=support)
    if abs(spec.lam1 - 1.0) > 1e-7:
        raise NumericalError(f"restricted urn Perron root {spec.lam1!r} != 1")
    v1 = spec.embed(spec.v1)

    if params.k == 2 and abs(2.0 - params.c1 + params.c2) > STAR_TOL:
        closed = v1_closed_form(params)
        if np.max(np.abs(closed - v1)) > tol:
            raise NumericalError(
                "closed-form v1 disagrees with the numeric Perron eigenvector "
                f"by {np.max(np.abs(closed - v1)):.2e}")
    return LimitFractionsErm(v1, support, len(support) == order.n_balls, order)


# ---------------------------------------------------------------------------
# Central limit covariances
# ---------------------------------------------------------------------------


def clt_b_matrix(params: ErmParams, order: IndexOrder, support, v1) -> np.ndarray:
    """B = sum_i v1_i a_i E[xi_i xi_i^T] over the support balls."""
    weights = order.ball_weights()
    m = len(support)
    pos = {b: i for i, b in enumerate(support)}
    B = np.zeros((m, m))
    for cj, j in enumerate(support):
        sec = np.zeros((m, m))
        for p, delta in replacement_distribution(params, order.balls[j], order):
            d = delta[support]
            sec += p * np.outer(d, d)
        B += v1[cj] * weights[j] * sec
    return B


def clt_covariance_critical(params: ErmParams, tol: float = 1e-9) -> np.ndarray:
    """Covariance Sigma of (X_n - n v1)/sqrt(n ln n) when c1 - c2 = 3/2.

    Built as Sigma = (I - T) P B P^T (I - T)^T with P = v2 u2^T the
    spectral projection of the second eigenvalue (u2.v2 = 1) and
    T = (lam1/lam2) v1 (a.v2) u2^T.  Since a is the left Perron vector,
    a.v2 = 0 and T vanishes; it is kept for fidelity to the source
    construction.  The eigenpair is computed numerically: the source's
    displayed v2/u2 fail the eigen residual check and are not used.
    """
    _require_k2(params)
    if abs(params.c1 - params.c2 - 1.5) > STAR_TOL:
        raise ConditionError("critical CLT needs c1 - c2 = 3/2")
    spec = urn_matrix(params)
    if not urn_irreducible(params, spec.support):
        raise IrreducibilityError("critical CLT needs an irreducible urn")
    if spec.lam2 is None or abs(spec.lam2 - 0.5) > 1e-7:
        raise ConditionError("second eigenvalue is not a simple real 1/2")
    B = clt_b_matrix(params, spec.order, spec.support, spec.v1)
    P = np.outer(spec.v2, spec.u2)
    T = (spec.lam1 / spec.lam2) * np.outer(spec.v1, spec.weights) @ P
    IT = np.eye(len(spec.support)) - T
    sigma = IT @ (P @ B @ P.T) @ IT.T
    return _check_psd(sigma, 1e-8, "critical covariance")


def _psi(s, A_deflated, P1, Icomp):
    return P1 + numerics.matrix_exp(s * A_deflated) @ Icomp


def clt_covariance_subcritical(params: ErmParams, initial_type: int = 1,
                               tol: float = 1e-7) -> np.ndarray:
    """Covariance Sigma' of (X_n - n v1)/sqrt(n) when c1 - c2 < 3/2.

    Sigma' = integral_0^inf psi(s) B psi(s)^T e^{-lam1 s} lam1 ds
             - lam1^2 v1 v1^T,
    with psi(s) = e^{sA} - lam1 v1 a^T int_0^s e^{tA} dt evaluated in the
    cancellation-free form psi(s) = v1 a^T + e^{s(A - lam1 v1 a^T)}
    (I - v1 a^T).  Adaptive quadrature to relative tolerance ``tol`` with
    exponential-tail truncation.  Computed on the reachable ball set and
    embedded with zeros elsewhere.
    """
    if params.k == 2 and params.c1 - params.c2 >= 1.5 - STAR_TOL:
        raise ConditionError("subcritical CLT needs c1 - c2 < 3/2")
    support = reachable_balls(params, initial_type)
    if not urn_irreducible(params, support):
        raise IrreducibilityError("subcritical CLT needs an irreducible urn "
                                  "(after reachability restriction)")
    spec = urn_matrix(params, support=support)
    if spec.lam2 is None:
        raise ConditionError(
            "second eigenvalue is complex or repeated; CLT computation refused")
    if spec.lam2 >= spec.lam1 / 2.0 - 1e-12:
        raise ConditionError("subcritical CLT needs Re lam2 < lam1/2")
    m = len(spec.support)
    B = clt_b_matrix(params, spec.order, spec.support, spec.v1)
    P1 = np.outer(spec.v1, spec.weights)
    Icomp = np.eye(m) - P1
    A_def = spec.A - spec.lam1 * P1

    def integrand(s):
        psi = _psi(s, A_def, P1, Icomp)
        return (psi @ B @ psi.T) * (spec.lam1 * math.exp(-spec.lam1 * s))

    total = numerics.quadrature(integrand, 0.0, math.inf, tol=tol)
    sigma = total - spec.lam1 ** 2 * np.outer(spec.v1, spec.v1)
    sigma = _check_psd(sigma, max(tol, 1e-7), "subcritical covariance")
    full = np.zeros((spec.order.n_balls, spec.order.n_balls))
    full[np.ix_(spec.support, spec.support)] = sigma
    return full


def _check_psd(sigma, tol, what):
    scale = max(np.max(np.abs(sigma)), 1e-30)
    asym = np.max(np.abs(sigma - sigma.T))
    if asym > tol * scale:
        raise NumericalError(f"{what} is not symmetric (deviation {asym:.2e})")
    sigma = 0.5 * (sigma + sigma.T)
    w = np.linalg.eigvalsh(sigma)
    if w.min() < -tol * max(scale, 1.0):
        raise NumericalError(f"{what} is not PSD (min eigenvalue {w.min():.2e})")
    return sigma
