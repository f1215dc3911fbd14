"""Independent brute-force oracles used by the test suite.

Everything here is deliberately written from the model definitions, not
from the library code paths it checks: tree censuses are counted from
scratch, growth histories are enumerated exhaustively, and the urn's
exact moments come from a direct covariance recursion of the Markov
chain.
"""

from collections import defaultdict

import numpy as np

PAIRS = [(1, 1), (1, 2), (2, 2)]
CHERRIES = [(1, 1, 1), (1, 1, 2), (1, 2, 2), (2, 2, 2), (2, 1, 2), (2, 1, 1)]
PENDANTS = [(1, 1), (1, 2), (2, 2), (2, 1)]
BALLS = CHERRIES + PENDANTS
WEIGHTS = np.array([2.0] * 6 + [1.0] * 4)


def qdict(params):
    """{1: {(j1,j2): prob}, 2: ...} from an ErmParams or a plain dict."""
    if isinstance(params, dict):
        return params
    return {i: {p: params.prob(i, *p) for p in PAIRS} for i in (1, 2)}


def census_from_scratch(types, parents):
    """(n1, cherry6, pendant4) counted directly from the definition."""
    children = defaultdict(list)
    for i, p in enumerate(parents):
        if p >= 0:
            children[p].append(i)
    ch = np.zeros(6, dtype=int)
    pend = np.zeros(4, dtype=int)
    n1 = 0
    for i in range(len(types)):
        if not children[i]:
            n1 += types[i] == 1
    for i, kids in children.items():
        if len(kids) == 2:
            a, b = kids
            a_leaf, b_leaf = not children[a], not children[b]
            if a_leaf and b_leaf:
                j1, j2 = sorted((types[a], types[b]))
                ch[CHERRIES.index((types[i], j1, j2))] += 1
            elif a_leaf or b_leaf:
                leaf = a if a_leaf else b
                pend[PENDANTS.index((types[i], types[leaf]))] += 1
    return n1, tuple(ch), tuple(pend)


def enumerate_erm(params, n, init_type):
    """Exhaustive enumeration of all k=2 ERM growth histories to n leaves.

    Returns {(n1, cherry6, pendant4): probability}.
    """
    q = qdict(params)
    acc = defaultdict(float)

    def rec(types, parents, leaves, prob):
        if len(leaves) == n:
            acc[census_from_scratch(types, parents)] += prob
            return
        m = len(leaves)
        for li in range(m):
            leaf = leaves[li]
            t = types[leaf]
            for (d1, d2), p in q[t].items():
                if p == 0:
                    continue
                c1, c2 = len(types), len(types) + 1
                rec(types + [d1, d2], parents + [leaf, leaf],
                    leaves[:li] + leaves[li + 1:] + [c1, c2], prob * p / m)

    rec([init_type], [-1], [0], 1.0)
    total = sum(acc.values())
    assert abs(total - 1.0) < 1e-12, total
    return dict(acc)


def erm_moments_from_enumeration(dist):
    """Leaf mean, cherry means (paper order), cherry variances, and the
    full cherry covariance matrix from an enumerate_erm distribution."""
    mean_n1 = sum(p * k[0] for k, p in dist.items())
    mu = np.zeros(6)
    second = np.zeros((6, 6))
    for key, p in dist.items():
        c = np.array(key[1], dtype=float)
        mu += p * c
        second += p * np.outer(c, c)
    cov = second - np.outer(mu, mu)
    return mean_n1, mu, np.diag(cov).copy(), cov


def enumerate_urn(params, steps, init_type):
    """Exhaustive urn-path enumeration from the initial-cherry mixture.

    Returns {(cherry6, pendant4): probability} after ``steps`` draws.
    """
    q = qdict(params)
    acc = defaultdict(float)

    def outcomes(ball):
        if len(ball) == 3:
            ell, j1, j2 = ball
            for picked, sibling in ((j1, j2), (j2, j1)):
                for (d1, d2), p in q[picked].items():
                    if p:
                        yield 0.5 * p, [(ball, -1), ((picked, d1, d2), 1),
                                        ((ell, sibling), 1)]
        else:
            ell, m = ball
            for (d1, d2), p in q[m].items():
                if p:
                    yield p, [(ball, -1), ((m, d1, d2), 1)]

    def apply(counts, changes):
        counts = dict(counts)
        for ball, delta in changes:
            counts[ball] = counts.get(ball, 0) + delta
            if counts[ball] == 0:
                del counts[ball]
        return counts

    def rec(counts, remaining, prob):
        if remaining == 0:
            ch = tuple(counts.get(b, 0) for b in CHERRIES)
            pe = tuple(counts.get(b, 0) for b in PENDANTS)
            acc[(ch, pe)] += prob
            return
        total_w = sum((2.0 if len(b) == 3 else 1.0) * c for b, c in counts.items())
        for ball, cnt in list(counts.items()):
            w = (2.0 if len(ball) == 3 else 1.0) * cnt / total_w
            for p_out, changes in outcomes(ball):
                rec(apply(counts, changes), remaining - 1, prob * w * p_out)

    for (d1, d2), p in q[init_type].items():
        if p:
            rec({(init_type, d1, d2): 1}, steps, p)
    total = sum(acc.values())
    assert abs(total - 1.0) < 1e-12, total
    return dict(acc)


# ---------------------------------------------------------------------------
# Exact urn mean/covariance recursion (full 10-dimensional chain)
# ---------------------------------------------------------------------------


def _replacement_outcomes(q, ball):
    out = []
    if len(ball) == 3:
        ell, j1, j2 = ball
        for picked, sibling in ((j1, j2), (j2, j1)):
            for (d1, d2), p in q[picked].items():
                if p == 0:
                    continue
                delta = np.zeros(10)
                delta[BALLS.index(ball)] -= 1
                delta[BALLS.index((picked, d1, d2))] += 1
                delta[BALLS.index((ell, sibling))] += 1
                out.append((0.5 * p, delta))
    else:
        ell, m = ball
        for (d1, d2), p in q[m].items():
            if p == 0:
                continue
            delta = np.zeros(10)
            delta[BALLS.index(ball)] -= 1
            delta[BALLS.index((m, d1, d2))] += 1
            out.append((p, delta))
    return out


def exact_urn_mean_cov(params, n, init_type):
    """Exact mean and covariance of the 10-dimensional census vector at n
    leaves, starting from one leaf (the first step forms the initial
    cherry).  One-step updates are exact conditional-moment identities of
    the urn chain, so the only error is float rounding."""
    q = qdict(params)
    A = np.zeros((10, 10))
    S = []
    for j, ball in enumerate(BALLS):
        M = np.zeros((10, 10))
        mean = np.zeros(10)
        for p, delta in _replacement_outcomes(q, ball):
            M += p * np.outer(delta, delta)
            mean += p * delta
        A[:, j] = WEIGHTS[j] * mean
        S.append(WEIGHTS[j] * M)
    S = np.array(S)

    parts = []
    mean = np.zeros(10)
    cov = np.zeros((10, 10))
    for (d1, d2), p in q[init_type].items():
        if p == 0:
            continue
        m = np.zeros(10)
        m[BALLS.index((init_type, d1, d2))] = 1.0
        V = np.zeros((10, 10))
        for nn in range(2, n):
            Am = A @ m
            C2 = np.tensordot(m, S, axes=(0, 0))
            V = V + (A @ V + V @ A.T) / nn + C2 / nn - np.outer(Am, Am) / nn ** 2
            m = m + Am / nn
        parts.append((p, m))
        mean += p * m
        cov += p * V
    for p, m in parts:
        cov += p * np.outer(m - mean, m - mean)
    return mean, cov


def simpson_fixed(f, a, b, n=2001):
    """Fixed-grid Simpson rule (n odd); supports array-valued f."""
    assert n % 2 == 1
    xs = np.linspace(a, b, n)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    vals = [np.asarray(f(x), dtype=float) for x in xs]
    acc = sum(wi * v for wi, v in zip(w, vals))
    return acc * (xs[1] - xs[0]) / 3.0
