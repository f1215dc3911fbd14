import numpy as np
import pytest

from typetree import (ErmParams, ParameterError, StateError, UrnState, census,
                      initial_urn_state, serialize, simulate_erm, simulate_urn,
                      simulate_urn_ensemble)
from typetree.erm import default_ball_order
from typetree.erm_analytics import mean_cherries, urn_matrix

from conftest import random_erm
from oracles import enumerate_erm, enumerate_urn


class TestErmParams:
    def test_row_sum_validation(self):
        with pytest.raises(ParameterError, match="sums"):
            ErmParams(2, {1: {(1, 1): 0.5, (1, 2): 0.3, (2, 2): 0.3},
                          2: {(1, 1): 1.0}})

    def test_negative_probability(self):
        with pytest.raises(ParameterError):
            ErmParams(2, {1: {(1, 1): -0.1, (1, 2): 0.6, (2, 2): 0.5},
                          2: {(1, 1): 1.0}})

    def test_derived_constants(self, q_generic):
        assert q_generic.c1 == pytest.approx(2 * 0.5 + 0.3)
        assert q_generic.c2 == pytest.approx(2 * 0.1 + 0.4)
        assert q_generic.c1_prime == pytest.approx(2 - q_generic.c2)
        assert q_generic.c2_prime == pytest.approx(2 - q_generic.c1)

    def test_absorbing_flag(self, q_single_type, q_generic):
        assert q_single_type.has_absorbing_type
        assert not q_generic.has_absorbing_type

    def test_swapped(self, q_generic):
        s = q_generic.swapped()
        assert s.prob(1, 1, 1) == q_generic.prob(2, 2, 2)
        assert s.prob(2, 1, 2) == q_generic.prob(1, 1, 2)


class TestSimulateErm:
    def test_single_leaf(self, q_generic):
        t = simulate_erm(q_generic, 1, 2, seed=0)
        assert t.n_nodes == 1 and t.n_leaves == 1
        assert t.node_types[0] == 2

    @pytest.mark.parametrize("n", [2, 7, 64])
    def test_exact_leaf_count(self, q_generic, n):
        assert simulate_erm(q_generic, n, 1, seed=n).n_leaves == n

    def test_seed_reproducibility(self, q_generic):
        a = simulate_erm(q_generic, 40, 1, seed=123)
        b = simulate_erm(q_generic, 40, 1, seed=123)
        assert serialize(a) == serialize(b)

    def test_single_type_all_leaves_type1(self, q_single_type):
        reps = 2000
        vals = []
        for i in range(reps):
            t = simulate_erm(q_single_type, 10, 1, seed=(77, i))
            assert np.all(t.node_types == 1)
            vals.append(census(t).cherry_counts.sum())
        vals = np.array(vals, dtype=float)
        se = vals.std(ddof=1) / np.sqrt(reps)
        assert abs(vals.mean() - 10 / 3) <= 3 * se

    def test_only_mixed_n3(self, q_only_mixed):
        reps = 4000
        n1s = []
        for i in range(reps):
            t = simulate_erm(q_only_mixed, 3, 1, seed=(5, i))
            n1 = int(census(t).leaf_counts[0])
            assert n1 in (1, 2)
            n1s.append(n1)
        n1s = np.array(n1s, dtype=float)
        se = n1s.std(ddof=1) / np.sqrt(reps)
        assert abs(n1s.mean() - 1.5) <= 3 * se


class TestUrn:
    def test_forced_transition(self, q_single_type):
        order = default_ball_order(2)
        counts = np.zeros(10, dtype=int)
        counts[order.cherry_pos[(1, 1, 1)]] = 1
        run = simulate_urn(q_single_type, 1, UrnState(counts, order), seed=0)
        final = run.final.counts
        assert final[order.cherry_pos[(1, 1, 1)]] == 1
        assert final[6 + order.pendant_pos[(1, 1)]] == 1
        assert final.sum() == 2

    def test_empty_urn(self, q_generic):
        order = default_ball_order(2)
        with pytest.raises(StateError):
            simulate_urn(q_generic, 1, UrnState(np.zeros(10, dtype=int), order))

    def test_leaf_count_grows_by_one(self, q_generic):
        init = initial_urn_state(q_generic, 1, seed=3)
        run = simulate_urn(q_generic, 25, init, seed=4)
        assert run.final.n_leaves == init.n_leaves + 25

    def test_snapshots(self, q_generic):
        init = initial_urn_state(q_generic, 1, seed=1)
        run = simulate_urn(q_generic, 20, init, seed=2, snapshot_every=5)
        assert [s for s, _ in run.snapshots] == [5, 10, 15, 20]

    def test_one_step_mean_matches_urn_matrix_column(self, q_generic):
        """Monte Carlo one-step draws against the analytic A columns."""
        order = default_ball_order(2)
        spec = urn_matrix(q_generic)
        for b, ball in enumerate(order.balls):
            draws = 100_000 if b == 0 else 10_000
            counts = np.zeros(10, dtype=int)
            counts[b] = 1
            state = UrnState(counts, order)
            deltas = np.empty((draws, 10))
            for i in range(draws):
                run = simulate_urn(q_generic, 1, state, seed=(b, i))
                deltas[i] = run.final.counts - counts
            mean = deltas.mean(axis=0)
            se = deltas.std(axis=0, ddof=1) / np.sqrt(draws)
            column = spec.A[:, b] / spec.weights[b]
            assert np.all(np.abs(mean - column) <= 3 * se + 1e-12), ball

    def test_urn_and_tree_distributions_agree_at_n4(self, rng):
        """Exhaustive histories: the urn path law equals the tree census law."""
        for _ in range(3):
            params = random_erm(rng)
            tree_dist = enumerate_erm(params, 4, 1)
            urn_dist = enumerate_urn(params, 2, 1)
            collapsed = {}
            for (n1, ch, pend), p in tree_dist.items():
                collapsed[(ch, pend)] = collapsed.get((ch, pend), 0.0) + p
            assert set(collapsed) == set(urn_dist)
            for key, p in collapsed.items():
                assert urn_dist[key] == pytest.approx(p, abs=1e-12)


class TestUrnEnsemble:
    def test_matches_exact_cherry_means(self, q_generic):
        reps, steps = 4000, 48
        counts = simulate_urn_ensemble(q_generic, steps, reps, 1, seed=11)
        n = steps + 2
        mu = mean_cherries(q_generic, n, 1)
        sample = counts[:, :6].astype(float)
        se = sample.std(axis=0, ddof=1) / np.sqrt(reps)
        assert np.all(np.abs(sample.mean(axis=0) - mu) <= 3 * se + 1e-9)

    def test_weights_sum_to_leaves(self, q_generic):
        counts = simulate_urn_ensemble(q_generic, 10, 100, 2, seed=1)
        w = default_ball_order(2).ball_weights()
        assert np.all(counts @ w == 12)
