from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sherd.attacks import (
    ATTACKS,
    AttackBudget,
    BudgetViolation,
    PerturbedGraph,
    apply_flips,
    cluster_pgd_attack,
    evasion_attack,
    sample_slots,
)
from sherd.errors import ConfigError
from sherd.gcn import GcnParams, TrainConfig, evaluate_accuracy, init_params, loss_and_grads, predict, train, train_full
from sherd.graph import GraphData, normalize_adjacency, synthesize_graph

from conftest import random_graph
from oracles import check_invariants, ref_loss


def trained(g, epochs=30, seed=0):
    return train(g, epochs, TrainConfig(hidden_dim=8, seed=seed))[0]


class TestBudget:
    def test_defaults(self):
        b = AttackBudget()
        assert (b.edge_budget, b.eps, b.steps, b.step) == (0.10, 0.1, 20, 0.025)

    @pytest.mark.parametrize("kw", [{"edge_budget": -0.1}, {"edge_budget": 1.5}, {"eps": -1}, {"steps": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            AttackBudget(**kw)


class TestSlots:
    @given(st.integers(2, 30), st.integers(0, 60), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_distinct_valid_pairs(self, n, k, seed):
        pairs = sample_slots(n, k, np.random.default_rng(seed))
        assert len(pairs) == min(k, n * (n - 1) // 2)
        assert (pairs[:, 0] < pairs[:, 1]).all() and pairs.min(initial=0) >= 0 and pairs.max(initial=0) < n
        assert len(set(map(tuple, pairs.tolist()))) == len(pairs)

    @given(st.integers(3, 20), st.integers(0, 10_000), st.data())
    @settings(max_examples=50, deadline=None)
    def test_incident_pairs(self, n, seed, data):
        inside = data.draw(st.lists(st.integers(0, n - 1), min_size=1, unique=True))
        total = len(inside) * (len(inside) - 1) // 2 + len(inside) * (n - len(inside))
        pairs = sample_slots(n, total + 5, np.random.default_rng(seed), incident=np.array(inside))
        expected = {(u, v) for u in range(n) for v in range(u + 1, n) if u in inside or v in inside}
        assert set(map(tuple, pairs.tolist())) == expected

    def test_uniform_over_slots(self):
        rng = np.random.default_rng(0)
        counts = np.zeros((5, 5))
        for _ in range(4000):
            (u, v), = sample_slots(5, 1, rng)
            counts[u, v] += 1
        observed = counts[np.triu_indices(5, 1)]
        assert observed.min() > 300 and observed.max() < 500


@pytest.fixture(scope="module")
def small_setup():
    g = synthesize_graph([(4, 0.7, 0.2)] * 3, 5, 0)
    return g, normalize_adjacency(g), trained(g, 20)


@pytest.fixture(scope="module")
def mid_setup():
    g = synthesize_graph([(15, 0.3, 0.05)] * 3, 6, 1)
    return g, trained(g, 40)


class TestClusterPgd:
    @pytest.fixture
    def setup(self, small_setup):
        return small_setup

    def test_zero_budget_is_identity(self, setup):
        g, a, p = setup
        pg = cluster_pgd_attack(g, a, p, [0, 1, 2], AttackBudget(edge_budget=0.0, eps=0.0), seed=0)
        assert pg.graph == g and pg.num_flips == 0

    def test_single_step_is_masked_fgsm(self, setup):
        g, a, p = setup
        cluster = np.array([2, 5, 7])
        b = AttackBudget(edge_budget=0.0, eps=0.1, steps=1, step_size=0.1)
        targets = predict(p, g, a)
        pg = cluster_pgd_attack(g, a, p, cluster, b, seed=0, targets=targets)
        y = g.labels.copy()
        y[cluster] = targets[cluster]
        _, _, _, gx = loss_and_grads(p, a, g.features, y, cluster)
        expected = g.features.copy()
        expected[cluster] += 0.1 * np.sign(gx[cluster])
        np.testing.assert_allclose(pg.graph.features, expected, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("edge_budget", [0.0, 0.05])
    @pytest.mark.parametrize("seed", range(10))
    def test_loss_does_not_decrease(self, setup, seed, edge_budget):
        g, a, p = setup
        cluster = np.sort(np.random.default_rng(seed).choice(12, size=4, replace=False))
        targets = predict(p, g, a)
        b = AttackBudget(edge_budget=edge_budget, eps=0.1, steps=20)
        pg = cluster_pgd_attack(g, a, p, cluster, b, seed=seed)
        # the feature stage starts from the graph after the random edge stage
        dense1 = normalize_adjacency(pg.graph).toarray()
        before = ref_loss(p.W1, p.W2, dense1, g.features, targets, cluster)
        after = ref_loss(p.W1, p.W2, dense1, pg.graph.features, targets, cluster)
        assert after >= before - 1e-12
        if edge_budget == 0.0:
            assert pg.num_flips == 0 and np.array_equal(dense1, a.toarray())

    def test_flips_touch_cluster_and_rows_untouched(self, setup):
        g, a, p = setup
        cluster = np.array([0, 3])
        b = AttackBudget(edge_budget=0.5, eps=0.1)
        pg = cluster_pgd_attack(g, a, p, cluster, b, seed=4)
        assert pg.num_flips == b.flips_allowed(g.num_edges)
        assert all(u in cluster or v in cluster for u, v in pg.flips.tolist())
        check_invariants(pg, g, b, cluster)

    def test_deterministic(self, setup):
        g, a, p = setup
        b = AttackBudget(edge_budget=0.2)
        one = cluster_pgd_attack(g, a, p, [1, 2], b, seed=9)
        two = cluster_pgd_attack(g, a, p, [1, 2], b, seed=9)
        assert one.graph == two.graph and one.to_log() == two.to_log()

    def test_empty_cluster(self, setup):
        g, a, p = setup
        with pytest.raises(ConfigError):
            cluster_pgd_attack(g, a, p, [], AttackBudget(), seed=0)


class TestEvasion:
    @pytest.fixture
    def setup(self, mid_setup):
        return mid_setup

    def test_unknown_method(self, setup):
        g, p = setup
        with pytest.raises(ConfigError):
            evasion_attack("nettack", g, p, AttackBudget(), 0)

    @pytest.mark.parametrize("method", ["fgsm", "pgd", "fga"])
    def test_gradient_methods_need_model(self, setup, method):
        g, _ = setup
        with pytest.raises(ConfigError):
            evasion_attack(method, g, None, AttackBudget(), 0)

    @pytest.mark.parametrize("method", ["dice", "flip", "rnd"])
    def test_structure_methods_run_without_model(self, setup, method):
        g, _ = setup
        pg = evasion_attack(method, g, None, AttackBudget(), 0)
        assert pg.num_flips == AttackBudget().flips_allowed(g.num_edges)

    def test_dice_single_label_only_deletes(self):
        g = random_graph(12, 3, 1, 0.4, 0)
        pg = evasion_attack("dice", g, None, AttackBudget(edge_budget=0.5), 0)
        assert set(map(tuple, pg.graph.edges.tolist())) < set(map(tuple, g.edges.tolist()))

    def test_dice_label_semantics(self, setup):
        g, _ = setup
        pg = evasion_attack("dice", g, None, AttackBudget(edge_budget=0.3), 3)
        before = set(map(tuple, g.edges.tolist()))
        y = g.labels
        for u, v in pg.flips.tolist():
            if (u, v) in before:
                assert y[u] == y[v]
            else:
                assert y[u] != y[v]

    def test_rnd_single_flip(self, setup):
        g, _ = setup
        b = AttackBudget(edge_budget=1.0 / g.num_edges)
        assert b.flips_allowed(g.num_edges) == 1
        pg = evasion_attack("rnd", g, None, b, 0)
        assert len(set(map(tuple, pg.graph.edges.tolist())) ^ set(map(tuple, g.edges.tolist()))) == 1

    def test_flip_order(self):
        # path 0-1-2-3 plus a pendant 4 on node 1: degrees 1,3,2,1,1
        g = GraphData(5, [[0, 1], [1, 2], [1, 4], [2, 3]], np.ones((5, 1)), [0] * 5, ["test"] * 5, 1)
        b = AttackBudget(edge_budget=0.75)
        pg = evasion_attack("flip", g, None, b, 0)
        # ascending (degree, id): 0, 3, 4, 2, 1 -> pairs (0,1), (3,2); then shifted (0,2), (3,4)
        assert pg.flips.tolist() == sorted([[0, 1], [2, 3], [0, 2]])

    def test_fgsm_moves_only_test_rows_by_eps(self, setup):
        g, p = setup
        b = AttackBudget(eps=0.1)
        pg = evasion_attack("fgsm", g, p, b, 0)
        test = g.split_nodes("test")
        _, _, _, gx = loss_and_grads(p, normalize_adjacency(g), g.features, g.labels, test)
        expected = g.features.copy()
        expected[test] += 0.1 * np.sign(gx[test])
        assert np.array_equal(pg.graph.features, expected)
        check_invariants(pg, g, b, test)

    def test_fga_first_flip_maximizes_linearized_gain(self, setup):
        g, p = setup
        b = AttackBudget(edge_budget=1.0 / g.num_edges)
        pg = evasion_attack("fga", g, p, b, 0)
        test = g.split_nodes("test")
        ad = normalize_adjacency(g).toarray()
        n = g.num_nodes
        grad = np.zeros((n, n))
        step = 1e-6
        for i in range(n):
            for j in range(n):
                keep = ad[i, j]
                ad[i, j] = keep + step
                up = ref_loss(p.W1, p.W2, ad, g.features, g.labels, test)
                ad[i, j] = keep - step
                down = ref_loss(p.W1, p.W2, ad, g.features, g.labels, test)
                ad[i, j] = keep
                grad[i, j] = (up - down) / (2 * step)
        adj = g.adjacency().toarray() > 0
        score = np.where(adj, -1.0, 1.0) * (grad + grad.T)
        score[np.tril_indices(n)] = -np.inf
        assert pg.flips.tolist() == [list(np.unravel_index(np.argmax(score), score.shape))]

    def test_fga_stops_when_nothing_helps(self):
        g = GraphData(3, [[0, 1]], np.ones((3, 1)), [0, 0, 0], ["test"] * 3, 2)
        p = GcnParams(np.ones((1, 1)), np.array([[5.0, -5.0]]), 1)
        pg = evasion_attack("fga", g, p, AttackBudget(edge_budget=1.0), 0)
        assert pg.num_flips <= 3

    def test_fgsm_hurts_trained_cora(self, cora):
        p, _ = train_full(cora)
        clean = evaluate_accuracy(p, cora)[0]
        attacked = evaluate_accuracy(p, evasion_attack("fgsm", cora, p, AttackBudget(eps=0.1), 0).graph)[0]
        assert attacked < clean

    @pytest.mark.parametrize("method", ATTACKS)
    def test_deterministic(self, setup, method):
        g, p = setup
        one = evasion_attack(method, g, p, AttackBudget(), 5)
        two = evasion_attack(method, g, p, AttackBudget(), 5)
        assert one.graph == two.graph and one.to_log() == two.to_log()

    @pytest.mark.parametrize("method", ATTACKS)
    @given(seed=st.integers(0, 10_000), frac=st.sampled_from([0.0, 0.05, 0.2, 1.0]))
    @settings(max_examples=8, deadline=None)
    def test_budget_safety(self, method, seed, frac):
        g = random_graph(14, 4, 3, 0.25, seed)
        p = init_params(4, 4, 3, seed)
        b = AttackBudget(edge_budget=frac, eps=0.1, steps=5)
        pg = evasion_attack(method, g, p, b, seed)
        permitted = g.split_nodes("test") if method in ("fgsm", "pgd") else np.array([], dtype=int)
        check_invariants(pg, g, b, permitted)


class TestPerturbedGraph:
    def test_rejects_excess_flips(self):
        g = random_graph(6, 2, 2, 0.0, 0)
        flips = np.array([[0, 1], [2, 3]])
        with pytest.raises(BudgetViolation):
            PerturbedGraph(apply_flips(g, flips), flips, np.zeros(6), "x", g, max_flips=1)

    def test_rejects_unlogged_change(self):
        g = random_graph(6, 2, 2, 0.0, 0)
        with pytest.raises(BudgetViolation):
            PerturbedGraph(apply_flips(g, np.array([[0, 1]])), np.zeros((0, 2), int), np.zeros(6), "x", g, 5)

    def test_rejects_feature_outside_ball(self):
        g = random_graph(6, 2, 2, 0.0, 0)
        x = g.features.copy()
        x[0, 0] += 0.5
        with pytest.raises(BudgetViolation):
            PerturbedGraph(g.with_features(x), np.zeros((0, 2), int), np.eye(6)[0] * 0.5, "x", g, 0, 0.1, np.array([0]))

    def test_rejects_unpermitted_rows(self):
        g = random_graph(6, 2, 2, 0.0, 0)
        x = g.features.copy()
        x[1, 0] += 0.05
        with pytest.raises(BudgetViolation):
            PerturbedGraph(g.with_features(x), np.zeros((0, 2), int), np.eye(6)[1] * 0.05, "x", g, 0, 0.1, np.array([0]))

    def test_log_is_json_ready(self):
        import json

        g = synthesize_graph([(6, 0.5, 0.1)] * 2, 3, 0)
        pg = evasion_attack("pgd", g, init_params(3, 4, 2, 0), AttackBudget(edge_budget=0.2), 0)
        log = json.loads(json.dumps(pg.to_log()))
        assert log["method"] == "pgd" and len(log["edge_flips"]) == pg.num_flips
        assert all(v <= 0.1 + 1e-12 for v in log["feature_delta"].values())
