from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sherd.errors import ConfigError, LoadError, SchemaError
from sherd.graph import (
    GraphData,
    SubgraphMask,
    canonical_edges,
    induced_subgraph,
    load_dataset,
    normalize_adjacency,
    round_half_up,
    save_dataset,
    slot_budget,
    synthesize_graph,
)

from conftest import path_graph, random_graph


def dense_norm_adj(g: GraphData) -> np.ndarray:
    """Reference: D^-1/2 (A + I) D^-1/2 built entry by entry."""
    n = g.num_nodes
    a = np.eye(n)
    for u, v in g.edges:
        a[u, v] = a[v, u] = 1.0
    deg = a.sum(axis=1)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = a[i, j] / math.sqrt(deg[i] * deg[j])
    return out


def write_dir(tmp_path, meta, edges="0\t1\n", feats="1\t0\n0\t1\n", labels="0\n1\n", splits="train\ntest\n"):
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    (tmp_path / "edges.tsv").write_text(edges)
    (tmp_path / "features.tsv").write_text(feats)
    (tmp_path / "labels.tsv").write_text(labels)
    (tmp_path / "splits.tsv").write_text(splits)
    return tmp_path


META2 = {"num_nodes": 2, "num_features": 2, "num_classes": 2}


class TestCanonicalEdges:
    def test_orders_and_dedups(self):
        e = canonical_edges([(1, 0), (0, 1), (2, 1)], 3)
        assert e.tolist() == [[0, 1], [1, 2]]

    def test_self_loop_rejected(self):
        with pytest.raises(SchemaError):
            canonical_edges([(1, 1)], 3)

    def test_out_of_range_rejected(self):
        with pytest.raises(SchemaError):
            canonical_edges([(0, 3)], 3)


class TestNormalizeAdjacency:
    def test_isolated_node(self):
        g = GraphData(1, np.zeros((0, 2)), np.ones((1, 1)), [0], ["train"], 1)
        assert normalize_adjacency(g).toarray().tolist() == [[1.0]]

    def test_single_edge(self):
        g = GraphData(2, [[0, 1]], np.ones((2, 1)), [0, 0], ["train", "test"], 1)
        np.testing.assert_allclose(normalize_adjacency(g).toarray(), np.full((2, 2), 0.5), rtol=0, atol=1e-15)

    def test_path(self):
        a = normalize_adjacency(path_graph()).toarray()
        assert a[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert a[0, 1] == pytest.approx(1 / (math.sqrt(2) * math.sqrt(3)), abs=1e-15)

    @given(st.integers(1, 15), st.floats(0, 1), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_matches_dense_reference_and_is_symmetric(self, n, p, seed):
        g = random_graph(n, 2, 2, p, seed)
        a = normalize_adjacency(g)
        dense = a.toarray()
        assert np.array_equal(dense, dense.T)
        assert (dense >= 0).all()
        np.testing.assert_allclose(dense, dense_norm_adj(g), rtol=1e-14, atol=1e-15)
        assert np.array_equal(np.diag(dense), 1.0 / (g.degrees() + 1.0))


class TestInducedSubgraph:
    def test_full_mask_is_identity(self):
        g = random_graph(12, 3, 2, 0.3, 0)
        sub, ids = induced_subgraph(g, SubgraphMask.full(12))
        assert sub == g
        assert ids.tolist() == list(range(12))

    def test_path_drop_middle(self):
        sub, ids = induced_subgraph(path_graph(), [0, 2])
        assert sub.num_nodes == 2 and sub.num_edges == 0
        assert ids.tolist() == [0, 2]

    def test_empty_mask_rejected(self):
        with pytest.raises(ConfigError):
            induced_subgraph(path_graph(), [])

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            induced_subgraph(path_graph(), [0, 5])

    @given(st.integers(2, 20), st.integers(0, 10_000), st.data())
    @settings(max_examples=40, deadline=None)
    def test_edges_map_back_and_idempotent(self, n, seed, data):
        g = random_graph(n, 2, 3, 0.4, seed)
        kept = data.draw(st.lists(st.integers(0, n - 1), min_size=1, unique=True))
        sub, ids = induced_subgraph(g, kept)
        original = set(map(tuple, g.edges.tolist()))
        for u, v in sub.edges.tolist():
            assert (ids[u], ids[v]) in original
        expected = {(u, v) for u, v in original if u in kept and v in kept}
        assert {(ids[u], ids[v]) for u, v in sub.edges.tolist()} == expected
        assert np.array_equal(sub.features, g.features[ids])
        again, _ = induced_subgraph(sub, SubgraphMask.full(sub.num_nodes))
        assert again == sub

    def test_cora_compression_size(self):
        assert round_half_up(2708 * 0.6) == 1625


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        g = random_graph(15, 4, 3, 0.3, 1)
        assert load_dataset(save_dataset(g, tmp_path)) == g

    def test_cora_shape(self, cora):
        assert (cora.num_nodes, cora.num_features, cora.num_edges, cora.num_classes) == (2708, 1433, 5278, 7)
        counts = {t: len(cora.split_nodes(t)) for t in ("train", "val", "test")}
        assert counts == {"train": 1625, "val": 542, "test": 541}

    def test_path_fixture(self, tmp_path):
        write_dir(tmp_path, {"num_nodes": 3, "num_features": 1, "num_classes": 1},
                  edges="0\t1\n1\t2\n", feats="0\n0\n0\n", labels="0\n0\n0\n", splits="train\nval\ntest\n")
        g = load_dataset(tmp_path)
        assert g.num_nodes == 3 and g.edges.tolist() == [[0, 1], [1, 2]]

    def test_duplicate_edge_lines(self, tmp_path):
        g = load_dataset(write_dir(tmp_path, META2, edges="0\t1\n1\t0\n"))
        assert g.edges.tolist() == [[0, 1]]

    @pytest.mark.parametrize("name", ["meta.json", "edges.tsv", "features.tsv", "labels.tsv", "splits.tsv"])
    def test_missing_file_named(self, tmp_path, name):
        write_dir(tmp_path, META2)
        (tmp_path / name).unlink()
        with pytest.raises(LoadError, match=name):
            load_dataset(tmp_path)

    @pytest.mark.parametrize("meta", [
        {"num_nodes": 3, "num_features": 2, "num_classes": 2},
        {"num_nodes": 2, "num_features": 3, "num_classes": 2},
    ])
    def test_dimension_mismatch(self, tmp_path, meta):
        with pytest.raises(SchemaError):
            load_dataset(write_dir(tmp_path, meta))

    def test_label_out_of_range(self, tmp_path):
        with pytest.raises(SchemaError):
            load_dataset(write_dir(tmp_path, META2, labels="0\n2\n"))

    def test_self_loop_line_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            load_dataset(write_dir(tmp_path, META2, edges="1\t1\n"))

    def test_bad_split_tag(self, tmp_path):
        with pytest.raises(SchemaError):
            load_dataset(write_dir(tmp_path, META2, splits="train\nholdout\n"))


class TestMask:
    def test_json_round_trip(self, tmp_path):
        m = SubgraphMask([5, 1, 3], 0.25, {"method": "x", "nested": {"a": [1, 2]}})
        m.save(tmp_path / "m.json")
        back = SubgraphMask.load(tmp_path / "m.json")
        assert back.kept.tolist() == [1, 3, 5]
        assert back.compression_ratio == 0.25 and back.provenance == m.provenance
        assert json.loads((tmp_path / "m.json").read_text())["kept"] == [1, 3, 5]

    def test_invalid_ratio(self):
        with pytest.raises(ConfigError):
            SubgraphMask([0], 1.5)

    def test_missing_file(self, tmp_path):
        with pytest.raises(LoadError):
            SubgraphMask.load(tmp_path / "nope.json")


class TestSynthesize:
    def test_two_cliques(self):
        g = synthesize_graph([(10, 1.0, 0.0)] * 2, 3, 0)
        assert g.num_edges == 2 * 45
        assert (g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]).all()

    def test_deterministic(self):
        a = synthesize_graph([(20, 0.3, 0.05)] * 3, 4, 11)
        b = synthesize_graph([(20, 0.3, 0.05)] * 3, 4, 11)
        assert a == b
        assert a.features.tobytes() == b.features.tobytes()

    def test_cross_block_edges_binomial(self):
        g = synthesize_graph([(50, 0.2, 0.01)] * 3, 4, 7)
        cross = int((g.labels[g.edges[:, 0]] != g.labels[g.edges[:, 1]]).sum())
        trials, p = 3 * 50 * 50, 0.01
        assert abs(cross - trials * p) <= 3 * math.sqrt(trials * p * (1 - p))

    def test_zero_dim_rejected(self):
        with pytest.raises(ConfigError):
            synthesize_graph([(5, 0.5, 0.1)], 0, 0)

    def test_split_proportions(self):
        g = synthesize_graph([(100, 0.1, 0.01)], 2, 0)
        assert [len(g.split_nodes(t)) for t in ("train", "val", "test")] == [60, 20, 20]


def test_graph_is_read_only():
    g = random_graph(5, 2, 2, 0.5, 0)
    with pytest.raises(ValueError):
        g.features[0, 0] = 1.0


def test_budget_arithmetic():
    assert slot_budget(0.1, 5278) == 528
    assert slot_budget(0.05, 100) == 5
    assert slot_budget(0.0, 100) == 0
    assert round_half_up(2.5) == 3 and round_half_up(3.5) == 4
