from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from sherd.datasets import fetch_cora
from sherd.graph import GraphData, load_dataset, synthesize_graph

ROOT = Path(__file__).resolve().parents[1]
CORA_DIR = ROOT / "data" / "cora"

SPLIT_CYCLE = np.array(["train", "train", "train", "val", "test"])


def random_graph(n: int, d: int, c: int, p: float, seed: int, binary: bool = False) -> GraphData:
    """Erdos-Renyi graph with Gaussian (or 0/1) features and round-robin split."""
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    pick = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][pick], iu[1][pick]], axis=1)
    x = (rng.random((n, d)) < 0.3).astype(float) if binary else rng.normal(size=(n, d))
    y = rng.integers(c, size=n)
    split = SPLIT_CYCLE[np.arange(n) % 5]
    return GraphData(n, edges, x, y, split, c)


def star_graph(leaves: int = 12, d: int = 3) -> GraphData:
    n = leaves + 1
    edges = np.stack([np.zeros(leaves, dtype=int), np.arange(1, n)], axis=1)
    x = np.ones((n, d))
    return GraphData(n, edges, x, np.zeros(n, dtype=int), SPLIT_CYCLE[np.arange(n) % 5], 2)


def path_graph(n: int = 3, d: int = 2) -> GraphData:
    edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return GraphData(n, edges, np.ones((n, d)), np.zeros(n, dtype=int), SPLIT_CYCLE[np.arange(n) % 5], 1)


@pytest.fixture(scope="session")
def cora() -> GraphData:
    """The Cora citation graph; downloaded and converted on first use."""
    if not (CORA_DIR / "meta.json").is_file():
        fetch_cora(CORA_DIR, seed=0)
    return load_dataset(CORA_DIR)


def planted_fragile_graph(seed: int, size: int = 40, scale: float = 6.0, fragile: float = 0.01) -> GraphData:
    """Three disconnected blocks; block 2 carries near-zero features.

    Blocks 0 and 1 sit at distance ``scale`` from the origin, far beyond an
    eps = 0.1 perturbation, so their ReLU patterns barely move. Block 2 is
    shrunk by ``fragile`` to entries of a few hundredths, so any eps-ball
    attack rewrites its first-layer activation pattern. Nodes ``2 * size ..``
    form the fragile block.
    """
    g = synthesize_graph([(size, 0.15, 0.0)] * 3, 6, seed)
    rng = np.random.default_rng(seed + 1)
    means = np.zeros((3, 6))
    means[[0, 1, 2], [0, 1, 2]] = scale
    x = means[g.labels] + 0.3 * rng.standard_normal((g.num_nodes, 6))
    x[g.labels == 2] *= fragile
    return g.with_features(x)


# one line per acceptance criterion, echoed again at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
