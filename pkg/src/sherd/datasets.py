"""Converters from public citation-graph releases into the TSV dataset directory.

Two source layouts are understood:

* LINQS ``<name>.content`` / ``<name>.cites`` text files (the original Cora release).
* Planetoid ``ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}`` pickles.

Both are re-split uniformly at random into 60/20/20 train/val/test.
"""

from __future__ import annotations

import hashlib
import io
import logging
import pickle
import tarfile
import urllib.request
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import LoadError
from .graph import GraphData, canonical_edges, round_half_up, save_dataset

log = logging.getLogger(__name__)

# The PGL source distribution on PyPI bundles the LINQS Cora release.
PGL_SDIST_URL = (
    "https://files.pythonhosted.org/packages/fc/76/"
    "f85e59a3543a6b0ad995dee80c562b58f33e769a25282a440d0c9a5e2333/pgl-2.2.6.tar.gz"
)
PGL_SDIST_SHA256 = "d360147afefa34600d8c6db9ae43623fc28b1341550c213a4180b6a24cf9f200"


def random_split(n: int, seed: int, fractions=(0.6, 0.2)) -> np.ndarray:
    """Uniformly random train/val/test tags with the given train and val fractions."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = round_half_up(n * fractions[0])
    n_val = round_half_up(n * fractions[1])
    split = np.empty(n, dtype="<U5")
    split[perm[:n_train]] = "train"
    split[perm[n_train:n_train + n_val]] = "val"
    split[perm[n_train + n_val:]] = "test"
    return split


def parse_linqs(content: str, cites: str, seed: int = 0) -> GraphData:
    """Build a graph from LINQS ``.content`` and ``.cites`` text.

    Nodes follow the order of the content file, classes are numbered in sorted
    order of their names, and citations to unknown papers or self-citations are
    dropped.
    """
    ids, rows, names = [], [], []
    for line in content.splitlines():
        parts = line.split()
        if not parts:
            continue
        ids.append(parts[0])
        rows.append(parts[1:-1])
        names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    if len(index) != len(ids):
        raise LoadError("duplicate paper ids in content file")
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names], dtype=np.int64)
    features = np.array(rows, dtype=np.float64)

    pairs, dropped = [], 0
    for line in cites.splitlines():
        parts = line.split()
        if len(parts) != 2:
            continue
        a, b = index.get(parts[0]), index.get(parts[1])
        if a is None or b is None or a == b:
            dropped += 1
            continue
        pairs.append((a, b))
    if dropped:
        log.info("dropped %d citation lines (unknown id or self-citation)", dropped)
    n = len(ids)
    return GraphData(n, canonical_edges(pairs, n), features, labels, random_split(n, seed), len(classes))


def _unpickle(path: Path):
    if not path.is_file():
        raise LoadError(f"missing Planetoid file: {path}")
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def parse_planetoid(dir_path: str | Path, name: str, seed: int = 0) -> GraphData:
    """Build a graph from a Planetoid ``ind.<name>.*`` release.

    Test rows are put back in their original positions using ``test.index``;
    Citeseer's missing test ids become zero-feature nodes. Nodes without a
    one-hot label get class 0.
    """
    root = Path(dir_path)
    objs = {k: _unpickle(root / f"ind.{name}.{k}") for k in ("allx", "ally", "tx", "ty", "graph")}
    idx_path = root / f"ind.{name}.test.index"
    if not idx_path.is_file():
        raise LoadError(f"missing Planetoid file: {idx_path}")
    test_idx = np.array([int(ln) for ln in idx_path.read_text().split()], dtype=np.int64)
    tx, ty = sp.csr_matrix(objs["tx"]), np.asarray(objs["ty"])
    order = np.sort(test_idx)
    lo, hi = order[0], order[-1]
    if hi - lo + 1 != len(test_idx):
        # tx rows follow sorted test ids; gaps in the id range become empty rows
        tx_ext = sp.lil_matrix((hi - lo + 1, tx.shape[1]))
        tx_ext[order - lo, :] = tx
        tx = tx_ext.tocsr()
        ty_ext = np.zeros((hi - lo + 1, ty.shape[1]))
        ty_ext[order - lo, :] = ty
        ty = ty_ext
    feats = sp.vstack([sp.csr_matrix(objs["allx"]), tx]).tolil()
    labels_1h = np.vstack([np.asarray(objs["ally"]), ty])
    feats[test_idx, :] = feats[order, :]
    labels_1h[test_idx, :] = labels_1h[order, :]
    n = feats.shape[0]
    pairs = [(u, v) for u, nbrs in objs["graph"].items() for v in nbrs if u != v and u < n and v < n]
    labels = labels_1h.argmax(axis=1).astype(np.int64)
    return GraphData(
        n, canonical_edges(pairs, n), feats.toarray(), labels, random_split(n, seed), labels_1h.shape[1]
    )


def fetch_cora(out_dir: str | Path, seed: int = 0, url: str = PGL_SDIST_URL) -> Path:
    """Download the LINQS Cora files (bundled in the PGL sdist) and write a TSV dataset."""
    log.info("downloading %s", url)
    with urllib.request.urlopen(url, timeout=300) as resp:
        blob = resp.read()
    digest = hashlib.sha256(blob).hexdigest()
    if url == PGL_SDIST_URL and digest != PGL_SDIST_SHA256:
        raise LoadError(f"checksum mismatch for {url}: {digest}")
    texts = {}
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for member in tar.getmembers():
            for suffix in ("cora.content", "cora.cites"):
                if member.name.endswith("pgl/data/cora/" + suffix):
                    texts[suffix] = tar.extractfile(member).read().decode("utf-8")
    if len(texts) != 2:
        raise LoadError("Cora files not found in the downloaded archive")
    g = parse_linqs(texts["cora.content"], texts["cora.cites"], seed=seed)
    return save_dataset(g, out_dir)
