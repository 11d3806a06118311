"""Experiment protocol: compress, train, attack the test-time graph, score.

Every trial ``t`` uses seed ``base + t`` for compression, training and the
attacks, so a report is a pure function of the dataset, the configuration and
the base seed (timing fields aside).
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import ATTACKS, AttackBudget, evasion_attack
from .baselines import COMPRESSORS, PURIFIERS, baseline_compress, purify
from .core import SherdConfig, graph_fingerprint, run_sherd
from .distances import METRICS
from .errors import ConfigError, DataError
from .gcn import TrainConfig, evaluate_accuracy, train_full
from .graph import GraphData, SubgraphMask, induced_subgraph, load_dataset

log = logging.getLogger(__name__)

METHODS = ("original",) + COMPRESSORS + PURIFIERS + ("sherd",)
EVAL_ATTACKS = ("vanilla",) + ATTACKS
TIMING_FIELDS = ("train_sec", "test_sec")


@dataclass(frozen=True)
class ExperimentConfig:
    """Evaluation settings shared by every method in a run.

    ``sherd.compression`` is the compression ratio for every compressing
    method, so baselines and the selector are compared at equal ``C``.
    """

    attacks: tuple[str, ...] = EVAL_ATTACKS
    trials: int = 5
    seed: int = 0
    budget: AttackBudget = field(default_factory=AttackBudget)
    sherd: SherdConfig = field(default_factory=SherdConfig)
    jaccard_threshold: float = 0.01
    svd_rank: int = 15

    def __post_init__(self) -> None:
        object.__setattr__(self, "attacks", tuple(self.attacks))
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.attacks:
            raise ConfigError("at least one attack is required")
        for atk in self.attacks:
            if atk not in EVAL_ATTACKS:
                raise ConfigError(f"unknown attack {atk!r}; choose from {', '.join(EVAL_ATTACKS)}")
        if len(set(self.attacks)) != len(self.attacks):
            raise ConfigError("attacks must not repeat")

    @property
    def compression(self) -> float:
        return self.sherd.compression

    def to_json(self) -> dict:
        return {
            "attacks": list(self.attacks),
            "trials": self.trials,
            "seed": self.seed,
            "budget": asdict(self.budget),
            "sherd": self.sherd.to_json(),
            "jaccard_threshold": self.jaccard_threshold,
            "svd_rank": self.svd_rank,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ExperimentConfig":
        if not isinstance(payload, dict):
            raise ConfigError("experiment config must be a JSON object")
        payload = dict(payload)
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            if "budget" in payload:
                payload["budget"] = AttackBudget(**payload["budget"])
            if "sherd" in payload:
                payload["sherd"] = SherdConfig.from_json(payload["sherd"])
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _as_graph(dataset: GraphData | str | Path) -> GraphData:
    return dataset if isinstance(dataset, GraphData) else load_dataset(dataset)


def compress(method: str, g: GraphData, cfg: ExperimentConfig, seed: int) -> SubgraphMask:
    """The node mask a method trains on; purifiers keep every node."""
    if method in ("original",) + PURIFIERS:
        return SubgraphMask.full(g.num_nodes, {"method": method})
    if method in COMPRESSORS:
        return baseline_compress(method, g, cfg.compression, seed)
    if method == "sherd":
        mask, _ = run_sherd(g, replace(cfg.sherd, seed=seed))
        return mask
    raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _check_mask(mask: SubgraphMask, g: GraphData) -> None:
    want = mask.provenance.get("graph_sha256")
    if want is not None and want != graph_fingerprint(g):
        raise ConfigError("mask was computed on a different graph")


def _run_trial(method: str, g: GraphData, cfg: ExperimentConfig, seed: int,
               mask: SubgraphMask | None) -> list[tuple[str, float, int, float, float]]:
    t0 = time.perf_counter()
    if mask is None:
        mask = compress(method, g, cfg, seed)
    sub, _ = induced_subgraph(g, mask)
    if len(sub.split_nodes("test")) == 0:
        raise DataError(
            f"{method}: no test nodes survive compression "
            f"({len(mask)} of {g.num_nodes} nodes kept, C={mask.compression_ratio:g})")
    purifier = method in PURIFIERS
    train_graph = purify(method, sub, cfg.jaccard_threshold, cfg.svd_rank) if purifier else sub
    model, _ = train_full(train_graph, TrainConfig(hidden_dim=cfg.sherd.hidden_dim, seed=seed))
    train_sec = time.perf_counter() - t0
    rows = []
    for attack in cfg.attacks:
        t1 = time.perf_counter()
        seen = sub if attack == "vanilla" else evasion_attack(attack, sub, model, cfg.budget, seed).graph
        if purifier and attack != "vanilla":
            seen = purify(method, seen, cfg.jaccard_threshold, cfg.svd_rank)
        elif purifier:
            seen = train_graph
        acc, n = evaluate_accuracy(model, seen)
        rows.append((attack, acc, n, train_sec, time.perf_counter() - t1))
    return rows


def run_experiment(dataset: GraphData | str | Path, methods: Sequence[str], attacks: Sequence[str] | None = None,
                   trials: int | None = None, cfg: ExperimentConfig | None = None,
                   masks: dict[str, SubgraphMask] | None = None) -> dict:
    """Mean and std test accuracy per (method, attack) over ``trials`` seeds.

    ``masks`` supplies a fixed precomputed mask for a method, reused by every
    trial. Accuracy counts only test nodes that survive compression;
    ``n_test`` is their mean count and ``coverage`` their share of the full
    test split.
    """
    cfg = cfg or ExperimentConfig()
    if attacks is not None:
        cfg = replace(cfg, attacks=tuple(attacks))
    if trials is not None:
        cfg = replace(cfg, trials=trials)
    g = _as_graph(dataset)
    masks = masks or {}
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    for m, mask in masks.items():
        if m not in ("sherd",) + COMPRESSORS:
            raise ConfigError(f"a precomputed mask cannot be used with method {m!r}")
        _check_mask(mask, g)
    n_test_full = len(g.split_nodes("test"))
    results = []
    for method in methods:
        per_attack: dict[str, list] = {a: [] for a in cfg.attacks}
        for t in range(cfg.trials):
            for attack, acc, n, tr, te in _run_trial(method, g, cfg, cfg.seed + t, masks.get(method)):
                per_attack[attack].append((acc, n, tr, te))
        for attack in cfg.attacks:
            acc, n, tr, te = (np.array(col) for col in zip(*per_attack[attack]))
            results.append({
                "method": method,
                "attack": attack,
                "mean": float(acc.mean()),
                "std": float(acc.std()),
                "trials": cfg.trials,
                "n_test": float(n.mean()),
                "coverage": float(n.mean() / n_test_full),
                "accuracies": acc.tolist(),
                "train_sec": float(tr.mean()),
                "test_sec": float(te.mean()),
            })
            log.info("%s/%s: %.4f +- %.4f", method, attack, acc.mean(), acc.std())
    config = cfg.to_json()
    config["methods"] = list(methods)
    config["train"] = asdict(TrainConfig(hidden_dim=cfg.sherd.hidden_dim).full())
    config["graph_sha256"] = graph_fingerprint(g)
    if masks:
        config["masks"] = {m: {"num_kept": len(k), "compression_ratio": k.compression_ratio}
                           for m, k in sorted(masks.items())}
    return {"config": config, "results": results}


def strip_timing(report: dict) -> dict:
    out = dict(report)
    out["results"] = [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in report["results"]]
    return out


def result_means(report: dict, method: str) -> dict[str, float]:
    return {r["attack"]: r["mean"] for r in report["results"] if r["method"] == method}


def improvement(report: dict, method: str, baseline: dict[str, float] | None = None) -> float:
    """Mean over attacks of ``acc(method) - acc(original)``."""
    base = result_means(report, "original") if baseline is None else baseline
    mine = result_means(report, method)
    return float(np.mean([mine[a] - base[a] for a in mine]))


def sweep_distance_grid(dataset: GraphData | str | Path, cfg: ExperimentConfig | None = None,
                        attacks: Sequence[str] | None = None, out: str | Path | None = None,
                        method: str = "sherd") -> np.ndarray:
    """Improvement over the uncompressed model for every ``(d_R, d_P)`` pair.

    Returns a 7x7 matrix (rows ``d_R``, columns ``d_P``) and writes it as CSV
    when ``out`` is given. ``method="original"`` yields the all-zero control.
    """
    cfg = cfg or ExperimentConfig()
    if attacks is not None:
        cfg = replace(cfg, attacks=tuple(attacks))
    g = _as_graph(dataset)
    base = result_means(run_experiment(g, ["original"], cfg=cfg), "original")
    grid = np.zeros((len(METRICS), len(METRICS)))
    for i, d_r in enumerate(METRICS):
        for j, d_p in enumerate(METRICS):
            cell = replace(cfg, sherd=replace(cfg.sherd, d_r=d_r, d_p=d_p))
            grid[i, j] = improvement(run_experiment(g, [method], cfg=cell), method, base)
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["d_r"] + list(METRICS))
            for name, row in zip(METRICS, grid):
                w.writerow([name] + [repr(float(v)) for v in row])
    return grid


def sweep_hyperparams(dataset: GraphData | str | Path, taus: Sequence[int], Bs: Sequence[int],
                      Cs: Sequence[float], cfg: ExperimentConfig | None = None,
                      out: str | Path | None = None) -> list[dict]:
    """Improvement over the uncompressed model for every ``(tau, B, C)`` cell."""
    if not taus or not Bs or not Cs:
        raise ConfigError("every candidate list must be non-empty")
    cfg = cfg or ExperimentConfig()
    g = _as_graph(dataset)
    base = result_means(run_experiment(g, ["original"], cfg=cfg), "original")
    cells = []
    for tau in taus:
        for b in Bs:
            for c in Cs:
                cell = replace(cfg, sherd=replace(cfg.sherd, tau=int(tau), num_clusters=int(b), compression=float(c)))
                value = improvement(run_experiment(g, ["sherd"], cfg=cell), "sherd", base)
                cells.append({"tau": int(tau), "num_clusters": int(b), "compression": float(c), "improvement": value})
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "num_clusters", "compression", "improvement"])
            for c in cells:
                w.writerow([c["tau"], c["num_clusters"], repr(c["compression"]), repr(c["improvement"])])
    return cells
