"""Command-line entry point.

Exit codes: 0 on success, 2 for configuration errors, 3 for data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .attacks import AttackBudget
from .bench import EVAL_ATTACKS, METHODS, ExperimentConfig, run_experiment, sweep_distance_grid, sweep_hyperparams
from .core import SherdConfig, graph_fingerprint, run_sherd
from .datasets import fetch_cora, parse_linqs, parse_planetoid
from .distances import METRICS
from .errors import ConfigError, DataError, LoadError
from .graph import SubgraphMask, load_dataset, save_dataset

EXIT_CONFIG = 2
EXIT_DATA = 3


def _list(parse):
    def conv(text: str):
        try:
            return [parse(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return conv


def _read_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None


def _write_json(obj: dict, path: str) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _experiment_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(_read_json(args.config)) if getattr(args, "config", None) else ExperimentConfig()
    return cfg


def cmd_prep(args) -> None:
    g = load_dataset(args.dataset)
    cfg = SherdConfig(
        tau=args.tau, num_clusters=args.clusters, alpha=args.alpha, compression=args.compress,
        d_r=args.dr, d_p=args.dp, normalization=args.normalize, seed=args.seed,
        budget=AttackBudget(edge_budget=args.attack_edge_budget, eps=args.attack_eps, steps=args.attack_steps),
    )
    mask, table = run_sherd(g, cfg)
    mask.save(args.out)
    if args.scores:
        table.to_csv(args.scores)
    print(f"kept {len(mask)} of {g.num_nodes} nodes -> {args.out}")


def cmd_eval(args) -> None:
    g = load_dataset(args.dataset)
    cfg = _experiment_config(args)
    masks = {}
    if args.mask:
        if args.method == "original" or args.method.startswith("gcn_"):
            raise ConfigError(f"--mask cannot be combined with method {args.method!r}")
        masks[args.method] = SubgraphMask.load(args.mask)
    sherd = cfg.sherd if args.compress is None else SherdConfig.from_json({**cfg.sherd.to_json(),
                                                                             "compression": args.compress})
    cfg = ExperimentConfig(
        attacks=tuple(args.attacks), trials=args.trials, seed=args.seed,
        budget=AttackBudget(edge_budget=args.budget_edges, eps=args.budget_eps, steps=args.budget_steps),
        sherd=sherd, jaccard_threshold=cfg.jaccard_threshold, svd_rank=cfg.svd_rank,
    )
    report = run_experiment(g, [args.method], cfg=cfg, masks=masks)
    _write_json(report, args.out)
    for r in report["results"]:
        print(f"{r['method']:>14} {r['attack']:>8}  {r['mean']:.4f} +- {r['std']:.4f}  (n_test {r['n_test']:g})")


def cmd_sweep_dist(args) -> None:
    g = load_dataset(args.dataset)
    sweep_distance_grid(g, _experiment_config(args), out=args.out, method=args.method)
    print(f"wrote {len(METRICS)}x{len(METRICS)} grid -> {args.out}")


def cmd_sweep_hyper(args) -> None:
    g = load_dataset(args.dataset)
    cells = sweep_hyperparams(g, args.taus, args.clusters_list, args.compress_list, _experiment_config(args),
                              out=args.out)
    print(f"wrote {len(cells)} cells -> {args.out}")


def cmd_fetch_cora(args) -> None:
    out = fetch_cora(args.out, seed=args.seed)
    print(f"wrote {out}")


def cmd_convert(args) -> None:
    if args.format == "linqs":
        src = Path(args.source)
        content, cites = src / f"{args.name}.content", src / f"{args.name}.cites"
        for p in (content, cites):
            if not p.is_file():
                raise LoadError(f"missing file: {p}")
        g = parse_linqs(content.read_text(encoding="utf-8", errors="replace"),
                        cites.read_text(encoding="utf-8", errors="replace"), seed=args.seed)
    else:
        g = parse_planetoid(args.source, args.name, seed=args.seed)
    save_dataset(g, args.out)
    print(f"{g.num_nodes} nodes, {g.num_edges} edges -> {args.out} (sha256 {graph_fingerprint(g)[:12]})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sherd", description="Robust graph compression by cluster scoring.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="compute a compressed-node mask")
    p.add_argument("--dataset", required=True)
    p.add_argument("--tau", type=int, default=50)
    p.add_argument("--clusters", type=int, default=200)
    p.add_argument("--compress", type=float, default=0.4)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--dr", choices=METRICS, default="jaccard_elem")
    p.add_argument("--dp", choices=METRICS, default="semipearson")
    p.add_argument("--attack-eps", type=float, default=0.1)
    p.add_argument("--attack-edge-budget", type=float, default=0.05)
    p.add_argument("--attack-steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", choices=("minmax", "none"), default="minmax")
    p.add_argument("--scores", help="also write the per-cluster score table (CSV)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("eval", help="train, attack and score one method")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--mask")
    p.add_argument("--attacks", type=_list(str), default=list(EVAL_ATTACKS))
    p.add_argument("--budget-eps", type=float, default=0.1)
    p.add_argument("--budget-edges", type=float, default=0.10)
    p.add_argument("--budget-steps", type=int, default=20)
    p.add_argument("--compress", type=float, help="compression ratio for compressing methods")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="experiment config JSON (selector settings, purifier settings)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-dist", help="7x7 grid over representation distances")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--method", choices=("sherd", "original"), default="sherd")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_dist)

    p = sub.add_parser("sweep-hyper", help="grid over tau, cluster count and compression")
    p.add_argument("--dataset", required=True)
    p.add_argument("--taus", type=_list(int), required=True)
    p.add_argument("--clusters-list", type=_list(int), required=True)
    p.add_argument("--compress-list", type=_list(float), required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_hyper)

    p = sub.add_parser("fetch-cora", help="download Cora and write it as a dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="seed of the 60/20/20 split")
    p.set_defaults(func=cmd_fetch_cora)

    p = sub.add_parser("convert", help="convert raw LINQS or Planetoid files to a dataset directory")
    p.add_argument("--format", choices=("linqs", "planetoid"), required=True)
    p.add_argument("--source", required=True, help="directory holding the raw files")
    p.add_argument("--name", required=True, help="dataset name, e.g. cora or citeseer")
    p.add_argument("--seed", type=int, default=0, help="seed of the 60/20/20 split (LINQS only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
