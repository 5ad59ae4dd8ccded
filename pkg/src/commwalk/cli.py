"""Command-line front end for sampling, profiling, and experiment batteries.

Every subcommand reads the same JSON config schema (see ExperimentConfig);
``gen``, ``mix``, ``spectral`` and ``tree`` act on the first ladder point,
``experiment <name>`` sweeps the whole ladder.  Exit codes: 0 on success,
2 when the config or arguments cannot be run as given, 1 when a run fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .chainkit import ChainError
from .graphgen import GraphError, SpecError, gen_configuration_model, gen_two_community
from .treesim import TreeError
from .walklab import WalkError, mixing_profile, relaxation, spectral_report
from .xplab import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    Report,
    _family_tag,
    _tree_estimates,
    export_report,
    resolve_rung,
)

_RUNTIME_ERRORS = (WalkError, TreeError, ChainError, GraphError, OSError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commwalk",
                                     description="community-graph walk toolbox")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the config output directory")
        p.add_argument("--threads", type=int, default=None, help="override worker count")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="output file format")

    common(sub.add_parser("gen", help="sample one graph and write its edge list"))
    common(sub.add_parser("mix", help="mixing times for each walk kind"))
    common(sub.add_parser("spectral", help="gap/profile/bottleneck report"))
    common(sub.add_parser("tree", help="speed and entropy estimates on limit trees"))
    px = sub.add_parser("experiment", help="run a full experiment battery")
    px.add_argument("name", choices=sorted(EXPERIMENTS))
    common(px)
    return parser


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    return replace(cfg, **overrides) if overrides else cfg


def _first_rung_graph(cfg: ExperimentConfig):
    rung = resolve_rung(cfg, cfg.n_ladder[0],
                        cfg.alpha_ladder[0] if cfg.m == 2 else None)
    if cfg.m == 2:
        g = gen_two_community(rung.spec, cfg.seed)
    else:
        g = gen_configuration_model(rung.degree_lists[0], cfg.seed)
    return rung, g


def _cmd_gen(args) -> int:
    cfg = _load(args)
    rung, g = _first_rung_graph(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    pairs = [(int(g.half_vertex[h]), int(g.half_vertex[g.match[h]]))
             for h in range(g.half_edge_count) if h < g.match[h]]
    path = os.path.join(cfg.out_dir, f"graph-{cfg.config_hash}-s{cfg.seed}.{args.format}")
    if args.format == "csv":
        lines = [f"# n={g.n} p={rung.p} seed={cfg.seed}", "u,v"]
        lines += [f"{u},{v}" for u, v in pairs]
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps({"n": g.n, "p": rung.p, "seed": cfg.seed,
                           "labels": [int(c) for c in g.labels],
                           "edges": pairs}, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(path)
    return 0


_MIX_COLUMNS = ["kind", "eps", "tmix", "start_family", "n", "seed"]


def _cmd_mix(args) -> int:
    cfg = _load(args)
    _, g = _first_rung_graph(cfg)
    rows = []
    for kind in ("lazy", "simple", "nbrw"):
        prof = mixing_profile(g, kind, eps=cfg.eps, seed=cfg.seed,
                              horizon_cap=cfg.horizon, threads=cfg.threads)
        rows += [{"kind": kind, "eps": e, "tmix": prof["tmix"][e],
                  "start_family": _family_tag(prof), "n": g.n, "seed": cfg.seed}
                 for e in sorted(prof["tmix"])]
    report = Report("mix", cfg.config_hash, cfg.seed, _MIX_COLUMNS, rows,
                    meta={"name": cfg.name})
    print(export_report(report, args.format, cfg.out_dir))
    return 0


_SPECTRAL_COLUMNS = ["kind", "gamma", "gamma_star", "t_rel", "t_rel_star",
                     "lambda2", "lambda_min", "n", "seed"]


def _cmd_spectral(args) -> int:
    cfg = _load(args)
    _, g = _first_rung_graph(cfg)
    if args.format == "json":
        os.makedirs(cfg.out_dir, exist_ok=True)
        path = os.path.join(cfg.out_dir, f"spectral-{cfg.config_hash}.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(spectral_report(g).to_json())
        print(path)
        return 0
    rows = []
    for kind in ("lazy", "simple"):
        rel = relaxation(g, kind)
        rows.append({"kind": kind, "gamma": rel.gamma, "gamma_star": rel.gamma_star,
                     "t_rel": rel.t_rel, "t_rel_star": rel.t_rel_star,
                     "lambda2": rel.lambda2, "lambda_min": rel.lambda_min,
                     "n": g.n, "seed": cfg.seed})
    report = Report("spectral", cfg.config_hash, cfg.seed, _SPECTRAL_COLUMNS, rows,
                    meta={"name": cfg.name})
    print(export_report(report, "csv", cfg.out_dir))
    return 0


_TREE_COLUMNS = ["n", "alpha", "tree_seed", "nu_hat", "nu_se", "h_hat", "h_se",
                 "rate", "rate_se", "rate_rel_se", "seed"]


def _cmd_tree(args) -> int:
    cfg = _load(args)
    rung = resolve_rung(cfg, cfg.n_ladder[0],
                        cfg.alpha_ladder[0] if cfg.m == 2 else None)
    est = _tree_estimates(cfg, rung.spec, "cli-tree")
    row = {"n": rung.n, "alpha": rung.alpha, "seed": cfg.seed, **est}
    report = Report("tree", cfg.config_hash, cfg.seed, _TREE_COLUMNS,
                    [{c: row.get(c) for c in _TREE_COLUMNS}],
                    meta={"name": cfg.name})
    print(export_report(report, args.format, cfg.out_dir))
    return 0


def _cmd_experiment(args) -> int:
    cfg = _load(args)
    report = EXPERIMENTS[args.name](cfg)
    print(export_report(report, args.format, cfg.out_dir))
    return 0


_COMMANDS = {"gen": _cmd_gen, "mix": _cmd_mix, "spectral": _cmd_spectral,
             "tree": _cmd_tree, "experiment": _cmd_experiment}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, SpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
