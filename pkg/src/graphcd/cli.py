"""Command-line surface for reproducible experiment runs.

Subcommands: train, csbm, energy, ablate, stats, convert, sweep. All
outputs are plain JSON/CSV with the full configuration echoed so a run
is reconstructible from its outputs. Exit codes: 0 success, 1 runtime
failure, 2 configuration or input error. The environment variable
GRAPHCD_OUTPUT_ROOT overrides the default output directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis as an
from . import model as mdl
from . import presets
from .dynamics import DynamicsParams, VARIANTS
from .encoding import ENCODING_KINDS, EncodingConfig
from .graph import (CsbmParams, GraphError, generate_csbm, load_graph,
                    make_splits, row_normalize_features, save_graph)
from .solvers import METHODS, SolverConfig

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
OUTPUT_ROOT_ENV = "GRAPHCD_OUTPUT_ROOT"


class ConfigError(Exception):
    pass


def _out_dir(args) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    base = Path(root) if root else Path(".")
    d = base / args.output
    d.mkdir(parents=True, exist_ok=True)
    return d


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--input-dropout", type=float, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--curvature", type=float, default=None)
    p.add_argument("--self-loop-weight", type=float, default=None)
    p.add_argument("--eps", type=int, default=None)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--time", type=float, default=None)
    p.add_argument("--solver", choices=METHODS, default=None)
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--atol", type=float, default=None)
    p.add_argument("--variant", default=None,
                   help="dynamics variant; fixed_velocity:<v> allowed")
    p.add_argument("--encoding", choices=ENCODING_KINDS, default=None)
    p.add_argument("--u-max", type=float, default=None)
    p.add_argument("--u-init", type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--dataset", default=None,
                   help=f"preset name ({', '.join(sorted(presets.DATASETS))}) "
                        "or path to a canonical graph JSON file")
    p.add_argument("--splits", type=int, default=10,
                   help="number of generated splits for presets")
    p.add_argument("--normalize", action="store_true",
                   help="row-normalize features of file-loaded graphs")


def _resolve_graph(args):
    name = args.dataset
    if name is None:
        raise ConfigError("--dataset is required")
    if name in presets.DATASETS:
        return name, presets.load_preset(name, n_splits=args.splits)
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    g = load_graph(path)
    if args.normalize:
        g = row_normalize_features(g)
    if not g.splits:
        for i in range(args.splits):
            g = make_splits(g, seed=i, name=f"split{i}")
    return path.stem, g


def _resolve_configs(args, preset_name: str):
    cfg = presets.default_model_config(
        preset_name if preset_name in presets.DATASETS else "separable")
    tc = presets.default_train_config(
        preset_name if preset_name in presets.DATASETS else "separable")
    dyn, sol, enc = cfg.dynamics, cfg.solver, cfg.encoding
    if args.variant is not None:
        cfg = an.variant_config(cfg, args.variant)
        dyn = cfg.dynamics
    if args.eps is not None:
        dyn = replace(dyn, eps=args.eps)
    if args.self_loop_weight is not None:
        dyn = replace(dyn, self_loop_weight=args.self_loop_weight)
    if args.u_max is not None:
        dyn = replace(dyn, u_max=args.u_max)
    if args.u_init is not None:
        dyn = replace(dyn, u_init=args.u_init)
    if args.kappa is not None:
        dyn = replace(dyn, kappa=args.kappa)
    if args.solver is not None:
        sol = replace(sol, method=args.solver)
    if args.step_size is not None:
        sol = replace(sol, tau=args.step_size)
    if args.time is not None:
        sol = replace(sol, horizon=args.time)
    if args.rtol is not None:
        sol = replace(sol, rtol=args.rtol)
    if args.atol is not None:
        sol = replace(sol, atol=args.atol)
    if args.encoding is not None:
        enc = EncodingConfig(kind=args.encoding,
                             curvature=enc.curvature)
    if args.curvature is not None:
        enc = EncodingConfig(kind=enc.kind, curvature=args.curvature)
    cfg = replace(cfg, dynamics=dyn, solver=sol, encoding=enc)
    if args.hidden_dim is not None:
        cfg = replace(cfg, hidden_dim=args.hidden_dim)
    if args.dropout is not None:
        cfg = replace(cfg, dropout=args.dropout)
    if args.input_dropout is not None:
        cfg = replace(cfg, input_dropout=args.input_dropout)
    if args.lr is not None:
        tc = replace(tc, learning_rate=args.lr)
    if args.weight_decay is not None:
        tc = replace(tc, weight_decay=args.weight_decay)
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    if args.patience is not None:
        tc = replace(tc, patience=args.patience)
    return cfg, tc


def _split_list(g, seeds):
    names = sorted(g.splits, key=lambda s: (len(s), s))
    out = []
    for k, seed in enumerate(seeds):
        out.append((g.splits[names[k % len(names)]], seed))
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    preset_name, g = _resolve_graph(args)
    cfg, tc = _resolve_configs(args, preset_name)
    out = _out_dir(args)
    seeds = args.seeds
    accs, docs = [], []
    for split, seed in _split_list(g, seeds):
        res = mdl.train(cfg, replace(tc, seed=seed), g, split)
        accs.append(res.test_acc)
        docs.append(mdl.result_to_json(res, cfg, replace(tc, seed=seed)))
    summary = {
        "dataset": preset_name,
        "n_runs": len(accs),
        "mean_test_acc": float(np.mean(accs)),
        "std_test_acc": float(np.std(accs)),
        "runs": docs,
        "config": mdl.config_echo(cfg, tc),
    }
    with open(out / "metrics.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    with open(out / "curves.csv", "w") as fh:
        fh.write("run,epoch,train_loss,valid_acc\n")
        for k, doc in enumerate(docs):
            for e, (l, v) in enumerate(zip(doc["train_losses"],
                                           doc["valid_accs"])):
                fh.write(f"{k},{e},{l:.12g},{v:.12g}\n")
    print(f"mean test accuracy {summary['mean_test_acc']:.4f} "
          f"± {summary['std_test_acc']:.4f} over {len(accs)} runs")
    return EXIT_OK


def cmd_csbm(args) -> int:
    p = CsbmParams(num_nodes=args.nodes, num_classes=args.classes,
                   intra_p=args.intra_p, inter_p=args.inter_p,
                   feature_dim=args.feature_dim,
                   class_mean_separation=args.separation, seed=args.seed)
    g = generate_csbm(p)
    for i in range(args.splits):
        g = make_splits(g, seed=i, name=f"split{i}")
    save_graph(g, args.out)
    print(f"wrote {args.out}: {g.num_nodes} nodes, {g.num_edges} edges")
    return EXIT_OK


def cmd_energy(args) -> int:
    preset_name, g = _resolve_graph(args)
    cfg, _ = _resolve_configs(args, preset_name)
    if preset_name == "oversmooth" and args.time is None:
        cfg = presets.oversmoothing_config()
    out = _out_dir(args)
    variants = args.variants.split(",")
    traces = an.oversmoothing_traces(g, cfg, variants,
                                     n_steps=args.steps, seed=args.seed)
    summary = {"config": mdl.config_echo(cfg), "variants": {}}
    for name, tr in traces.items():
        an.write_energy_csv(out / f"energy_{name}.csv", tr)
        summary["variants"][name] = {
            "E0": tr.energies[0], "ET": tr.energies[-1],
            "ratio": tr.energies[-1] / tr.energies[0],
        }
        print(f"{name}: E(T)/E(0) = {summary['variants'][name]['ratio']:.5f}")
    with open(out / "energy_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return EXIT_OK


def cmd_ablate(args) -> int:
    preset_name, g = _resolve_graph(args)
    cfg, tc = _resolve_configs(args, preset_name)
    out = _out_dir(args)
    runs = _split_list(g, args.seeds)
    rows = an.ablation_run(g, cfg, tc, args.variants.split(","), runs)
    an.write_ablation_csv(out / "ablation.csv", rows)
    with open(out / "ablation.json", "w") as fh:
        json.dump({"rows": rows, "config": mdl.config_echo(cfg, tc)}, fh,
                  indent=2)
    for r in rows:
        print(f"{r['variant']}: {r['mean_acc']:.4f} ± {r['std_acc']:.4f} "
              f"({r['n_runs']} runs)")
    return EXIT_OK


def cmd_stats(args) -> int:
    preset_name, g = _resolve_graph(args)
    cfg, tc = _resolve_configs(args, preset_name)
    out = _out_dir(args)
    if args.params:
        params = mdl.load_params(args.params)
    else:
        split, seed = _split_list(g, [args.seeds[0]])[0]
        res = mdl.train(cfg, replace(tc, seed=seed), g, split)
        params = {n: mdl.Tensor(v, requires_grad=True)
                  for n, v in res.params.items()}
        mdl.save_params(params, out / "params.npz")
    logits, traj, dyn = mdl.forward(cfg, params, g, train_mode=False)
    report = an.velocity_stats(dyn.current_velocity(), g)
    an.write_velocity_csv(out / "velocity.csv", report, g.labels)
    an.export_embeddings(out / "embeddings.csv", traj.final.data)
    doc = {"mean_u": report.mean, "median_u": report.median,
           "max_u": report.max, "spearman_u_vs_h": report.spearman_u_vs_h,
           "config": mdl.config_echo(cfg, tc)}
    with open(out / "velocity_summary.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"mean velocity {report.mean:.4f}, "
          f"rank correlation with local label agreement "
          f"{report.spearman_u_vs_h:+.4f}")
    return EXIT_OK


def cmd_convert(args) -> int:
    g = load_graph(args.edges, fmt="edge-list", features_csv=args.features)
    save_graph(g, args.out)
    print(f"wrote {args.out}: {g.num_nodes} nodes, {g.num_edges} edges, "
          f"{g.num_classes} classes")
    return EXIT_OK


def cmd_sweep(args) -> int:
    preset_name, g = _resolve_graph(args)
    cfg, tc = _resolve_configs(args, preset_name)
    out = _out_dir(args)
    split, seed = _split_list(g, [args.seeds[0]])[0]
    rows = an.solver_sweep(g, cfg, replace(tc, seed=seed), split,
                           methods=args.methods.split(","),
                           taus=[float(t) for t in args.taus.split(",")])
    with open(out / "solver_sweep.json", "w") as fh:
        json.dump({"rows": rows, "config": mdl.config_echo(cfg, tc)}, fh,
                  indent=2)
    for r in rows:
        print(f"{r['solver']} tau={r['tau']}: acc={r['test_acc']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="graphcd",
        description="continuous-time convection-diffusion graph networks")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, model_flags=True):
        _add_data_flags(p)
        if model_flags:
            _add_model_flags(p)
        p.add_argument("--seeds", type=int, nargs="+", default=[0])
        p.add_argument("--output", default="runs/out")

    p = sub.add_parser("train", help="train and evaluate over splits/seeds")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("csbm", help="generate a synthetic benchmark graph")
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--intra-p", type=float, default=0.9)
    p.add_argument("--inter-p", type=float, default=0.9)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_csbm)

    p = sub.add_parser("energy", help="fixed-step energy evolution traces")
    common(p)
    p.add_argument("--variants", default="pure_diffusion,adaptive")
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_energy)

    p = sub.add_parser("ablate", help="variant comparison table")
    common(p)
    p.add_argument("--variants",
                   default="adaptive,pure_diffusion,pure_convection")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("stats", help="velocity report of a trained model")
    common(p)
    p.add_argument("--params", default=None,
                   help="trained parameter snapshot (.npz); trains if absent")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("convert", help="edge list + feature CSV to JSON")
    p.add_argument("--edges", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("sweep", help="solver x step-size sensitivity grid")
    common(p)
    p.add_argument("--methods", default="euler,rk4,dopri5")
    p.add_argument("--taus", default="0.25,0.5,1.0")
    p.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, GraphError, ValueError, KeyError,
            FileNotFoundError) as e:
        json.dump({"error": str(e), "kind": "config"}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_CONFIG
    except (FloatingPointError, RuntimeError, OSError) as e:
        json.dump({"error": str(e), "kind": "runtime"}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
