"""Command-line interface.

Subcommands: preprocess, train-spt, train-rpt, evaluate, infer, bench,
sweep. Exit codes: 0 success, 2 usage error, 1 anything else (with a
one-line diagnostic on stderr).
"""

import argparse
import itertools
import json
import os
import sys

import numpy as np

from .. import corpus, kernels
from ..evalrank import evaluate as evaluate_split
from ..ioutil import atomic_write_json, atomic_write_text
from ..model import reason, score
from ..posttrain import train_rpt
from ..pretrain import train_spt
from ..seeding import EVAL, derive_seed
from .bench import bench_depths, compare_backends
from .checkpoints import load_checkpoint, save_checkpoint
from .config import (
    RunConfig,
    apply_overrides,
    config_hash,
    default_out_root,
    load_config,
    serialize_config,
)
from .reports import emit_report, write_csv


def _add_common(p):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", help="output directory (default $LARES_RUN_DIR/<cmd>)")
    p.add_argument("--seed", type=int, default=None)


def _add_train_flags(p):
    p.add_argument("--data", help="preprocessed dataset directory")
    p.add_argument("--k-bar", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--reward", default=None, help="reward metric, e.g. Recall@10")
    p.add_argument("--group-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--rpt-lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None, help="max training epochs")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--pre-layers", type=int, default=None)
    p.add_argument("--core-layers", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--sigma1", type=float, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--similarity", default=None)
    p.add_argument("--fixed-depth", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--rollout-batch", type=int, default=None)
    p.add_argument("--report", action="store_true", help="emit plots after the run")


_OVERRIDE_MAP = {
    "seed": "seed",
    "data": "data",
    "out": "out",
    "k_bar": "k_bar",
    "alpha": "alpha",
    "gamma": "gamma",
    "beta": "beta",
    "epsilon": "epsilon",
    "reward": "reward_metric",
    "group_size": "group_size",
    "lr": "lr",
    "rpt_lr": "rpt_lr",
    "epochs": "max_epochs",
    "batch_size": "batch_size",
    "patience": "patience",
    "embed_dim": "embed_dim",
    "hidden_dim": "hidden_dim",
    "pre_layers": "pre_layers",
    "core_layers": "core_layers",
    "dropout": "dropout",
    "sigma1": "sigma1",
    "sigma2": "sigma2",
    "tau": "tau",
    "similarity": "similarity",
    "fixed_depth": "fixed_depth",
    "iterations": "iterations",
    "eval_every": "eval_every",
    "rollout_batch": "rollout_batch",
}


def _resolve_config(args):
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    overrides = {}
    for attr, field in _OVERRIDE_MAP.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[field] = value
    return apply_overrides(cfg, overrides)


def _out_dir(args, name):
    out = getattr(args, "out", None) or os.path.join(default_out_root(), name)
    os.makedirs(out, exist_ok=True)
    return out


def _load_data(path_or_cfg):
    if not path_or_cfg:
        raise ValueError("--data is required (run preprocess first)")
    return corpus.load_dataset(path_or_cfg)


def _decode_delimiter(text):
    return {"\\t": "\t", "tab": "\t", "comma": ","}.get(text, text)


# -- subcommands -------------------------------------------------------


def cmd_preprocess(args):
    out = _out_dir(args, "data")
    delimiter = _decode_delimiter(args.delimiter)
    events = corpus.ingest_events(args.input, delimiter)
    filtered = corpus.kcore_filter(events, args.k_core)
    dataset = corpus.build_dataset(
        filtered, max_len=args.max_len, source_checksum=corpus.file_checksum(args.input)
    )
    corpus.save_dataset(dataset, out)
    stats = dataset.stats()
    print(
        f"preprocess: {len(events)} events -> {stats['num_actions']} after {args.k_core}-core; "
        f"{stats['num_users']} users, {stats['num_items']} items, avg length {stats['avg_len']:.2f} -> {out}"
    )
    return 0


def cmd_train_spt(args):
    cfg = _resolve_config(args)
    out = _out_dir(args, "spt")
    dataset = _load_data(args.data or cfg.data)
    result = train_spt(dataset, cfg.arch(), cfg.spt(), cfg.seed)
    atomic_write_text(os.path.join(out, "config.cfg"), serialize_config(cfg))
    write_csv(os.path.join(out, "curves.csv"), result.curves)
    save_checkpoint(
        os.path.join(out, "checkpoint_spt.npz"),
        result.params,
        stage="SPT",
        epoch=result.best_epoch,
        valid_metrics={"NDCG@10": result.best_metric},
        config_hash=config_hash(cfg),
    )
    print(
        f"train-spt: {result.epochs_run} epochs, best valid NDCG@10 = "
        f"{result.best_metric:.4f} at epoch {result.best_epoch} -> {out}"
    )
    if args.report:
        emit_report(out)
    return 0


def cmd_train_rpt(args):
    cfg = _resolve_config(args)
    out = _out_dir(args, "rpt")
    dataset = _load_data(args.data or cfg.data)
    ckpt = load_checkpoint(args.checkpoint)
    result = train_rpt(dataset, ckpt.params, cfg.rpt(), cfg.seed)
    atomic_write_text(os.path.join(out, "config.cfg"), serialize_config(cfg))
    write_csv(os.path.join(out, "rpt_curves.csv"), result.curves)
    save_checkpoint(
        os.path.join(out, "checkpoint_rpt.npz"),
        result.params,
        stage="RPT",
        epoch=result.iterations_run,
        valid_metrics={"NDCG@10": result.best_metric},
        config_hash=config_hash(cfg),
        reference={"checkpoint": os.path.abspath(args.checkpoint), "config_hash": ckpt.meta.get("config_hash")},
    )
    print(
        f"train-rpt: {result.iterations_run} iterations, valid NDCG@10 "
        f"{result.init_metric:.4f} -> {result.best_metric:.4f} -> {out}"
    )
    if args.report:
        emit_report(out)
    return 0


def cmd_evaluate(args):
    out = _out_dir(args, "eval")
    dataset = _load_data(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    instances = corpus.split_by_name(corpus.split_leave_one_out(dataset), args.split)
    eval_seed = derive_seed(args.seed or 0, EVAL)
    if args.depths:
        depths = [int(d) for d in args.depths.split(",")]
        rows = []
        for depth in depths:
            report = evaluate_split(ckpt.params, instances, depth=depth, eval_seed=eval_seed)
            rows.append({"depth": depth, **report.metrics})
        write_csv(os.path.join(out, "depth_sweep.csv"), rows)
        print(f"evaluate: depth sweep {depths} on {args.split} -> {out}/depth_sweep.csv")
        return 0
    report = evaluate_split(
        ckpt.params, instances, depth=args.depth, eval_seed=eval_seed,
        checkpoint=os.path.basename(args.checkpoint),
    )
    path = os.path.join(out, f"metrics_{args.split}.json")
    atomic_write_json(path, report.to_dict())
    headline = args.metric or "NDCG@10"
    print(f"evaluate: {args.split} {headline} = {report.metrics[headline]:.4f} ({report.n_instances} instances) -> {path}")
    if args.report:
        emit_report(out)
    return 0


def cmd_infer(args):
    dataset = _load_data(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    if args.items:
        items = [int(v) for v in args.items.replace(",", " ").split()]
    elif args.user is not None:
        seq = dataset.sequences.get(args.user)
        if seq is None:
            raise ValueError(f"unknown user index {args.user}")
        items = list(seq[-dataset.max_len:])
    else:
        raise ValueError("infer needs --items or --user")
    params = ckpt.params
    traj = reason(
        params,
        items[-params.max_len:],
        depth=args.depth,
        seed_record=None,
        rng=np.random.default_rng(derive_seed(args.seed or 0, EVAL)),
    )
    logits = score(params, traj.preference)
    top = np.argsort(-logits, kind="stable")[: args.topk]
    payload = {
        "input": items,
        "depth": traj.depth,
        "topk": [{"item": int(i), "score": float(logits[i])} for i in top],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write_text(os.path.join(args.out, "infer.json"), text + "\n")
    return 0


def cmd_bench(args):
    cfg = _resolve_config(args)
    out = _out_dir(args, "bench")
    if args.data:
        dataset = _load_data(args.data)
        num_items, max_len = dataset.num_items, dataset.max_len
    else:
        num_items, max_len = args.items, cfg.max_len
    depths = [int(d) for d in args.depths.split(",")]
    rows, fit = bench_depths(
        cfg.arch(), num_items, max_len, depths,
        batch_size=args.batch_size, repeats=args.repeats, seed=cfg.seed,
    )
    write_csv(os.path.join(out, "bench.csv"), rows)
    atomic_write_json(os.path.join(out, "bench.json"), fit)
    print(f"bench[{fit['backend']}]: depths {depths}")
    for row in rows:
        print(f"  depth {row['depth']}: {row['seconds_mean'] * 1e3:8.2f} ms  (x{row['ratio_vs_first']:.2f})")
    print(f"  linear fit R^2 = {fit['r_squared']:.4f}")
    if args.compare_backends:
        brows = compare_backends(repeats=args.repeats)
        write_csv(os.path.join(out, "backends.csv"), brows)
        for row in brows:
            cells = "  ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items())
            print(" ", cells)
    if args.report:
        emit_report(out)
    return 0


def cmd_sweep(args):
    cfg = _resolve_config(args)
    out = _out_dir(args, "sweep")
    dataset = _load_data(args.data or cfg.data)

    def grid(text, cast):
        return [cast(v) for v in text.split(",")] if text else [None]

    summary = []
    if args.stage == "spt":
        axes = {
            "k_bar": grid(args.k_bar_grid, int),
            "alpha": grid(args.alpha_grid, float),
            "gamma": grid(args.gamma_grid, float),
        }
    else:
        if not args.checkpoint:
            raise ValueError("sweep --stage rpt needs --checkpoint")
        axes = {
            "rpt_lr": grid(args.rpt_lr_grid, float),
            "beta": grid(args.beta_grid, float),
        }
    names = list(axes)
    for combo in itertools.product(*(axes[n] for n in names)):
        overrides = {n: v for n, v in zip(names, combo) if v is not None}
        cell_cfg = apply_overrides(cfg, overrides)
        cell_name = "_".join(f"{n}{v}" for n, v in zip(names, combo) if v is not None) or "default"
        cell_dir = os.path.join(out, cell_name)
        os.makedirs(cell_dir, exist_ok=True)
        atomic_write_text(os.path.join(cell_dir, "config.cfg"), serialize_config(cell_cfg))
        if args.stage == "spt":
            result = train_spt(dataset, cell_cfg.arch(), cell_cfg.spt(), cell_cfg.seed)
            write_csv(os.path.join(cell_dir, "curves.csv"), result.curves)
            save_checkpoint(
                os.path.join(cell_dir, "checkpoint_spt.npz"), result.params, stage="SPT",
                epoch=result.best_epoch, valid_metrics={"NDCG@10": result.best_metric},
                config_hash=config_hash(cell_cfg),
            )
            best = result.best_metric
        else:
            ckpt = load_checkpoint(args.checkpoint)
            result = train_rpt(dataset, ckpt.params, cell_cfg.rpt(), cell_cfg.seed)
            write_csv(os.path.join(cell_dir, "rpt_curves.csv"), result.curves)
            save_checkpoint(
                os.path.join(cell_dir, "checkpoint_rpt.npz"), result.params, stage="RPT",
                epoch=result.iterations_run, valid_metrics={"NDCG@10": result.best_metric},
                config_hash=config_hash(cell_cfg),
                reference={"checkpoint": os.path.abspath(args.checkpoint)},
            )
            best = result.best_metric
        summary.append({"cell": cell_name, **{n: v for n, v in zip(names, combo)}, "best_valid_ndcg10": best})
        print(f"sweep[{cell_name}]: best valid NDCG@10 = {best:.4f}")
    write_csv(os.path.join(out, "sweep_summary.csv"), summary)
    return 0


# -- wiring ------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="lares", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="ingest a raw log into a dataset directory")
    p.add_argument("--input", required=True, help="raw user,item,timestamp log")
    p.add_argument("--delimiter", default="\t", help=r"field delimiter (default tab; accepts \t, comma)")
    p.add_argument("--k-core", type=int, default=5)
    p.add_argument("--max-len", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-spt", help="self-supervised pre-training")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_spt)

    p = sub.add_parser("train-rpt", help="reinforcement post-training from an SPT checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_rpt)

    p = sub.add_parser("evaluate", help="full-ranking metrics for a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--depths", default=None, help="comma list -> depth_sweep.csv")
    p.add_argument("--metric", default=None, help="headline metric to print")
    p.add_argument("--report", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="top-K recommendations for one sequence")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, default=None)
    p.add_argument("--items", default=None, help="explicit item-index sequence")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--depth", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="forward latency across reasoning depths")
    p.add_argument("--data", default=None)
    p.add_argument("--items", type=int, default=10000, help="catalog size when no --data")
    p.add_argument("--depths", default="1,2,3,4")
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--compare-backends", action="store_true")
    p.add_argument("--report", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="grid of training runs, one directory per cell")
    p.add_argument("--stage", default="spt", choices=["spt", "rpt"])
    p.add_argument("--checkpoint", default=None, help="SPT checkpoint for --stage rpt")
    p.add_argument("--k-bar-grid", default=None, help="comma list, e.g. 3,4,6")
    p.add_argument("--alpha-grid", default=None)
    p.add_argument("--gamma-grid", default=None)
    p.add_argument("--rpt-lr-grid", default=None)
    p.add_argument("--beta-grid", default=None)
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def run_command(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args) or 0
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
