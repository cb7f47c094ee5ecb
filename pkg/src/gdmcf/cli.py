"""Command line entry point: ``gdmcf {prepare,train,recommend,eval,selftest}``.

Exit codes: 0 ok, 1 check failure, 2 I/O error, 3 config error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys

from .config import ConfigError, RunConfig, build_run_config, format_config, parse_config
from .dataio import CheckpointError, DataError, load_interactions, prepare_splits, read_split, synthetic_blocks, write_split
from .estimator import GDMCF
from .inference import read_recommendations, rank_topk, write_recommendations
from .metrics import LONGTAIL, evaluate_recommendations, longtail_users, truth_sets, write_reports
from .training import write_trace

EXIT_OK, EXIT_CHECK, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("gdmcf")


def _bool_flag(text: str) -> bool:
    v = text.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _ks(text: str) -> tuple:
    try:
        return tuple(int(k) for k in text.split(",") if k)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--readout", choices=("mean", "last"))
    p.add_argument("--scc", type=float)
    p.add_argument("--sdc", type=float)
    p.add_argument(
        "--corruption-mode", dest="corruption_mode", choices=("both", "continuous_only", "discrete_only", "none")
    )
    p.add_argument("--user-active", dest="user_active", type=_bool_flag, metavar="on|off")
    p.add_argument("--split", dest="split_dir", help="directory written by 'prepare'")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--checkpoint", help="checkpoint path (train writes it, recommend/eval read it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdmcf", description="Graph diffusion model for collaborative filtering")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse interactions and write temporal 7:1:2 splits")
    p.add_argument("input", nargs="?", help="TSV/CSV of user, item, [rating,] timestamp")
    p.add_argument("out_dir")
    p.add_argument(
        "--synthetic", metavar="USERS,ITEMS,GROUPS,P_IN,P_OUT", help="generate a planted-block dataset instead"
    )
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model; writes checkpoint, loss trace and effective config")
    _add_model_flags(p)

    p = sub.add_parser("recommend", help="guided generation + top-k recommendations CSV")
    _add_model_flags(p)
    p.add_argument("--k", type=int, default=20)

    p = sub.add_parser("eval", help="Recall/NDCG of recommendations or a checkpoint on val/test")
    _add_model_flags(p)
    p.add_argument("--recommendations", help="CSV written by 'recommend'")
    p.add_argument("--ks", type=_ks)
    p.add_argument("--k", type=int, help="single K (shorthand for --ks K)")
    p.add_argument("--target", choices=("test", "val"), default="test")
    p.add_argument("--longtail", action="store_true", help="also report the bottom-20%% users by training degree")

    sub.add_parser("selftest", help="run numeric invariant checks")
    return parser


def _run_config(args) -> RunConfig:
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_values = parse_config(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
    keys = (
        "seed epochs dim layers steps lambda1 tau lr batch_size readout scc sdc corruption_mode user_active "
        "split_dir out_dir"
    ).split()
    overrides = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "checkpoint", None):
        overrides["checkpoint"] = args.checkpoint
    if getattr(args, "ks", None):
        overrides["ks"] = args.ks
    elif getattr(args, "k", None) and args.command == "eval":
        overrides["ks"] = (args.k,)
    return build_run_config(file_values, overrides)


def _echo_config(cfg: RunConfig) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "effective_config.txt"), "w") as fh:
        fh.write(format_config(cfg))


def _need(value, what):
    if not value:
        raise ConfigError(f"{what} is required")
    return value


def _load_split(cfg: RunConfig):
    split_dir = _need(cfg.split_dir, "--split (or split_dir in the config)")
    if not os.path.isdir(split_dir):
        raise FileNotFoundError(f"split directory not found: {split_dir}")
    return read_split(split_dir)


def cmd_prepare(args) -> int:
    if args.synthetic:
        try:
            users, items, groups = (int(v) for v in args.synthetic.split(",")[:3])
            p_in, p_out = (float(v) for v in args.synthetic.split(",")[3:5])
        except ValueError:
            raise ConfigError("--synthetic expects USERS,ITEMS,GROUPS,P_IN,P_OUT") from None
        split = synthetic_blocks(users, items, groups, p_in, p_out, seed=args.seed)
    else:
        if not args.input:
            raise ConfigError("an input file (or --synthetic) is required")
        if not os.path.isfile(args.input):
            raise FileNotFoundError(f"input file not found: {args.input}")
        split = prepare_splits(load_interactions(args.input))
    write_split(split, args.out_dir)
    print(
        f"users={split.num_users} items={split.num_items} "
        f"train={split.train.nnz} val={split.val.nnz} test={split.test.nnz} -> {args.out_dir}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    split = _load_split(cfg)
    _echo_config(cfg)
    est = GDMCF(**vars(cfg.train)).fit(split.train, X_val=split.val if split.val.nnz else None)
    ckpt = cfg.checkpoint or os.path.join(cfg.out_dir, "model.ckpt")
    os.makedirs(os.path.dirname(ckpt) or ".", exist_ok=True)
    est.save(ckpt)
    variant = cfg.train.variant
    write_trace(est.trace_, os.path.join(cfg.out_dir, "trace.csv"), label=variant)
    if est.trace_:
        first, last = est.trace_[0]["total"], est.trace_[-1]["total"]
        print(f"{variant}: {len(est.trace_)} epochs, loss {first:.4f} -> {last:.4f}, best epoch {est.best_epoch_}")
    else:
        print(f"{variant}: 0 epochs, checkpoint holds the initialization")
    print(f"checkpoint: {ckpt}")
    return EXIT_CHECK if est.diverged_ else EXIT_OK


def _load_model(cfg: RunConfig, args, split) -> GDMCF:
    path = _need(cfg.checkpoint, "--checkpoint")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    est = GDMCF.load(path, train_matrix=split.train)
    # inference-time switches given on the command line win over the stored config
    for key in ("user_active", "corruption_mode", "seed", "readout", "layers"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(est, key, val)
    return est


def cmd_recommend(args) -> int:
    cfg = _run_config(args)
    split = _load_split(cfg)
    est = _load_model(cfg, args, split)
    _echo_config(cfg)
    gen = est.generate()
    recs = rank_topk(gen.scores, split.train, args.k)
    path = os.path.join(cfg.out_dir, "recommendations.csv")
    write_recommendations(recs, path, split.user_ids, split.item_ids)
    label = est.variant
    with open(os.path.join(cfg.out_dir, "generation_stats.txt"), "w") as fh:
        fh.write(f"variant = {label}\nuser_active = {est.user_active}\n")
        fh.write(f"edges_per_step = {','.join(str(e) for e in gen.edges_per_step)}\n")
        fh.write(f"total_edges = {gen.total_edges}\n")
    print(f"{label}: denoiser edges processed = {gen.total_edges}; {int(recs.flagged.sum())} users with < {args.k} items")
    print(f"recommendations: {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    split = _load_split(cfg)
    truth_matrix = getattr(split, args.target)
    truth = truth_sets(truth_matrix)
    ks = cfg.ks
    if args.recommendations:
        if not os.path.isfile(args.recommendations):
            raise FileNotFoundError(f"recommendations not found: {args.recommendations}")
        uidx = {str(u): k for k, u in enumerate(split.user_ids)}
        iidx = {str(i): k for k, i in enumerate(split.item_ids)}
        recs = read_recommendations(args.recommendations, split.num_users, uidx, iidx)
    else:
        est = _load_model(cfg, args, split)
        recs = rank_topk(est.decision_function(), split.train, max(ks))
    _echo_config(cfg)
    reports = [evaluate_recommendations(recs, truth, ks)]
    if args.longtail:
        users = longtail_users(split.train.row_counts())
        reports.append(evaluate_recommendations(recs, truth, ks, users=users, label=LONGTAIL))
    write_reports(reports, os.path.join(cfg.out_dir, "eval_report.csv"))
    text = "\n\n".join(r.table() for r in reports)
    with open(os.path.join(cfg.out_dir, "eval_report.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_CHECK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "recommend": cmd_recommend,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
}


def _thread_limit():
    cap = os.environ.get("GDMCF_THREADS")
    if not cap:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(cap))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
