"""Command-line front end: ingest, synth, train, eval, mem-estimate, ho-sweep.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .data import (IngestError, build_index, chronological_split, concat_streams,
                   ingest_csv, remove_node_events, sample_inductive_nodes, write_csv)
from .evaluation import SAMPLER_KINDS, evaluate
from .model import HistoryView, LinkPredictor, train
from .synth import SynthUsageError, generate_synthetic


class UsageError(ValueError):
    """Bad invocation or configuration; maps to exit code 2."""


@dataclass(frozen=True)
class MemoryEstimate:
    """Closed-form attention element counts for one forward pass.

    vanilla_elements counts a full-sequence attention stack over the patched
    pair sequence; per_block_elements counts the block-recurrent design's
    per-block matrices. Both scale linearly in the model width 8d.
    """

    vanilla_elements: int
    per_block_elements: int
    seq_len: int
    patch_size: int
    block_size: int
    d: int
    exact: bool  # false when patch size does not divide the sequence length


def attention_memory_estimate(seq_len: int, patch_size: int, block_size: int,
                              d: int) -> MemoryEstimate:
    if min(seq_len, patch_size, block_size, d) <= 0:
        raise UsageError("mem-estimate inputs must all be positive")
    rows = -(-seq_len // patch_size)
    width = 8 * d
    return MemoryEstimate(
        vanilla_elements=3 * rows * width,
        per_block_elements=9 * 2 * block_size * width,
        seq_len=seq_len, patch_size=patch_size, block_size=block_size, d=d,
        exact=seq_len % patch_size == 0,
    )


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _load_dataset(path: str):
    if not path:
        raise UsageError("no dataset path configured (set data_path)")
    if not Path(path).exists():
        raise UsageError(f"dataset file not found: {path}")
    return ingest_csv(path)


def _prepare(cfg: dict, protocol: str):
    """Dataset -> (train', val, test, inductive node ids or None)."""
    stream = _load_dataset(cfg["data_path"])
    train_s, val_s, test_s = chronological_split(stream, cfgmod.split_ratios(cfg))
    inductive_nodes = None
    if protocol == "inductive":
        inductive_nodes = sample_inductive_nodes(stream, cfg["inductive_fraction"],
                                                 seed=cfg["seed"])
        train_s = remove_node_events(train_s, inductive_nodes)
        if len(train_s) == 0:
            raise UsageError("inductive masking removed every training event")
    return stream, train_s, val_s, test_s, inductive_nodes


def cmd_ingest(args) -> int:
    stream = _load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / (Path(args.data).stem + ".normalized.csv")
    write_csv(stream, out_path)
    index = build_index(stream)
    print(f"events          {len(stream)}")
    print(f"nodes           {stream.num_nodes}")
    print(f"edge features   {stream.d_edge}")
    print(f"time range      [{stream.timestamps[0]}, {stream.timestamps[-1]}]")
    print(f"index entries   {index.total_entries}")
    print(f"normalized csv  {out_path}")
    return 0


def cmd_synth(args) -> int:
    params = {}
    if args.kind == "periodic-bipartite":
        params = dict(num_left=args.left, num_right=args.right,
                      num_events=args.events, period=args.period)
    elif args.kind == "triadic-closure":
        params = dict(num_nodes=args.nodes, num_events=args.events,
                      p_close=args.p_close)
    stream = generate_synthetic(args.kind, params, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(stream, out)
    print(f"wrote {len(stream)} events over {stream.num_nodes} nodes to {out}")
    return 0


def _read_run_config(args) -> dict:
    if not args.config:
        raise UsageError("--config is required")
    if not Path(args.config).exists():
        raise UsageError(f"config file not found: {args.config}")
    cfg = cfgmod.read_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    if getattr(args, "preset", None):
        cfg = cfgmod.apply_preset(cfg, args.preset)
    return cfg


def cmd_train(args) -> int:
    cfg = _read_run_config(args)
    _, train_s, val_s, _, inductive_nodes = _prepare(cfg, args.protocol)
    model_cfg = cfgmod.model_config(cfg)
    model = LinkPredictor(model_cfg, train_s.d_node, train_s.d_edge)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(model, train_s, val_s, log_path=out_dir / "train_log.csv",
                   quiet=args.quiet)
    extra = {
        "protocol": args.protocol,
        "best_epoch": result.best_epoch,
        "best_val_ap": result.best_val_ap,
        "inductive_nodes": ([] if inductive_nodes is None
                            else np.asarray(inductive_nodes).tolist()),
        "run_config": {k: cfg[k] for k in cfg},
    }
    ckpt = out_dir / "model.npz"
    model.save(ckpt, extra)
    print(f"best epoch {result.best_epoch}  val AP {result.best_val_ap:.4f}")
    print(f"checkpoint {ckpt}")
    print(f"log        {out_dir / 'train_log.csv'}")
    return 0


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model, extra = LinkPredictor.load(args.checkpoint)
    cfg = dict(extra.get("run_config", cfgmod.default_config()))
    if args.data:
        cfg["data_path"] = args.data
    stream, train_s, val_s, test_s, _ = _prepare(cfg, "transductive")
    if stream.d_edge != model.d_edge or stream.d_node != model.d_node:
        raise UsageError(
            f"checkpoint expects d_node={model.d_node}, d_edge={model.d_edge}; "
            f"dataset has d_node={stream.d_node}, d_edge={stream.d_edge}"
        )
    eval_s = val_s if args.split == "val" else test_s
    history_s = train_s if args.split == "val" else concat_streams(train_s, val_s)
    inductive_nodes = None
    if args.protocol == "inductive":
        stored = extra.get("inductive_nodes") or []
        inductive_nodes = (np.asarray(stored, dtype=np.int64) if stored else
                           sample_inductive_nodes(stream, cfg["inductive_fraction"],
                                                  seed=cfg["seed"]))
    kinds = tuple(k.strip() for k in args.samplers.split(",") if k.strip())
    for kind in kinds:
        if kind not in SAMPLER_KINDS:
            raise UsageError(f"unknown sampler {kind!r}; choose from {SAMPLER_KINDS}")
    report = evaluate(model, eval_s, history_s, setting=args.protocol,
                      kinds=kinds, seed=args.seed if args.seed is not None else cfg["seed"],
                      batch_size=cfg["batch_size"], inductive_nodes=inductive_nodes)
    out_dir = Path(args.out or cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"metrics_{args.split}_{args.protocol}.csv"
    out_path.write_text(report.to_csv_text(), encoding="utf-8")
    print(report.to_table())
    print(f"report {out_path}")
    return 0


def cmd_mem_estimate(args) -> int:
    est = attention_memory_estimate(args.seq_len, args.patch, args.block, args.d)
    print(f"vanilla attention elements    {est.vanilla_elements}")
    print(f"block-recurrent per block     {est.per_block_elements}")
    print(f"vanilla / per-block ratio     {est.vanilla_elements / est.per_block_elements:.4f}")
    if not est.exact:
        print("note: patch size does not divide the sequence length; "
              "row count was rounded up")
    return 0


def cmd_ho_sweep(args) -> int:
    cfg = _read_run_config(args)
    try:
        s2_values = [int(x) for x in args.s2.split(",") if x.strip() != ""]
    except ValueError:
        raise UsageError(f"--s2 must be a comma-separated integer list, got {args.s2!r}")
    if not s2_values:
        raise UsageError("--s2 list is empty")
    _, train_s, val_s, _, _ = _prepare(cfg, "transductive")
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["s2,val_ap,val_auc"]
    print("s2    val_ap   val_auc")
    for s2 in s2_values:
        model_cfg = cfgmod.model_config({**cfg, "s2": s2})
        model = LinkPredictor(model_cfg, train_s.d_node, train_s.d_edge)
        result = train(model, train_s, val_s, quiet=True)
        best = max(result.history, key=lambda r: r.val_ap)
        lines.append(f"{s2},{best.val_ap:.6f},{best.val_auc:.6f}")
        print(f"{s2:<5d} {best.val_ap:.4f}   {best.val_auc:.4f}")
    data_path = out_dir / "ho_sweep.csv"
    data_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"plot data {data_path}")
    return 0


def cmd_write_defaults(args) -> int:
    cfg = cfgmod.default_config()
    if args.preset:
        cfg = cfgmod.apply_preset(cfg, args.preset)
    cfgmod.write_config(cfg, args.out)
    print(f"wrote defaults to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="holink",
        description="Higher-order temporal link prediction on dynamic graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a dataset CSV and report/normalize it")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="runs")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic event stream CSV")
    p.add_argument("--kind", required=True,
                   choices=["periodic-bipartite", "triadic-closure"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--left", type=int, default=25)
    p.add_argument("--right", type=int, default=25)
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--events", type=int, default=2000)
    p.add_argument("--period", type=float, default=100.0)
    p.add_argument("--p-close", type=float, default=0.8, dest="p_close")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--preset", default=None, choices=sorted(cfgmod.DATASET_PRESETS))
    p.add_argument("--protocol", default="transductive",
                   choices=["transductive", "inductive"])
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test", choices=["val", "test"])
    p.add_argument("--protocol", default="transductive",
                   choices=["transductive", "inductive"])
    p.add_argument("--samplers", default="random,historical,inductive")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("mem-estimate",
                       help="closed-form attention memory comparison")
    p.add_argument("--seq-len", type=int, required=True, dest="seq_len")
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.set_defaults(fn=cmd_mem_estimate)

    p = sub.add_parser("ho-sweep",
                       help="train once per s2 value and tabulate val metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--s2", required=True,
                   help="comma-separated list, e.g. 0,1,2,4")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--preset", default=None, choices=sorted(cfgmod.DATASET_PRESETS))
    p.set_defaults(fn=cmd_ho_sweep)

    p = sub.add_parser("write-config", help="write the default run config")
    p.add_argument("--out", default="holink.cfg")
    p.add_argument("--preset", default=None, choices=sorted(cfgmod.DATASET_PRESETS))
    p.set_defaults(fn=cmd_write_defaults)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, IngestError, SynthUsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failure
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
