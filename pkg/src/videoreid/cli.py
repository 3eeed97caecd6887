"""Command-line entry point.

Verbs: train, eval, ablate, synth, flow, gradcheck. Every invocation
writes its artifacts under --out and drops a run.json record there
(verb, config hash, seed, wall time). Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalcmc, preproc, trainer
from .autograd import standard_op_audit
from .data import SyntheticSpec, generate_synthetic, load_dataset, split_dataset
from .model import EmbeddingModel
from .trainer import TrainConfig, apply_config_override, config_to_text, load_config

DATASET_FORMATS = ("synthetic-dir", "ilids-vid", "prid2011")
OP_TOLERANCE = 1e-4
NET_TOLERANCE = 1e-3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videoreid", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p, data=True):
        p.add_argument("--out", required=True, help="output directory (all artifacts land here)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        if data:
            p.add_argument("--data", required=True, help="dataset root directory")
            p.add_argument("--format", choices=DATASET_FORMATS, default="synthetic-dir")

    def add_config(p):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")

    p = sub.add_parser("train", help="train a model and write checkpoint + loss log")
    add_common(p)
    add_config(p)
    p.add_argument("--subset", choices=("all", "train", "test"), default="all",
                   help="identity subset: 'all' or one half of a seeded split")
    p.add_argument("--split-seed", type=int, default=0)

    p = sub.add_parser("eval", help="CMC evaluation of a checkpoint, or the full split/train protocol")
    add_common(p)
    add_config(p)
    p.add_argument("--checkpoint", default=None, help="trained checkpoint to evaluate")
    p.add_argument("--protocol", action="store_true", help="run repeated split/train/test averaging instead")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--subset", choices=("all", "train", "test"), default="all")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--dump-attention", action="store_true", help="write per-probe attention CSVs")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ablate", help="retrain per spatial hop count and tabulate CMC")
    add_common(p)
    add_config(p)
    p.add_argument("--hops", default="3,2,1,0", help="comma-separated hop counts")
    p.add_argument("--runs", type=int, default=1)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    add_common(p, data=False)
    p.add_argument("--identities", type=int, default=8)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--occlusion", type=float, default=0.3)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=128)

    p = sub.add_parser("flow", help="optical flow between two frames, dumped as CSV + PNG")
    add_common(p, data=False)
    p.add_argument("--frame-a", required=True)
    p.add_argument("--frame-b", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every differentiable operation")
    add_common(p, data=False)
    p.add_argument("--skip-full-net", action="store_true", help="per-op checks only")

    return parser


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    for override in getattr(args, "set", []):
        if "=" not in override:
            raise ValueError(f"--set expects KEY=VALUE, got {override!r}")
        key, value = override.split("=", 1)
        cfg = apply_config_override(cfg, key.strip(), value.strip())
    if args.seed is not None:
        cfg = apply_config_override(cfg, "seed", str(args.seed))
    cfg.validate()
    return cfg


def _subset_identities(dataset, subset: str, split_seed: int) -> list[str]:
    if subset == "all":
        return dataset.eligible_identities()
    split = split_dataset(dataset, split_seed)
    return split.train if subset == "train" else split.test


def _write_run_record(out_dir: Path, verb: str, cfg_text: str, seed, started: float) -> None:
    record = {
        "verb": verb,
        "config_hash": hashlib.sha256(cfg_text.encode()).hexdigest()[:16],
        "seed": seed,
        "wall_time_s": round(time.monotonic() - started, 3),
        "argv": sys.argv[1:],
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Verb handlers
# ---------------------------------------------------------------------------

def _cmd_train(args, out_dir: Path) -> int:
    cfg = _resolve_config(args)
    dataset = load_dataset(args.data, args.format)
    identities = _subset_identities(dataset, args.subset, args.split_seed)
    result = trainer.train(dataset, cfg, out_dir=out_dir, identities=identities)
    (out_dir / "config.txt").write_text(config_to_text(cfg))
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"epochs: {len(result.loss_rows)}, final pos/neg loss: "
          f"{result.loss_rows[-1]['pos_loss']:.4f}/{result.loss_rows[-1]['neg_loss']:.4f}"
          if result.loss_rows else "epochs: 0")
    return 0


def _cmd_eval(args, out_dir: Path) -> int:
    cfg = _resolve_config(args)
    dataset = load_dataset(args.data, args.format)

    if args.protocol:
        cache = trainer.TrackCache(dataset, dataset.eligible_identities())

        def train_fn(split, run_seed):
            run_cfg = replace(cfg, seed=run_seed)
            return trainer.train(dataset, run_cfg, identities=split.train, cache=cache).model

        result = evalcmc.evaluate_protocol(dataset, train_fn, runs=args.runs, seed=cfg.seed, cache=cache)
        evalcmc.write_cmc_csv(out_dir / "cmc.csv", result.per_run)
        table = evalcmc.format_summary_table({f"{args.runs}-run mean": result})
        (out_dir / "summary.txt").write_text(table)
        evalcmc.write_summary_csv(out_dir / "summary.csv", {f"mean_{args.runs}_runs": result})
        print(table, end="")
        return 0

    if not args.checkpoint:
        raise ValueError("eval needs --checkpoint, or --protocol to train per run")
    model = EmbeddingModel.load(args.checkpoint, dtype=cfg.dtype, expect_hops=None)
    identities = _subset_identities(dataset, args.subset, args.split_seed)
    cache = trainer.TrackCache(dataset, identities)
    curve, rank_lists = evalcmc.evaluate_split(dataset, model, identities, cache=cache)
    evalcmc.write_cmc_csv(out_dir / "cmc.csv", [curve])
    table = evalcmc.format_summary_table({"eval": evalcmc.ProtocolResult(curve, np.zeros_like(curve.values), [curve])})
    (out_dir / "summary.txt").write_text(table)
    with open(out_dir / "ranklists.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe", "rank", "gallery", "distance"])
        for rl in rank_lists:
            for i, (gid, dist) in enumerate(zip(rl.gallery_identities, rl.distances), start=1):
                writer.writerow([rl.probe_identity, i, gid, f"{dist:.6f}"])
    if args.dump_attention:
        attn_dir = out_dir / "attention"
        attn_dir.mkdir(exist_ok=True)
        for identity in identities:
            emb = evalcmc.embed_track(model, cache.stack(identity, evalcmc.PROBE_CAMERA))
            evalcmc.dump_attention(emb, attn_dir / f"probe_{identity}.csv")
    print(table, end="")
    return 0


def _cmd_ablate(args, out_dir: Path) -> int:
    cfg = _resolve_config(args)
    dataset = load_dataset(args.data, args.format)
    hop_values = tuple(int(tok) for tok in args.hops.split(",") if tok.strip() != "")
    cache = trainer.TrackCache(dataset, dataset.eligible_identities())

    def train_fn(split, run_seed, hops):
        run_cfg = replace(cfg, seed=run_seed, hops=hops)
        return trainer.train(dataset, run_cfg, identities=split.train, cache=cache).model

    results = evalcmc.ablate_hops(
        dataset, train_fn, hop_values=hop_values, runs=args.runs, seed=cfg.seed, cache=cache
    )
    table = evalcmc.format_summary_table(results, label_header="No. of Att. layers")
    (out_dir / "ablation.txt").write_text(table)
    evalcmc.write_summary_csv(out_dir / "ablation.csv", results, label_header="hops")
    for hops, res in results.items():
        evalcmc.write_cmc_csv(out_dir / f"cmc_hops{hops}.csv", res.per_run)
    print(table, end="")
    return 0


def _cmd_synth(args, out_dir: Path) -> int:
    spec = SyntheticSpec(
        identity_count=args.identities,
        frames_per_track=args.frames,
        image_width=args.width,
        image_height=args.height,
        occlusion_prob=args.occlusion,
    )
    seed = args.seed if args.seed is not None else 0
    dataset = generate_synthetic(spec, seed, out_dir)
    n_tracks = sum(len(cams) for cams in dataset.tracks.values())
    print(f"wrote {len(dataset.identities)} identities, {n_tracks} tracks under {out_dir}")
    return 0


def _cmd_flow(args, out_dir: Path) -> int:
    prev = preproc.luma(preproc.load_frame(args.frame_a))
    nxt = preproc.luma(preproc.load_frame(args.frame_b))
    flow = preproc.lucas_kanade_flow(prev, nxt)
    with open(out_dir / "flow.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "u", "v", "degenerate"])
        for r in range(flow.u.shape[0]):
            for c in range(flow.u.shape[1]):
                writer.writerow([r, c, f"{flow.u[r, c]:.6f}", f"{flow.v[r, c]:.6f}", int(flow.degenerate[r, c])])
    magnitude = np.hypot(flow.u, flow.v)
    peak = magnitude.max()
    image = (255 * magnitude / peak).astype(np.uint8) if peak > 0 else np.zeros_like(magnitude, dtype=np.uint8)
    from PIL import Image

    Image.fromarray(image).save(out_dir / "flow_magnitude.png")
    print(f"flow of {flow.u.shape[0]}x{flow.u.shape[1]} grid: "
          f"mean |u|={np.abs(flow.u).mean():.4f}, mean |v|={np.abs(flow.v).mean():.4f}, "
          f"degenerate {flow.degenerate.mean():.1%}")
    return 0


def _cmd_gradcheck(args, out_dir: Path) -> int:
    seed = args.seed if args.seed is not None else 0
    report = standard_op_audit(seed=seed)
    lines = []
    all_ok = True
    for name in sorted(report):
        ok = report[name] < OP_TOLERANCE
        all_ok &= ok
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name:<16s} max_rel_err={report[name]:.3e}  (tol {OP_TOLERANCE:g})")
    if not args.skip_full_net:
        net = trainer.full_network_gradient_check(seed=seed)
        worst = max(net.values())
        ok = worst < NET_TOLERANCE
        all_ok &= ok
        lines.append(f"{'PASS' if ok else 'FAIL'}  full_objective    max_rel_err={worst:.3e}  (tol {NET_TOLERANCE:g})")
    text = "\n".join(lines) + "\n"
    (out_dir / "gradcheck.txt").write_text(text)
    print(text, end="")
    return 0 if all_ok else 1


_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "synth": _cmd_synth,
    "flow": _cmd_flow,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    try:
        code = _HANDLERS[args.verb](args, out_dir)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg_text = ""
    try:
        cfg_text = config_to_text(_resolve_config(args)) if hasattr(args, "config") else json.dumps(vars(args), default=str)
    except Exception:
        cfg_text = json.dumps(sorted(str(v) for v in vars(args).values()))
    _write_run_record(out_dir, args.verb, cfg_text, getattr(args, "seed", None), started)
    return code


if __name__ == "__main__":
    sys.exit(main())
