"""``maskpoint`` command-line front end.

Exit status: 0 on success, 1 on a usage error, 2 on a runtime or data error.
Commands that write files require ``--out`` and write only inside it.
"""
import argparse
import datetime
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import geometry, io, pipeline
from .checkpoint import load_checkpoint
from .errors import FormatError, InputError, NonFiniteError, ParseError
from .gradcheck import check_ops, check_pretrain_graph
from .model import MaskPointModel

OP_TOL = 1e-6
GRAPH_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {value}")
    return value


def _common(p, out=False, ckpt=False):
    p.add_argument("--config", metavar="PATH", help="flat key = value run configuration")
    p.add_argument("--seed", type=_seed, help="overrides the config seed")
    p.add_argument("--out", metavar="DIR", required=out, help="output directory")
    if ckpt:
        p.add_argument("--ckpt", metavar="PATH", help="checkpoint; omitted means a randomly initialized encoder")


def _mask_flags(p):
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--mask-type", choices=("random", "block"))
    p.add_argument("--n-queries", type=int)


def build_parser():
    parser = _Parser(prog="maskpoint", description="Masked point discrimination pretraining toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write the synthetic train/test set")
    _common(p, out=True)

    p = sub.add_parser("pretrain", help="run discrimination pretraining")
    _common(p, out=True)
    _mask_flags(p)

    for name, help_text in (("probe", "linear probe on a frozen encoder"),
                            ("classify", "full finetune of encoder and head")):
        p = sub.add_parser(name, help=help_text)
        _common(p, ckpt=True)

    p = sub.add_parser("reconstruct", help="occupancy-probe reconstruction to PLY")
    _common(p, out=True)
    p.add_argument("--ckpt", metavar="PATH", required=True)
    p.add_argument("--mask-ratio", type=float, default=0.9)
    p.add_argument("--mask-type", choices=("random", "block"), default="random")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--probe-samples", type=int, default=4096)
    p.add_argument("cloud", nargs="?", help=".xyz/.ply/.off input; default: first held-out cloud")

    p = sub.add_parser("ablate", help="pretrain + probe along one ablation axis")
    _common(p, out=True)
    p.add_argument("--axis", required=True, choices=pipeline.ABLATION_AXES)
    p.add_argument("--values", help="comma-separated values; default: the reference grid")

    p = sub.add_parser("chamfer", help="CD-L2 between two point-cloud files")
    p.add_argument("a")
    p.add_argument("b")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--coords", type=int, default=200, help="parameter coordinates for the model check")
    p.add_argument("--seed", type=_seed, default=0)
    return parser


# ----------------------------------------------------------------- helpers


def resolve_config(args):
    cfg = pipeline.TrainConfig()
    if getattr(args, "config", None):
        cfg = config_mod.load_config(args.config, cfg)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    mask = {}
    if getattr(args, "mask_ratio", None) is not None and args.command == "pretrain":
        mask["ratio"] = args.mask_ratio
    if getattr(args, "mask_type", None) is not None and args.command == "pretrain":
        mask["mode"] = args.mask_type
    if getattr(args, "n_queries", None) is not None:
        mask["n_queries"] = args.n_queries
    if mask:
        cfg = replace(cfg, mask=replace(cfg.mask, **mask))
    return cfg


def write_manifest(out_dir, cfg, command, artifacts):
    """``manifest.txt``: the resolved config plus run metadata as ``#`` comments.

    The file is itself a valid ``--config`` input.
    """
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    head = [f"# command = {command}", f"# start_time = {stamp}"]
    head += [f"# artifact {name} = {os.path.join(out_dir, path)}" for name, path in artifacts.items()]
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(head) + "\n" + config_mod.format_config(cfg))
    return path


def _load_source(args, cfg):
    if args.ckpt:
        return load_checkpoint(args.ckpt)
    return MaskPointModel(cfg.model, seed=cfg.seed)


def _parse_values(axis, text):
    if text is None:
        return list(pipeline.REFERENCE_ABLATION[axis])
    parts = [s.strip() for s in text.split(",") if s.strip()]
    if axis == "mask_ratio":
        return [float(s) for s in parts]
    if axis == "mask_type":
        return parts
    return [int(s) for s in parts]


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, out):
    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, cfg, "gen-data", {"dataset": "dataset.npz"})
    tr_x, tr_y, te_x, te_y = pipeline.dataset_for(cfg)
    with open(os.path.join(args.out, "dataset.npz"), "wb") as f:
        np.savez(f, train_clouds=tr_x, train_labels=tr_y, test_clouds=te_x, test_labels=te_y)
    out.write(f"wrote {len(tr_y)} train and {len(te_y)} test clouds to {args.out}\n")


def cmd_pretrain(args, out):
    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, cfg, "pretrain", {"metrics": "metrics.csv", "checkpoint": "checkpoint.mpt"})
    total, _ = cfg.schedule()

    def progress(row):
        if row["step"] % 50 == 0 or row["step"] == total:
            out.write(f"step {row['step']}/{total} loss {row['loss']:.4f} "
                      f"acc_real {row['acc_real']:.3f} acc_fake {row['acc_fake']:.3f}\n")

    result = pipeline.pretrain(cfg, out_dir=args.out, progress=progress)
    held = pipeline.evaluate_pretrain(result.model, result.dataset[2], cfg.mask, cfg.loss, seed=cfg.seed)
    out.write(f"held-out query accuracy {held['accuracy']:.4f}\n")


def _cmd_finetune(args, out, mode):
    cfg = resolve_config(args)
    dataset = pipeline.dataset_for(cfg)
    probe_cfg = replace(pipeline.ProbeConfig(), seed=cfg.seed)
    acc = pipeline.finetune_classify(_load_source(args, cfg), dataset, mode, probe_cfg)
    out.write(f"{mode} accuracy {acc:.4f}\n")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{mode}.csv"), "w", encoding="utf-8", newline="\n") as f:
            f.write(f"mode,accuracy\n{mode},{acc!r}\n")


def cmd_reconstruct(args, out):
    cfg = resolve_config(args)
    if args.cloud:
        cloud = io.read_cloud(args.cloud)
    else:
        cloud = pipeline.dataset_for(cfg)[2][0]
    recon = pipeline.reconstruct(load_checkpoint(args.ckpt), cloud, mask_ratio=args.mask_ratio,
                                 n_probe=args.probe_samples, threshold=args.threshold, seed=cfg.seed,
                                 mask_mode=args.mask_type)
    os.makedirs(args.out, exist_ok=True)
    keep = recon.probabilities >= args.threshold
    io.write_cloud(os.path.join(args.out, "reconstruction.ply"), recon.probes[keep], recon.probabilities[keep])
    io.write_cloud(os.path.join(args.out, "input.ply"), cloud)
    if len(recon.points):
        out.write(f"kept {len(recon.points)}/{len(recon.probes)} probes; "
                  f"chamfer_l2 {geometry.chamfer_l2(recon.points, cloud)!r}\n")
    else:
        out.write(f"no probe reached threshold {args.threshold}\n")


def cmd_ablate(args, out):
    cfg = resolve_config(args)
    values = _parse_values(args.axis, args.values)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, cfg, f"ablate {args.axis}", {"table": "ablation.csv"})
    _, text = pipeline.ablate(cfg, args.axis, values, replace(pipeline.ProbeConfig(), seed=cfg.seed))
    with open(os.path.join(args.out, "ablation.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    out.write(text)


def cmd_chamfer(args, out):
    out.write(f"{geometry.chamfer_l2(io.read_cloud(args.a), io.read_cloud(args.b))!r}\n")


def cmd_gradcheck(args, out):
    ops = check_ops(seed=args.seed)
    ok = True
    for name, err in ops.items():
        flag = "ok" if err < OP_TOL else "FAIL"
        ok &= err < OP_TOL
        out.write(f"{name:20s} {err:.3e} {flag}\n")
    graph = check_pretrain_graph(n_coords=args.coords, seed=args.seed)
    ok &= graph.max_rel_error < GRAPH_TOL
    out.write(f"{'pretrain_graph':20s} {graph.max_rel_error:.3e} "
              f"{'ok' if graph.max_rel_error < GRAPH_TOL else 'FAIL'} ({graph.n_coords} coordinates)\n")
    out.write(f"overall max op error {max(ops.values()):.3e}; {'PASS' if ok else 'FAIL'}\n")
    return 0 if ok else 2


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "probe": lambda a, o: _cmd_finetune(a, o, "linear_probe"),
    "classify": lambda a, o: _cmd_finetune(a, o, "full"),
    "reconstruct": cmd_reconstruct,
    "ablate": cmd_ablate,
    "chamfer": cmd_chamfer,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None, out=None, err=None):
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        status = COMMANDS[args.command](args, out)
    except (InputError, ParseError, FormatError, NonFiniteError, pipeline.TrainingDiverged, OSError) as exc:
        err.write(f"maskpoint {args.command}: error: {exc}\n")
        return 2
    return 0 if status is None else status


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
