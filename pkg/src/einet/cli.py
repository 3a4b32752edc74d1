"""Command-line interface.

Subcommands: ``train``, ``eval``, ``sample``, ``inpaint``, ``bench`` and a
CI-oriented ``oracle-check``. Exit codes: 0 success, 1 runtime failure,
2 usage error. Option precedence: command-line flags beat the JSON config
file (``--config``), which beats built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import bench as bench_mod
from . import oracle
from .builders import make_family, make_structure
from .model import build_model
from .modelio import (load_dataset, load_model, save_model, write_pgm_grid)
from .trainer import TrainerConfig, train

TRAIN_DEFAULTS = {
    "structure": "rat", "depth": 2, "replica": 4, "k": 8, "k_root": 1,
    "height": None, "width": None, "delta": "1", "axes": "both",
    "family": "gaussian", "num_states": 2, "n_trials": 255,
    "image_mode": False, "mode": "stochastic", "step_size": 0.5,
    "batch": 500, "epochs": 10, "seed": 0, "normalize": None,
}


def _add_train(sub):
    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--valid")
    p.add_argument("--output", default="model.einm")
    p.add_argument("--metrics")
    p.add_argument("--dump-plan", dest="dump_plan")
    p.add_argument("--config")
    p.add_argument("--structure", choices=["rat", "pd"])
    p.add_argument("--depth", type=int)
    p.add_argument("--replica", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--k-root", dest="k_root", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--delta", help="comma-separated step sizes")
    p.add_argument("--axes", choices=["vertical", "horizontal", "both"])
    p.add_argument("--family", choices=["gaussian", "categorical", "binomial"])
    p.add_argument("--num-states", dest="num_states", type=int)
    p.add_argument("--n-trials", dest="n_trials", type=int)
    p.add_argument("--image-mode", dest="image_mode", action="store_const",
                   const=True)
    p.add_argument("--mode", choices=["full", "stochastic"])
    p.add_argument("--lambda", dest="step_size", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", action="store_const", const=True)
    p.add_argument("--no-normalize", dest="normalize", action="store_const",
                   const=False)


def _merged_train_options(args):
    opts = dict(TRAIN_DEFAULTS)
    if args.config:
        with open(args.config) as f:
            file_opts = json.load(f)
        unknown = set(file_opts) - set(TRAIN_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        opts.update(file_opts)
    for key in TRAIN_DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            opts[key] = v
    return opts


def _cmd_train(args):
    o = _merged_train_options(args)
    data = load_dataset(args.data, normalize=o["normalize"])
    valid = load_dataset(args.valid, normalize=o["normalize"]) \
        if args.valid else None
    deltas = tuple(int(d) for d in str(o["delta"]).split(","))
    family = make_family(o["family"], num_states=o["num_states"],
                         n_trials=o["n_trials"], image_mode=o["image_mode"])
    rg = make_structure(o["structure"], d_vars=data.shape[1],
                        depth=o["depth"], replicas=o["replica"],
                        seed=o["seed"], height=o["height"], width=o["width"],
                        deltas=deltas, axes=o["axes"])
    provenance = {k: o[k] for k in ("structure", "depth", "replica", "k",
                                    "height", "width", "delta", "axes",
                                    "mode", "step_size", "batch", "epochs",
                                    "seed", "image_mode")}
    model = build_model(rg, family, k=o["k"], k_root=o["k_root"],
                        seed=o["seed"], data=data, provenance=provenance)
    if args.dump_plan:
        with open(args.dump_plan, "w") as f:
            f.write(model.circuit.plan_json())
    cfg = TrainerConfig(mode=o["mode"], step_size=o["step_size"],
                        batch_size=o["batch"], epochs=o["epochs"],
                        seed=o["seed"])
    metrics = train(model, data, cfg, valid=valid)
    save_model(args.output, model)
    if args.metrics:
        with open(args.metrics, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_ll", "valid_ll", "wall_seconds"])
            for m in metrics:
                w.writerow([m.epoch, repr(m.train_ll), repr(m.valid_ll),
                            f"{m.wall_seconds:.6f}"])
    last = metrics[-1]
    print(f"trained {cfg.epochs} epochs; final train ll {last.train_ll:.6f}; "
          f"model written to {args.output}")
    return 0


def _cmd_eval(args):
    model = load_model(args.model)
    data = load_dataset(args.data, normalize=args.normalize)
    if data.shape[1] != model.d_vars:
        raise ValueError(f"data has {data.shape[1]} variables, "
                         f"model expects {model.d_vars}")
    ll = model.log_likelihood(data)
    if args.per_sample:
        np.savetxt(args.per_sample, ll)
    print(f"mean log-likelihood {np.mean(ll):.6f} over {len(ll)} samples "
          f"(total {np.sum(ll):.6f})")
    return 0


def _image_shape(model):
    h = model.provenance.get("height")
    w = model.provenance.get("width")
    if not h or not w:
        raise ValueError("model carries no image dimensions; "
                         "PGM output needs a pd-structured image model")
    return int(h), int(w)


def _to_u8(rows, model):
    scale = 255.0 if model.provenance.get("image_mode") else 1.0
    return np.clip(np.round(rows * scale), 0, 255).astype(np.uint8)


def _cmd_sample(args):
    model = load_model(args.model)
    rows = model.sample(args.n, seed=args.seed)
    if args.format == "pgm":
        h, w = _image_shape(model)
        write_pgm_grid(args.output, _to_u8(rows, model).reshape(-1, h, w),
                       cols=args.cols)
    else:
        np.savetxt(args.output, rows, delimiter=",")
    print(f"wrote {args.n} samples to {args.output}")
    return 0


def _covered_pixels(cover, h, w):
    idx = np.arange(h * w)
    cols, rows = idx % w, idx // w
    if cover == "left-half":
        return set(idx[cols < w // 2].tolist())
    if cover == "top-half":
        return set(idx[rows < h // 2].tolist())
    raise ValueError(f"unknown cover spec {cover!r}")


def _cmd_inpaint(args):
    model = load_model(args.model)
    data = load_dataset(args.data, normalize=args.normalize)
    if data.shape[1] != model.d_vars:
        raise ValueError(f"data has {data.shape[1]} variables, "
                         f"model expects {model.d_vars}")
    h, w = _image_shape(model)
    covered = _covered_pixels(args.cover, h, w)
    evidence = set(range(h * w)) - covered
    out = np.stack([
        model.conditional_sample(row, evidence, 1, seed=args.seed + i)[0]
        for i, row in enumerate(data)])
    if args.format == "pgm":
        write_pgm_grid(args.output, _to_u8(out, model).reshape(-1, h, w),
                       cols=args.cols)
    else:
        np.savetxt(args.output, out, delimiter=",")
    print(f"inpainted {len(out)} images to {args.output}")
    return 0


def _ints(text):
    return [int(v) for v in text.split(",")] if text else []


def _cmd_bench(args):
    if args.threads:
        import threadpoolctl
        threadpoolctl.threadpool_limits(args.threads)
    rows = bench_mod.run_bench(
        k_list=_ints(args.k_list), depth_list=_ints(args.d_list),
        replica_list=_ints(args.r_list), batch=args.batch,
        d_vars=args.n_vars, seed=args.seed,
        include_oracle=not args.no_oracle)
    bench_mod.write_report(args.output, rows)
    print(f"wrote {len(rows)} rows to {args.output}")
    return 0


def _cmd_oracle_check(args):
    worst, failures = oracle.oracle_check(args.fixtures, seed=args.seed,
                                          tol=args.tol)
    print(f"{args.fixtures} fixtures, max |engine - oracle| = {worst:.3e}")
    if failures:
        print(f"FAILED fixtures: {failures}")
        return 1
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="einet",
        description="Tensorized probabilistic circuits: training and inference")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_train(sub)

    p = sub.add_parser("eval", help="mean log-likelihood of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--per-sample", dest="per_sample")
    p.add_argument("--normalize", action="store_const", const=True)

    p = sub.add_parser("sample", help="draw samples from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="samples.csv")
    p.add_argument("--format", choices=["csv", "pgm"], default="csv")
    p.add_argument("--cols", type=int)

    p = sub.add_parser("inpaint", help="reconstruct covered image parts")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cover", required=True, choices=["left-half", "top-half"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="inpainted.csv")
    p.add_argument("--format", choices=["csv", "pgm"], default="csv")
    p.add_argument("--cols", type=int)
    p.add_argument("--normalize", action="store_const", const=True)

    p = sub.add_parser("bench", help="engine vs oracle scaling benchmark")
    p.add_argument("--k-list", dest="k_list", default="")
    p.add_argument("--d-list", dest="d_list", default="")
    p.add_argument("--r-list", dest="r_list", default="")
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--n-vars", dest="n_vars", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="bench.csv")
    p.add_argument("--threads", type=int)
    p.add_argument("--no-oracle", action="store_true")

    p = sub.add_parser("oracle-check")  # CI hook, intentionally undocumented
    p.add_argument("--fixtures", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)

    return parser


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sample": _cmd_sample,
    "inpaint": _cmd_inpaint,
    "bench": _cmd_bench,
    "oracle-check": _cmd_oracle_check,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - uniform nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
