"""Command-line entry point: ``ridge <command> [options]``.

Output locations can be redirected with ``RIDGE_OUT`` and the worker count
with ``RIDGE_THREADS``; explicit ``--out`` / ``--threads`` flags win.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, RidgeError
from .experiment import Protocol, run_experiment
from .features import truncated_svd_features
from .graph import SsbmConfig, ssbm_generate, triangle_census
from .io import (
    DatasetManifest, ExperimentConfig, atomic_write_text, graph_stats, ingest_soc_sign_report,
    load_arrays, read_edge_list, save_arrays, write_edge_list,
)
from .metrics import evaluate
from .noise import NoiseSpec, perturb
from .trainer import RidgeConfig, RidgeModel, fit, predict

log = logging.getLogger("ridge")


def _out_path(args, default: str) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("RIDGE_OUT")
    return Path(env) if env else Path(default)


def _threads(args, fallback: int = 1) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("RIDGE_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise InvalidConfig(f"RIDGE_THREADS must be an integer, got {env!r}") from None
        if value < 1:
            raise InvalidConfig("RIDGE_THREADS must be positive")
        return value
    return fallback


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> None:
    g, rep = ingest_soc_sign_report(args.path)
    if args.manifest:
        DatasetManifest.load(args.manifest).verify(g)
    out = _out_path(args, "edges.csv")
    write_edge_list(g, out)
    _emit({"out": str(out), **graph_stats(g), **rep.to_dict()})


def cmd_perturb(args) -> None:
    g = read_edge_list(args.graph)
    spec = NoiseSpec(args.kind, args.gamma, args.polarity, args.seed)
    noisy, receipt = perturb(g, spec)
    out = _out_path(args, "perturbed.csv")
    write_edge_list(noisy, out)
    atomic_write_text(out.with_suffix(".receipt.json"), json.dumps(receipt.to_dict(), indent=2, sort_keys=True))
    _emit({"out": str(out), **receipt.to_dict()})


def cmd_features(args) -> None:
    g = read_edge_list(args.graph)
    feats = truncated_svd_features(g, args.dim, args.oversample, args.power_iters, args.seed, args.scaling)
    out = _out_path(args, "features.blob")
    save_arrays(out, {"values": feats.values, "singular_values": feats.singular_values},
                {"rank": feats.source_rank, "seed": args.seed, "scaling": args.scaling, "n": feats.n})
    _emit({"out": str(out), "n": feats.n, "d": feats.d})


def _ridge_config(args) -> RidgeConfig:
    base = RidgeConfig()
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        allowed = set(base.to_dict())
        unknown = set(cfg) - allowed
        if unknown:
            raise InvalidConfig(f"unknown training config keys: {sorted(unknown)}")
        base = base.replace(**cfg)
    overrides = {k: getattr(args, k) for k in ("alpha", "beta", "tau", "lr", "epochs", "hidden", "layers", "mode")
                 if getattr(args, k) is not None}
    return base.replace(seed=args.seed, **overrides)


def _features(path) -> np.ndarray:
    arrays, _ = load_arrays(path)
    return arrays["values"]


def cmd_train(args) -> None:
    g = read_edge_list(args.graph)
    x = _features(args.features)
    cfg = _ridge_config(args)
    model, traces = fit(g, x, cfg=cfg)
    out = _out_path(args, "run")
    out.mkdir(parents=True, exist_ok=True)
    save_arrays(out / "checkpoint.blob", model.arrays(), {"config": cfg.to_dict(), "in_dim": model.in_dim})
    atomic_write_text(out / "losses.csv", traces.to_csv())
    _emit({"out": str(out), "epochs": len(traces), "final_loss": traces.total[-1] if len(traces) else None})


def load_checkpoint(path) -> RidgeModel:
    arrays, meta = load_arrays(path)
    model = RidgeModel(int(meta["in_dim"]), RidgeConfig(**meta["config"]))
    model.load_arrays(arrays)
    return model


def cmd_eval(args) -> None:
    g = read_edge_list(args.graph)
    test = read_edge_list(args.test)
    model = load_checkpoint(args.checkpoint)
    prob = predict(model, g, _features(args.features), test.src, test.dst)
    scores = evaluate(prob, test.sign, args.threshold)
    out = _out_path(args, "metrics.json")
    atomic_write_text(out, json.dumps(scores, indent=2, sort_keys=True))
    _emit({"out": str(out), **scores})


def cmd_balance(args) -> None:
    g = read_edge_list(args.graph)
    c = triangle_census(g, args.method)
    d3 = round(c.balance_degree, 6) if c.total else float("nan")
    print(f"total={c.total} balanced={c.balanced} unbalanced={c.unbalanced} "
          f"D3={d3} dropped_conflicts={c.dropped_conflicts}")


def cmd_ssbm(args) -> None:
    cfg = SsbmConfig(args.n, args.k, args.p, args.rho, args.flip, args.seed)
    g = ssbm_generate(cfg)
    out = _out_path(args, "ssbm.csv")
    write_edge_list(g, out)
    _emit({"out": str(out), **graph_stats(g)})


def bundled_config(name: str = "ssbm_bench.json") -> Path:
    return Path(str(resources.files("ridge") / "configs" / name))


def cmd_bench(args) -> None:
    cfg_path = Path(args.config) if args.config else bundled_config()
    ec = ExperimentConfig.load(cfg_path)
    ridge = ec.ridge if args.epochs is None else ec.ridge.replace(epochs=args.epochs)
    protocol = Protocol(
        noises=ec.noises, cfg=ridge, seeds=ec.seeds, variants=ec.variants, dataset=ec.name,
        graph=None if ec.ssbm is not None else ec.load_graph(), ssbm=ec.ssbm,
        split_ratio=ec.split_ratio, feature_dim=ec.feature_dim, order=ec.order, threshold=ec.threshold,
    )
    out = Path(args.out) if args.out else Path(os.environ.get("RIDGE_OUT", ec.out))
    report = run_experiment(protocol, workers=_threads(args, ec.threads))
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "metrics.csv", report.to_csv())
    atomic_write_text(out / "metrics.json", report.to_json())
    _emit({"out": str(out), "rows": len(report.rows)})


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ridge", description="Robust signed-graph link sign prediction.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse a soc-sign rating file")
    s.add_argument("path")
    s.add_argument("--manifest", help="dataset manifest whose expected stats must match")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("perturb", parents=[common], help="inject sign-flip / deletion / addition noise")
    s.add_argument("graph")
    s.add_argument("--kind", choices=["flip", "delete", "add"], required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--polarity", choices=["all", "positive", "negative"], default="all")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("features", parents=[common], help="truncated SVD node features")
    s.add_argument("graph")
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--oversample", type=int, default=10)
    s.add_argument("--power-iters", type=int, default=2)
    s.add_argument("--scaling", choices=["sigma", "sqrt", "none"], default="sigma")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", parents=[common], help="fit a model and write checkpoint + loss traces")
    s.add_argument("graph")
    s.add_argument("--features", required=True)
    s.add_argument("--config", help="JSON file with training hyperparameters")
    for name, typ in (("alpha", float), ("beta", float), ("tau", float), ("lr", float),
                      ("epochs", int), ("hidden", int), ("layers", int)):
        s.add_argument(f"--{name}", type=typ, default=None)
    s.add_argument("--mode", choices=["ridge", "plain"], default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score held-out edges with a checkpoint")
    s.add_argument("graph", help="graph the model was trained on")
    s.add_argument("--test", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("balance", parents=[common], help="triangle census and balance degree")
    s.add_argument("graph")
    s.add_argument("--method", choices=["trace", "enumerate"], default="trace")
    s.set_defaults(func=cmd_balance)

    s = sub.add_parser("ssbm", parents=[common], help="generate a signed stochastic block model graph")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--p", type=float, default=0.01)
    s.add_argument("--rho", type=float, default=1.5)
    s.add_argument("--flip", type=float, default=0.0)
    s.set_defaults(func=cmd_ssbm)

    s = sub.add_parser("bench", parents=[common], help="run a full experiment from a config file")
    s.add_argument("config", nargs="?", help="experiment config (default: bundled SSBM benchmark)")
    s.add_argument("--epochs", type=int, default=None, help="override the configured epoch count")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (RidgeError, OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
