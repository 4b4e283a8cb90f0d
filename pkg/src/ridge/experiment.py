"""Multi-run, multi-noise experiment driver.

One run = (variant, noise spec, seed): perturb and split the graph, build SVD
features on the training graph, fit, score the held-out edges. Runs are
independent and seeded, so they can execute in worker processes and still
aggregate to the same report.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, NoTriangles, RidgeError
from .features import truncated_svd_features
from .graph import SignedGraph, SsbmConfig, balance_degree, split_edges, ssbm_generate
from .metrics import METRICS, MetricsReport, evaluate
from .noise import NoiseSpec, perturb
from .trainer import RidgeConfig, cleaned_graph, fit, predict

log = logging.getLogger(__name__)

ORDERS = ("perturb_then_split", "split_then_perturb")

# variant name -> overrides applied to the base config
VARIANTS: dict[str, dict] = {
    "ridge": {},
    "plain": {"mode": "plain", "alpha": 0.0, "beta": 0.0},
    "wo_kly": {"alpha": 0.0},
    "wo_klg": {"beta": 0.0},
    "wo_both": {"alpha": 0.0, "beta": 0.0},
}

CSV_FIELDS = (
    "dataset", "variant", "kind", "polarity", "gamma", "run", "seed",
    *METRICS, "d3_noisy", "d3_cleaned", "kept_edges", "train_edges", "test_edges",
)


def variant_config(base: RidgeConfig, variant: str) -> RidgeConfig:
    if variant not in VARIANTS:
        raise InvalidConfig(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return base.replace(**VARIANTS[variant])


@dataclass
class Protocol:
    """What to run. ``graph`` wins over ``ssbm`` when both are given."""

    noises: list[NoiseSpec]
    cfg: RidgeConfig = field(default_factory=RidgeConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    variants: list[str] = field(default_factory=lambda: ["ridge"])
    dataset: str = "ssbm"
    graph: SignedGraph | None = None
    ssbm: SsbmConfig | None = None
    split_ratio: float = 0.8
    feature_dim: int = 64
    order: str = "perturb_then_split"
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.graph is None and self.ssbm is None:
            raise InvalidConfig("protocol needs a graph or an SSBM config")
        if self.order not in ORDERS:
            raise InvalidConfig(f"order must be one of {ORDERS}, got {self.order!r}")
        if not self.seeds:
            raise InvalidConfig("protocol needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidConfig("seeds must be distinct")
        for v in self.variants:
            variant_config(self.cfg, v)

    def base_graph(self) -> SignedGraph:
        return self.graph if self.graph is not None else ssbm_generate(self.ssbm)


def _d3(g: SignedGraph) -> float:
    try:
        return balance_degree(g)
    except NoTriangles:
        return math.nan


def run_single(protocol: Protocol, graph: SignedGraph, variant: str, spec: NoiseSpec, run: int,
               seed: int, with_traces: bool = False):
    """One seeded run; returns a flat result row, plus the loss traces when asked."""
    cfg = variant_config(protocol.cfg, variant).replace(seed=seed)
    spec = spec.with_seed(seed)
    try:
        if protocol.order == "perturb_then_split":
            noisy, _ = perturb(graph, spec)
            split = split_edges(noisy, protocol.split_ratio, seed)
            train, test = split.train, split.test
        else:
            split = split_edges(graph, protocol.split_ratio, seed)
            train, _ = perturb(split.train, spec)
            test = split.test
        feats = truncated_svd_features(train, protocol.feature_dim, seed=seed)
        model, traces = fit(train, feats, cfg=cfg)
        prob = predict(model, train, feats, test.src, test.dst)
        scores = evaluate(prob, test.sign, protocol.threshold)
        kept = cleaned_graph(model, train, feats)
    except RidgeError as exc:
        raise type(exc)(f"[{protocol.dataset}/{variant}/{spec.kind}-{spec.polarity}-{spec.gamma}/run {run}] {exc}") from exc
    row = {
        "dataset": protocol.dataset, "variant": variant, "kind": spec.kind,
        "polarity": spec.polarity, "gamma": spec.gamma, "run": run, "seed": seed,
        **scores,
        "d3_noisy": _d3(train), "d3_cleaned": _d3(kept),
        "kept_edges": kept.m, "train_edges": train.m, "test_edges": test.m,
    }
    log.info("%s %s gamma=%s run=%d f1=%.4f auc=%.4f", protocol.dataset, variant, spec.gamma, run,
             scores["binary_f1"], scores["auc"])
    return (row, traces) if with_traces else row


def _job(args) -> dict:
    return run_single(*args)


@dataclass
class ExperimentReport:
    rows: list[dict]

    def groups(self) -> dict[tuple, MetricsReport]:
        out: dict[tuple, MetricsReport] = {}
        for r in self.rows:
            key = (r["dataset"], r["variant"], r["kind"], r["polarity"], r["gamma"])
            out.setdefault(key, MetricsReport()).add(r)
        return out

    def summary(self, variant: str, gamma: float | None = None) -> MetricsReport:
        rows = [r for r in self.rows if r["variant"] == variant and (gamma is None or r["gamma"] == gamma)]
        if not rows:
            raise KeyError(f"no rows for variant={variant!r} gamma={gamma!r}")
        return MetricsReport.from_runs(rows)

    def mean_column(self, column: str, variant: str, gamma: float | None = None) -> float:
        vals = [r[column] for r in self.rows if r["variant"] == variant and (gamma is None or r["gamma"] == gamma)]
        return float(np.nanmean(vals))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{r[k]:.10f}" if isinstance(r[k], float) else r[k]) for k in CSV_FIELDS})
        return buf.getvalue()

    def to_json(self) -> str:
        groups = []
        for (dataset, variant, kind, polarity, gamma), rep in self.groups().items():
            groups.append({"dataset": dataset, "variant": variant, "kind": kind, "polarity": polarity,
                           "gamma": gamma, **rep.to_dict()})
        clean = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()} for r in self.rows]
        return json.dumps({"groups": groups, "rows": clean}, indent=2, sort_keys=True)


def run_experiment(protocol: Protocol, workers: int = 1) -> ExperimentReport:
    """Run every (variant, noise, seed) combination; rows come back in a fixed order."""
    graph = protocol.base_graph()
    jobs = [
        (protocol, graph, variant, spec, run, seed)
        for variant in protocol.variants
        for spec in protocol.noises
        for run, seed in enumerate(protocol.seeds)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    return ExperimentReport(rows)
