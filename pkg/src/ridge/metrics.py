"""Link-sign prediction metrics and multi-run aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import SingleClass

METRICS = ("auc", "binary_f1", "macro_f1", "micro_f1")


def _positive(truth) -> np.ndarray:
    t = np.asarray(truth)
    return t > 0


def auc(scores, truth) -> float:
    """Mann-Whitney AUC: P(score of a random positive > a random negative), ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    pos = _positive(truth)
    if s.shape != pos.shape:
        raise ValueError(f"scores {s.shape} and truth {pos.shape} differ in shape")
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"AUC needs both classes ({n_pos} positive, {n_neg} negative)")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


@dataclass(frozen=True)
class F1Scores:
    binary: float
    macro: float
    micro: float
    # classes whose F1 was undefined (no predictions and no support) and set to 0
    undefined: tuple[str, ...] = ()


def f1_family(pred, truth) -> F1Scores:
    """Binary (positive class), macro and micro F1 for hard +-1 predictions."""
    p, t = _positive(pred), _positive(truth)
    if p.shape != t.shape:
        raise ValueError(f"pred {p.shape} and truth {t.shape} differ in shape")
    if p.size == 0:
        raise ValueError("f1_family needs at least one prediction")
    tp = int((p & t).sum())
    tn = int((~p & ~t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    f_pos = _f1(tp, fp, fn)
    f_neg = _f1(tn, fn, fp)
    undefined = tuple(name for name, c in (("positive", tp + fp + fn), ("negative", tn + fn + fp)) if c == 0)
    micro = (tp + tn) / p.size
    return F1Scores(f_pos, (f_pos + f_neg) / 2.0, micro, undefined)


def hard_signs(prob_pos, threshold: float = 0.5) -> np.ndarray:
    return np.where(np.asarray(prob_pos) >= threshold, 1, -1).astype(np.int8)


def evaluate(prob_pos, truth, threshold: float = 0.5) -> dict[str, float]:
    """All four metrics for one run."""
    f = f1_family(hard_signs(prob_pos, threshold), truth)
    return {"auc": auc(prob_pos, truth), "binary_f1": f.binary, "macro_f1": f.macro, "micro_f1": f.micro}


@dataclass
class MetricsReport:
    """Per-run metric values with mean and sample standard deviation."""

    runs: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in METRICS})

    @classmethod
    def from_runs(cls, per_run: list[dict[str, float]]) -> "MetricsReport":
        rep = cls()
        for r in per_run:
            rep.add(r)
        return rep

    def add(self, values: dict[str, float]) -> None:
        for k in METRICS:
            v = float(values[k])
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{k}={v} outside [0, 1]")
            self.runs[k].append(v)

    @property
    def run_count(self) -> int:
        return len(self.runs["auc"])

    def mean(self, metric: str) -> float:
        return float(np.mean(self.runs[metric]))

    def std(self, metric: str) -> float:
        vals = self.runs[metric]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "run_count": self.run_count,
            "runs": {k: list(v) for k, v in self.runs.items()},
            "mean": {k: self.mean(k) for k in METRICS},
            "std": {k: self.std(k) for k in METRICS},
        }
