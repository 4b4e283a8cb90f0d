"""Joint input/target denoising training loop.

Per epoch: mask features, score observed edges with the weight-shared
sampler, draw a clean sub-adjacency and a clean label subset, encode the
sampled graph into Gaussian edge codes and minimise

    L = L_cls + alpha * KL_Y + beta * KL_G

where KL_Y is the per-edge Bernoulli KL of the sampler scores against a
constant ``tau`` and KL_G the Gaussian KL of the edge codes against N(0, I).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import (
    EncoderParams,
    SignedIndex,
    classify_edges,
    edge_representation,
    encode_nodes,
    pair_scores,
    positive_probability,
)
from .errors import EmptyLabelSet, InvalidConfig, NonFiniteLoss, ShapeMismatch
from .features import FeatureMatrix
from .graph import SignedGraph

log = logging.getLogger(__name__)

LOGIT_CLIP = 20.0
_P_EPS = 1e-12
MODES = ("ridge", "plain")


@dataclass(frozen=True)
class RidgeConfig:
    alpha: float = 1.0
    beta: float = 0.01
    tau: float = 0.8
    lr: float = 0.01
    epochs: int = 1000
    hidden: int = 64
    layers: int = 4
    seed: int = 0
    # "plain": no masking, every edge and label kept, deterministic codes, no KL terms
    mode: str = "ridge"
    mask_temperature: float = 1.0
    mask_init: float = 2.0

    def __post_init__(self) -> None:
        if not 0 < self.tau < 1:
            raise InvalidConfig(f"tau must be in (0, 1), got {self.tau}")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidConfig("alpha and beta must be non-negative")
        if self.lr <= 0 or self.epochs < 0:
            raise InvalidConfig("lr must be positive and epochs non-negative")
        if self.mode not in MODES:
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        if self.mask_temperature <= 0:
            raise InvalidConfig("mask_temperature must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "RidgeConfig":
        return RidgeConfig(**{**asdict(self), **kw})


# ---------------------------------------------------------------- feature masking

class MaskState:
    def __init__(self, d: int, init: float = 2.0, temperature: float = 1.0):
        self.logits = ad.parameter(np.full(d, float(init)))
        self.temperature = temperature

    def relaxed(self) -> Tensor:
        return ad.sigmoid(ad.mul(self.logits, 1.0 / self.temperature))

    def hard(self) -> np.ndarray:
        return (ad._sigmoid(self.logits.data / self.temperature) >= 0.5).astype(np.float64)


def resample_columns(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw every entry independently from its column's empirical distribution."""
    n, d = x.shape
    rows = rng.integers(0, n, size=(n, d))
    return x[rows, np.arange(d)]


def mask_features(mask, x, rng: np.random.Generator | None = None, hard: bool = False,
                  resample: np.ndarray | None = None) -> Tensor:
    """``X_c = X_r + (X - X_r) * M``.

    ``mask`` is a :class:`MaskState` (relaxed mask, or the thresholded one with
    ``hard=True``) or an explicit length-d array. ``X_r`` is ``resample`` when
    given, otherwise a column-wise bootstrap drawn from ``rng``, otherwise the
    column means.
    """
    x = np.asarray(x.values if isinstance(x, FeatureMatrix) else x, dtype=np.float64)
    if isinstance(mask, MaskState):
        m = Tensor(mask.hard()) if hard else mask.relaxed()
    else:
        m = ad.as_tensor(np.asarray(mask, dtype=np.float64))
    if m.shape != (x.shape[1],):
        raise ShapeMismatch(f"mask {m.shape} vs feature dim {x.shape[1]}")
    if resample is not None:
        xr = np.asarray(resample, dtype=np.float64)
    elif rng is not None:
        xr = resample_columns(x, rng)
    else:
        xr = np.broadcast_to(x.mean(axis=0), x.shape)
    # M*X + (1-M)*X_r: algebraically the same mix, but exact at M in {0, 1}
    return ad.add(ad.mul(x, m), ad.mul(xr, ad.sub(1.0, m)))


# ---------------------------------------------------------------- substructure sampling

def sample_substructure(p_a: Tensor, p_y: Tensor, rng: np.random.Generator | None = None,
                        mode: str = "train") -> tuple[Tensor, Tensor, bool]:
    """Keep indicators for the adjacency support and the label support.

    Training draws independent Bernoulli(P) keeps with straight-through
    gradients; evaluation keeps ``P >= 0.5``. An empty label subset falls back
    to the single highest-scoring label. Returns ``(keep_a, keep_y, fell_back)``.
    """
    if mode == "train":
        if rng is None:
            raise ValueError("training-mode sampling needs an rng")
        keep_a = ad.bernoulli_st(p_a, rng.random(p_a.shape))
        keep_y = ad.bernoulli_st(p_y, rng.random(p_y.shape))
    elif mode == "eval":
        keep_a = ad.threshold_st(p_a)
        keep_y = ad.threshold_st(p_y)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    fell_back = False
    if p_y.size and keep_y.data.sum() == 0:
        top = np.zeros(p_y.shape)
        top[int(np.argmax(p_y.data))] = 1.0
        keep_y = ad.add(keep_y, top)
        fell_back = True
    return keep_a, keep_y, fell_back


# ---------------------------------------------------------------- losses

def edge_cross_entropy(logits: Tensor, signs) -> Tensor:
    """Per-edge cross-entropy; column 0 of ``logits`` is the positive class."""
    s = np.where(np.asarray(signs) > 0, 1.0, -1.0)[:, None]
    clipped = ad.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)
    margin = ad.sub(ad.slice(clipped, 1, 2, axis=1), ad.slice(clipped, 0, 1, axis=1))
    return ad.sum(ad.softplus(ad.mul(margin, s)), axis=1)


def loss_cls(logits: Tensor, signs, keep: Tensor | None = None) -> Tensor:
    """Mean cross-entropy over the kept labels (all labels when ``keep`` is None)."""
    if logits.shape[0] == 0:
        raise EmptyLabelSet("no labelled edges")
    per_edge = edge_cross_entropy(logits, signs)
    if keep is None:
        return ad.mean(per_edge)
    if keep.data.sum() <= 0:
        raise EmptyLabelSet("sampled label subset is empty")
    return ad.div(ad.sum(ad.mul(per_edge, keep)), ad.sum(keep))


def loss_kl_y(p: Tensor, tau: float) -> Tensor:
    """Mean over edges of KL(Bernoulli(P_ij) || Bernoulli(tau))."""
    p = ad.clip(ad.as_tensor(p), _P_EPS, 1.0 - _P_EPS)
    q = ad.sub(1.0, p)
    kl = ad.add(ad.mul(p, ad.log(ad.mul(p, 1.0 / tau))), ad.mul(q, ad.log(ad.mul(q, 1.0 / (1.0 - tau)))))
    return ad.mean(kl)


def loss_kl_g(mu: Tensor, sigma: Tensor) -> Tensor:
    """Mean over edges of KL(N(mu, diag sigma^2) || N(0, I))."""
    mu, sigma = ad.as_tensor(mu), ad.as_tensor(sigma)
    var = ad.square(sigma)
    per = ad.sub(ad.add(ad.square(mu), var), ad.add(ad.log(var), 1.0))
    return ad.mean(ad.mul(ad.sum(per, axis=1), 0.5))


@dataclass
class CleanedBatch:
    x_c: Tensor
    keep_a: Tensor | None
    keep_y: Tensor | None
    p_a: Tensor | None
    p_y: Tensor | None


@dataclass
class LossTerms:
    cls: Tensor
    kl_y: Tensor
    kl_g: Tensor
    total: Tensor


def total_loss(cls_term: Tensor, kl_y: Tensor, kl_g: Tensor, cfg: RidgeConfig) -> Tensor:
    if cfg.alpha == 0 and cfg.beta == 0:
        return cls_term
    return ad.add(cls_term, ad.add(ad.mul(kl_y, cfg.alpha), ad.mul(kl_g, cfg.beta)))


# ---------------------------------------------------------------- model

class RidgeModel:
    def __init__(self, in_dim: int, cfg: RidgeConfig):
        self.cfg = cfg
        self.in_dim = in_dim
        self.encoder = EncoderParams(in_dim, cfg.hidden, cfg.layers, cfg.seed)
        self.mask = MaskState(in_dim, cfg.mask_init, cfg.mask_temperature)

    def parameters(self) -> list[Tensor]:
        params = list(self.encoder.tensors.values())
        if self.cfg.mode == "ridge":
            params.append(self.mask.logits)
        return params

    def arrays(self) -> dict[str, np.ndarray]:
        out = self.encoder.arrays()
        out["mask_logits"] = self.mask.logits.data.copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.encoder.load_arrays(arrays)
        self.mask.logits.data[...] = arrays["mask_logits"]


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class LossTraces:
    cls: list[float] = field(default_factory=list)
    kl_y: list[float] = field(default_factory=list)
    kl_g: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    kept_edges: list[int] = field(default_factory=list)
    kept_labels: list[int] = field(default_factory=list)

    COLUMNS = ("epoch", "cls", "kl_y", "kl_g", "total", "kept_edges", "kept_labels")

    def __len__(self) -> int:
        return len(self.total)

    def append(self, terms: LossTerms, kept_edges: int, kept_labels: int) -> None:
        self.cls.append(terms.cls.item())
        self.kl_y.append(terms.kl_y.item())
        self.kl_g.append(terms.kl_g.item())
        self.total.append(terms.total.item())
        self.kept_edges.append(kept_edges)
        self.kept_labels.append(kept_labels)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for i in range(len(self)):
            w.writerow([i, repr(self.cls[i]), repr(self.kl_y[i]), repr(self.kl_g[i]), repr(self.total[i]),
                        self.kept_edges[i], self.kept_labels[i]])
        return buf.getvalue()


class _Problem:
    """Static per-fit data: message index, supports, labels."""

    def __init__(self, graph: SignedGraph, labels: SignedGraph):
        if labels.node_count != graph.node_count:
            raise ShapeMismatch("label graph and input graph must share the node set")
        self.graph = graph
        self.labels = labels
        self.index = SignedIndex.from_graph(graph)
        self.same_support = (
            labels.m == graph.m
            and np.array_equal(labels.src, graph.src)
            and np.array_equal(labels.dst, graph.dst)
        )


def _forward(model: RidgeModel, prob: _Problem, x: np.ndarray, rng: np.random.Generator | None,
             training: bool) -> tuple[LossTerms, CleanedBatch, Tensor]:
    cfg, enc = model.cfg, model.encoder
    labels = prob.labels
    if cfg.mode == "plain":
        x_c = Tensor(x)
        z = encode_nodes(enc, prob.index, x_c)
        rep = edge_representation(enc, z, labels.src, labels.dst, None)
        logits = classify_edges(enc, rep)
        cls_term = loss_cls(logits, labels.sign)
        zero = Tensor(0.0)
        return LossTerms(cls_term, zero, zero, cls_term), CleanedBatch(x_c, None, None, None, None), logits

    if training:
        x_c = mask_features(model.mask, x, rng)
    else:
        x_c = mask_features(model.mask, x, hard=True)
    z_phi = encode_nodes(enc, prob.index, x_c)
    p_a = pair_scores(z_phi, prob.graph.src, prob.graph.dst)
    p_y = p_a if prob.same_support else pair_scores(z_phi, labels.src, labels.dst)
    keep_a, keep_y, _ = sample_substructure(p_a, p_y, rng, "train" if training else "eval")
    z = encode_nodes(enc, prob.index, x_c, keep_a)
    noise = rng.standard_normal((labels.m, cfg.hidden)) if training else None
    rep = edge_representation(enc, z, labels.src, labels.dst, noise)
    logits = classify_edges(enc, rep)
    cls_term = loss_cls(logits, labels.sign, keep_y)
    kl_y = loss_kl_y(p_a, cfg.tau)
    kl_g = loss_kl_g(rep.mu, rep.sigma)
    terms = LossTerms(cls_term, kl_y, kl_g, total_loss(cls_term, kl_y, kl_g, cfg))
    return terms, CleanedBatch(x_c, keep_a, keep_y, p_a, p_y), logits


def loss_closure(model: RidgeModel, graph: SignedGraph, features, labels: SignedGraph | None = None,
                 seed: int = 0):
    """Deterministic ``() -> total loss`` for gradient checking (fixed resample, sampling and noise draws)."""
    prob = _Problem(graph, labels if labels is not None else graph)
    x = np.asarray(features.values if isinstance(features, FeatureMatrix) else features, dtype=np.float64)

    def f() -> Tensor:
        terms, _, _ = _forward(model, prob, x, np.random.default_rng(seed), training=True)
        return terms.total

    return f


def fit(graph_noisy: SignedGraph, features, labels: SignedGraph | None = None,
        cfg: RidgeConfig = RidgeConfig()) -> tuple[RidgeModel, LossTraces]:
    """Train on ``graph_noisy`` with supervision from the signs of ``labels`` (defaults to the graph itself)."""
    labels = graph_noisy if labels is None else labels
    x = np.asarray(features.values if isinstance(features, FeatureMatrix) else features, dtype=np.float64)
    if x.shape[0] != graph_noisy.node_count:
        raise ShapeMismatch(f"features have {x.shape[0]} rows for {graph_noisy.node_count} nodes")
    model = RidgeModel(x.shape[1], cfg)
    traces = LossTraces()
    if cfg.epochs == 0:
        return model, traces
    prob = _Problem(graph_noisy, labels)
    rng = np.random.default_rng(cfg.seed + 7919)
    opt = Adam(model.parameters(), lr=cfg.lr)
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        terms, batch, _ = _forward(model, prob, x, rng, training=True)
        if not np.isfinite(terms.total.data).all():
            raise NonFiniteLoss(
                f"epoch {epoch}: cls={terms.cls.item()} kl_y={terms.kl_y.item()} kl_g={terms.kl_g.item()}"
            )
        ad.backward(terms.total)
        opt.step()
        kept_a = graph_noisy.m if batch.keep_a is None else int(batch.keep_a.data.sum())
        kept_y = labels.m if batch.keep_y is None else int(batch.keep_y.data.sum())
        traces.append(terms, kept_a, kept_y)
        if epoch % 100 == 0:
            log.debug("epoch %d loss %.5f (cls %.5f)", epoch, traces.total[-1], traces.cls[-1])
    return model, traces


def _eval_structure(model: RidgeModel, prob: _Problem, x: np.ndarray) -> tuple[Tensor, Tensor | None]:
    enc = model.encoder
    if model.cfg.mode == "plain":
        x_c = Tensor(x)
        return encode_nodes(enc, prob.index, x_c), None
    x_c = mask_features(model.mask, x, hard=True)
    p_a = pair_scores(encode_nodes(enc, prob.index, x_c), prob.graph.src, prob.graph.dst)
    keep = ad.threshold_st(p_a)
    return encode_nodes(enc, prob.index, x_c, keep), keep


def predict(model: RidgeModel, graph: SignedGraph, features, query_src, query_dst) -> np.ndarray:
    """Probability of a positive sign for each query pair (evaluation mode)."""
    x = np.asarray(features.values if isinstance(features, FeatureMatrix) else features, dtype=np.float64)
    prob = _Problem(graph, graph)
    z, _ = _eval_structure(model, prob, x)
    rep = edge_representation(model.encoder, z, np.asarray(query_src), np.asarray(query_dst), None)
    return positive_probability(classify_edges(model.encoder, rep).data)


def cleaned_graph(model: RidgeModel, graph: SignedGraph, features) -> SignedGraph:
    """The sub-adjacency kept by the sampler in evaluation mode."""
    x = np.asarray(features.values if isinstance(features, FeatureMatrix) else features, dtype=np.float64)
    _, keep = _eval_structure(model, _Problem(graph, graph), x)
    if keep is None:
        return graph
    return graph.subgraph(np.flatnonzero(keep.data > 0))
