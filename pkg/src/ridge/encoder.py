"""SGCN-style signed message-passing encoder, edge representation and classifier head.

Node states are split into a balanced part (reached through paths with an
even number of negative links) and an unbalanced part. Layer 1 aggregates raw
features over positive / negative neighbours; later layers cross the two
parts along negative links (foe of a foe feeds the balanced state, friend of
a foe the unbalanced one). The same parameters serve both the encoder and
the edge sampler.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import EdgeIndex, Tensor
from .errors import ShapeMismatch
from .graph import SignedGraph


@dataclass
class SignedIndex:
    """Message lists of a signed graph, mirrored so both endpoints exchange messages.

    ``pos_edge`` / ``neg_edge`` map each message back to its edge in the
    source graph so per-edge sampling weights can be gathered.
    """

    n: int
    m: int
    pos: EdgeIndex
    neg: EdgeIndex
    pos_edge: np.ndarray
    neg_edge: np.ndarray

    @classmethod
    def from_graph(cls, g: SignedGraph) -> "SignedIndex":
        pe = np.flatnonzero(g.sign > 0)
        ne = np.flatnonzero(g.sign < 0)

        def mirrored(e):
            src = np.concatenate([g.src[e], g.dst[e]])
            dst = np.concatenate([g.dst[e], g.src[e]])
            return EdgeIndex(src, dst, g.node_count), np.concatenate([e, e])

        pos, pos_edge = mirrored(pe)
        neg, neg_edge = mirrored(ne)
        return cls(g.node_count, g.m, pos, neg, pos_edge, neg_edge)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class EncoderParams:
    """All encoder/classifier weights, stored as named leaf tensors.

    Layer 1 maps ``[mean_nbr(x) || x]`` (2*in_dim) to h/2 per state; deeper
    layers map ``[same-sign mean || cross-sign mean || self]`` (3*h/2) to h/2.
    The edge head maps ``[z_i || z_j || z_i*z_j]`` (3h) to 2h raw outputs
    (mean half, scale half); the classifier maps h to 2 logits.
    """

    def __init__(self, in_dim: int, hidden: int = 64, layers: int = 4, seed: int = 0):
        if hidden % 2:
            raise ValueError("hidden width must be even (balanced/unbalanced halves)")
        if layers < 1:
            raise ValueError("need at least one aggregation layer")
        self.in_dim, self.hidden, self.layers, self.seed = in_dim, hidden, layers, seed
        rng = np.random.default_rng(seed)
        half = hidden // 2
        self.tensors: dict[str, Tensor] = {}
        for layer in range(layers):
            fan_in = 2 * in_dim if layer == 0 else 3 * half
            for part in ("B", "U"):
                self.tensors[f"W{part}{layer}"] = ad.parameter(_glorot(rng, fan_in, half))
                self.tensors[f"b{part}{layer}"] = ad.parameter(np.zeros(half))
        self.tensors["W_edge"] = ad.parameter(_glorot(rng, 3 * hidden, 2 * hidden))
        self.tensors["b_edge"] = ad.parameter(np.zeros(2 * hidden))
        self.tensors["W_cls"] = ad.parameter(_glorot(rng, hidden, 2))
        self.tensors["b_cls"] = ad.parameter(np.zeros(2))

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.shape:
                raise ShapeMismatch(f"{k}: expected {t.shape}, got {a.shape}")
            t.data[...] = a


def _layer(params: EncoderParams, part: str, layer: int, inputs: list) -> Tensor:
    h = ad.matmul(ad.concat(inputs, axis=1), params[f"W{part}{layer}"])
    return ad.tanh(ad.broadcast_add_row(h, params[f"b{part}{layer}"]))


def encode_nodes(params: EncoderParams, index: SignedIndex, features, edge_weights=None) -> Tensor:
    """Node embeddings ``Z = [balanced || unbalanced]`` of shape (n, hidden).

    ``edge_weights`` (length m, one per edge of the indexed graph) scales
    each edge's messages; ``None`` means every edge has weight 1.
    """
    x = ad.as_tensor(features)
    if x.ndim != 2 or x.shape != (index.n, params.in_dim):
        raise ShapeMismatch(f"features {x.shape} do not match ({index.n}, {params.in_dim})")
    if edge_weights is None:
        wp = Tensor(np.ones(len(index.pos)))
        wn = Tensor(np.ones(len(index.neg)))
    else:
        w = ad.as_tensor(edge_weights)
        if w.shape != (index.m,):
            raise ShapeMismatch(f"edge weights {w.shape} vs {index.m} edges")
        wp = ad.take(w, index.pos_edge)
        wn = ad.take(w, index.neg_edge)

    b = _layer(params, "B", 0, [ad.neighbor_mean(wp, x, index.pos), x])
    u = _layer(params, "U", 0, [ad.neighbor_mean(wn, x, index.neg), x])
    for layer in range(1, params.layers):
        b_next = _layer(params, "B", layer, [
            ad.neighbor_mean(wp, b, index.pos), ad.neighbor_mean(wn, u, index.neg), b])
        u_next = _layer(params, "U", layer, [
            ad.neighbor_mean(wp, u, index.pos), ad.neighbor_mean(wn, b, index.neg), u])
        b, u = b_next, u_next
    return ad.concat([b, u], axis=1)


@dataclass
class EdgeRepresentation:
    mu: Tensor
    sigma: Tensor
    sample: Tensor


def edge_representation(params: EncoderParams, z: Tensor, src, dst, noise: np.ndarray | None = None) -> EdgeRepresentation:
    """Gaussian edge code: ``mu`` is the first half of the raw head, ``sigma`` softplus of the second.

    ``noise`` is a standard-normal array of shape (edges, hidden); with
    ``None`` (evaluation) the sample equals ``mu``.
    """
    h = params.hidden
    w = params["W_edge"]
    # [z_i || z_j || z_i*z_j] @ W, with the endpoint blocks projected per node
    # before gathering (n rows instead of one per edge)
    raw = ad.add(ad.take(ad.matmul(z, ad.slice(w, 0, h, axis=0)), src),
                 ad.take(ad.matmul(z, ad.slice(w, h, 2 * h, axis=0)), dst))
    prod = ad.mul(ad.take(z, src), ad.take(z, dst))
    raw = ad.add(raw, ad.matmul(prod, ad.slice(w, 2 * h, 3 * h, axis=0)))
    raw = ad.broadcast_add_row(raw, params["b_edge"])
    mu = ad.slice(raw, 0, h, axis=1)
    sigma = ad.softplus(ad.slice(raw, h, 2 * h, axis=1))
    if noise is None:
        return EdgeRepresentation(mu, sigma, mu)
    if noise.shape != mu.shape:
        raise ShapeMismatch(f"noise {noise.shape} vs representation {mu.shape}")
    return EdgeRepresentation(mu, sigma, ad.add(mu, ad.mul(sigma, noise)))


def classify_edges(params: EncoderParams, rep: EdgeRepresentation) -> Tensor:
    """Two logits per edge; column 0 is the positive sign."""
    return ad.broadcast_add_row(ad.matmul(rep.sample, params["W_cls"]), params["b_cls"])


def positive_probability(logits: np.ndarray) -> np.ndarray:
    d = logits[:, 0] - logits[:, 1]
    return ad._sigmoid(np.asarray(d, dtype=np.float64))


def pair_scores(z: Tensor, src, dst) -> Tensor:
    """``sigmoid(z_i . z_j)`` for each listed pair."""
    return ad.sigmoid(ad.sum(ad.mul(ad.take(z, src), ad.take(z, dst)), axis=1))


def sampler_scores(params: EncoderParams, index: SignedIndex, features_masked, src, dst) -> Tensor:
    """Edge confidences from the weight-shared sampler, only for the listed (observed) pairs."""
    return pair_scores(encode_nodes(params, index, features_masked), src, dst)
