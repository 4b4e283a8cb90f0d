"""Signed graph container, triangle census, SSBM generator and edge splitting."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DuplicateEdge, InvalidConfig, NodeIdOutOfRange, NoTriangles, SelfLoop


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True).reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SignedGraph:
    """Immutable directed signed graph on nodes ``0..node_count-1``.

    Edges keep their construction order; ``sign`` holds +1/-1 per edge.
    Build instances through :func:`from_edge_list` (validating) or
    :meth:`from_arrays`.
    """

    node_count: int
    src: np.ndarray
    dst: np.ndarray
    sign: np.ndarray

    @classmethod
    def from_arrays(cls, node_count: int, src, dst, sign, validate: bool = True) -> "SignedGraph":
        g = cls(int(node_count), _frozen(src, np.int64), _frozen(dst, np.int64), _frozen(sign, np.int8))
        if validate:
            g._validate()
        return g

    def _validate(self) -> None:
        n = self.node_count
        if n <= 0:
            raise NodeIdOutOfRange(f"node_count must be positive, got {n}")
        if not (len(self.src) == len(self.dst) == len(self.sign)):
            raise ValueError("src, dst and sign must have equal length")
        if self.m == 0:
            return
        bad = (self.src < 0) | (self.src >= n) | (self.dst < 0) | (self.dst >= n)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NodeIdOutOfRange(f"edge {i} ({self.src[i]}, {self.dst[i]}) outside [0, {n})")
        loops = self.src == self.dst
        if loops.any():
            i = int(np.flatnonzero(loops)[0])
            raise SelfLoop(f"edge {i} is a self-loop on node {self.src[i]}")
        if not np.isin(self.sign, (-1, 1)).all():
            raise ValueError("edge signs must be +1 or -1")
        keys = self.src * n + self.dst
        uniq, counts = np.unique(keys, return_counts=True)
        if (counts > 1).any():
            k = int(uniq[counts > 1][0])
            raise DuplicateEdge(f"pair ({k // n}, {k % n}) listed more than once")

    @property
    def m(self) -> int:
        return int(len(self.src))

    @property
    def num_positive(self) -> int:
        return int((self.sign > 0).sum())

    @property
    def num_negative(self) -> int:
        return int((self.sign < 0).sum())

    @property
    def edges(self) -> list[tuple[int, int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.sign.tolist()))

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Directed signed adjacency in {-1, 0, +1}^{n x n}."""
        n = self.node_count
        return sp.csr_matrix(
            (self.sign.astype(np.int64), (self.src, self.dst)), shape=(n, n)
        )

    @cached_property
    def _pair_keys(self) -> np.ndarray:
        return self.src * self.node_count + self.dst

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.adjacency[u, v] != 0)

    def subgraph(self, edge_idx) -> "SignedGraph":
        """Graph on the same node set keeping only the given edge indices."""
        idx = np.asarray(edge_idx, dtype=np.int64)
        return SignedGraph.from_arrays(
            self.node_count, self.src[idx], self.dst[idx], self.sign[idx], validate=False
        )

    def with_signs(self, sign) -> "SignedGraph":
        return SignedGraph.from_arrays(self.node_count, self.src, self.dst, sign, validate=False)

    def canonical(self) -> "SignedGraph":
        """Same graph with edges sorted by (src, dst)."""
        order = np.lexsort((self.dst, self.src))
        return self.subgraph(order)

    def __eq__(self, other: object) -> bool:
        """Graphs are edge sets: storage order does not matter."""
        if not isinstance(other, SignedGraph):
            return NotImplemented
        if self.node_count != other.node_count or self.m != other.m:
            return False
        a, b = self.canonical(), other.canonical()
        return (
            np.array_equal(a.src, b.src)
            and np.array_equal(a.dst, b.dst)
            and np.array_equal(a.sign, b.sign)
        )

    def __hash__(self) -> int:
        c = self.canonical()
        return hash((self.node_count, c.src.tobytes(), c.dst.tobytes(), c.sign.tobytes()))

    def __repr__(self) -> str:
        return (
            f"SignedGraph(n={self.node_count}, m={self.m}, "
            f"pos={self.num_positive}, neg={self.num_negative})"
        )


def from_edge_list(edges: Iterable[Sequence[int]], n: int) -> SignedGraph:
    """Validate ``(src, dst, sign)`` triples and build a :class:`SignedGraph`.

    Raises DuplicateEdge when a pair repeats (including with a conflicting
    sign), SelfLoop, or NodeIdOutOfRange.
    """
    rows = [tuple(e) for e in edges]
    if rows:
        arr = np.asarray(rows, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("edges must be (src, dst, sign) triples")
        return SignedGraph.from_arrays(n, arr[:, 0], arr[:, 1], arr[:, 2])
    return SignedGraph.from_arrays(n, [], [], [])


# --------------------------------------------------------------------------
# triangle census

@dataclass(frozen=True)
class TriangleCensus:
    total: int
    balanced: int
    unbalanced: int
    dropped_conflicts: int = 0

    def __post_init__(self) -> None:
        assert self.balanced + self.unbalanced == self.total
        assert min(self.total, self.balanced, self.unbalanced) >= 0

    @property
    def balance_degree(self) -> float:
        if self.total == 0:
            raise NoTriangles("graph has no triangles")
        return self.balanced / self.total


def symmetrize(g: SignedGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Collapse directions into undirected edges ``u < v``.

    A reciprocal pair with agreeing signs becomes one edge carrying the sign
    of the first-listed direction. Reciprocal pairs with conflicting signs
    are dropped; their number is returned as the last element.
    """
    n = g.node_count
    if g.m == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, 0
    lo = np.minimum(g.src, g.dst)
    hi = np.maximum(g.src, g.dst)
    keys = lo * n + hi
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    smin = np.full(len(uniq), 2, dtype=np.int64)
    smax = np.full(len(uniq), -2, dtype=np.int64)
    np.minimum.at(smin, inverse, g.sign.astype(np.int64))
    np.maximum.at(smax, inverse, g.sign.astype(np.int64))
    ok = smin == smax
    u = uniq[ok] // n
    v = uniq[ok] % n
    s = g.sign[first[ok]].astype(np.int64)
    return u, v, s, int((~ok).sum())


def _census_trace(u, v, s, n) -> tuple[int, int]:
    a = sp.csr_matrix((np.concatenate([s, s]), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))
    a_abs = abs(a)
    # Tr(M^3) = sum_ij (M^2)_ij M_ji and M is symmetric: only the diagonal of the cube is needed
    tr_signed = int((a @ a).multiply(a).sum())
    tr_abs = int((a_abs @ a_abs).multiply(a_abs).sum())
    total, rem = divmod(tr_abs, 6)
    balanced, rem2 = divmod(tr_signed + tr_abs, 12)
    assert rem == 0 and rem2 == 0
    return total, balanced


def _census_enumerate(u, v, s, n) -> tuple[int, int]:
    deg = np.bincount(np.concatenate([u, v]), minlength=n)
    rank = np.empty(n, dtype=np.int64)
    rank[np.lexsort((np.arange(n), deg))] = np.arange(n)
    # orient every edge toward the higher (degree, id) rank; each triangle is seen once
    out: list[dict[int, int]] = [dict() for _ in range(n)]
    for a, b, sg in zip(u.tolist(), v.tolist(), s.tolist()):
        if rank[a] < rank[b]:
            out[a][b] = sg
        else:
            out[b][a] = sg
    total = balanced = 0
    for a in range(n):
        na = out[a]
        for b, s_ab in na.items():
            nb = out[b]
            small, large = (na, nb) if len(na) < len(nb) else (nb, na)
            for c in small:
                if c in large:
                    total += 1
                    if s_ab * na[c] * nb[c] > 0:
                        balanced += 1
    return total, balanced


def triangle_census(g: SignedGraph, method: str = "trace") -> TriangleCensus:
    """Count balanced and total triangles of the symmetrized graph."""
    u, v, s, conflicts = symmetrize(g)
    if method == "trace":
        total, balanced = _census_trace(u, v, s, g.node_count)
    elif method == "enumerate":
        total, balanced = _census_enumerate(u, v, s, g.node_count)
    else:
        raise ValueError(f"unknown census method {method!r}")
    return TriangleCensus(total, balanced, total - balanced, conflicts)


def balance_degree(g: SignedGraph) -> float:
    """Fraction of balanced triangles; raises NoTriangles on triangle-free graphs."""
    return triangle_census(g).balance_degree


# --------------------------------------------------------------------------
# synthetic signed stochastic block model

@dataclass(frozen=True)
class SsbmConfig:
    n: int
    k: int = 5
    p: float = 0.01
    rho: float = 1.5
    sign_flip: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.k < 2:
            raise InvalidConfig(f"k must be >= 2, got {self.k}")
        if not 0 < self.p <= 1:
            raise InvalidConfig(f"p must be in (0, 1], got {self.p}")
        if self.rho < 1:
            raise InvalidConfig(f"rho must be >= 1, got {self.rho}")
        if not 0 <= self.sign_flip <= 1:
            raise InvalidConfig(f"sign_flip must be in [0, 1], got {self.sign_flip}")
        if self.n < self.k:
            raise InvalidConfig(f"need at least one node per cluster (n={self.n}, k={self.k})")


def ssbm_cluster_sizes(n: int, k: int, rho: float) -> np.ndarray:
    """Linearly spaced sizes with max/min = rho, rounded (largest remainder) to sum to n."""
    raw = 1.0 + (rho - 1.0) * np.arange(k) / (k - 1)
    raw = raw * n / raw.sum()
    sizes = np.floor(raw).astype(np.int64)
    short = n - int(sizes.sum())
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:short]] += 1
    if (sizes < 1).any():
        raise InvalidConfig("cluster sizes degenerate; increase n")
    return sizes


def ssbm_generate(cfg: SsbmConfig, return_labels: bool = False):
    """Sample a signed SBM graph.

    Every unordered node pair is linked independently with probability
    ``p``; intra-cluster links are +1, inter-cluster -1, each flipped with
    probability ``sign_flip``. Edge direction is a fair coin per pair.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    sizes = ssbm_cluster_sizes(n, cfg.k, cfg.rho)
    labels = rng.permutation(np.repeat(np.arange(cfg.k), sizes))

    n_pairs = n * (n - 1) // 2
    m = int(rng.binomial(n_pairs, cfg.p))
    pair_ids = np.sort(rng.choice(n_pairs, size=m, replace=False))
    i, j = _unrank_pairs(pair_ids, n)
    sign = np.where(labels[i] == labels[j], 1, -1)
    flips = rng.random(m) < cfg.sign_flip
    sign[flips] *= -1
    swap = rng.random(m) < 0.5
    src = np.where(swap, j, i)
    dst = np.where(swap, i, j)
    g = SignedGraph.from_arrays(n, src, dst, sign, validate=False)
    return (g, labels) if return_labels else g


def _unrank_pairs(idx: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map linear indices over {(i, j): i < j} (row-major) back to pairs."""
    idx = np.asarray(idx, dtype=np.int64)
    # row i starts at offset i*n - i*(i+1)/2
    starts = np.arange(n, dtype=np.int64) * n - np.arange(n, dtype=np.int64) * (np.arange(n) + 1) // 2
    i = np.searchsorted(starts, idx, side="right") - 1
    j = idx - starts[i] + i + 1
    return i, j


# --------------------------------------------------------------------------
# edge splitting

@dataclass(frozen=True)
class EdgeSplit:
    train_idx: np.ndarray
    test_idx: np.ndarray
    ratio: float
    seed: int
    graph: SignedGraph

    @property
    def train(self) -> SignedGraph:
        return self.graph.subgraph(self.train_idx)

    @property
    def test(self) -> SignedGraph:
        return self.graph.subgraph(self.test_idx)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_edges(g: SignedGraph, ratio: float = 0.8, seed: int = 0) -> EdgeSplit:
    """Uniform random train/test partition of the edge list."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g.m)
    n_train = round_half_up(ratio * g.m)
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:])
    train.setflags(write=False)
    test.setflags(write=False)
    return EdgeSplit(train, test, ratio, seed, g)
