"""Initial node features from a randomized truncated SVD of the signed adjacency."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import RankTooLarge
from .graph import SignedGraph, symmetrize

SCALINGS = ("sigma", "none", "sqrt")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    source_rank: int
    singular_values: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if not np.isfinite(self.values).all():
            raise ValueError("feature matrix has non-finite entries")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def _orthonormal(y: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(y, mode="reduced")
    return q


def randomized_svd(a, rank: int, oversample: int = 10, power_iters: int = 2, seed: int = 0):
    """Rank-``rank`` SVD via Gaussian range finding with subspace iteration.

    ``a`` may be dense or scipy-sparse. Returns ``(U, s, Vt)`` with
    ``U`` of shape (rows, rank). Each column of ``U`` is sign-normalized so
    its largest-magnitude entry is positive (``Vt`` rows follow).
    """
    rows, cols = a.shape
    if rank > min(rows, cols):
        raise RankTooLarge(f"rank {rank} exceeds matrix dimensions {a.shape}")
    if rank < 1:
        raise RankTooLarge(f"rank must be positive, got {rank}")
    width = min(rank + max(oversample, 0), min(rows, cols))
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((cols, width))
    q = _orthonormal(np.asarray(a @ omega))
    for _ in range(power_iters):
        # re-orthonormalize between half-steps to keep small singular directions
        z = _orthonormal(np.asarray(a.T @ q))
        q = _orthonormal(np.asarray(a @ z))
    b = np.asarray((a.T @ q).T)
    u_small, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ u_small
    u, s, vt = u[:, :rank], s[:rank], vt[:rank]
    pivot = np.argmax(np.abs(u), axis=0)
    flip = np.sign(u[pivot, np.arange(rank)])
    flip[flip == 0] = 1.0
    return u * flip, s, vt * flip[:, None]


def signed_matrix(g: SignedGraph, symmetric: bool = True) -> sp.csr_matrix:
    """Float adjacency; ``symmetric`` mirrors every edge (conflicting pairs zeroed)."""
    n = g.node_count
    if not symmetric:
        return g.adjacency.astype(np.float64)
    u, v, s, _ = symmetrize(g)
    data = np.concatenate([s, s]).astype(np.float64)
    return sp.csr_matrix((data, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))


def truncated_svd_features(
    g: SignedGraph,
    d: int,
    oversample: int = 10,
    power_iters: int = 2,
    seed: int = 0,
    scaling: str = "sigma",
    symmetric: bool = True,
) -> FeatureMatrix:
    """Node features ``X = U_d * f(Sigma_d)`` from the signed adjacency.

    ``scaling`` selects f: ``"sigma"`` (default), ``"sqrt"`` or ``"none"``.
    """
    if d > g.node_count:
        raise RankTooLarge(f"feature rank {d} exceeds node count {g.node_count}")
    if scaling not in SCALINGS:
        raise ValueError(f"unknown scaling {scaling!r}")
    a = signed_matrix(g, symmetric)
    u, s, _ = randomized_svd(a, d, oversample, power_iters, seed)
    if scaling == "sigma":
        x = u * s
    elif scaling == "sqrt":
        x = u * np.sqrt(s)
    else:
        x = u.copy()
    return FeatureMatrix(x, d, s)
