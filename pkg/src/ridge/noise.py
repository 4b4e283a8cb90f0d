"""Random perturbations of signed graphs: sign flips, link deletion, link addition.

All procedures use exact-count sampling: for ratio ``gamma`` and a basis
count ``b`` exactly ``round_half_up(gamma * b)`` edges are touched.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GammaTooLarge, GraphSaturated, InvalidConfig
from .graph import SignedGraph, round_half_up

KINDS = ("flip", "delete", "add")
POLARITIES = ("all", "positive", "negative")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    gamma: float
    polarity: str = "all"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown noise kind {self.kind!r}")
        if self.polarity not in POLARITIES:
            raise InvalidConfig(f"unknown polarity {self.polarity!r}")
        if self.kind == "flip" and self.polarity != "all":
            raise InvalidConfig("flip noise supports polarity='all' only")
        if not 0 <= self.gamma < 1:
            raise InvalidConfig(f"gamma must be in [0, 1), got {self.gamma}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**d)

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.kind, self.gamma, self.polarity, seed)


@dataclass(frozen=True)
class PerturbationReceipt:
    kind: str
    polarity: str
    affected_edge_count: int
    realized_gamma: float
    denominator_basis: str
    basis_count: int
    m_before: int
    m_after: int
    # indices into the input edge list (flip/delete) or into the output (add)
    affected: np.ndarray = field(repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("affected")
        return d


def _rng(spec: NoiseSpec) -> np.random.Generator:
    return np.random.default_rng(spec.seed)


def apply_flip_mask(g: SignedGraph, idx) -> SignedGraph:
    """Negate the signs of the listed edges."""
    sign = g.sign.astype(np.int8).copy()
    sign[np.asarray(idx, dtype=np.int64)] *= -1
    return g.with_signs(sign)


def flip_signs(g: SignedGraph, spec: NoiseSpec) -> tuple[SignedGraph, PerturbationReceipt]:
    if spec.kind != "flip":
        raise InvalidConfig(f"flip_signs needs kind='flip', got {spec.kind!r}")
    count = round_half_up(spec.gamma * g.m)
    idx = np.sort(_rng(spec).permutation(g.m)[:count])
    out = apply_flip_mask(g, idx)
    receipt = PerturbationReceipt(
        "flip", "all", count, count / g.m if g.m else 0.0, "nonzero(A)", g.m, g.m, out.m, idx
    )
    return out, receipt


def delete_links(g: SignedGraph, spec: NoiseSpec) -> tuple[SignedGraph, PerturbationReceipt]:
    if spec.kind != "delete":
        raise InvalidConfig(f"delete_links needs kind='delete', got {spec.kind!r}")
    if spec.polarity == "all":
        pool = np.arange(g.m)
        basis = "nonzero(A)"
    elif spec.polarity == "positive":
        pool = np.flatnonzero(g.sign > 0)
        basis = "nonzero(A+)"
    else:
        pool = np.flatnonzero(g.sign < 0)
        basis = "nonzero(A-)"
    count = round_half_up(spec.gamma * len(pool))
    if count > len(pool):
        raise GammaTooLarge(f"cannot delete {count} of {len(pool)} {spec.polarity} edges")
    drop = np.sort(_rng(spec).permutation(pool)[:count])
    keep = np.setdiff1d(np.arange(g.m), drop, assume_unique=True)
    out = g.subgraph(keep)
    realized = (g.m - out.m) / len(pool) if len(pool) else 0.0
    return out, PerturbationReceipt(
        "delete", spec.polarity, count, realized, basis, len(pool), g.m, out.m, drop
    )


def add_links(g: SignedGraph, spec: NoiseSpec) -> tuple[SignedGraph, PerturbationReceipt]:
    """Add round(gamma*m) links on node pairs absent in either direction."""
    if spec.kind != "add":
        raise InvalidConfig(f"add_links needs kind='add', got {spec.kind!r}")
    n, m = g.node_count, g.m
    count = round_half_up(spec.gamma * m)
    if spec.polarity == "all":
        n_pos = round_half_up(count * (g.num_positive / m)) if m else count
    elif spec.polarity == "positive":
        n_pos = count
    else:
        n_pos = 0
    n_neg = count - n_pos

    existing = set((np.minimum(g.src, g.dst) * n + np.maximum(g.src, g.dst)).tolist())
    free = n * (n - 1) // 2 - len(existing)
    if count > free:
        raise GraphSaturated(f"requested {count} new links but only {free} node pairs are free")

    rng = _rng(spec)
    chosen: list[tuple[int, int]] = []
    taken = set(existing)
    if free < 4 * count:
        # dense regime: enumerate the free pairs instead of rejection sampling
        iu, ju = np.triu_indices(n, 1)
        keys = iu * n + ju
        mask = ~np.isin(keys, np.fromiter(existing, dtype=np.int64, count=len(existing)))
        pick = rng.choice(np.flatnonzero(mask), size=count, replace=False)
        chosen = list(zip(iu[pick].tolist(), ju[pick].tolist()))
    else:
        while len(chosen) < count:
            batch = max(64, 2 * (count - len(chosen)))
            a = rng.integers(0, n, size=batch)
            b = rng.integers(0, n, size=batch)
            for u, v in zip(a.tolist(), b.tolist()):
                if u == v:
                    continue
                key = min(u, v) * n + max(u, v)
                if key in taken:
                    continue
                taken.add(key)
                chosen.append((u, v))
                if len(chosen) == count:
                    break
    new_sign = np.array([1] * n_pos + [-1] * n_neg, dtype=np.int8)
    new_sign = rng.permutation(new_sign)
    if chosen:
        add_src, add_dst = (np.array(c, dtype=np.int64) for c in zip(*chosen))
    else:
        add_src = add_dst = np.zeros(0, dtype=np.int64)
    out = SignedGraph.from_arrays(
        n,
        np.concatenate([g.src, add_src]),
        np.concatenate([g.dst, add_dst]),
        np.concatenate([g.sign, new_sign]),
        validate=False,
    )
    affected = np.arange(m, m + count)
    realized = (out.m - m) / m if m else 0.0
    return out, PerturbationReceipt("add", spec.polarity, count, realized, "nonzero(A)", m, m, out.m, affected)


def perturb(g: SignedGraph, spec: NoiseSpec) -> tuple[SignedGraph, PerturbationReceipt]:
    """Dispatch on ``spec.kind``."""
    return {"flip": flip_signs, "delete": delete_links, "add": add_links}[spec.kind](g, spec)
