"""File formats: soc-sign ingestion, canonical edge lists, array archives, configs, manifests."""
from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import EmptyFile, InvalidConfig, MalformedRow, ManifestMismatch
from .graph import SignedGraph, SsbmConfig
from .noise import NoiseSpec
from .trainer import RidgeConfig

_SPLIT = re.compile(r"[,\s]+")


# ---------------------------------------------------------------- atomic writes

def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------- soc-sign input

@dataclass
class IngestReport:
    rows: int = 0
    zero_ratings: int = 0
    duplicates: int = 0
    self_loops: int = 0
    header: bool = False
    # original id -> compact id, in order of first appearance
    id_map: dict[int, int] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "zero_ratings": self.zero_ratings, "duplicates": self.duplicates,
                "self_loops": self.self_loops, "header": self.header, "nodes": len(self.id_map)}


def _parse_int(tok: str, line: int, text: str, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        try:
            f = float(tok)
        except ValueError:
            raise MalformedRow(line, text, f"{what} {tok!r} is not a number") from None
        if not f.is_integer():
            raise MalformedRow(line, text, f"{what} {tok!r} is not an integer")
        return int(f)


def parse_soc_sign(text: str) -> tuple[SignedGraph, IngestReport]:
    """Parse ``source,target,rating[,time]`` rows (comma or whitespace separated).

    Positive ratings become +1 edges, negative ratings -1; zero ratings are
    skipped and counted. Repeated (source, target) pairs keep the first row.
    Self-loops are skipped and counted. A non-numeric first row is taken as a
    header; blank lines and lines starting with ``#`` are ignored.
    """
    rep = IngestReport()
    src: list[int] = []
    dst: list[int] = []
    sign: list[int] = []
    seen: set[tuple[int, int]] = set()
    first_content = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = [t for t in _SPLIT.split(line) if t]
        if first_content:
            first_content = False
            if not re.fullmatch(r"[-+]?\d+(\.\d*)?", toks[0]):
                rep.header = True
                continue
        if len(toks) < 3:
            raise MalformedRow(lineno, raw, f"expected at least 3 fields, got {len(toks)}")
        if len(toks) > 4:
            raise MalformedRow(lineno, raw, f"expected at most 4 fields, got {len(toks)}")
        u = _parse_int(toks[0], lineno, raw, "source")
        v = _parse_int(toks[1], lineno, raw, "target")
        r = _parse_int(toks[2], lineno, raw, "rating")
        if not -10 <= r <= 10:
            raise MalformedRow(lineno, raw, f"rating {r} outside [-10, 10]")
        rep.rows += 1
        if r == 0:
            rep.zero_ratings += 1
            continue
        if u == v:
            rep.self_loops += 1
            continue
        iu = rep.id_map.setdefault(u, len(rep.id_map))
        iv = rep.id_map.setdefault(v, len(rep.id_map))
        if (iu, iv) in seen:
            rep.duplicates += 1
            continue
        seen.add((iu, iv))
        src.append(iu)
        dst.append(iv)
        sign.append(1 if r > 0 else -1)
    if rep.rows == 0:
        raise EmptyFile("no data rows")
    g = SignedGraph.from_arrays(len(rep.id_map), src, dst, sign)
    return g, rep


def ingest_soc_sign(path) -> SignedGraph:
    return ingest_soc_sign_report(path)[0]


def ingest_soc_sign_report(path) -> tuple[SignedGraph, IngestReport]:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyFile(f"{path} is empty")
    return parse_soc_sign(text)


# ---------------------------------------------------------------- canonical edge lists

def edge_list_csv(g: SignedGraph) -> str:
    """``src,dst,sign`` rows sorted by (src, dst); the header carries the node count."""
    c = g.canonical()
    buf = io.StringIO()
    buf.write(f"# nodes={g.node_count}\n")
    buf.write("src,dst,sign\n")
    for u, v, s in zip(c.src.tolist(), c.dst.tolist(), c.sign.tolist()):
        buf.write(f"{u},{v},{s}\n")
    return buf.getvalue()


def write_edge_list(g: SignedGraph, path) -> None:
    atomic_write_text(path, edge_list_csv(g))


def read_edge_list(path) -> SignedGraph:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyFile(f"{path} is empty")
    n = None
    src: list[int] = []
    dst: list[int] = []
    sign: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.match(r"#\s*nodes\s*=\s*(\d+)", line)
            if m:
                n = int(m.group(1))
            continue
        if line == "src,dst,sign":
            continue
        row = next(csv.reader([line]))
        if len(row) != 3:
            raise MalformedRow(lineno, raw, "expected src,dst,sign")
        u, v, s = (_parse_int(t.strip(), lineno, raw, w) for t, w in zip(row, ("src", "dst", "sign")))
        src.append(u)
        dst.append(v)
        sign.append(s)
    if n is None:
        n = (max(max(src), max(dst)) + 1) if src else 0
    return SignedGraph.from_arrays(n, src, dst, sign)


# ---------------------------------------------------------------- array archives

BLOB_MAGIC = b"RIDGEBLOB1\n"


def blob_bytes(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    """Magic line, one JSON header line (array names, dtypes, shapes, offsets, metadata), raw little-endian data."""
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        if a.dtype.kind not in "fiub":
            raise ValueError(f"array {name!r} has unsupported dtype {a.dtype}")
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":"))
    return BLOB_MAGIC + header.encode("utf-8") + b"\n" + b"".join(chunks)


def parse_blob(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if not data.startswith(BLOB_MAGIC):
        raise ValueError("not an array blob (bad magic)")
    end = data.index(b"\n", len(BLOB_MAGIC))
    header = json.loads(data[len(BLOB_MAGIC):end].decode("utf-8"))
    body = memoryview(data)[end + 1:]
    arrays = {}
    for e in header["arrays"]:
        chunk = body[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ValueError(f"array blob truncated at {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    atomic_write_bytes(path, blob_bytes(arrays, meta))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    return parse_blob(Path(path).read_bytes())


# ---------------------------------------------------------------- manifests

@dataclass(frozen=True)
class DatasetManifest:
    name: str
    path: str
    format: str = "soc-sign-csv"
    expected_stats: dict | None = None
    source: str = ""

    def __post_init__(self) -> None:
        if self.format != "soc-sign-csv":
            raise InvalidConfig(f"unsupported dataset format {self.format!r}")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**d)

    def resolve(self, base_dir) -> Path:
        p = Path(self.path)
        return p if p.is_absolute() else Path(base_dir) / p

    def verify(self, g: SignedGraph) -> None:
        """Raise ManifestMismatch unless n, m, pos and neg all equal the expected values."""
        if self.expected_stats is None:
            return
        got = graph_stats(g)
        bad = {k: (v, got[k]) for k, v in self.expected_stats.items() if k in got and got[k] != v}
        if bad:
            detail = ", ".join(f"{k}: expected {e}, got {a}" for k, (e, a) in bad.items())
            raise ManifestMismatch(f"{self.name}: {detail}")


def graph_stats(g: SignedGraph) -> dict[str, int]:
    return {"n": g.node_count, "m": g.m, "pos": g.num_positive, "neg": g.num_negative}


# published statistics of the four benchmark graphs
BENCHMARK_STATS: dict[str, dict[str, int]] = {
    "bitcoin_alpha": {"n": 3784, "m": 14145, "pos": 12729, "neg": 1416},
    "bitcoin_otc": {"n": 5901, "m": 21522, "pos": 18390, "neg": 3132},
    "epinions": {"n": 16992, "m": 327227, "pos": 276309, "neg": 50918},
    "slashdot": {"n": 33586, "m": 396003, "pos": 295201, "neg": 100802},
}

# published triangle statistics (total, balanced)
BENCHMARK_TRIANGLES: dict[str, tuple[int, int]] = {
    "bitcoin_otc": (200958, 175381),
    "bitcoin_alpha": (132918, 113566),
    "epinions": (7170984, 6322617),
    "slashdot": (2364708, 2034077),
}


# ---------------------------------------------------------------- experiment configs

_NOISE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "gamma"],
    "properties": {
        "kind": {"enum": ["flip", "delete", "add"]},
        "gamma": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "polarity": {"enum": ["all", "positive", "negative"]},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["noise"],
    "oneOf": [{"required": ["dataset"]}, {"required": ["ssbm"]}],
    "properties": {
        "name": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "manifest": {"type": "string"},
                "path": {"type": "string"},
                "name": {"type": "string"},
            },
            "oneOf": [{"required": ["manifest"]}, {"required": ["path"]}],
        },
        "ssbm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "k": {"type": "integer", "minimum": 1},
                "p": {"type": "number", "minimum": 0, "maximum": 1},
                "rho": {"type": "number", "minimum": 1},
                "sign_flip": {"type": "number", "minimum": 0, "maximum": 1},
                "seed": {"type": "integer"},
            },
        },
        "noise": {"type": "array", "minItems": 1, "items": _NOISE_SCHEMA},
        "ridge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "minimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 0},
                "hidden": {"type": "integer", "minimum": 2},
                "layers": {"type": "integer", "minimum": 1},
                "mode": {"enum": ["ridge", "plain"]},
                "mask_temperature": {"type": "number", "exclusiveMinimum": 0},
                "mask_init": {"type": "number"},
            },
        },
        "variants": {"type": "array", "minItems": 1, "uniqueItems": True,
                     "items": {"enum": ["ridge", "plain", "wo_kly", "wo_klg", "wo_both"]}},
        "split_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "runs": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "minItems": 1, "uniqueItems": True, "items": {"type": "integer"}},
        "feature_dim": {"type": "integer", "minimum": 1},
        "order": {"enum": ["perturb_then_split", "split_then_perturb"]},
        "threshold": {"type": "number", "minimum": 0, "maximum": 1},
        "out": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class ExperimentConfig:
    noises: list[NoiseSpec]
    ridge: RidgeConfig
    seeds: list[int]
    variants: list[str]
    ssbm: SsbmConfig | None = None
    dataset_manifest: str | None = None
    dataset_path: str | None = None
    name: str = "experiment"
    split_ratio: float = 0.8
    feature_dim: int = 64
    order: str = "perturb_then_split"
    threshold: float = 0.5
    out: str = "out"
    threads: int = 1
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        try:
            jsonschema.validate(d, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise InvalidConfig(f"config {where}: {exc.message}") from None
        if "seeds" in d and "runs" in d and len(d["seeds"]) != d["runs"]:
            raise InvalidConfig(f"runs={d['runs']} but {len(d['seeds'])} seeds listed")
        seeds = d.get("seeds") or list(range(d.get("runs", 5)))
        ds = d.get("dataset", {})
        ssbm = SsbmConfig(**d["ssbm"]) if "ssbm" in d else None
        if ssbm is not None:
            ssbm.validate()
        return cls(
            noises=[NoiseSpec(n["kind"], n["gamma"], n.get("polarity", "all")) for n in d["noise"]],
            ridge=RidgeConfig(**d.get("ridge", {})),
            seeds=seeds,
            variants=d.get("variants", ["ridge"]),
            ssbm=ssbm,
            dataset_manifest=ds.get("manifest"),
            dataset_path=ds.get("path"),
            name=d.get("name", ds.get("name", "ssbm" if ssbm else "dataset")),
            split_ratio=d.get("split_ratio", 0.8),
            feature_dim=d.get("feature_dim", 64),
            order=d.get("order", "perturb_then_split"),
            threshold=d.get("threshold", 0.5),
            out=d.get("out", "out"),
            threads=d.get("threads", 1),
            base_dir=str(base_dir),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(d, base_dir=path.parent)

    def load_graph(self) -> SignedGraph:
        from .graph import ssbm_generate

        if self.ssbm is not None:
            return ssbm_generate(self.ssbm)
        base = Path(self.base_dir)
        if self.dataset_manifest is not None:
            mpath = base / self.dataset_manifest
            manifest = DatasetManifest.load(mpath)
            g = ingest_soc_sign(manifest.resolve(mpath.parent))
            manifest.verify(g)
            return g
        return ingest_soc_sign(base / self.dataset_path)
