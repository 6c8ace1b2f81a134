"""MNIST IDX ingestion, ±1 datasets, model archives and metric CSVs."""

from __future__ import annotations

import csv
import gzip
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, SchemaMismatch, Truncated

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_ENV = "HOPRBM_DATA"

_IDX_FILES = {
    "train": ("train-images", "train-labels"),
    "test": ("t10k-images", "t10k-labels"),
}


def parse_idx(buf: bytes) -> np.ndarray:
    """Decode an IDX container holding unsigned bytes.

    Only the two MNIST flavours are accepted: rank-3 images (magic 2051)
    and rank-1 labels (magic 2049). Dimension sizes are big-endian uint32.
    """
    if len(buf) < 4:
        raise Truncated("IDX buffer shorter than its magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic == IMAGE_MAGIC:
        rank = 3
    elif magic == LABEL_MAGIC:
        rank = 1
    else:
        raise BadMagic(f"unknown IDX magic 0x{magic:08x}")
    header = 4 + 4 * rank
    if len(buf) < header:
        raise Truncated("IDX header incomplete")
    dims = struct.unpack(">" + "I" * rank, buf[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header < size:
        raise Truncated(f"IDX payload has {len(buf) - header} bytes, header promises {size}")
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=header).reshape(dims)


def binarize(raw: np.ndarray) -> np.ndarray:
    """Map pixels to ±1 (``+1`` iff the pixel is non-zero), one flat row per image."""
    raw = np.asarray(raw)
    flat = raw.reshape(raw.shape[0], -1) if raw.ndim > 1 else raw.reshape(1, -1)
    return np.where(flat > 0, 1, -1).astype(np.int8)


@dataclass
class BinaryDataset:
    """±1 samples (rows) with integer class labels."""

    samples: np.ndarray
    labels: np.ndarray
    split: str = "unknown"

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D array (M, N)")
        if len(self.labels) != len(self.samples):
            raise ValueError("labels length must equal the number of samples")
        if not np.all(np.abs(self.samples) == 1):
            raise ValueError("samples must be ±1")

    def __len__(self):
        return len(self.samples)

    @property
    def n_visible(self) -> int:
        return self.samples.shape[1]

    @property
    def class_index(self) -> dict[int, np.ndarray]:
        return {int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)}

    def of_class(self, c: int) -> np.ndarray:
        return self.samples[self.labels == c]

    def subset(self, n: int, seed: int = 0) -> "BinaryDataset":
        """Random subset of ``n`` samples, original order preserved."""
        if n >= len(self):
            return self
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(self), size=n, replace=False))
        return BinaryDataset(self.samples[idx], self.labels[idx], split=self.split)

    def head(self, n: int) -> "BinaryDataset":
        return BinaryDataset(self.samples[:n], self.labels[:n], split=self.split)


def _read_maybe_gz(path: Path) -> bytes:
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def _find_idx(root: Path, stem: str) -> Path:
    kind = "idx3" if "images" in stem else "idx1"
    for name in (f"{stem}-{kind}-ubyte", f"{stem}.{kind}-ubyte"):
        for suffix in ("", ".gz"):
            p = root / (name + suffix)
            if p.exists():
                return p
    raise FileNotFoundError(f"no IDX file for {stem!r} under {root}")


def data_root(root: str | os.PathLike | None = None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get(DATA_ENV, "data/mnist"))


def load_mnist(split: str = "train", root: str | os.PathLike | None = None) -> BinaryDataset:
    """Load and binarize an MNIST split from IDX files under ``root``.

    ``root`` defaults to ``$HOPRBM_DATA`` (then ``./data/mnist``).
    """
    base = data_root(root)
    img_stem, lbl_stem = _IDX_FILES[split]
    images = parse_idx(_read_maybe_gz(_find_idx(base, img_stem)))
    labels = parse_idx(_read_maybe_gz(_find_idx(base, lbl_stem)))
    if len(images) != len(labels):
        raise SchemaMismatch("image and label counts differ")
    return BinaryDataset(binarize(images), labels.astype(np.int64), split=split)


def mnist_available(root=None) -> bool:
    try:
        base = data_root(root)
        for stems in _IDX_FILES.values():
            for s in stems:
                _find_idx(base, s)
    except FileNotFoundError:
        return False
    return True


# --------------------------------------------------------------------------
# model archives

ARCHIVE_MAGIC = b"HOPRBM01"
KINDS = ("hopfield", "rbm", "poe")


@dataclass
class ModelArchive:
    kind: str
    dims: tuple[int, int]
    beta: float
    matrices: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, ModelArchive):
            return NotImplemented
        if (self.kind, tuple(self.dims), self.metadata) != (other.kind, tuple(other.dims), other.metadata):
            return False
        if struct.pack("<d", self.beta) != struct.pack("<d", other.beta):
            return False
        if self.matrices.keys() != other.matrices.keys():
            return False
        for k, a in self.matrices.items():
            b = other.matrices[k]
            if a.shape != b.shape or _le_bytes(a) != _le_bytes(b):
                return False
        return True


def _le_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _expected_shapes(kind: str, n: int, p: int, names) -> dict[str, tuple]:
    if kind == "hopfield":
        table = {"J": (n, n), "b": (n,), "xi": (n, p)}
    elif kind == "rbm":
        table = {"W": (n, p), "b": (n,), "c": (p,), "xi": (n, p), "R": (p, p)}
    else:
        table = {name: (n, p) for name in names if name.startswith("W")}
    return table


def validate_archive(m: ModelArchive) -> None:
    if m.kind not in KINDS:
        raise SchemaMismatch(f"unknown archive kind {m.kind!r}")
    n, p = (int(d) for d in m.dims)
    expected = _expected_shapes(m.kind, n, p, m.matrices)
    for name, arr in m.matrices.items():
        want = expected.get(name)
        if want is not None and tuple(arr.shape) != want:
            raise SchemaMismatch(f"matrix {name!r} has shape {arr.shape}, dims imply {want}")


def save_model(m: ModelArchive, path) -> None:
    """Write ``m`` as magic + JSON header + row-major little-endian float64 blocks."""
    validate_archive(m)
    directory, offset = [], 0
    for name, arr in m.matrices.items():
        nbytes = arr.size * 8
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "kind": m.kind,
        "dims": [int(d) for d in m.dims],
        "beta": struct.pack("<d", float(m.beta)).hex(),
        "matrices": directory,
        "metadata": m.metadata,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for arr in m.matrices.values():
            fh.write(_le_bytes(arr))


def load_model(path) -> ModelArchive:
    buf = Path(path).read_bytes()
    if buf[:8] != ARCHIVE_MAGIC or len(buf) < 16:
        raise SchemaMismatch("not a model archive")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    try:
        header = json.loads(buf[16 : 16 + hlen].decode())
        kind, dims = header["kind"], tuple(header["dims"])
        beta = struct.unpack("<d", bytes.fromhex(header["beta"]))[0]
        directory = header["matrices"]
    except (ValueError, KeyError, TypeError, struct.error) as exc:
        raise SchemaMismatch(f"corrupted archive header: {exc}") from exc
    body = buf[16 + hlen :]
    matrices = {}
    for entry in directory:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(body) or nbytes != 8 * int(np.prod(entry["shape"], dtype=np.int64)):
            raise SchemaMismatch(f"matrix {entry['name']!r} extends past end of archive")
        arr = np.frombuffer(body, dtype="<f8", count=nbytes // 8, offset=start)
        matrices[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    m = ModelArchive(kind, dims, beta, matrices, header.get("metadata", {}))
    validate_archive(m)
    return m


# --------------------------------------------------------------------------
# metrics

METRIC_FIELDS = ("epoch", "run", "metric", "value")


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_metrics_csv(rows, path, fields=METRIC_FIELDS) -> None:
    """Write dict rows with a fixed header; floats use ``repr`` so output is byte-stable."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([format_value(row[f]) for f in fields])
    Path(path).write_text(buf.getvalue())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
