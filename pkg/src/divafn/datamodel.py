"""Tri-modal datasets, similarity matrices, semantic tables and file I/O.

Feature matrices are column-major collections: one column per sample.

FMX1 layout (all little-endian)::

    bytes 0-3    magic b"FMX1"
    bytes 4-11   rows  (uint64)
    bytes 12-19  cols  (uint64)
    bytes 20-    rows*cols float64 values, column-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .matrixcore import as_matrix

FMX_MAGIC = b"FMX1"
_HEADER = struct.Struct("<4sQQ")

# Noise level at which raw video features alone stop being sufficient at a
# 10% training ratio; see scripts/calibrate_noise.py.
CALIBRATED_NOISE = 0.2

DATASET_FILES = {
    "images": "images.fmx",
    "keyframes": "keyframes.fmx",
    "videos": "videos.fmx",
    "semantics": "semantics.fmx",
    "labels": "labels.txt",
    "class_names": "class_names.txt",
}


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TriModalDataset:
    """Aligned image/keyframe/video features; column i of each is sample i."""

    images: np.ndarray
    keyframes: np.ndarray
    videos: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        mats = {}
        for name in ("images", "keyframes", "videos"):
            mats[name] = _frozen(as_matrix(getattr(self, name), name))
            object.__setattr__(self, name, mats[name])
        n = {m.shape[1] for m in mats.values()}
        if len(n) != 1:
            raise ContractError(
                "images, keyframes and videos must have the same column count, got "
                + ", ".join(f"{k}={v.shape[1]}" for k, v in mats.items()))
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != n.pop():
            raise ContractError("labels must be a vector with one entry per column")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ContractError("labels must be integers")
        labels = labels.astype(np.int64)
        C = len(self.class_names)
        if labels.size and (labels.min() < 0 or labels.max() >= C):
            raise ContractError(f"labels must lie in [0, {C})")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))

    @property
    def n(self):
        return self.labels.shape[0]

    @property
    def num_classes(self):
        return len(self.class_names)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return TriModalDataset(self.images[:, idx], self.keyframes[:, idx],
                               self.videos[:, idx], self.labels[idx], self.class_names)


@dataclass(frozen=True)
class SemanticTable:
    """Per-class semantic embeddings, one column per class (k x C)."""

    embeddings: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        E = _frozen(as_matrix(self.embeddings, "embeddings"))
        object.__setattr__(self, "embeddings", E)
        C = E.shape[1]
        for a in range(C):
            for b in range(a + 1, C):
                if np.array_equal(E[:, a], E[:, b]):
                    raise ContractError(f"semantic columns {a} and {b} are identical")
        if self.normalized and not np.allclose(np.linalg.norm(E, axis=0), 1.0, atol=1e-12):
            raise ContractError("table flagged normalized but columns are not unit norm")

    @property
    def dim(self):
        return self.embeddings.shape[0]

    @property
    def num_classes(self):
        return self.embeddings.shape[1]


def build_similarity(labels_a, labels_b):
    """Binary matrix with entry (i, j) = 1 iff ``labels_a[i] == labels_b[j]``."""
    a = np.asarray(labels_a).reshape(-1, 1)
    b = np.asarray(labels_b).reshape(1, -1)
    return (a == b).astype(np.float64)


def expand_semantics(table, labels):
    """Column i of the result is the table column for ``labels[i]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= table.num_classes):
        raise ContractError(f"labels must lie in [0, {table.num_classes})")
    return np.array(table.embeddings[:, labels])


@dataclass
class SynthConfig:
    classes: int = 8
    per_class: int = 40
    image_dim: int = 64
    keyframe_dim: int = 64
    video_dim: int = 128
    semantic_dim: int = 8
    latent_dim: int = 16
    noise: float = 0.05

    def validate(self):
        for name in ("per_class", "image_dim", "keyframe_dim", "video_dim",
                     "semantic_dim", "latent_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ContractError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.classes, (int, np.integer)) or self.classes < 2:
            raise ContractError(f"classes must be an integer >= 2, got {self.classes!r}")
        if not np.isfinite(self.noise) or self.noise < 0:
            raise ContractError(f"noise must be a finite value >= 0, got {self.noise!r}")


def generate_synthetic(cfg, seed):
    """Draw a tri-modal dataset and a matching semantic table.

    Each class gets a latent prototype in R^latent_dim. Every modality has
    its own fixed random linear map; a sample's feature is the map applied
    to its class prototype plus isotropic Gaussian noise of scale
    ``cfg.noise``. Semantic columns are distinct random unit vectors.
    Samples are ordered class by class.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    m = cfg.latent_dim
    protos = rng.standard_normal((m, cfg.classes))
    labels = np.repeat(np.arange(cfg.classes), cfg.per_class)
    feats = []
    for dim in (cfg.image_dim, cfg.keyframe_dim, cfg.video_dim):
        # entries ~ N(0, 1/(m dim)) keep clean columns near unit norm
        mapping = rng.standard_normal((dim, m)) / np.sqrt(m * dim)
        clean = mapping @ protos[:, labels]
        feats.append(clean + cfg.noise * rng.standard_normal(clean.shape))
    sem = rng.standard_normal((cfg.semantic_dim, cfg.classes))
    sem /= np.linalg.norm(sem, axis=0, keepdims=True)
    names = tuple(f"class_{c:02d}" for c in range(cfg.classes))
    return (TriModalDataset(feats[0], feats[1], feats[2], labels, names),
            SemanticTable(sem, normalized=True))


def stratified_subset(labels, ratio, seed):
    """Indices of a seeded, per-class ``ratio`` sample (at least one per class)."""
    if not 0 < ratio <= 1:
        raise ContractError(f"ratio must lie in (0, 1], got {ratio}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    chosen = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        take = max(1, int(round(ratio * members.size)))
        chosen.append(rng.permutation(members)[:take])
    return np.sort(np.concatenate(chosen))


# ---------------------------------------------------------------- FMX1 files

def encode_feature_matrix(m):
    m = as_matrix(m)
    rows, cols = m.shape
    payload = np.asarray(m, dtype="<f8").tobytes(order="F")
    return _HEADER.pack(FMX_MAGIC, rows, cols) + payload


def decode_feature_matrix(buf, offset=0):
    """Parse one FMX1 block from ``buf`` at ``offset``.

    Returns ``(matrix, end_offset)``. Errors carry the absolute byte offset.
    """
    view = memoryview(buf)
    if len(view) - offset < 4 or bytes(view[offset:offset + 4]) != FMX_MAGIC:
        raise FormatError("bad FMX1 magic", offset)
    if len(view) - offset < _HEADER.size:
        raise FormatError("truncated FMX1 header", offset + 4)
    _, rows, cols = _HEADER.unpack_from(view, offset)
    if rows == 0 or cols == 0:
        raise FormatError(f"FMX1 dimensions must be positive, got {rows}x{cols}", offset + 4)
    count = rows * cols
    if count >= 2**61:
        raise FormatError(f"FMX1 dimensions {rows}x{cols} overflow", offset + 4)
    start = offset + _HEADER.size
    end = start + 8 * count
    if end > len(view):
        raise FormatError(
            f"truncated FMX1 payload: header declares {rows}x{cols} "
            f"({8 * count} bytes), only {len(view) - start} present", start)
    flat = np.frombuffer(view[start:end], dtype="<f8").astype(np.float64)
    return flat.reshape((rows, cols), order="F"), end


def save_feature_matrix(m, path):
    Path(path).write_bytes(encode_feature_matrix(m))


def load_feature_matrix(path):
    buf = Path(path).read_bytes()
    m, end = decode_feature_matrix(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after FMX1 payload", end)
    return m


def load_csv_matrix(path):
    """Comma-separated text, one row per feature dimension."""
    m = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    return as_matrix(m, str(path))


def save_labels(labels, path):
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels), encoding="utf-8")


def load_labels(path):
    lines = Path(path).read_text(encoding="utf-8").split()
    try:
        return np.array([int(s) for s in lines], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: labels must be integers ({exc})") from exc


def save_names(names, path):
    Path(path).write_text("".join(f"{s}\n" for s in names), encoding="utf-8")


def load_names(path):
    return tuple(line for line in Path(path).read_text(encoding="utf-8").splitlines() if line)


def _load_any(path):
    path = Path(path)
    if path.exists():
        return load_feature_matrix(path)
    csv = path.with_suffix(".csv")
    if csv.exists():
        return load_csv_matrix(csv)
    raise FileNotFoundError(path)


def save_dataset(dataset, table, directory):
    """Write the six-file dataset layout into ``directory``; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {key: d / name for key, name in DATASET_FILES.items()}
    save_feature_matrix(dataset.images, paths["images"])
    save_feature_matrix(dataset.keyframes, paths["keyframes"])
    save_feature_matrix(dataset.videos, paths["videos"])
    save_feature_matrix(table.embeddings, paths["semantics"])
    save_labels(dataset.labels, paths["labels"])
    save_names(dataset.class_names, paths["class_names"])
    return list(paths.values())


def load_dataset(directory):
    """Inverse of :func:`save_dataset`. ``.csv`` siblings are accepted for matrices."""
    d = Path(directory)
    mats = {key: _load_any(d / DATASET_FILES[key])
            for key in ("images", "keyframes", "videos", "semantics")}
    labels = load_labels(d / DATASET_FILES["labels"])
    names = load_names(d / DATASET_FILES["class_names"])
    ds = TriModalDataset(mats["images"], mats["keyframes"], mats["videos"], labels, names)
    E = mats["semantics"]
    if E.shape[1] != len(names):
        raise ContractError(
            f"semantic table has {E.shape[1]} columns but {len(names)} class names")
    norms = np.linalg.norm(E, axis=0)
    return ds, SemanticTable(E, normalized=bool(np.allclose(norms, 1.0, atol=1e-12)))
