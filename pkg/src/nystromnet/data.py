"""Datasets, loaders and the frozen random-projection feature extractor."""

import csv
import gzip
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

SPLITS = ("train", "val", "test", "pool")


class DataFormatError(ValueError):
    pass


class BadMagicError(DataFormatError):
    pass


class TruncatedPayloadError(DataFormatError):
    pass


class NonNumericFieldError(DataFormatError):
    pass


class EmptyDatasetError(DataFormatError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features with integer labels and a split tag per row.

    The ``pool`` split holds training rows whose labels are withheld from
    the learner; they remain available as landmark candidates.
    """
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    name: str = "dataset"
    seed: int = 0

    def __post_init__(self):
        f, y, s = self.features, self.labels, self.split
        if f.ndim != 2 or y.shape != (f.shape[0],) or s.shape != y.shape:
            raise ValueError("features, labels and split disagree on row count")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative")
        bad = set(np.unique(s)) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")
        for a in (f, y, s):
            a.setflags(write=False)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def part(self, name):
        mask = self.split == name
        return self.features[mask], self.labels[mask]

    @property
    def train(self):
        return self.part("train")

    @property
    def val(self):
        return self.part("val")

    @property
    def test(self):
        return self.part("test")

    def landmark_pool(self):
        """Rows usable as landmarks: labeled training plus the unlabeled pool."""
        mask = (self.split == "train") | (self.split == "pool")
        return self.features[mask], self.labels[mask]

    def with_features(self, features):
        return replace(self, features=np.asarray(features, dtype=np.float64))


def stratified_split(labels, fractions=(0.7, 0.15, 0.15), seed=0):
    """Per-class split into train/val/test tags."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    split = np.empty(labels.shape[0], dtype="<U5")
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        split[idx[:n_tr]] = "train"
        split[idx[n_tr:n_tr + n_va]] = "val"
        split[idx[n_tr + n_va:]] = "test"
    return split


def make_blobs(n, d, c, cluster_sep, seed=0):
    """c unit-covariance Gaussian clusters whose closest centers are
    exactly ``cluster_sep`` apart."""
    if not n >= c >= 2:
        raise ValueError(f"need n >= c >= 2, got n={n}, c={c}")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((c, d))
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    dmin = dist[np.triu_indices(c, 1)].min()
    centers *= cluster_sep / dmin
    labels = rng.permutation(np.arange(n) % c)
    x = centers[labels] + rng.standard_normal((n, d))
    return Dataset(x, labels.astype(np.int64), stratified_split(labels, seed=seed),
                   f"blobs-n{n}-d{d}-c{c}-sep{cluster_sep:g}", seed)


def subsample_per_class(ds, k_per_class, seed=0):
    """Keep exactly k labeled training rows per class; the rest of the
    training rows move to the unlabeled pool."""
    rng = np.random.default_rng(seed)
    split = ds.split.copy()
    train_mask = split == "train"
    for cls in range(ds.n_classes):
        idx = np.flatnonzero(train_mask & (ds.labels == cls))
        if len(idx) < k_per_class:
            raise ValueError(f"class {cls} has {len(idx)} training rows, need {k_per_class}")
        drop = rng.permutation(idx)[k_per_class:]
        split[drop] = "pool"
    return replace(ds, split=split, name=f"{ds.name}-k{k_per_class}")


@dataclass(frozen=True, eq=False)
class FrozenExtractor:
    """Seeded random projection plus relu, standing in for a pretrained
    convolutional trunk."""
    projection: np.ndarray
    shift: float = 0.0

    def __post_init__(self):
        self.projection.setflags(write=False)

    @classmethod
    def make(cls, d_raw, d_feat, seed=0, shift=0.0):
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((d_raw, d_feat)) / np.sqrt(d_raw), float(shift))

    @property
    def d_raw(self):
        return self.projection.shape[0]


def extract(fx, raw):
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if raw.shape[1] != fx.d_raw:
        raise ValueError(f"extractor expects {fx.d_raw} columns, got {raw.shape[1]}")
    return np.maximum(raw @ fx.projection, 0.0) + fx.shift


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _open(path):
    with open(path, "rb") as f:
        head = f.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path):
    """Read an IDX file into an array with its stored shape and dtype."""
    with _open(path) as f:
        buf = f.read()
    if len(buf) < 4 or buf[0] != 0 or buf[1] != 0 or buf[2] not in _IDX_TYPES:
        raise BadMagicError(f"{path}: bad IDX magic {buf[:4].hex()}")
    dtype = np.dtype(_IDX_TYPES[buf[2]])
    ndim = buf[3]
    if len(buf) < 4 + 4 * ndim:
        raise TruncatedPayloadError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", buf[4:4 + 4 * ndim])
    count = int(np.prod(dims)) if dims else 1
    off = 4 + 4 * ndim
    if len(buf) - off < count * dtype.itemsize:
        raise TruncatedPayloadError(f"{path}: expected {count * dtype.itemsize} payload bytes, "
                                    f"found {len(buf) - off}")
    return np.frombuffer(buf, dtype, count, off).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array)
    codes = {(np.dtype(v).kind, np.dtype(v).itemsize): k for k, v in _IDX_TYPES.items()}
    code = codes[(array.dtype.kind, array.dtype.itemsize)]
    with open(path, "wb") as f:
        f.write(bytes([0, 0, code, array.ndim]))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.astype(_IDX_TYPES[code]).tobytes())


def load_idx(images_path, labels_path, seed=0, name=None):
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError("image and label counts differ")
    if images.shape[0] == 0:
        raise EmptyDatasetError(f"{images_path}: no rows")
    x = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.dtype(">u1"):
        x /= 255.0
    y = labels.astype(np.int64).reshape(-1)
    return Dataset(x, y, stratified_split(y, seed=seed), name or str(images_path), seed)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_csv(path, features, labels):
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["label"] + [f"f{j}" for j in range(features.shape[1])])
        for lab, row in zip(labels, features):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def load_csv(path, seed=0, name=None):
    """CSV with a mandatory ``label,f0,f1,...`` header."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or not rows[0] or rows[0][0].strip() != "label":
        raise DataFormatError(f"{path}: header must start with 'label'")
    width = len(rows[0])
    body = [r for r in rows[1:] if r]
    if not body:
        raise EmptyDatasetError(f"{path}: no data rows")
    x = np.empty((len(body), width - 1))
    y = np.empty(len(body), dtype=np.int64)
    for i, r in enumerate(body, start=2):
        if len(r) != width:
            raise DataFormatError(f"{path}:{i}: expected {width} fields, got {len(r)}")
        try:
            y[i - 2] = int(r[0])
            x[i - 2] = [float(v) for v in r[1:]]
        except ValueError as e:
            raise NonNumericFieldError(f"{path}:{i}: {e}") from None
    return Dataset(x, y, stratified_split(y, seed=seed), name or str(path), seed)


def write_manifest(ds, path):
    doc = {
        "name": ds.name,
        "seed": ds.seed,
        "n": int(ds.features.shape[0]),
        "d": int(ds.features.shape[1]),
        "classes": ds.n_classes,
        "splits": {s: np.flatnonzero(ds.split == s).tolist() for s in SPLITS if np.any(ds.split == s)},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
