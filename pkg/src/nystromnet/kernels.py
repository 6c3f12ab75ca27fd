"""Kernel functions, Gram matrices and the RBF bandwidth heuristic."""

import re
from dataclasses import dataclass

import numpy as np

KINDS = ("linear", "rbf", "chi2_exp", "chi2_paper")
_TEXT = {"linear": "linear", "rbf": "rbf", "chi2_exp": "chi2exp", "chi2_paper": "chi2paper"}
_FROM_TEXT = {v: k for k, v in _TEXT.items()}

# rows of `a` processed per chunk in gram(); bounds the n*m*d temporary
_CHUNK_ELEMS = 1 << 22


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    gamma: float = 1.0
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind in ("rbf", "chi2_exp") and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def is_psd(self):
        return self.kind != "chi2_paper"

    @property
    def needs_nonneg(self):
        return self.kind.startswith("chi2")

    def to_text(self):
        name = _TEXT[self.kind]
        if self.kind in ("rbf", "chi2_exp"):
            return f"{name}:gamma={self.gamma!r}"
        return name

    @classmethod
    def parse(cls, text):
        """Parse the canonical text form, e.g. ``rbf:gamma=0.5`` or ``linear``."""
        m = re.fullmatch(r"\s*([a-z0-9]+)\s*(?::\s*gamma\s*=\s*([^\s]+))?\s*", text)
        if not m or m.group(1) not in _FROM_TEXT:
            raise ValueError(f"cannot parse kernel spec {text!r}")
        kind = _FROM_TEXT[m.group(1)]
        if kind in ("rbf", "chi2_exp"):
            if m.group(2) is None:
                raise ValueError(f"kernel {text!r} needs a gamma")
            return cls(kind, float(m.group(2)))
        if m.group(2) is not None:
            raise ValueError(f"kernel {kind} takes no gamma")
        return cls(kind)

    def __str__(self):
        return self.to_text()


def linear():
    return KernelSpec("linear")


def rbf(gamma):
    return KernelSpec("rbf", float(gamma))


def chi2_exp(gamma):
    return KernelSpec("chi2_exp", float(gamma))


def _check_nonneg(spec, *arrays):
    if spec.needs_nonneg:
        for a in arrays:
            if a.size and np.min(a) < 0:
                raise ValueError(f"{spec.kind} kernel requires non-negative inputs")


def _pair_term(spec, diff, tot):
    # shared by kernel_eval and gram so the two agree bit for bit
    if spec.kind == "rbf":
        return np.exp(-spec.gamma * np.sum(diff * diff, axis=-1))
    chi = np.sum(diff * diff / (tot + spec.epsilon), axis=-1)
    if spec.kind == "chi2_exp":
        return np.exp(-spec.gamma * chi)
    return chi


def kernel_eval(spec, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    _check_nonneg(spec, x, y)
    if spec.kind == "linear":
        return float(np.dot(x, y))
    return float(_pair_term(spec, x - y, x + y))


def gram(spec, a, b):
    """Kernel matrix with entry (i, j) = k(a_i, b_j)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]} columns")
    _check_nonneg(spec, a, b)
    n, m = a.shape[0], b.shape[0]
    if spec.kind == "linear":
        return a @ b.T
    out = np.empty((n, m))
    step = max(1, _CHUNK_ELEMS // max(1, m * a.shape[1]))
    for i in range(0, n, step):
        ai = a[i:i + step, None, :]
        diff = ai - b[None, :, :]
        tot = ai + b[None, :, :] if spec.needs_nonneg else None
        out[i:i + step] = _pair_term(spec, diff, tot)
    return out


def bandwidth_heuristic(features, pairs=None, seed=0, metric="sqeuclidean"):
    """RBF gamma as the inverse mean squared distance over random pairs.

    ``pairs`` defaults to min(1000, n(n-1)/2). When that covers every pair,
    all pairs are used; otherwise pairs (i, j) with i != j are drawn
    uniformly with the given seed. ``metric="chi2"`` averages the additive
    chi-square distance instead, for the exponential chi2 kernel.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two rows")
    total = n * (n - 1) // 2
    if pairs is None:
        pairs = min(1000, total)
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    if pairs >= total:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=pairs)
        j = rng.integers(0, n - 1, size=pairs)
        j = j + (j >= i)
    if metric == "chi2":
        d2 = np.sum((x[i] - x[j]) ** 2 / (x[i] + x[j] + 1e-8), axis=1)
    else:
        d2 = np.sum((x[i] - x[j]) ** 2, axis=1)
    mean = float(np.mean(d2))
    if mean <= 0:
        raise DegenerateDataError("all sampled pairs coincide; mean distance is zero")
    return 1.0 / mean
