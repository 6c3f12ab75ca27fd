"""Explicit kernel feature maps: Nystrom, random kitchen sinks and Fastfood."""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .kernels import KernelSpec, gram
from .linalg import fwht, inv_sqrt_psd, next_pow2

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Nystrom
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LandmarkSet:
    points: np.ndarray
    k11_inv_sqrt: np.ndarray
    kernel: KernelSpec
    source_indices: np.ndarray
    seed: int = 0

    def __post_init__(self):
        m = self.points.shape[0]
        if m < 1:
            raise ValueError("a landmark set needs at least one point")
        if self.k11_inv_sqrt.shape != (m, m) or len(self.source_indices) != m:
            raise ValueError("landmark set fields disagree on m")
        for a in (self.points, self.k11_inv_sqrt, self.source_indices):
            a.setflags(write=False)

    @property
    def m(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


def build_landmarks(points, kernel, source_indices=None, seed=0, eps_rel=1e-6):
    points = np.array(points, dtype=np.float64)
    if source_indices is None:
        source_indices = np.arange(points.shape[0])
    k11 = gram(kernel, points, points)
    return LandmarkSet(points, inv_sqrt_psd(k11, eps_rel), kernel,
                       np.asarray(source_indices, dtype=np.int64), seed)


def stratified_indices(labels, m, seed=0):
    """Pick m row indices with near-equal counts per class.

    Every class gets floor(m/c) rows; the remainder goes to classes picked
    at random. A class too small for its quota is topped up by uniform
    draws from the rows not yet chosen.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    c = len(classes)
    quota = np.full(c, m // c)
    quota[rng.choice(c, size=m % c, replace=False)] += 1
    chosen = []
    shortfall = 0
    for cls, q in zip(classes, quota):
        idx = np.flatnonzero(labels == cls)
        take = min(q, len(idx))
        shortfall += q - take
        if take:
            chosen.append(rng.choice(idx, size=take, replace=False))
    chosen = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    if shortfall:
        log.warning("stratified quota short by %d rows; filling uniformly", shortfall)
        rest = np.setdiff1d(np.arange(n), chosen)
        chosen = np.concatenate([chosen, rng.choice(rest, size=shortfall, replace=False)])
    return np.sort(chosen)


def sample_landmarks_stratified(features, labels, kernel, m, seed=0):
    features = np.asarray(features, dtype=np.float64)
    if len(labels) != features.shape[0]:
        raise ValueError("one label per feature row")
    chosen = stratified_indices(labels, m, seed)
    return build_landmarks(features[chosen], kernel, chosen, seed)


def sample_landmarks_uniform(features, kernel, m, seed=0):
    """Uniform landmarks without labels, e.g. from an unlabeled pool."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=m, replace=False))
    return build_landmarks(features[chosen], kernel, chosen, seed)


def nystrom_features(ls, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != ls.d:
        raise ValueError(f"input has {x.shape[1]} columns, landmarks have {ls.d}")
    return gram(ls.kernel, x, ls.points) @ ls.k11_inv_sqrt


def nystrom_approx(kernel, x, landmark_points, eps_rel=1e-6):
    """Full Nystrom reconstruction C K11^+ C^T of the Gram matrix of x."""
    c = gram(kernel, x, landmark_points)
    w = inv_sqrt_psd(gram(kernel, landmark_points, landmark_points), eps_rel)
    cw = c @ w
    return cw @ cw.T


_LMK_MAGIC = b"NYSLMK01"


def save_landmarks(ls, path):
    """Binary sidecar: magic, m, d, kernel text, seed, then row-major doubles
    for points and k11_inv_sqrt, then int64 source indices."""
    ktext = ls.kernel.to_text().encode()
    with open(path, "wb") as f:
        f.write(_LMK_MAGIC)
        f.write(struct.pack("<QQq", ls.m, ls.d, int(ls.seed)))
        f.write(struct.pack("<d", ls.kernel.epsilon))
        f.write(struct.pack("<I", len(ktext)))
        f.write(ktext)
        f.write(np.ascontiguousarray(ls.points, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(ls.k11_inv_sqrt, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(ls.source_indices, dtype="<i8").tobytes())


def load_landmarks(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != _LMK_MAGIC:
        raise ValueError(f"{path}: not a landmark sidecar")
    m, d, seed = struct.unpack_from("<QQq", buf, 8)
    (eps,) = struct.unpack_from("<d", buf, 32)
    (klen,) = struct.unpack_from("<I", buf, 40)
    off = 44
    spec = KernelSpec.parse(buf[off:off + klen].decode())
    spec = KernelSpec(spec.kind, spec.gamma, eps)
    off += klen
    need = off + 8 * (m * d + m * m + m)
    if len(buf) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(buf)}")
    pts = np.frombuffer(buf, "<f8", m * d, off).reshape(m, d).astype(np.float64)
    off += 8 * m * d
    w = np.frombuffer(buf, "<f8", m * m, off).reshape(m, m).astype(np.float64)
    off += 8 * m * m
    idx = np.frombuffer(buf, "<i8", m, off).astype(np.int64)
    return LandmarkSet(pts, w, spec, idx, seed)


# ---------------------------------------------------------------------------
# Random kitchen sinks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RksProjection:
    mat: np.ndarray
    activation: str = "trig"

    def __post_init__(self):
        if self.mat.shape[0] < 1:
            raise ValueError("q must be >= 1")
        if self.activation not in ("trig", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def q(self):
        return self.mat.shape[0]


def make_rks(d, q, gamma, seed=0, activation="trig"):
    """Gaussian projection whose trig features approximate exp(-gamma |x-y|^2)."""
    rng = np.random.default_rng(seed)
    return RksProjection(rng.normal(0.0, np.sqrt(2.0 * gamma), size=(q, d)), activation)


def rks_features(p, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != p.mat.shape[1]:
        raise ValueError(f"input has {x.shape[1]} columns, projection expects {p.mat.shape[1]}")
    z = x @ p.mat.T
    if p.activation == "relu":
        return np.sqrt(2.0 / p.q) * np.maximum(z, 0.0)
    return np.hstack([np.cos(z), np.sin(z)]) / np.sqrt(p.q)


# ---------------------------------------------------------------------------
# Fastfood
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FastfoodBlock:
    """One V = S H G P H B / (sigma sqrt(d)) factor, kept in factored form."""
    s_diag: np.ndarray
    g_diag: np.ndarray
    b_diag: np.ndarray
    perm: np.ndarray
    sigma: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.d_pad
        if any(len(a) != n for a in (self.g_diag, self.b_diag, self.perm)):
            raise ValueError("fastfood diagonals disagree on length")
        if not np.all(np.abs(self.b_diag) == 1):
            raise ValueError("b_diag must be +-1")
        if not np.array_equal(np.sort(self.perm), np.arange(n)):
            raise ValueError("perm is not a permutation")
        if np.any(self.s_diag < 0):
            raise ValueError("s_diag must be non-negative")

    @property
    def d_pad(self):
        return len(self.s_diag)

    @property
    def scale(self):
        return 1.0 / (self.sigma * np.sqrt(self.d_pad))


def make_fastfood(d, sigma, seed=0):
    """Sample one Fastfood block for inputs of dimension d (padded to 2^k).

    S rescales each row of H G P H B to a chi(d_pad)-distributed norm, so V
    behaves like a dense matrix of N(0, 1/sigma^2) entries and the trig
    features approximate exp(-|x-y|^2 / (2 sigma^2)).
    """
    n = next_pow2(d)
    rng = np.random.default_rng(seed)
    b = rng.choice([-1.0, 1.0], size=n)
    g = rng.standard_normal(n)
    perm = rng.permutation(n)
    s = stats.chi.rvs(df=n, size=n, random_state=rng) / np.linalg.norm(g)
    return FastfoodBlock(s, g, b, perm, float(sigma), {"s_scaling": "chi(d_pad) / ||G||_F"})


def sigma_for_gamma(gamma):
    """Fastfood sigma matching the RBF kernel exp(-gamma |x-y|^2)."""
    return 1.0 / np.sqrt(2.0 * gamma)


def pad_to(x, n):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] > n:
        raise ValueError(f"input has {x.shape[1]} columns, more than d_pad={n}")
    if x.shape[1] == n:
        return x
    out = np.zeros((x.shape[0], n))
    out[:, :x.shape[1]] = x
    return out


def fastfood_project(blk, x):
    """V x for every row of x, via two Hadamard transforms."""
    x = pad_to(x, blk.d_pad)
    t = fwht(x * blk.b_diag)[:, blk.perm] * blk.g_diag
    return fwht(t) * (blk.s_diag * blk.scale)


def fastfood_dense(blk):
    """Materialized V; oracle for tests, O(d^2) memory."""
    from .linalg import hadamard
    n = blk.d_pad
    h = hadamard(n)
    pmat = np.eye(n)[blk.perm]
    return blk.scale * (blk.s_diag[:, None] * h * blk.g_diag) @ pmat @ (h * blk.b_diag)


def fastfood_features(blocks, x):
    if not blocks:
        raise ValueError("need at least one block")
    n = blocks[0].d_pad
    if any(b.d_pad != n for b in blocks):
        raise ValueError("blocks disagree on d_pad")
    x = pad_to(x, n)
    z = np.hstack([fastfood_project(b, x) for b in blocks])
    return np.hstack([np.cos(z), np.sin(z)]) / np.sqrt(n * len(blocks))
