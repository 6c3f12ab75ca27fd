"""Dense linear algebra helpers: symmetric eigendecomposition, PSD inverse
square root and the fast Walsh-Hadamard transform."""

import numpy as np


class NotPSDError(ValueError):
    pass


def _check_symmetric(a, tol=1e-10):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return a


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix.

    Returns eigenvalues in descending order and the matching eigenvectors
    as columns, so that ``a == U @ diag(lam) @ U.T``.
    """
    a = _check_symmetric(a)
    lam, u = np.linalg.eigh(0.5 * (a + a.T))
    return lam[::-1].copy(), u[:, ::-1].copy()


def inv_sqrt_psd(a, eps_rel=1e-6):
    """Pseudo-inverse square root of a PSD matrix.

    Eigenvalues at or below ``eps_rel * lambda_max`` are dropped rather
    than inverted, which keeps the result finite when landmarks repeat.
    """
    lam, u = sym_eig(a)
    if lam.size == 0:
        return np.zeros((0, 0))
    lmax = lam[0]
    if lmax <= 0:
        if lmax < 0 or np.min(lam) < 0:
            raise NotPSDError("matrix has no positive eigenvalue")
        return np.zeros_like(u)
    if lam[-1] < -1e-6 * lmax:
        raise NotPSDError(f"eigenvalue {lam[-1]:.3g} is significantly negative (max {lmax:.3g})")
    keep = lam > eps_rel * lmax
    f = np.zeros_like(lam)
    f[keep] = 1.0 / np.sqrt(lam[keep])
    out = (u * f) @ u.T
    return 0.5 * (out + out.T)


def is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def next_pow2(n):
    p = 1
    while p < n:
        p <<= 1
    return p


def fwht(v):
    """Unnormalized fast Walsh-Hadamard transform along the last axis.

    Works on a vector or a batch of row vectors; the length must be a power
    of two. Uses the Sylvester ordering, so ``fwht(e_0)`` is all ones.
    """
    x = np.array(v, dtype=np.float64, copy=True)
    n = x.shape[-1]
    if not is_pow2(n):
        raise ValueError(f"length {n} is not a power of 2")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        x = x.reshape(lead + (n // (2 * h), 2, h))
        a = x[..., 0, :]
        b = x[..., 1, :]
        x = np.stack((a + b, a - b), axis=-2)
        h *= 2
    return x.reshape(lead + (n,))


def hadamard(n, dtype=np.float64):
    """Dense Sylvester Hadamard matrix; for tests and oracles only."""
    if not is_pow2(n):
        raise ValueError(f"order {n} is not a power of 2")
    h = np.ones((1, 1), dtype=dtype)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h
