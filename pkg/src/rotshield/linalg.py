"""Small dense linear-algebra kernel.

Matrices are plain 2-D ``numpy.ndarray`` objects of ``float64``. The routines
here cover what the perturbation and attack code needs: products, a
Householder QR, a cyclic Jacobi eigensolver for symmetric matrices, norms,
Haar-distributed orthogonal matrices and a small exact assignment solver.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64), whose
output stream is fixed across platforms for a given seed.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "LinAlgError",
    "as_matrix",
    "mat_mul",
    "qr_decompose",
    "sym_eig",
    "frobenius_norm",
    "random_orthogonal",
    "is_orthogonal",
    "optimal_assignment",
]

PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
BRUTE_FORCE_MAX = 8


class LinAlgError(ValueError):
    """Raised on shape errors, singular input or non-symmetric input."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise LinAlgError(f"expected a 2-D matrix, got array of shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinAlgError("matrix contains NaN or Inf entries")
    return m


def mat_mul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise LinAlgError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def qr_decompose(a) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR factorisation by Householder reflections.

    Parameters
    ----------
    a : array_like, shape (m, n) with m >= n

    Returns
    -------
    q : ndarray, shape (m, n)
        Orthonormal columns.
    r : ndarray, shape (n, n)
        Upper triangular, ``a = q @ r``.

    Raises
    ------
    LinAlgError
        If ``m < n`` or a pivot falls below ``1e-12`` relative to ``||a||_F``.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m < n:
        raise LinAlgError(f"qr_decompose needs rows >= cols, got {m}x{n}")
    r = a.copy()
    scale = max(frobenius_norm(a), 1.0)
    reflectors = []
    for k in range(n):
        x = r[k:, k]
        alpha = np.linalg.norm(x)
        if alpha < PIVOT_TOL * scale:
            raise LinAlgError(f"matrix is rank deficient (zero pivot in column {k})")
        v = x.copy()
        # sign choice avoids cancellation in v[0]
        v[0] += alpha if x[0] >= 0 else -alpha
        v /= np.linalg.norm(v)
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        reflectors.append(v)
    q = np.eye(m, n)
    for k in reversed(range(n)):
        v = reflectors[k]
        q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])
    r = np.triu(r[:n, :])
    return q, r


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Returns ``(values, vectors)`` with values sorted in descending order and
    ``vectors[:, i]`` the unit eigenvector for ``values[i]``.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise LinAlgError(f"sym_eig needs a square matrix, got {n}x{m}")
    asym = np.max(np.abs(a - a.T)) if n else 0.0
    if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(a))):
        raise LinAlgError(f"matrix is not symmetric (max |a - a^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(frobenius_norm(a), np.finfo(float).tiny)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= JACOBI_TOL * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < np.finfo(float).tiny:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-100 * abs(diff):
                    # theta would overflow; t ~ 1 / (2 theta)
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 if theta == 0.0 else (
                        np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    )
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], v[:, order]


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.sqrt(np.sum(a * a)))


def random_orthogonal(dim: int, seed: int) -> np.ndarray:
    """Haar-distributed ``dim x dim`` orthogonal matrix, deterministic in ``seed``.

    QR of an i.i.d. standard-normal matrix, with the columns of Q multiplied
    by ``sign(diag(R))`` so the result does not depend on the QR sign
    convention.
    """
    if dim < 1:
        raise LinAlgError("dimension must be at least 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((dim, dim))
    q, r = qr_decompose(z)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def is_orthogonal(q, tol: float = 1e-10) -> bool:
    q = as_matrix(q)
    if q.shape[0] != q.shape[1]:
        return False
    return bool(np.max(np.abs(q @ q.T - np.eye(q.shape[0]))) <= tol)


def optimal_assignment(cost) -> np.ndarray:
    """Minimum-cost perfect matching of a square cost matrix.

    Returns ``cols`` such that row ``i`` is matched to column ``cols[i]``.
    Sizes up to ``BRUTE_FORCE_MAX`` are enumerated exhaustively (ties go to
    the lexicographically first permutation); larger ones use the
    Hungarian-type solver from scipy.
    """
    cost = as_matrix(cost)
    n, m = cost.shape
    if n != m:
        raise LinAlgError(f"assignment needs a square cost matrix, got {n}x{m}")
    if n <= BRUTE_FORCE_MAX:
        rows = np.arange(n)
        best, best_perm = np.inf, None
        for perm in itertools.permutations(range(n)):
            total = cost[rows, perm].sum()
            if total < best - 1e-15:
                best, best_perm = total, perm
        return np.array(best_perm, dtype=int)
    _, cols = linear_sum_assignment(cost)
    return cols.astype(int)
