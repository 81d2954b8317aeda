"""Dense real linear algebra used throughout the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and shape
``(rows, cols)``.  The SVD is a one-sided (Hestenes) Jacobi iteration compiled
with numba; it is accurate to working precision for the small and medium
matrices that appear as layer factors here.

Random numbers
--------------
Every random draw in the package goes through :func:`make_rng`, which builds a
``numpy.random.Generator`` on top of the counter-based Philox-4x64 bit
generator.  The 64-bit user seed and an optional tuple of non-negative
integers (the *stream key*) are fed through ``numpy.random.SeedSequence``, so
independent streams for e.g. ``(seed, cell_index)`` never overlap and give the
same numbers on every platform.

Matrix serialization
--------------------
Binary: little-endian ``u64 rows``, ``u64 cols`` followed by ``rows*cols``
``f64`` values in row-major order.  Text: CSV with one matrix row per line and
every value written as its shortest round-trip decimal (``repr``).
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100

_U64_MAX = 2**64 - 1


class SVDConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox-backed generator for ``seed`` and an optional stream key."""
    if not 0 <= int(seed) <= _U64_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in stream))
    return np.random.Generator(np.random.Philox(ss))


def gaussian_matrix(rows: int, cols: int, seed: int, *stream: int) -> np.ndarray:
    """I.i.d. standard normal ``rows x cols`` matrix, reproducible per seed."""
    if rows < 1 or cols < 1:
        raise ValueError(f"shape must be positive, got ({rows}, {cols})")
    return make_rng(seed, *stream).standard_normal((rows, cols))


@numba.njit(cache=True)
def _jacobi_sweeps(u, v, tol, max_sweeps):
    # One-sided Jacobi: rotate column pairs of u until mutually orthogonal.
    # Returns (sweeps used, largest relative off-diagonal seen in final sweep).
    m, n = u.shape
    rot_floor = m * 2.220446049250313e-16
    off = 0.0
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += u[i, p] * u[i, p]
                    beta += u[i, q] * u[i, q]
                    gamma += u[i, p] * u[i, q]
                if alpha == 0.0 or beta == 0.0:
                    continue
                rel = abs(gamma) / np.sqrt(alpha * beta)
                if rel > off:
                    off = rel
                if rel <= rot_floor:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    up = u[i, p]
                    uq = u[i, q]
                    u[i, p] = c * up - s * uq
                    u[i, q] = s * up + c * uq
                for i in range(n):
                    vp = v[i, p]
                    vq = v[i, q]
                    v[i, p] = c * vp - s * vq
                    v[i, q] = s * vp + c * vq
        if off <= tol:
            return sweep + 1, off
    return max_sweeps, off


def _complete_basis(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    # Replace columns flagged as not good with unit vectors orthogonal to the rest.
    m, k = u.shape
    out = u.copy()
    basis = [out[:, j] for j in range(k) if good[j]]
    candidates = iter(np.eye(m))
    for j in range(k):
        if good[j]:
            continue
        for e in candidates:
            w = e.copy()
            for _ in range(2):
                for b in basis:
                    w -= (b @ w) * b
            nrm = np.linalg.norm(w)
            if nrm > 0.5:
                out[:, j] = w / nrm
                basis.append(out[:, j])
                break
    return out


def svd(a: np.ndarray) -> SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ v.T`` via one-sided Jacobi.

    ``sigma`` is sorted descending (stable for ties) and the largest-magnitude
    entry of every left singular vector is made non-negative.

    Raises
    ------
    SVDConvergenceError
        If the column pairs are not orthogonal to ``JACOBI_TOL`` after
        ``JACOBI_MAX_SWEEPS`` sweeps.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 1:
        raise ValueError(f"svd needs a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("svd input has non-finite entries")
    transposed = a.shape[0] < a.shape[1]
    # column-major copies: the sweeps walk columns
    work = np.array(a.T if transposed else a, order="F")
    m, n = work.shape
    v = np.asfortranarray(np.eye(n))
    sweeps, off = _jacobi_sweeps(work, v, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    if off > JACOBI_TOL:
        raise SVDConvergenceError(
            f"Jacobi SVD of {a.shape[0]}x{a.shape[1]} matrix did not converge "
            f"after {sweeps} sweeps (residual {off:.3e})"
        )
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    cutoff = (sigma[0] if sigma[0] > 0 else 1.0) * m * np.finfo(float).eps
    good = sigma > cutoff
    u = np.zeros_like(work)
    u[:, good] = work[:, good] / sigma[good]
    sigma = np.where(good, sigma, 0.0)
    if not good.all():
        u = _complete_basis(u, good)

    if transposed:
        u, v = v, u
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(u=u * signs, sigma=sigma, v=v * signs)


def project_semi_orthogonal(a: np.ndarray) -> np.ndarray:
    """Closest matrix with orthonormal columns (Frobenius norm): ``u @ v.T``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise ValueError(f"expected a tall m x k matrix with m >= k, got {a.shape}")
    res = svd(a)
    return res.u @ res.v.T


@numba.njit(cache=True)
def _polar_many(a, tol, max_sweeps):
    n, m, k = a.shape
    out = np.empty_like(a)
    worst = 0.0
    for b in range(n):
        work = a[b].copy()
        v = np.eye(k)
        _, off = _jacobi_sweeps(work, v, tol, max_sweeps)
        if off > worst:
            worst = off
        for j in range(k):
            nrm = 0.0
            for i in range(m):
                nrm += work[i, j] * work[i, j]
            nrm = np.sqrt(nrm)
            if nrm == 0.0:
                return out, worst, b
            for i in range(m):
                work[i, j] /= nrm
        out[b] = work @ v.T
    return out, worst, -1


def project_semi_orthogonal_many(a: np.ndarray) -> np.ndarray:
    """:func:`project_semi_orthogonal` over a stack ``(n, m, k)`` in one compiled loop.

    Falls back to the single-matrix path for any matrix with a zero column
    after orthogonalization (rank deficient input).
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] < a.shape[2] or min(a.shape) < 1:
        raise ValueError(f"expected a stack of tall matrices (n, m, k), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("input has non-finite entries")
    out, worst, bad = _polar_many(a, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    if bad >= 0:
        return np.stack([project_semi_orthogonal(x) for x in a])
    if worst > JACOBI_TOL:
        raise SVDConvergenceError(
            f"Jacobi SVD of {a.shape[1]}x{a.shape[2]} stack did not converge (residual {worst:.3e})"
        )
    return out


def orthogonality_defect(a: np.ndarray) -> float:
    """Frobenius norm of ``a.T @ a - I``."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.linalg.norm(a.T @ a - np.eye(a.shape[1])))


# -- serialization -----------------------------------------------------------

_HEADER = struct.Struct("<QQ")


def matrix_to_bytes(a: np.ndarray) -> bytes:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    return _HEADER.pack(*a.shape) + a.astype("<f8").tobytes(order="C")


def read_matrix_from(stream) -> np.ndarray:
    head = stream.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("truncated matrix header")
    rows, cols = _HEADER.unpack(head)
    payload = stream.read(8 * rows * cols)
    if len(payload) != 8 * rows * cols:
        raise ValueError(f"truncated matrix payload for shape ({rows}, {cols})")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)


def matrix_from_bytes(data: bytes) -> np.ndarray:
    return read_matrix_from(io.BytesIO(data))


def save_matrix(path, a: np.ndarray) -> None:
    Path(path).write_bytes(matrix_to_bytes(a))


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_matrix_from(fh)


def matrix_to_csv(a: np.ndarray) -> str:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in a)


def matrix_from_csv(text: str) -> np.ndarray:
    rows = [[float(x) for x in line.split(",")] for line in text.splitlines() if line.strip()]
    return np.array(rows, dtype=np.float64)
