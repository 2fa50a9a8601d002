"""Dense complex linear-algebra kernels used by the estimator.

Everything here is a pure function of its inputs. Matrices are plain
``numpy`` complex128 arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DimensionError",
    "DomainError",
    "DegenerateError",
    "SubspaceError",
    "EigenPairs",
    "hermitian_evd",
    "pseudo_inverse",
    "solve_shift_operator",
    "general_eigenvalues",
    "bessel_j0",
    "complex_gaussian",
    "make_rng",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Operand value lies outside the operation's domain."""


class DegenerateError(ArithmeticError):
    """Input carries no usable information (zero energy, empty set, ...)."""


class SubspaceError(DegenerateError):
    """Signal subspace is rank deficient or cannot be separated from noise."""


@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray  # real, descending
    vectors: np.ndarray  # column k pairs with values[k]


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    return a


def _require_square(a: np.ndarray) -> None:
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")


def hermitian_evd(a, tol: float = 1e-8) -> EigenPairs:
    """Eigendecomposition of a (numerically) Hermitian matrix.

    The input is symmetrized as ``(A + A^H) / 2`` before decomposition, so
    small asymmetries from finite-sample accumulation are harmless.
    Eigenvalues come back sorted in descending order.

    Args:
        a: Square complex matrix, Hermitian up to ``tol`` (relative,
            Frobenius).
        tol: Allowed relative asymmetry. Violations raise ``DomainError``.
    """
    a = _as_matrix(a)
    _require_square(a)
    scale = np.linalg.norm(a)
    if scale > 0 and np.linalg.norm(a - a.conj().T) > tol * scale:
        raise DomainError("matrix is not Hermitian within tolerance")
    h = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(h)
    order = np.argsort(w)[::-1]
    return EigenPairs(values=w[order], vectors=v[:, order])


def pseudo_inverse(a, rtol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``rtol * sigma_max`` are treated as zero.
    """
    a = _as_matrix(a)
    if not 0 < rtol < 1:
        raise DomainError("rtol must lie in (0, 1)")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(a.shape[::-1], dtype=complex)
    keep = s > rtol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vh.conj().T * inv_s) @ u.conj().T


def solve_shift_operator(u_up, u_dw, mode: str = "TLS") -> np.ndarray:
    """Solve ``U_dw ~= U_up @ Q`` for the ``L x L`` rotation operator Q.

    ``mode="LS"`` uses the ordinary least-squares solution, ``"TLS"`` the
    total least-squares one (SVD of ``[U_up | U_dw]``).

    Raises:
        SubspaceError: ``U_up`` is rank deficient (LS) or the TLS partition
            block is singular. Callers typically retry in LS mode or with a
            smaller subspace.
    """
    u_up = _as_matrix(u_up)
    u_dw = _as_matrix(u_dw)
    if u_up.shape != u_dw.shape:
        raise DimensionError(f"shape mismatch {u_up.shape} vs {u_dw.shape}")
    p, L = u_up.shape
    if p < L:
        raise DimensionError("need at least as many rows as columns")
    mode = mode.upper()

    if mode == "LS":
        s = np.linalg.svd(u_up, compute_uv=False)
        if s[-1] <= 1e-12 * max(s[0], np.finfo(float).tiny):
            raise SubspaceError("U_up is rank deficient")
        q, *_ = np.linalg.lstsq(u_up, u_dw, rcond=None)
        return q
    if mode == "TLS":
        _, _, vh = np.linalg.svd(np.hstack([u_up, u_dw]))
        v = vh.conj().T
        v12 = v[:L, L:]
        v22 = v[L:, L:]
        sv = np.linalg.svd(v22, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], np.finfo(float).tiny):
            raise SubspaceError("TLS partition block V22 is singular")
        return -v12 @ np.linalg.inv(v22)
    raise ValueError(f"unknown mode {mode!r}; expected 'LS' or 'TLS'")


def general_eigenvalues(a) -> np.ndarray:
    """Eigenvalues of a small general complex matrix (unordered)."""
    a = _as_matrix(a)
    _require_square(a)
    return np.linalg.eigvals(a)


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind for ``0 <= x <= 1e3``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1e3):
        raise DomainError("bessel_j0 supports 0 <= x <= 1e3")
    out = special.j0(x)
    return float(out) if out.ndim == 0 else out


def make_rng(seed, *stream) -> np.random.Generator:
    """PCG64 stream keyed by a 64-bit seed plus an integer stream path.

    ``make_rng(seed, trial, k)`` always yields the same stream, and distinct
    paths yield statistically independent streams (``SeedSequence`` spawn
    keys), so concurrent workers never share state.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, tuple):
        seed, stream = seed[0], tuple(seed[1:]) + stream
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def complex_gaussian(n: int, variance: float, rng) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussian samples CN(0, variance)."""
    if variance < 0:
        raise DomainError("variance must be non-negative")
    rng = make_rng(rng)
    z = rng.standard_normal((2, n))
    return np.sqrt(variance / 2.0) * (z[0] + 1j * z[1])
