"""Dense complex linear-algebra kernel.

Every other module builds on the handful of helpers here: a checked matrix
exponential, Kronecker products, Hermiticity and unitarity predicates, and
global-phase-invariant distances between operators.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "DimensionError",
    "NumericError",
    "as_matrix",
    "dagger",
    "commutator",
    "matrix_exponential",
    "kronecker",
    "is_hermitian",
    "is_unitary",
    "unitary_distance",
    "operator_distance",
    "nearest_unitary",
    "hs_inner",
]

DEFAULT_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised on non-finite input or a failed numerical check."""


def as_matrix(a, name="matrix", square=False) -> np.ndarray:
    """Return ``a`` as a 2-D complex array, validating shape and finiteness."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} has non-finite entries")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product ``tr(a^dagger b)``."""
    return complex(np.vdot(a, b))


def matrix_exponential(a) -> np.ndarray:
    """Matrix exponential of a square complex matrix.

    Parameters
    ----------
    a : array_like, shape (n, n) or (..., n, n)
        Generator. Stacked inputs are exponentiated slice by slice.

    Returns
    -------
    numpy.ndarray
        ``exp(a)`` computed by scaling and squaring with a Pade core.

    Raises
    ------
    DimensionError
        If the trailing two axes are not square.
    NumericError
        If any entry is NaN or infinite.
    """
    m = np.asarray(a, dtype=complex)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionError(f"matrix_exponential needs square input, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix_exponential input has non-finite entries")
    if m.shape[-1] == 0:
        return m.copy()
    return scipy.linalg.expm(m)


def kronecker(a, b) -> np.ndarray:
    """Kronecker product with ``(A x B)[i*rB + k, j*cB + l] = A[i, j] B[k, l]``."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def is_hermitian(a, tol: float = DEFAULT_TOL) -> bool:
    m = np.asarray(a)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)


def is_unitary(a, tol: float = DEFAULT_TOL) -> bool:
    m = np.asarray(a)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    eye = np.eye(m.shape[0])
    return bool(np.max(np.abs(m.conj().T @ m - eye), initial=0.0) <= tol)


def _check_pair(u, v):
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1] or u.shape != v.shape:
        raise DimensionError(f"shape mismatch: {u.shape} vs {v.shape}")
    return u, v


def unitary_distance(u, v) -> float:
    """Global-phase-invariant distance between two unitaries.

    Equals ``sqrt(max(0, 1 - |tr(U^dagger V)| / D))`` for unitary inputs. It
    is evaluated as ``||U - exp(-i beta) V||_F / sqrt(2 D)`` with
    ``beta = arg tr(U^dagger V)``, which is the same quantity but keeps full
    relative precision when the distance is tiny.

    Returns
    -------
    float
        0 iff ``V = exp(i alpha) U``; 1 when the trace overlap vanishes.
    """
    u, v = _check_pair(u, v)
    dim = u.shape[0]
    overlap = np.vdot(u, v)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    diff = np.linalg.norm(u - v / phase) ** 2 / (2 * dim)
    # the identity above only holds for unitaries; clamp to the trace form
    exact = 1.0 - abs(overlap) / dim
    if abs(diff - exact) > 1e-6:
        diff = exact
    return float(np.sqrt(max(0.0, diff)))


def operator_distance(a, b) -> float:
    """Phase-invariant distance between two operators after normalization.

    Both operators are scaled to unit Frobenius norm and the global phase is
    optimized, giving ``sqrt(max(0, 1 - |<A, B>|))`` in ``[0, 1]``. Works for
    rectangular and non-unitary inputs such as conditional operators
    restricted to a code subspace.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0 if na == nb else 1.0
    a = a / na
    b = b / nb
    overlap = np.vdot(a, b)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.linalg.norm(a - b / phase) / np.sqrt(2))


def nearest_unitary(a) -> tuple[np.ndarray, float]:
    """Polar-decomposition unitary factor and the spread of singular values.

    Returns
    -------
    u : numpy.ndarray
        Unitary factor of ``a`` scaled to ``a / ||a||``.
    spread : float
        ``(s_max - s_min) / s_max``; zero iff ``a`` is proportional to a
        unitary.
    """
    a = as_matrix(a, square=True)
    w, s, vh = np.linalg.svd(a)
    if s[0] == 0:
        return np.eye(a.shape[0], dtype=complex), 1.0
    return w @ vh, float((s[0] - s[-1]) / s[0])
