"""Symmetric matrix algebra: determinants, cofactors, spectra and
elementary symmetric functions of eigenvalues.

Scalar-level operations work on :class:`SymMatrix`.  The ``batch_*``
functions apply the same formulas to stacks of full matrices with shape
``(..., n, n)`` and are what the field code uses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError

MAX_DIM = 8


def _check_dim(n: int) -> None:
    if not 1 <= n <= MAX_DIM:
        raise DimensionError(f"dimension n={n} not supported (1 <= n <= {MAX_DIM})")


@dataclass(frozen=True)
class SymMatrix:
    """Dense symmetric n x n matrix stored as its upper triangle (row-wise)."""

    n: int
    upper: tuple

    def __post_init__(self):
        _check_dim(self.n)
        if len(self.upper) != self.n * (self.n + 1) // 2:
            raise ValueError(
                f"expected {self.n * (self.n + 1) // 2} upper-triangle entries, "
                f"got {len(self.upper)}"
            )
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))

    @classmethod
    def from_array(cls, a, atol: float = 1e-12) -> "SymMatrix":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        scale = 1.0 + np.abs(a).max(initial=0.0)
        if np.abs(a - a.T).max(initial=0.0) > atol * scale:
            raise ValueError("matrix is not symmetric")
        n = a.shape[0]
        iu = np.triu_indices(n)
        return cls(n, tuple(a[iu]))

    @classmethod
    def identity(cls, n: int) -> "SymMatrix":
        return cls.from_array(np.eye(n))

    @classmethod
    def diag(cls, values: Sequence[float]) -> "SymMatrix":
        return cls.from_array(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def zeros(cls, n: int) -> "SymMatrix":
        return cls(n, (0.0,) * (n * (n + 1) // 2))

    def to_array(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        iu = np.triu_indices(self.n)
        a[iu] = self.upper
        a.T[iu] = self.upper
        return a

    def __getitem__(self, ij):
        i, j = ij
        if i > j:
            i, j = j, i
        # row-wise upper triangle offset
        return self.upper[i * self.n - i * (i - 1) // 2 + (j - i)]

    def __add__(self, other: "SymMatrix") -> "SymMatrix":
        if other.n != self.n:
            raise DimensionError("dimension mismatch")
        return SymMatrix(self.n, tuple(a + b for a, b in zip(self.upper, other.upper)))

    def __sub__(self, other: "SymMatrix") -> "SymMatrix":
        return self + other.scaled(-1.0)

    def scaled(self, t: float) -> "SymMatrix":
        return SymMatrix(self.n, tuple(t * v for v in self.upper))

    def __mul__(self, t: float) -> "SymMatrix":
        return self.scaled(t)

    __rmul__ = __mul__

    def norm(self) -> float:
        """Operator (spectral) norm."""
        return float(np.abs(spectrum(self).eigenvalues).max())


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: tuple  # ascending

    @property
    def min(self) -> float:
        return self.eigenvalues[0]

    @property
    def max(self) -> float:
        return self.eigenvalues[-1]


def _as_array(A) -> np.ndarray:
    if isinstance(A, SymMatrix):
        return A.to_array()
    a = np.asarray(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    _check_dim(a.shape[0])
    return a


def psd_tolerance(norm: float) -> float:
    return 1e-10 * (1.0 + norm)


# --------------------------------------------------------------------------
# batched kernels on (..., n, n) arrays


def batch_det(a: np.ndarray) -> np.ndarray:
    """Determinants of a stack of square matrices.

    Closed-form expansion for n <= 3, LU with partial pivoting otherwise.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    if n == 1:
        return a[..., 0, 0].copy()
    if n == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if n == 3:
        return (
            a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
        )
    return np.linalg.det(a)


def batch_cof(a: np.ndarray) -> np.ndarray:
    """Cofactor matrices, cof(A)_ij = (-1)^(i+j) det(minor_ij).

    Defined for singular input.  For symmetric input the result is
    symmetric, and A @ cof(A).T = det(A) Id.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    out = np.empty_like(a)
    if n == 1:
        out[...] = 1.0
        return out
    if n == 2:
        out[..., 0, 0] = a[..., 1, 1]
        out[..., 1, 1] = a[..., 0, 0]
        out[..., 0, 1] = -a[..., 1, 0]
        out[..., 1, 0] = -a[..., 0, 1]
        return out
    idx = np.arange(n)
    for i in range(n):
        rows = idx[idx != i]
        for j in range(n):
            cols = idx[idx != j]
            minor = a[..., rows[:, None], cols[None, :]]
            out[..., i, j] = (-1) ** (i + j) * batch_det(minor)
    if np.array_equal(a, np.swapaxes(a, -1, -2)):
        il = np.tril_indices(n, -1)
        out[..., il[0], il[1]] = out[..., il[1], il[0]]
    return out


def batch_eigvalsh(a: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(a)


def batch_opnorm(a: np.ndarray) -> np.ndarray:
    """Pointwise operator norm of symmetric matrices."""
    ev = np.linalg.eigvalsh(a)
    return np.maximum(np.abs(ev[..., 0]), np.abs(ev[..., -1]))


def elementary_symmetric_from_values(lam: np.ndarray) -> np.ndarray:
    """All elementary symmetric polynomials e_0..e_n of the last axis.

    Returns an array with trailing axis of length n + 1.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for j in range(n):
        # multiply the generating polynomial by (1 + lam_j t)
        e[..., 1 : j + 2] = e[..., 1 : j + 2] + lam[..., j : j + 1] * e[..., 0 : j + 1]
    return e


# --------------------------------------------------------------------------
# scalar API


def determinant(A) -> float:
    return float(batch_det(_as_array(A)))


def cofactor(A) -> SymMatrix:
    a = _as_array(A)
    c = batch_cof(a)
    # exact symmetry: keep the upper triangle
    return SymMatrix(a.shape[0], tuple(c[np.triu_indices(a.shape[0])]))


def spectrum(A) -> Spectrum:
    a = _as_array(A)
    try:
        ev = np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"eigensolver did not converge: {exc}") from exc
    return Spectrum(tuple(float(v) for v in ev))


def is_psd(A) -> bool:
    a = _as_array(A)
    ev = np.linalg.eigvalsh(a)
    return bool(ev[0] >= -psd_tolerance(np.abs(ev).max()))


def elementary_symmetric(A, i: int) -> float:
    """M_i(A): i-th elementary symmetric function of the eigenvalues of A.

    ``M_0 = 1`` and ``M_n = det(A)``.
    """
    a = _as_array(A)
    n = a.shape[0]
    if not 0 <= i <= n:
        raise IndexError(f"index i={i} out of range 0..{n}")
    if i == 0:
        return 1.0
    e = elementary_symmetric_from_values(np.linalg.eigvalsh(a))
    return float(e[i])


def char_poly_coeffs(A) -> list:
    """Coefficients c_0..c_n of P_A(t) = det(t Id - A) = sum c_i t^i."""
    a = _as_array(A)
    n = a.shape[0]
    e = elementary_symmetric_from_values(np.linalg.eigvalsh(a))
    return [float((-1) ** (i + n) * e[n - i]) for i in range(n + 1)]
