"""Periodic fields on the unit torus [0, 1)^n with spectral calculus.

Fields are sampled on a uniform grid with ``m`` points per axis (``m`` a
power of two).  Derivatives are Fourier multipliers applied along one
axis at a time.  First derivatives drop the Nyquist mode; pure second
derivatives keep it, so ``d_ii`` is invertible on every non-constant mode
while mixed derivatives stay products of first derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import pi
from typing import Sequence

import numpy as np

from . import symcore
from .errors import DimensionError, GridMismatch, NotPSD, UnderResolvedKernel
from .symcore import SymMatrix

MAX_NODES = 2**24


@dataclass(frozen=True)
class TorusGrid:
    n: int
    m: int

    def __post_init__(self):
        if not 1 <= self.n <= symcore.MAX_DIM:
            raise DimensionError(f"unsupported dimension n={self.n}")
        if self.m < 8 or self.m & (self.m - 1):
            raise ValueError(f"m must be a power of two >= 8, got {self.m}")
        if self.m**self.n > MAX_NODES:
            raise ValueError(f"grid of {self.m}^{self.n} nodes exceeds the 2^24 cap")

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.n

    @property
    def size(self) -> int:
        return self.m**self.n

    def nodes(self) -> np.ndarray:
        return np.arange(self.m) / self.m

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(m,)*n + (n,)``."""
        axes = np.meshgrid(*([self.nodes()] * self.n), indexing="ij")
        return np.stack(axes, axis=-1)


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    kind = "scalar"

    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True)
class VectorField:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.shape + (self.grid.n,):
            raise ValueError(f"expected shape {self.grid.shape + (self.grid.n,)}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    kind = "vector"


@dataclass(frozen=True)
class MatrixField:
    """Symmetric-matrix-valued field.

    ``psd=True`` asserts positive semi-definiteness; it is verified at
    construction against the relative tolerance 1e-10 * (1 + |A(x)|).
    """

    grid: TorusGrid
    values: np.ndarray = field(repr=False)
    psd: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        n = self.grid.n
        if v.shape != self.grid.shape + (n, n):
            raise ValueError(f"expected shape {self.grid.shape + (n, n)}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        vt = np.swapaxes(v, -1, -2)
        scale = 1.0 + np.abs(v).max(initial=0.0)
        if np.abs(v - vt).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("matrix field values are not symmetric")
        # keep one copy of each off-diagonal entry
        iu = np.triu_indices(n, 1)
        v[..., iu[1], iu[0]] = v[..., iu[0], iu[1]]
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.psd:
            assert_psd(self)

    kind = "matrix"

    @classmethod
    def constant(cls, grid: TorusGrid, M, psd: bool = False) -> "MatrixField":
        a = M.to_array() if isinstance(M, SymMatrix) else np.asarray(M, dtype=float)
        return cls(grid, np.broadcast_to(a, grid.shape + a.shape), psd=psd)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.values)[..., 0].min())


@dataclass(frozen=True)
class DivergenceReport:
    abs_part: VectorField
    tv_estimate: float


def _psd_violation(values: np.ndarray) -> tuple[bool, float]:
    ev = np.linalg.eigvalsh(values)
    norm = np.maximum(np.abs(ev[..., 0]), np.abs(ev[..., -1]))
    bad = ev[..., 0] < -symcore.psd_tolerance(norm)
    return bool(np.any(bad)), float(ev[..., 0].min())


def assert_psd(A: MatrixField) -> None:
    bad, lo = _psd_violation(A.values)
    if bad:
        raise NotPSD(f"field has eigenvalue {lo:.3e} below PSD tolerance")


def same_grid(*fields) -> TorusGrid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatch(f"grid mismatch: {g} vs {f.grid}")
    return g


# --------------------------------------------------------------------------
# spectral derivatives


def _rfreq(m: int) -> np.ndarray:
    return np.fft.rfftfreq(m, 1.0 / m)


def diff(values: np.ndarray, axis: int) -> np.ndarray:
    """First derivative along ``axis`` (Nyquist mode dropped)."""
    m = values.shape[axis]
    k = _rfreq(m)
    mult = 2j * pi * k
    mult[-1] = 0.0
    shape = [1] * values.ndim
    shape[axis] = k.size
    vh = np.fft.rfft(values, axis=axis) * mult.reshape(shape)
    return np.fft.irfft(vh, n=m, axis=axis)


def diff2(values: np.ndarray, axis: int) -> np.ndarray:
    """Second derivative along ``axis`` (Nyquist mode kept)."""
    m = values.shape[axis]
    k = _rfreq(m)
    mult = -((2 * pi * k) ** 2)
    shape = [1] * values.ndim
    shape[axis] = k.size
    vh = np.fft.rfft(values, axis=axis) * mult.reshape(shape)
    return np.fft.irfft(vh, n=m, axis=axis)


def grad_values(values: np.ndarray, n: int) -> np.ndarray:
    return np.stack([diff(values, j) for j in range(n)], axis=-1)


def hessian_values(values: np.ndarray, n: int) -> np.ndarray:
    """Spectral Hessian of a scalar grid function, shape ``(m,)*n + (n, n)``."""
    h = np.empty(values.shape + (n, n))
    first = [diff(values, j) for j in range(n)]
    for i in range(n):
        h[..., i, i] = diff2(values, i)
        for j in range(i + 1, n):
            h[..., i, j] = h[..., j, i] = diff(first[j], i)
    return h


def gradient(phi: ScalarField) -> VectorField:
    return VectorField(phi.grid, grad_values(phi.values, phi.grid.n))


def hessian(phi: ScalarField) -> MatrixField:
    return MatrixField(phi.grid, hessian_values(phi.values, phi.grid.n))


# --------------------------------------------------------------------------
# trigonometric interpolation


def _eval_matrix(m: int, x: np.ndarray) -> np.ndarray:
    """Rows evaluate the degree-m trig interpolant (fft ordering) at x."""
    k = np.fft.fftfreq(m, 1.0 / m)
    E = np.exp(2j * pi * np.outer(x, k))
    # split Nyquist symmetrically so real data interpolate to real values
    E[:, m // 2] = np.cos(pi * m * np.asarray(x))
    return E / m


def interpolate_tensor(values: np.ndarray, n: int, targets: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate the trigonometric interpolant on a tensor grid of targets.

    ``targets[j]`` lists the coordinates along axis ``j``; the first ``n``
    axes of ``values`` are spatial, trailing axes are carried along.
    """
    out = values.astype(complex)
    for j in range(n):
        m = out.shape[j]
        coef = np.fft.fft(out, axis=j)
        E = _eval_matrix(m, np.asarray(targets[j], dtype=float))
        out = np.moveaxis(np.tensordot(E, coef, axes=([1], [j])), 0, j)
    return out.real


def interpolate_points(values: np.ndarray, n: int, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant at arbitrary points (P, n)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    coef = np.fft.fftn(values, axes=tuple(range(n))).astype(complex)
    res = []
    for p in points:
        c = coef
        for j in range(n):
            e = _eval_matrix(values.shape[j], np.array([p[j]]))[0]
            c = np.tensordot(e, c, axes=([0], [0]))
        res.append(c.real)
    return np.array(res)


def nearest_tensor(values: np.ndarray, n: int, targets: Sequence[np.ndarray]) -> np.ndarray:
    out = values
    for j in range(n):
        m = out.shape[j]
        idx = np.mod(np.rint(np.asarray(targets[j]) * m).astype(int), m)
        out = np.take(out, idx, axis=j)
    return out


def sample_blowup(values: np.ndarray, n: int, a, R: float, m_out: int,
                  interpolation: str = "trig") -> np.ndarray:
    """Sample ``x -> F(a + R x)`` at the nodes of an m_out grid."""
    x = np.arange(m_out) / m_out
    targets = [a[j] + R * x for j in range(n)]
    if interpolation == "trig":
        return interpolate_tensor(values, n, targets)
    if interpolation == "nearest":
        return nearest_tensor(values, n, targets)
    raise ValueError(f"unknown interpolation {interpolation!r}")


# --------------------------------------------------------------------------
# operations


def mean_matrix(A: MatrixField) -> SymMatrix:
    """Grid average of the field (exact for resolved trig polynomials)."""
    axes = tuple(range(A.grid.n))
    return SymMatrix.from_array(np.mean(A.values, axis=axes))


def det_root_values(A: MatrixField) -> np.ndarray:
    """Pointwise det(A)^(1/(n-1)); small negative determinants clip to 0."""
    n = A.grid.n
    if n < 2:
        raise DimensionError("det^(1/(n-1)) needs n >= 2")
    assert_psd(A)
    d = np.clip(symcore.batch_det(A.values), 0.0, None)
    return d if n == 2 else d ** (1.0 / (n - 1))


def functional_D(A: MatrixField) -> float:
    """Integral over the torus of det(A(x))^(1/(n-1))."""
    return float(np.mean(det_root_values(A)))


def divergence(A: MatrixField) -> DivergenceReport:
    """Row-wise spectral divergence, (div A)_i = sum_j d_j A_ij."""
    n = A.grid.n
    div = np.zeros(A.grid.shape + (n,))
    for j in range(n):
        dj = diff(A.values[..., :, j], j)
        div += dj
    tv = float(np.mean(np.linalg.norm(div, axis=-1)))
    return DivergenceReport(VectorField(A.grid, div), tv)


def lp_norm(A: MatrixField, p: float) -> float:
    """L^p norm of the pointwise operator norm; ``p = inf`` gives the max."""
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    w = symcore.batch_opnorm(A.values)
    if np.isinf(p):
        return float(w.max())
    return float(np.mean(w**p) ** (1.0 / p))


def mollifier_kernel(grid: TorusGrid, eps: float) -> np.ndarray:
    """Discrete smooth bump of radius eps centred at the origin node, unit mass."""
    x = grid.coords()
    d = np.minimum(x, 1.0 - x)  # periodic distance per axis
    r = np.linalg.norm(d, axis=-1) / eps
    rho = np.zeros(grid.shape)
    inside = r < 1.0
    rho[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return rho / rho.sum()


def mollify(A, eps: float):
    """Periodic convolution with a nonnegative unit-mass bump of radius eps.

    Works for scalar, vector and matrix fields; PSD input gives PSD output.
    """
    grid = A.grid
    if eps < 2.0 / grid.m:
        raise UnderResolvedKernel(f"eps={eps} below 2/m={2.0 / grid.m}")
    if eps >= 0.5:
        raise ValueError("eps must be < 1/2")
    axes = tuple(range(grid.n))
    kh = np.fft.rfftn(mollifier_kernel(grid, eps), axes=axes)
    v = A.values
    extra = v.ndim - grid.n
    kh = kh.reshape(kh.shape + (1,) * extra)
    out = np.fft.irfftn(np.fft.rfftn(v, axes=axes) * kh, s=grid.shape, axes=axes)
    if isinstance(A, MatrixField):
        out = 0.5 * (out + np.swapaxes(out, -1, -2))
        return MatrixField(grid, out, psd=A.psd)
    return type(A)(grid, out)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def cutoff_profile(x: np.ndarray, margin: float) -> np.ndarray:
    rise = _smoothstep((x - margin) / margin)
    fall = _smoothstep((1.0 - margin - x) / margin)
    return rise * fall


def bump_cutoff(grid: TorusGrid, margin: float) -> ScalarField:
    """Smooth cutoff in [0, 1]: zero within ``margin`` of the cell boundary,
    one on the centred cube of side ``1 - 4 margin``."""
    if not 0.0 < margin < 0.5:
        raise ValueError(f"margin must lie in (0, 1/2), got {margin}")
    g = cutoff_profile(grid.nodes(), margin)
    phi = np.ones(grid.shape)
    for j in range(grid.n):
        shape = [1] * grid.n
        shape[j] = grid.m
        phi = phi * g.reshape(shape)
    return ScalarField(grid, phi)


def localized_field(Ak: MatrixField, Aa: SymMatrix, a, R: float, phi: ScalarField,
                    interpolation: str = "trig") -> MatrixField:
    """B(x) = phi(x) Ak(a + R x) + (1 - phi(x)) Aa on the unit torus.

    ``Ak`` is sampled at the blown-up points by trigonometric interpolation
    (smooth fields) or nearest node (indicator-type fields); the output
    lives on the grid of ``phi``.
    """
    n = phi.grid.n
    if Ak.grid.n != n or Aa.n != n:
        raise DimensionError("dimension mismatch")
    if R <= 0:
        raise ValueError("R must be positive")
    if phi.values.min() < 0 or phi.values.max() > 1:
        raise ValueError("cutoff values must lie in [0, 1]")
    assert_psd(Ak)
    if not symcore.is_psd(Aa):
        raise NotPSD("constant matrix is not PSD")
    a = np.asarray(a, dtype=float)
    Ak_at = sample_blowup(Ak.values, n, a, R, phi.grid.m, interpolation)
    w = phi.values[..., None, None]
    B = w * Ak_at + (1.0 - w) * Aa.to_array()
    return MatrixField(phi.grid, B, psd=True)
