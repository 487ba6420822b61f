"""Periodic Monge-Ampere solver: det(H phi + S) = f on the torus.

Damped Newton on the periodic part ``phi`` of the convex potential
``psi(x) = x^T S x / 2 + phi(x)``.  Each linearized step

    tr(cof(H phi + S) H delta) = f - det(H phi + S)

is solved matrix-free with GMRES, preconditioned by the constant
coefficient operator ``tr(cof(S) H .)`` inverted in Fourier space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import pi

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import symcore
from .errors import (DegenerateMean, DimensionError, GridMismatch, NegativeF,
                     NewtonStall, PositivityLoss)
from .symcore import SymMatrix
from .torus import (MatrixField, ScalarField, det_root_values, divergence,
                    grad_values, hessian_values, interpolate_points,
                    mean_matrix, mollify)

log = logging.getLogger(__name__)

DEFAULT_TOL = {2: 1e-9, 3: 1e-7}


@dataclass(frozen=True)
class MAProblem:
    f: ScalarField
    S: SymMatrix
    normalization: str = "mean_zero"
    a: tuple | None = None

    def __post_init__(self):
        if self.S.n != self.f.grid.n:
            raise DimensionError("S and f dimensions differ")
        if self.f.values.min() <= 0:
            raise NegativeF(f"min f = {self.f.values.min():.3e} <= 0")
        if symcore.spectrum(self.S).min <= 0:
            raise ValueError("reference matrix S must be positive definite")
        total = self.f.mean()
        if abs(symcore.determinant(self.S) - total) > 1e-10 * total:
            raise ValueError(
                f"solvability constraint violated: det S = {symcore.determinant(self.S)!r}, "
                f"integral of f = {total!r}"
            )
        if self.normalization not in ("mean_zero", "vanish_at"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "vanish_at":
            if self.a is None or len(self.a) != self.f.grid.n:
                raise ValueError("vanish_at normalization needs a point a")
            object.__setattr__(self, "a", tuple(float(c) for c in self.a))


@dataclass(frozen=True)
class MAResult:
    phi: ScalarField
    S: SymMatrix
    lam: float | None
    residual_inf: float
    residual_l2: float
    newton_iters: int
    min_hessian_eig: float
    compat_defect: float = 0.0
    regularized: bool = False
    history: tuple = field(default=(), repr=False)

    def summary(self) -> dict:
        return {
            "S_upper": list(self.S.upper),
            "lambda": self.lam,
            "residual_inf": self.residual_inf,
            "residual_l2": self.residual_l2,
            "newton_iters": self.newton_iters,
            "min_hessian_eig": self.min_hessian_eig,
            "compat_defect": self.compat_defect,
            "regularized": self.regularized,
        }


def select_reference_matrix(f: ScalarField, mode: str = "isotropic", B: MatrixField | None = None):
    """Reference matrix S with det S equal to the integral of f.

    ``isotropic``: S = (int f)^(1/n) Id.  ``lam``: S = lam * cof(mean B) with
    lam = (int det(B)^(1/(n-1)))^(1/n) / det(mean B)^((n-1)/n).
    Returns ``(S, lam)`` with ``lam = None`` in isotropic mode.
    """
    n = f.grid.n
    if f.values.min() <= 0:
        raise NegativeF(f"min f = {f.values.min():.3e} <= 0")
    total = f.mean()
    if mode == "isotropic":
        return SymMatrix.identity(n).scaled(total ** (1.0 / n)), None
    if mode != "lam":
        raise ValueError(f"unknown mode {mode!r}")
    if B is None:
        raise ValueError("lam mode needs the matrix field B")
    g = det_root_values(B)
    if np.abs(g - f.values).max() > 1e-8 * max(1.0, f.values.max()):
        raise ValueError("f is not det(B)^(1/(n-1))")
    mB = mean_matrix(B)
    dm = symcore.determinant(mB)
    if symcore.spectrum(mB).min <= 1e-14 * (1 + mB.norm()) or dm <= 0:
        raise DegenerateMean("mean of B is singular")
    lam = total ** (1.0 / n) / dm ** ((n - 1) / n)
    return symcore.cofactor(mB).scaled(lam), lam


class _Linearization:
    """Matrix-free Newton operator and Fourier preconditioner on a grid."""

    def __init__(self, shape, n, S):
        self.shape = shape
        self.n = n
        m = shape[0]
        cS = symcore.batch_cof(S)
        k_full = np.fft.fftfreq(m, 1.0 / m)
        k_half = np.fft.rfftfreq(m, 1.0 / m)
        ks = [k_full] * (n - 1) + [k_half]
        K = np.meshgrid(*ks, indexing="ij")
        Kt = []
        for k in K:
            kt = k.copy()
            kt[np.abs(k) == m // 2] = 0.0  # first derivatives drop Nyquist
            Kt.append(kt)
        sym = np.zeros(K[0].shape)
        for i in range(n):
            sym -= (2 * pi) ** 2 * cS[i, i] * K[i] ** 2
            for j in range(n):
                if i != j:
                    sym -= (2 * pi) ** 2 * cS[i, j] * Kt[i] * Kt[j]
        zero = (slice(0, 1),) * n
        sym[zero] = 1.0  # mean constraint row
        sym[sym == 0] = 1.0
        self.inv_sym = 1.0 / sym
        self.C = None

    def set_coefficients(self, C):
        self.C = C

    def matvec(self, x):
        d = x.reshape(self.shape)
        H = hessian_values(d, self.n)
        out = np.einsum("...ij,...ij->...", self.C, H) + d.mean()
        return out.ravel()

    def precond(self, r):
        r = r.reshape(self.shape)
        axes = tuple(range(self.n))
        z = np.fft.irfftn(np.fft.rfftn(r, axes=axes) * self.inv_sym, s=self.shape, axes=axes)
        return z.ravel()


def _state(phi, S, f, n):
    H = hessian_values(phi, n) + S
    return H, f - symcore.batch_det(H)


def solve_periodic_ma(problem: MAProblem, *, tol: float | None = None, max_iter: int = 50,
                      lam: float | None = None, regularize: bool = False) -> MAResult:
    """Solve det(H phi + S) = f for periodic phi.

    ``regularize=True`` pre-mollifies f with eps = 4/m (for indicator-type
    data) and flags the result.  Raises :class:`NewtonStall` when the
    residual stops decreasing above ``tol`` and :class:`PositivityLoss`
    when no damping keeps H phi + S positive definite.
    """
    grid = problem.f.grid
    n = grid.n
    if tol is None:
        tol = DEFAULT_TOL.get(n, 1e-7)
    f_field = mollify(problem.f, 4.0 / grid.m) if regularize else problem.f
    f = np.asarray(f_field.values)
    S = problem.S.to_array()
    fmax = float(f.max())
    detS = float(np.linalg.det(S))

    lin = _Linearization(grid.shape, n, S)
    N = grid.size
    op = LinearOperator((N, N), matvec=lin.matvec, dtype=float)
    M = LinearOperator((N, N), matvec=lin.precond, dtype=float)

    phi = np.zeros(grid.shape)
    H, r = _state(phi, S, f, n)
    res = float(np.abs(r).max()) / fmax
    history = [res]
    compat = abs(float(symcore.batch_det(H).mean()) - detS)
    iters = 0

    def result(phi, H, r, iters):
        phi = phi.copy()
        if problem.normalization == "mean_zero":
            phi -= phi.mean()
        else:
            phi -= float(interpolate_points(phi, n, [problem.a])[0])
        return MAResult(
            phi=ScalarField(grid, phi),
            S=problem.S,
            lam=lam,
            residual_inf=float(np.abs(r).max()) / fmax,
            residual_l2=float(np.sqrt(np.mean(r**2))) / fmax,
            newton_iters=iters,
            min_hessian_eig=float(np.linalg.eigvalsh(H)[..., 0].min()),
            compat_defect=compat,
            regularized=regularize,
            history=tuple(history),
        )

    while res > tol:
        if iters >= max_iter:
            raise NewtonStall(f"no convergence in {max_iter} Newton steps (residual {res:.3e})",
                              best=result(phi, H, r, iters))
        lin.set_coefficients(symcore.batch_cof(H))
        rtol = min(1e-3, max(1e-13, 1e-3 * res))
        delta, info = gmres(op, r.ravel(), M=M, rtol=rtol, atol=0.0, restart=60, maxiter=20)
        if info < 0:
            raise RuntimeError(f"GMRES breakdown (info={info})")
        delta = delta.reshape(grid.shape)

        t = 1.0
        accepted = False
        positive_seen = False
        for _ in range(40):
            phi_t = phi + t * delta
            H_t, r_t = _state(phi_t, S, f, n)
            if np.linalg.eigvalsh(H_t)[..., 0].min() > 0:
                positive_seen = True
                res_t = float(np.abs(r_t).max()) / fmax
                if res_t < res:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            best = result(phi, H, r, iters)
            if not positive_seen:
                raise PositivityLoss("no admissible damping keeps H psi positive definite", best=best)
            raise NewtonStall(f"residual plateau at {res:.3e}", best=best)
        phi, H, r, res = phi_t, H_t, r_t, res_t
        iters += 1
        history.append(res)
        compat = max(compat, abs(float(symcore.batch_det(H).mean()) - detS))
        log.debug("newton %d: step %.3g residual %.3e", iters, t, res)

    return result(phi, H, r, iters)


@dataclass(frozen=True)
class MADiagnostics:
    amgm_min_slack: float
    grad_ratio: float
    ibp_defect: float
    int_tr_hphi_b: float
    int_div_b_grad_phi: float


def ma_diagnostics(result: MAResult, B: MatrixField) -> MADiagnostics:
    """AM-GM slack, gradient ratio and integration-by-parts defect.

    * ``amgm_min_slack`` = min_x tr((H phi + S) B)/n - det(B)^(1/(n-1))
    * ``grad_ratio`` = |grad phi|_inf / |S|
    * ``ibp_defect`` = |int tr(H phi B) + int (div B, grad phi)|
    """
    if B.grid != result.phi.grid:
        raise GridMismatch("B and the solution live on different grids")
    n = B.grid.n
    f = det_root_values(B)
    Hphi = hessian_values(np.asarray(result.phi.values), n)
    Hpsi = Hphi + result.S.to_array()
    tr = np.einsum("...ij,...ji->...", Hpsi, B.values)
    slack = float((tr / n - f).min())
    g = grad_values(np.asarray(result.phi.values), n)
    gmax = float(np.linalg.norm(g, axis=-1).max())
    t1 = float(np.mean(np.einsum("...ij,...ji->...", Hphi, B.values)))
    t2 = float(np.mean(np.einsum("...i,...i->...", divergence(B).abs_part.values, g)))
    return MADiagnostics(
        amgm_min_slack=slack,
        grad_ratio=gmax / result.S.norm(),
        ibp_defect=abs(t1 + t2),
        int_tr_hphi_b=t1,
        int_div_b_grad_phi=t2,
    )
