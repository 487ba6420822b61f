"""Experiment harness: quasiconcavity gaps, semicontinuity probes, the
localized Monge-Ampere inequality terms, and Young-measure moments of
periodic oscillation sequences."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import symcore
from .errors import FamilyMismatch, NotUniformlyElliptic
from .generators import SequenceSpec
from .monge_ampere import MAProblem, select_reference_matrix, solve_periodic_ma
from .symcore import SymMatrix
from .torus import (MatrixField, ScalarField, assert_psd, bump_cutoff,
                    det_root_values, divergence, functional_D,
                    grad_values, hessian_values, localized_field, lp_norm, mean_matrix,
                    sample_blowup)


def det_root(M: SymMatrix) -> float:
    """det(M)^(1/(n-1)) with tiny negative determinants clipped to zero."""
    return max(symcore.determinant(M), 0.0) ** (1.0 / (M.n - 1))


@dataclass(frozen=True)
class QuasiconcavityCheck:
    gap: float
    mean_D: float
    det_mean_root: float
    div_tv: float

    def __float__(self):
        return self.gap


def check_quasiconcavity(A: MatrixField) -> QuasiconcavityCheck:
    """gap = det(mean A)^(1/(n-1)) - int det(A)^(1/(n-1)).

    Nonnegative for divergence-free PSD fields; ``div_tv`` is recorded so a
    negative gap on a non-divergence-free input can be attributed.
    """
    D = functional_D(A)
    rhs = det_root(mean_matrix(A))
    return QuasiconcavityCheck(rhs - D, D, rhs, divergence(A).tv_estimate)


# --------------------------------------------------------------------------
# semicontinuity probe


@dataclass(frozen=True)
class ProbeRow:
    k: int
    D: float
    D_sampled: float
    lp_crit: float
    lp_p: float
    div_tv: float
    peak_density: float


@dataclass(frozen=True)
class ProbeReport:
    family: str
    n: int
    p: float
    k_range: tuple
    rows: tuple
    D_limit: float
    D_limit_alt: float | None
    limit_mean: SymMatrix
    gap: float

    @property
    def p_crit(self) -> float:
        return self.n / (self.n - 1)

    CSV_COLUMNS = ("k", "D", "D_sampled", "lp_crit", "lp_p", "div_tv", "peak_density")

    def csv_rows(self):
        return [[getattr(r, c) for c in self.CSV_COLUMNS] for r in self.rows]


def usc_probe(spec: SequenceSpec, p: float) -> ProbeReport:
    """Tabulate D(A_k), L^p norms and divergence mass along a sequence and
    compare the finite-range limsup (max over rows) with D of the limit.

    Limits: counterexample -> 0, oscillation -> mean of the base field,
    mollified and constant -> the base field.
    """
    rows = []
    n = None
    for k in spec.k_range:
        A, rec = spec.member(k)
        n = A.grid.n
        pc = n / (n - 1)
        Ds = functional_D(A)
        peak = float(det_root_values(A).max())
        if rec is not None:
            rows.append(ProbeRow(k, rec.exact_D, Ds, rec.exact_lp(pc), rec.exact_lp(p),
                                 rec.exact_div_tv, peak))
        else:
            rows.append(ProbeRow(k, Ds, Ds, lp_norm(A, pc), lp_norm(A, p),
                                 divergence(A).tv_estimate, peak))

    if spec.family == "counterexample":
        limit_mean = SymMatrix.zeros(n)
        D_limit, D_alt = 0.0, det_root(limit_mean)
    elif spec.family == "oscillation":
        base = spec.params["base"]
        limit_mean = mean_matrix(base)
        limit = MatrixField.constant(base.grid, limit_mean)
        D_limit, D_alt = functional_D(limit), det_root(limit_mean)
    else:
        base = spec.params["base"]
        limit_mean = mean_matrix(base)
        D_limit = functional_D(base)
        const = np.ptp(base.values.reshape(-1, n, n), axis=0).max() == 0
        D_alt = det_root(limit_mean) if const else None

    declared = spec.params.get("limit")
    if isinstance(declared, MatrixField):
        if np.abs(mean_matrix(declared).to_array() - limit_mean.to_array()).max() > 1e-10:
            raise FamilyMismatch(f"declared limit does not match the {spec.family} family")

    gap = max(r.D for r in rows) - D_limit
    return ProbeReport(spec.family, n, float(p), spec.k_range, tuple(rows), D_limit, D_alt,
                       limit_mean, gap)


# --------------------------------------------------------------------------
# localized Monge-Ampere inequality


@dataclass(frozen=True)
class ProofTermsReport:
    k: int | None
    R: float
    I: float
    II: float
    III: float
    III1: float
    III2: float
    III3: float
    gamma: float
    lam: float
    eps: float
    S_norm: float
    phi_c0: float
    grad_phi_inf: float
    residual_inf: float
    newton_iters: int
    min_hessian_eig: float
    cutoff_mass: float
    n: int
    checks: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        n = self.n
        return self.II ** (1 / n) - self.III / (n * self.gamma) - self.I ** ((n - 1) / n)

    @property
    def parts_defect(self) -> float:
        return abs(self.III - (self.III1 - self.III2 - self.III3))

    CSV_COLUMNS = ("k", "R", "I", "II", "III", "III1", "III2", "III3", "gamma", "lam",
                   "slack", "S_norm", "phi_c0", "grad_phi_inf", "residual_inf", "newton_iters")

    def csv_row(self):
        return [getattr(self, c) for c in self.CSV_COLUMNS]


def proof_terms(Ak: MatrixField, Aconst: SymMatrix, a, R: float, margin: float, *,
                eps: float | None = None, k: int | None = None,
                interpolation: str = "trig") -> ProofTermsReport:
    """Build B = phi Ak(a + R x) + (1 - phi) Aconst, solve the periodic
    Monge-Ampere problem with S = lam cof(mean B), and evaluate the terms of

        I^((n-1)/n) <= II^(1/n) - III / (n gamma).

    ``III`` is the integral of (div B, grad phi_MA); ``III1 - III2 - III3``
    is its split into the divergence of Ak and the cutoff derivatives.
    """
    grid = Ak.grid
    n = grid.n
    a = np.asarray(a, dtype=float)
    assert_psd(Ak)
    lo_k = Ak.min_eigenvalue()
    lo_c = symcore.spectrum(Aconst).min
    if eps is None:
        eps = min(lo_k, lo_c)
    if eps <= 0:
        raise NotUniformlyElliptic("epsilon must be positive")
    if lo_k < eps - 1e-12 or lo_c < eps - 1e-12:
        raise NotUniformlyElliptic(f"min eigenvalue {min(lo_k, lo_c):.3e} < eps = {eps}")

    cut = bump_cutoff(grid, margin)
    B = localized_field(Ak, Aconst, a, R, cut, interpolation=interpolation)
    f = ScalarField(grid, det_root_values(B))
    S, lam = select_reference_matrix(f, "lam", B)
    sol = solve_periodic_ma(MAProblem(f, S, "vanish_at", tuple(a)), lam=lam,
                            regularize=(interpolation == "nearest"))
    phi_ma = np.asarray(sol.phi.values)
    g = grad_values(phi_ma, n)

    Ak_at = sample_blowup(Ak.values, n, a, R, grid.m, interpolation)
    divAk_at = sample_blowup(divergence(Ak).abs_part.values, n, a, R, grid.m, interpolation)
    c = np.asarray(cut.values)
    grad_c = grad_values(c, n)
    hess_c = hessian_values(c, n)

    q = n / (n - 1)
    det_at = np.clip(symcore.batch_det(Ak_at), 0.0, None) ** (1.0 / (n - 1))
    I = float(np.mean(c**q * det_at))
    II = symcore.determinant(mean_matrix(B))
    III = float(np.mean(np.einsum("...i,...i->...", divergence(B).abs_part.values, g)))
    III1 = R * float(np.mean(c * np.einsum("...i,...i->...", divAk_at, g)))
    III2 = R * float(np.mean(np.einsum("...i,...i->...", divAk_at, grad_c) * phi_ma))
    diffA = Ak_at - Aconst.to_array()
    III3 = float(np.mean(np.einsum("...ij,...ij->...", diffA, hess_c) * phi_ma))
    gamma = f.mean() ** (1.0 / n)

    rep = ProofTermsReport(
        k=k, R=float(R), I=I, II=II, III=III, III1=III1, III2=III2, III3=III3,
        gamma=gamma, lam=float(lam), eps=float(eps), S_norm=S.norm(),
        phi_c0=float(np.abs(phi_ma).max()), grad_phi_inf=float(np.linalg.norm(g, axis=-1).max()),
        residual_inf=sol.residual_inf, newton_iters=sol.newton_iters,
        min_hessian_eig=sol.min_hessian_eig, cutoff_mass=float(np.mean(c**q)), n=n,
    )
    rep.checks["gamma_bound"] = gamma >= eps ** (1.0 / (n - 1)) - 1e-8
    rep.checks["slack_nonnegative"] = rep.slack >= -1e-6 * (1.0 + II)
    return rep


# --------------------------------------------------------------------------
# Young measures of oscillation sequences


@dataclass(frozen=True)
class YoungEstimate:
    """Homogeneous Young measure of A_k(x) = B(k x): the push-forward of the
    uniform measure on the cell under B, identical at every point x."""

    x: tuple
    samples: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    moments: tuple
    det_moment: float
    det_mean_root: float
    div_tv: float
    divergence_free: bool

    @property
    def fm_slack(self) -> float:
        return self.det_mean_root - self.det_moment

    @property
    def fm_holds(self) -> bool:
        return self.det_moment <= self.det_mean_root + 1e-8


def young_measure_estimate(B: MatrixField, test_moments: bool = True, x=None,
                           divergence_free: bool | None = None) -> YoungEstimate:
    """Moments of the Young measure generated by x -> B(k x).

    ``moments[i]`` is the average of M_i(B)^(1/(n-1)) (filled when
    ``test_moments``); ``det_moment`` is the i = n entry.  Divergence-free
    status is inferred from the spectral divergence unless given.
    """
    n = B.grid.n
    assert_psd(B)
    samples = np.asarray(B.values).reshape(-1, n, n)
    w = np.full(samples.shape[0], 1.0 / samples.shape[0])
    det_moment = float(np.mean(det_root_values(B)))
    moments = ()
    if test_moments:
        ev = np.clip(np.linalg.eigvalsh(samples), 0.0, None)
        e = np.clip(symcore.elementary_symmetric_from_values(ev), 0.0, None)
        mom = [float(np.mean(e[:, i] ** (1.0 / (n - 1)))) for i in range(n + 1)]
        mom[0] = 1.0
        mom[n] = det_moment
        moments = tuple(mom)
    tv = divergence(B).tv_estimate
    if divergence_free is None:
        divergence_free = tv <= 1e-6 * (1.0 + lp_norm(B, np.inf))
    x = tuple(float(c) for c in (x if x is not None else (0.5,) * n))
    return YoungEstimate(x, samples, w, moments, det_moment, det_root(mean_matrix(B)), tv,
                         bool(divergence_free))
