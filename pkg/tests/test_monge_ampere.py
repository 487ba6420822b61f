from math import pi

import numpy as np
import pytest

from detlab import symcore, torus
from detlab.errors import GridMismatch, NegativeF, NewtonStall
from detlab.generators import cofactor_hessian_field
from detlab.monge_ampere import (MAProblem, ma_diagnostics, select_reference_matrix,
                                 solve_periodic_ma)
from detlab.symcore import SymMatrix
from detlab.torus import MatrixField, ScalarField, TorusGrid


def manufactured(grid, amp=0.01):
    """phi* = amp sin(2 pi x1) sin(2 pi x2) with its analytic Hessian; f = det(H phi* + Id)."""
    x = grid.coords()
    w = 2 * pi
    s1, s2 = np.sin(w * x[..., 0]), np.sin(w * x[..., 1])
    c1, c2 = np.cos(w * x[..., 0]), np.cos(w * x[..., 1])
    H = np.empty(grid.shape + (2, 2))
    H[..., 0, 0] = H[..., 1, 1] = -amp * w * w * s1 * s2
    H[..., 0, 1] = H[..., 1, 0] = amp * w * w * c1 * c2
    f = (1 + H[..., 0, 0]) * (1 + H[..., 1, 1]) - H[..., 0, 1] ** 2
    return amp * s1 * s2, H, ScalarField(grid, f)


def rational(grid, amp=1e-4, c=1.2):
    """phi* = amp g(x1) g(x2), g(t) = 1 / (c - cos 2 pi t): analytic but not band-limited."""
    x = grid.coords()
    w = 2 * pi

    def parts(t):
        q = c - np.cos(w * t)
        return 1 / q, -w * np.sin(w * t) / q**2, w * w * (2 * np.sin(w * t) ** 2 / q**3 - np.cos(w * t) / q**2)

    g, g1, g2 = parts(x[..., 0])
    h, h1, h2 = parts(x[..., 1])
    f = (1 + amp * g2 * h) * (1 + amp * g * h2) - (amp * g1 * h1) ** 2
    return amp * g * h, ScalarField(grid, f)


# -- problem validation and reference matrix ----------------------------------


def test_problem_validation():
    g = TorusGrid(2, 16)
    one = ScalarField(g, np.ones(g.shape))
    with pytest.raises(NegativeF):
        MAProblem(ScalarField(g, np.zeros(g.shape)), SymMatrix.identity(2))
    with pytest.raises(ValueError, match="solvability"):
        MAProblem(one, SymMatrix.identity(2).scaled(1.1))
    with pytest.raises(ValueError):
        MAProblem(one, SymMatrix.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        MAProblem(one, SymMatrix.identity(2), "vanish_at")


def test_reference_matrix_examples(rng):
    g = TorusGrid(2, 32)
    S, lam = select_reference_matrix(ScalarField(g, np.ones(g.shape)))
    assert S == SymMatrix.identity(2) and lam is None

    B = MatrixField.constant(g, 3.0 * np.eye(2), psd=True)
    S, lam = select_reference_matrix(ScalarField(g, torus.det_root_values(B)), "lam", B)
    assert lam == pytest.approx(1.0)
    np.testing.assert_allclose(S.to_array(), 3.0 * np.eye(2))

    x = g.coords()
    f = 2 + np.cos(2 * pi * x[..., 0]) * rng.random() + 0.3 * np.sin(2 * pi * (x[..., 0] - x[..., 1]))
    F = ScalarField(g, f)
    S, _ = select_reference_matrix(F)
    assert symcore.determinant(S) == pytest.approx(F.mean(), rel=1e-10)


def test_reference_matrix_lam_mode_determinant():
    g = TorusGrid(3, 16)
    B = cofactor_hessian_field(3, 0.004, [(1, 1, 1)], g)
    f = ScalarField(g, torus.det_root_values(B))
    S, lam = select_reference_matrix(f, "lam", B)
    assert symcore.determinant(S) == pytest.approx(f.mean(), rel=1e-12)


def test_reference_matrix_lam_needs_matching_f():
    g = TorusGrid(2, 16)
    B = MatrixField.constant(g, 2.0 * np.eye(2), psd=True)
    with pytest.raises(ValueError):
        select_reference_matrix(ScalarField(g, np.ones(g.shape)), "lam", B)


# -- solver -------------------------------------------------------------------


def test_trivial_problem():
    g = TorusGrid(2, 32)
    res = solve_periodic_ma(MAProblem(ScalarField(g, np.ones(g.shape)), SymMatrix.identity(2)))
    assert np.abs(res.phi.values).max() == 0.0
    assert res.residual_inf <= 1e-12 and res.newton_iters <= 1


def test_manufactured_solution():
    g = TorusGrid(2, 64)
    star, _, f = manufactured(g)
    res = solve_periodic_ma(MAProblem(f, SymMatrix.identity(2)))
    assert np.abs(res.phi.values - star).max() <= 1e-6
    assert res.residual_inf <= 1e-9
    assert res.newton_iters <= 10
    assert res.min_hessian_eig > 0
    assert res.compat_defect <= 1e-8
    assert list(res.history) == sorted(res.history, reverse=True)


def test_vanish_at_normalization():
    g = TorusGrid(2, 32)
    _, _, f = manufactured(g)
    a = (0.3, 0.45)
    res = solve_periodic_ma(MAProblem(f, SymMatrix.identity(2), "vanish_at", a))
    assert abs(torus.interpolate_points(res.phi.values, 2, [a])[0]) <= 1e-10


def test_grid_convergence_smooth_data():
    errs = []
    for m in (32, 64):
        g = TorusGrid(2, m)
        star, f = rational(g)
        S, _ = select_reference_matrix(f)
        res = solve_periodic_ma(MAProblem(f, S))
        errs.append(np.abs(res.phi.values - (star - star.mean())).max())
    assert errs[0] / errs[1] >= 16.0


def test_three_dimensional_manufactured():
    g = TorusGrid(3, 16)
    x = g.coords()
    w = 2 * pi
    amp = 0.003
    s = np.sin(w * x)
    c = np.cos(w * x)
    star = amp * s.prod(axis=-1)
    H = np.empty(g.shape + (3, 3))
    for i in range(3):
        for j in range(3):
            if i == j:
                H[..., i, i] = -w * w * star
            else:
                (l,) = {0, 1, 2} - {i, j}
                H[..., i, j] = amp * w * w * c[..., i] * c[..., j] * s[..., l]
    f = ScalarField(g, np.linalg.det(H + np.eye(3)))
    res = solve_periodic_ma(MAProblem(f, SymMatrix.identity(3)))
    assert res.residual_inf <= 1e-7
    assert np.abs(res.phi.values - star).max() <= 1e-6


def test_localized_field_data_solves_with_amgm():
    g = TorusGrid(2, 128)
    Ak = cofactor_hessian_field(2, 0.004, [(1, 1), (2, 1)], g)
    cut = torus.bump_cutoff(g, 0.1)
    Aa = SymMatrix.from_array([[1.2, 0.1], [0.1, 0.9]])
    B = torus.localized_field(Ak, Aa, (0.3, 0.6), 0.5, cut)
    f = ScalarField(g, torus.det_root_values(B))
    S, lam = select_reference_matrix(f, "lam", B)
    res = solve_periodic_ma(MAProblem(f, S, "vanish_at", (0.3, 0.6)), lam=lam)
    assert res.residual_inf <= 1e-8
    assert res.min_hessian_eig > 0
    d = ma_diagnostics(res, B)
    assert d.amgm_min_slack >= -1e-8 * f.values.max()


def test_newton_stall_reports_best_iterate():
    g = TorusGrid(2, 32)
    _, _, f = manufactured(g)
    with pytest.raises(NewtonStall) as exc:
        solve_periodic_ma(MAProblem(f, SymMatrix.identity(2)), max_iter=1)
    assert exc.value.best.newton_iters == 1
    assert exc.value.best.residual_inf < 1.0


def test_regularized_indicator_data():
    g = TorusGrid(2, 64)
    x = g.coords()
    bump = (np.linalg.norm(x - 0.5, axis=-1) < 0.25).astype(float)
    f = ScalarField(g, 1.0 + 0.2 * bump)
    S, _ = select_reference_matrix(f)
    res = solve_periodic_ma(MAProblem(f, S), regularize=True)
    assert res.regularized and res.min_hessian_eig > 0


# -- diagnostics --------------------------------------------------------------


def test_diagnostics_trivial():
    g = TorusGrid(2, 16)
    res = solve_periodic_ma(MAProblem(ScalarField(g, np.ones(g.shape)), SymMatrix.identity(2)))
    d = ma_diagnostics(res, MatrixField.constant(g, np.eye(2), psd=True))
    assert d.amgm_min_slack == pytest.approx(0.0, abs=1e-15)
    assert d.grad_ratio == 0.0


def test_diagnostics_manufactured_equality_case():
    g = TorusGrid(2, 64)
    _, H, _ = manufactured(g)
    B = MatrixField(g, H + np.eye(2), psd=True)
    f = ScalarField(g, torus.det_root_values(B))
    res = solve_periodic_ma(MAProblem(f, SymMatrix.identity(2)))
    assert ma_diagnostics(res, B).amgm_min_slack >= -1e-8


def test_diagnostics_divergence_free_b():
    g = TorusGrid(2, 64)
    _, _, f = manufactured(g)
    res = solve_periodic_ma(MAProblem(f, SymMatrix.identity(2)))
    B = cofactor_hessian_field(2, 0.005, [(1, 2)], g)
    d = ma_diagnostics(res, B)
    assert d.ibp_defect <= 1e-8
    assert abs(d.int_tr_hphi_b) <= 1e-8
    with pytest.raises(GridMismatch):
        ma_diagnostics(res, MatrixField.constant(TorusGrid(2, 32), np.eye(2)))
