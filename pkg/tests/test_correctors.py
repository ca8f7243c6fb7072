import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from halfcell.correctors import (EffectiveData, cell_correctors, effective_boundary,
                                 effective_interior, first_corrector, mu_bar_at,
                                 second_corrector_and_Fbar)
from halfcell.errors import NonzeroCellConstant
from halfcell.grids import TorusGrid
from halfcell.model import Linear, LinearOblique

TWO_PI = 2 * np.pi
A_LAYER = "1 + 0.5*sin(2*pi*y1)"
DA_LAYER = "pi*cos(2*pi*y1)"
HARMONIC = np.sqrt(0.75)   # harmonic mean of 1 + 0.5 sin


def a_layer(y):
    return 1 + 0.5 * np.sin(TWO_PI * y)


def test_zero_drift_corrector_vanishes():
    grid = TorusGrid(2, 16)
    sol = first_corrector([["1 + 0.3*cos(2*pi*y2)", 0], [0, 1]], [0, 0], [0.7, -1.2], grid)
    np.testing.assert_allclose(sol.corrector, 0.0, atol=1e-12)


def test_divergence_form_corrector_matches_quadrature():
    grid = TorusGrid(1, 256)
    sol = first_corrector(A_LAYER, DA_LAYER, [1.0], grid)
    ys = grid.physical_coords()[:, 0]
    # v(y) = int_0^y (-1 + abar / a), anchored at the first node
    ref = np.array([quad(lambda s: -1 + HARMONIC / a_layer(s), 0, y)[0] for y in ys])
    np.testing.assert_allclose(sol.corrector - sol.corrector[0], ref, atol=2e-4)


def test_constant_drift_orthogonal_slope():
    grid = TorusGrid(2, 16)
    sol = first_corrector([[1, 0], [0, 1]], [1, 0], [0, 1], grid)
    assert abs(sol.constant) < 1e-12
    np.testing.assert_allclose(sol.corrector, 0.0, atol=1e-12)
    with pytest.raises(NonzeroCellConstant):
        first_corrector([[1, 0], [0, 1]], [1, 0], [1, 1], grid)


def test_constant_coefficients_second_corrector():
    grid = TorusGrid(2, 12)
    op = Linear.make([[2, 0.3], [0.3, 1]], [0, 0], 0.7)
    M = np.array([[0.5, -0.2], [-0.2, 1.5]])
    out = second_corrector_and_Fbar(op, M, [0.3, -0.4], grid)
    assert out["F_bar"] == pytest.approx(-np.trace(np.array([[2, 0.3], [0.3, 1]]) @ M) - 0.7,
                                         abs=1e-8)
    np.testing.assert_allclose(out["w"], 0.0, atol=1e-8)


def test_divergence_form_fbar_is_harmonic():
    out = second_corrector_and_Fbar(Linear.make(A_LAYER, DA_LAYER, 0), [[2.0]], [0.0],
                                    TorusGrid(1, 256))
    assert out["F_bar"] == pytest.approx(-HARMONIC * 2.0, abs=1e-4)


def test_mean_zero_source_averages_out():
    op = Linear.make([[1, 0], [0, 1]], [0, 0], "cos(2*pi*y1) + 0.5*sin(2*pi*(y1 - y2))")
    M = np.array([[1.0, 0.4], [0.4, -0.3]])
    out = second_corrector_and_Fbar(op, M, [0.0, 0.0], TorusGrid(2, 24))
    assert out["F_bar"] == pytest.approx(-np.trace(M), abs=1e-8)


@settings(max_examples=6, deadline=None)
@given(a11=st.floats(0.5, 3), a22=st.floats(0.5, 3), r=st.floats(-0.9, 0.9),
       b1=st.floats(-2, 2), b2=st.floats(-2, 2), f=st.floats(-2, 2))
def test_constant_coefficients_reproduced(a11, a22, r, b1, b2, f):
    # the cross stencil is monotone for diagonally dominant A
    a12 = r * min(a11, a22)
    op = Linear.make([[a11, a12], [a12, a22]], [b1, b2], f, singular_drift=False)
    eff = effective_interior(op, TorusGrid(2, 8))
    np.testing.assert_allclose(eff.A_bar, [[a11, a12], [a12, a22]], atol=1e-9)
    np.testing.assert_allclose(eff.b_bar, [b1, b2], atol=1e-9)
    assert eff.f_bar == pytest.approx(f, abs=1e-9)


def test_flat_data_degeneracy():
    grid = TorusGrid(2, 8)
    op = Linear.make([[1.5, 0.2], [0.2, 1]], [0, 0], 0.4)
    cell = cell_correctors(op, grid, [0.5, 0.5])
    np.testing.assert_allclose(cell.v_p, 0.0, atol=1e-12)
    np.testing.assert_allclose(cell.v_x, 0.0, atol=1e-12)
    eff = effective_interior(op, grid)
    np.testing.assert_allclose(eff.A_bar, [[1.5, 0.2], [0.2, 1]], atol=1e-10)
    assert eff.f_bar == pytest.approx(0.4, abs=1e-10)


def test_effective_interior_1d_harmonic_mean():
    eff = effective_interior(Linear.make(A_LAYER, DA_LAYER, 0), TorusGrid(1, 256))
    assert eff.A_bar[0][0] == pytest.approx(HARMONIC, abs=1e-4)
    assert abs(eff.b_bar[0]) < 1e-10
    assert eff.diagnostics["interior_affinity_deviation"] < 1e-3


def test_effective_interior_frozen_slow_point():
    a = f"(1 + 0.5*x1)*({A_LAYER})"
    da = f"(1 + 0.5*x1)*({DA_LAYER})"
    eff = effective_interior(Linear.make(a, da, 0), TorusGrid(1, 256), x=[0.4])
    assert eff.A_bar[0][0] == pytest.approx(1.2 * HARMONIC, abs=2e-4)


def test_layered_medium_2d():
    op = Linear.make([[A_LAYER, 0], [0, A_LAYER]], [DA_LAYER, 0], 0)
    eff = effective_interior(op, TorusGrid(2, 128))
    A_bar = np.asarray(eff.A_bar)
    assert A_bar[0, 0] == pytest.approx(HARMONIC, abs=5e-4)
    assert A_bar[1, 1] == pytest.approx(1.0, abs=5e-4)
    assert abs(A_bar[0, 1]) < 1e-8


def test_effective_eigenvalues_within_coefficient_bounds():
    A = [["1 + 0.4*sin(2*pi*y1)", "0.2*cos(2*pi*(y1 + y2))"],
         ["0.2*cos(2*pi*(y1 + y2))", "1 + 0.3*cos(2*pi*y2)"]]
    b = ["0.8*pi*cos(2*pi*y1) - 0.4*pi*sin(2*pi*(y1 + y2))",
         "-0.4*pi*sin(2*pi*(y1 + y2)) - 0.6*pi*sin(2*pi*y2)"]
    op = Linear.make(A, b, 0)
    grid = TorusGrid(2, 32)
    eff = effective_interior(op, grid)
    A_cell = op.sample(np.zeros(2), grid.physical_coords())[0]
    eigs = np.linalg.eigvalsh(A_cell)
    bar = np.linalg.eigvalsh(np.asarray(eff.A_bar))
    assert eigs.min() - 1e-6 <= bar.min() and bar.max() <= eigs.max() + 1e-6
    assert eff.diagnostics["interior_affinity_deviation"] < 1e-3


def test_effective_data_json_round_trip():
    eff = EffectiveData([0.0], [[1.0]], [0.0], 0.5, gamma_bar=[1.0], g_bar=-0.7)
    back = EffectiveData.from_dict(json.loads(eff.to_json()))
    assert back.as_dict() == eff.as_dict()
    assert back.mu_bar([2.0]) == pytest.approx(2.7)
    assert back.F_bar([[1.0]], [0.0]) == pytest.approx(-1.5)


def test_boundary_constant_data():
    mu_bar, res = mu_bar_at(Linear.make(1, 0, 0), LinearOblique.make([-1], "0.7"), [0.0],
                            n_per=32)
    assert mu_bar == pytest.approx(0.7, abs=1e-6)
    eff = effective_boundary(Linear.make(1, 0, 0), LinearOblique.make([-1], "0.7"), n_per=32)
    assert eff.g_bar == pytest.approx(-0.7, abs=1e-6)
    assert eff.gamma_bar[0] == pytest.approx(1.0, abs=1e-5)


def test_boundary_flat_flux_balance():
    op = Linear.make([[1, 0], [0, 1]], [0, 0], 0)
    eff = effective_boundary(op, LinearOblique.make([0, -1], "sin(2*pi*y1) + 0.3"), n_per=32)
    np.testing.assert_allclose(eff.gamma_bar, [0.0, 1.0], atol=1e-5)
    assert eff.g_bar == pytest.approx(-0.3, abs=1e-5)
    assert eff.diagnostics["boundary_affinity_deviation"] < 1e-3


def test_boundary_oscillating_direction_self_convergent():
    op = Linear.make([[1, 0], [0, 1]], [0, 0], 0)
    bop = LinearOblique.make(["0.3*sin(2*pi*y1)", -1], "0")
    coarse = effective_boundary(op, bop, n_per=24)
    fine = effective_boundary(op, bop, n_per=40)
    assert coarse.diagnostics["boundary_affinity_deviation"] < 1e-3
    assert fine.diagnostics["boundary_affinity_deviation"] < 1e-3
    np.testing.assert_allclose(coarse.gamma_bar, fine.gamma_bar, atol=1e-3)
    assert fine.gamma_bar[1] > 0
