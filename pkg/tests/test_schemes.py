import numpy as np
import pytest

from halfcell.errors import MonotonicityViolation, ObliquenessTooWeak
from halfcell.expr import parse
from halfcell.grids import StripGrid, TorusGrid, read_binary, write_binary, write_csv
from halfcell.model import HJB, Linear, LinearOblique, PucciMinus
from halfcell.schemes import (assemble_interior, assemble_neumann, assemble_operator, attach_boundary,
                              check_monotone, solve_stationary)


def test_laplacian_stencil_1d():
    g = TorusGrid(1, 4)
    M = assemble_interior(Linear.make(1), g).matrices[0].toarray()
    h2 = g.h ** 2
    expected = np.array([[2, -1, 0, -1], [-1, 2, -1, 0], [0, -1, 2, -1], [-1, 0, -1, 2]]) / h2
    np.testing.assert_allclose(M, expected)


def test_upwind_drift_sign():
    g = TorusGrid(1, 8)
    M = assemble_interior(Linear.make(0, 1), g, drift="upwind").matrices[0].toarray()
    # -b u' with b = 1 becomes -(u(i+1) - u(i))/h
    assert M[3, 3] == pytest.approx(1 / g.h)
    assert M[3, 4] == pytest.approx(-1 / g.h)
    assert M[3, 2] == 0.0
    M = assemble_interior(Linear.make(0, -1), g, drift="upwind").matrices[0].toarray()
    assert M[3, 2] == pytest.approx(-1 / g.h) and M[3, 4] == 0.0


def _sign_pattern_ok(A):
    g = TorusGrid(2, 8)
    n = g.size
    M = assemble_operator(g, np.broadcast_to(A, (n, 2, 2)), np.zeros((n, 2)), check=False).toarray()
    off = M - np.diag(np.diag(M))
    return bool(np.all(off <= 1e-12))


def test_cross_stencil_monotone_iff_admissible():
    assert _sign_pattern_ok(np.array([[1, 0.9], [0.9, 1]]))
    assert _sign_pattern_ok(np.array([[1, -0.9], [-0.9, 1]]))
    assert not _sign_pattern_ok(np.array([[1, 1.5], [1.5, 1]]))
    g = TorusGrid(2, 8)
    assemble_interior(Linear.make([[1, 0.9], [0.9, 1]]), g)
    with pytest.raises(MonotonicityViolation) as info:
        assemble_interior(Linear.make([[1, 1.5], [1.5, 1]]), g)
    assert "refine" in str(info.value)


def test_row_sums_vanish_without_zeroth_order():
    g = TorusGrid(2, 16)
    op = Linear.make([["2 + sin(2*pi*y1)", "0.3"], ["0.3", "1"]], ["cos(2*pi*y2)", "1"])
    M = assemble_interior(op, g).matrices[0]
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), 0.0, atol=1e-8)


def test_normal_neumann_row_2d():
    g = StripGrid(2, 8, 8, 1.0)
    B, rhs, _ = assemble_neumann(LinearOblique.make([0, -1], "0.3"), g)
    i0, i1 = g.index(2, 0), g.index(2, 1)
    row = B.toarray()[i0]
    assert row[i0] == pytest.approx(1 / g.h_z) and row[i1] == pytest.approx(-1 / g.h_z)
    assert rhs[i0] == pytest.approx(0.3)
    assert np.count_nonzero(row) == 2


def test_neumann_row_1d():
    g = StripGrid(1, 1, 10, 1.0)
    B, rhs, _ = assemble_neumann(LinearOblique.make(-1, "0.7"), g)
    row = B.toarray()[0]
    assert row[0] == pytest.approx(1 / g.h_z) and row[1] == pytest.approx(-1 / g.h_z)
    assert rhs[0] == pytest.approx(0.7)


def test_oblique_row_exact_on_linear_fields():
    g = StripGrid(2, 16, 16, 1.0, period=1.0)
    gamma = np.array([0.5, -1.0]) / np.hypot(0.5, 1.0)
    B, _, _ = assemble_neumann(LinearOblique.make(gamma.tolist(), 0.0), g)
    p = np.array([0.37, -1.3])
    u = g.coords() @ p
    idx = np.flatnonzero(g.bottom_mask())
    vals = (B @ u)[idx]
    # the periodic wrap breaks linearity at the first tangential node
    interior = idx[1:] if gamma[0] > 0 else idx[:-1]
    np.testing.assert_allclose((B @ u)[interior], p @ gamma, atol=1e-10)
    assert len(vals) == g.n_t


def test_obliqueness_too_weak():
    g = StripGrid(2, 16, 16, 1.0)
    with pytest.raises(ObliquenessTooWeak):
        assemble_neumann(LinearOblique.make([1.0, -0.1], 0.0), g)
    with pytest.raises(ObliquenessTooWeak):
        assemble_neumann(LinearOblique.make([0.0, 1.0], 0.0), g)


def test_constant_solution_periodic():
    g = TorusGrid(1, 32)
    u = solve_stationary(assemble_interior(Linear.make(1, 0, 1), g, zeroth=1.0))
    np.testing.assert_allclose(u, 1.0, atol=1e-12)


def test_fourier_mode_oracle():
    errs = []
    for n in (32, 64):
        g = TorusGrid(1, n)
        u = solve_stationary(assemble_interior(Linear.make(1, 0, "1 + sin(2*pi*y1)"), g, zeroth=1.0))
        y = g.physical_coords()[:, 0]
        errs.append(np.max(np.abs(u - (1 + np.sin(2 * np.pi * y) / (1 + 4 * np.pi ** 2)))))
    assert errs[1] < 1e-4
    assert errs[1] < errs[0] / 3


def test_hjb_constant_controls():
    g = TorusGrid(1, 16)
    op = HJB((Linear.make(1, 0, 1), Linear.make(1, 0, 3)))
    u, info = solve_stationary(assemble_interior(op, g, zeroth=1.0), return_info=True)
    np.testing.assert_allclose(u, 1.0, atol=1e-12)
    assert info.iterations < 30


def test_policy_iteration_history_nonincreasing():
    g = TorusGrid(2, 24)
    op = HJB((Linear.make([[1, 0], [0, 1]], [0, 0], "cos(2*pi*y1)"),
              Linear.make([["1.5 + sin(2*pi*y2)", 0], [0, 1]], ["0.5", 0], "sin(2*pi*y2)")))
    u, info = solve_stationary(assemble_interior(op, g, zeroth=1.0), return_info=True)
    assert info.iterations < 30
    assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(info.history, info.history[1:]))


def test_pucci_marching_and_howard_agree():
    g = TorusGrid(2, 16)
    op = PucciMinus(1.0, 2.0, 2)
    s = assemble_interior(op, g, zeroth=1.0).shifted(rhs=np.cos(2 * np.pi * g.physical_coords()[:, 0]))
    u1 = solve_stationary(s)
    u2 = solve_stationary(s, method="howard")
    np.testing.assert_allclose(u1, u2, atol=1e-6)


def test_truncation_error_decays():
    op = Linear.make([["2 + sin(2*pi*y1)", "0.2"], ["0.2", "1"]], ["1", "cos(2*pi*y2)"])
    errs = []
    for n in (16, 32, 64):
        g = TorusGrid(2, n)
        y = g.physical_coords()
        u = np.sin(2 * np.pi * y[:, 0]) * np.cos(2 * np.pi * y[:, 1])
        # exact F applied to u
        k = 2 * np.pi
        uxx = -k * k * u
        uyy = -k * k * u
        uxy = -k * k * np.cos(k * y[:, 0]) * np.sin(k * y[:, 1])
        ux = k * np.cos(k * y[:, 0]) * np.cos(k * y[:, 1])
        uy = -k * np.sin(k * y[:, 0]) * np.sin(k * y[:, 1])
        a11 = 2 + np.sin(k * y[:, 0])
        exact = -(a11 * uxx + 2 * 0.2 * uxy + uyy) - (1 * ux + np.cos(k * y[:, 1]) * uy)
        M = assemble_interior(op.with_f(0), g).matrices[0]
        errs.append(np.max(np.abs(M @ u - exact)))
    assert errs[1] < 0.6 * errs[0] and errs[2] < 0.6 * errs[1]


def _random_pairs(rng, count, size):
    for _ in range(count):
        r1 = rng.normal(size=size)
        r2 = r1 + np.abs(rng.normal(size=size)) * (rng.uniform(size=size) < 0.5)
        yield r1, r2


def test_discrete_comparison_random_pairs():
    """S[u] <= S[v] with identical boundary rows implies u <= v."""
    rng = np.random.default_rng(42)
    psi = parse("0.2*sin(2*pi*y1)")
    strip = StripGrid.uniform(2, 16, 2.0, psi, z_ratio=1.5)
    lin = assemble_interior(Linear.make([[1, 0], [0, 1]], [0, 0]), strip, zeroth=0.5)
    B, g, _ = assemble_neumann(LinearOblique.make([0.3, -1], 0.0), strip, alpha=0.1)
    lin = attach_boundary(lin, B, g)
    hjb = assemble_interior(HJB((Linear.make(1, "0.5"), Linear.make("2 + sin(2*pi*y1)", "-1"))),
                            TorusGrid(1, 32), zeroth=0.3)
    cases = 0
    for scheme in (lin, hjb):
        check_monotone(scheme.matrices[0])
        for r1, r2 in _random_pairs(rng, 50, scheme.size):
            # lower data on the right-hand side means a larger residual, hence u <= v
            u = solve_stationary(scheme.shifted(rhs=r1))
            v = solve_stationary(scheme.shifted(rhs=r2))
            assert np.all(u <= v + 1e-9)
            cases += 1
    assert cases == 100


def test_grid_function_io(tmp_path):
    g = TorusGrid(2, 4)
    vals = np.arange(g.size, dtype=float) * 0.5
    p = write_binary(tmp_path / "u.bin", vals, g.shape)
    np.testing.assert_array_equal(read_binary(p), vals.reshape(g.shape))
    raw = p.read_bytes()
    assert raw[:4] == (2).to_bytes(4, "little")
    c = write_csv(tmp_path / "u.csv", g, vals).read_text().splitlines()
    assert c[0] == "x1,x2,value" and len(c) == g.size + 1
