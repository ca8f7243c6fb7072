"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest
from scipy.integrate import quad

from acceptance_log import criterion
from cli_cases import CASES, CONFIGS, GOLDEN, differences, run_case
from halfcell.boundary import SUSPECT, UNIQUE, make_strip, mu_limit
from halfcell.cli import run
from halfcell.config import load_config
from halfcell.correctors import effective_boundary, effective_interior, mu_bar_at
from halfcell.grids import StripGrid, TorusGrid
from halfcell.halfspace import slope_scan
from halfcell.homogenize import TwoScaleProblem, epsilon_grid
from halfcell.interior import drift_cell_lambda, e1_criterion, lambda_torus
from halfcell.model import HJB, HalfStrip, Linear, LinearOblique, Semilinear
from halfcell.montecarlo import lemma31_check, mu_mc_estimate, simulate_reflected
from halfcell.schemes import (assemble_interior, assemble_neumann, attach_boundary,
                              check_monotone, solve_stationary)

TWO_PI = 2 * np.pi
LAPLACE_2D = Linear.make([[1, 0], [0, 1]], [0, 0], 0)
TOWARD = Linear.make(1, -1, 0)
AWAY = Linear.make(1, 1, 0)


def test_criterion_01_interior_quadrature_oracle():
    with criterion(1, "interior ergodic constant matches the quadrature oracle (1e-4)"):
        a = lambda y: 1 + 0.5 * np.sin(TWO_PI * y)  # noqa: E731
        num = quad(lambda y: np.cos(TWO_PI * y) / a(y), 0, 1, epsabs=1e-13, epsrel=1e-13)[0]
        den = quad(lambda y: 1 / a(y), 0, 1, epsabs=1e-13, epsrel=1e-13)[0]
        sol = lambda_torus(Linear.make("1 + 0.5*sin(2*pi*y1)", 0, "cos(2*pi*y1)"),
                           TorusGrid(1, 1024))
        assert abs(sol.constant - (-num / den)) < 1e-4


def test_criterion_02_divergence_form_cell_constant():
    with criterion(2, "divergence-form drift cell constant vanishes (1e-5)"):
        for p in (-1.0, 0.5, 1.0):
            sol = drift_cell_lambda("2 + sin(2*pi*y1)", "2*pi*cos(2*pi*y1)", [p], TorusGrid(1, 256))
            assert abs(sol.constant) < 1e-5


def test_criterion_03_trivial_boundary_constant():
    with criterion(3, "boundary constant of -Laplace with constant data is -0.7 (1e-6)"):
        one = mu_limit(Linear.make(1, 0, 0), LinearOblique.make([-1], "0.7"), n_per=64)
        two = mu_limit(LAPLACE_2D, LinearOblique.make([0, -1], "0.7"), n_per=16)
        assert abs(one.mu + 0.7) < 1e-6
        assert abs(two.mu + 0.7) < 1e-6


def test_criterion_04_uniqueness_dichotomy():
    with criterion(4, "drift toward/away dichotomy: flags, R-drift and e1 test"):
        toward = mu_limit(TOWARD, LinearOblique.make([-1], "0.7"), n_per=64)
        assert toward.uniqueness_flag == UNIQUE
        assert abs(toward.mu + 0.7) < 1e-4
        away = mu_limit(AWAY, LinearOblique.make([-1], "1"), n_per=64)
        assert away.uniqueness_flag == SUSPECT
        assert away.R_drift > 1e-2
        e_toward = e1_criterion(TOWARD)
        e_away = e1_criterion(AWAY)
        assert e_toward["satisfied"] and not e_away["satisfied"]
        assert abs(e_toward["lambda_hat"] + 1) < 1e-3
        assert abs(e_away["lambda_hat"] - 1) < 1e-3


def test_criterion_05_flux_balance_2d():
    with criterion(5, "2D flux balance: mu_bar(e2) = 1.3 (1e-3) on 128 x 128 in < 2 min"):
        t0 = time.perf_counter()
        mu_bar, res = mu_bar_at(LAPLACE_2D, LinearOblique.make([0, -1], "sin(2*pi*y1) + 0.3"),
                                [0.0, 1.0], n_per=128)
        elapsed = time.perf_counter() - t0
        assert res.grid.n_t == 128
        assert abs(mu_bar - 1.3) < 1e-3
        assert elapsed < 120


def test_criterion_06_effective_coefficients():
    with criterion(6, "effective diffusion: harmonic mean in 1D, layered pair in 2D (1e-3 rel)"):
        harmonic = np.sqrt(3.0)   # of 2 + sin
        eff = effective_interior(Linear.make("2 + sin(2*pi*y1)", "2*pi*cos(2*pi*y1)", 0),
                                 TorusGrid(1, 256))
        assert abs(eff.A_bar[0][0] - harmonic) / harmonic < 1e-3
        a, da = "1 + 0.5*sin(2*pi*y1)", "pi*cos(2*pi*y1)"
        eff2 = effective_interior(Linear.make([[a, 0], [0, a]], [da, 0], 0), TorusGrid(2, 128))
        h2 = np.sqrt(0.75)
        assert abs(eff2.A_bar[0][0] - h2) / h2 < 1e-3
        assert abs(eff2.A_bar[1][1] - 1.0) < 1e-3


def test_criterion_07_affinity_audits():
    with criterion(7, "F_bar and mu_bar affine-model residuals below 1e-3 on 3 samples each"):
        A = [["1 + 0.4*sin(2*pi*y1)", "0.2*cos(2*pi*(y1 + y2))"],
             ["0.2*cos(2*pi*(y1 + y2))", "1 + 0.3*cos(2*pi*y2)"]]
        b = ["0.8*pi*cos(2*pi*y1) - 0.4*pi*sin(2*pi*(y1 + y2))",
             "-0.4*pi*sin(2*pi*(y1 + y2)) - 0.6*pi*sin(2*pi*y2)"]
        inner = effective_interior(Linear.make(A, b, "cos(2*pi*y2)"), TorusGrid(2, 32),
                                   audit_samples=3, strict=False)
        assert inner.diagnostics["interior_affinity_deviation"] < 1e-3
        outer = effective_boundary(LAPLACE_2D, LinearOblique.make(["0.3*sin(2*pi*y1)", -1],
                                                                  "cos(2*pi*y1) + 0.2"),
                                   audit_samples=3, strict=False, n_per=32)
        assert len(outer.diagnostics["mu_bar_samples"]) == 1 + 2 + 3
        assert outer.diagnostics["boundary_affinity_deviation"] < 1e-3


@pytest.mark.parametrize("name", ["divergence_1d", "oscillating_2d", "nonlinear_1d"])
def test_criterion_08_homogenization(tmp_path, name):
    with criterion(8, "homogenization error nonincreasing, e(1/32) < e(1/4)/2 (1D, 2D, nonlinear)"):
        code = run("homogenize", CONFIGS / f"{name}.cfg", tmp_path, quiet=True)
        payload = json.loads((tmp_path / "homogenize.json").read_text())
        assert payload["epsilon"] == [0.25, 0.125, 0.0625, 0.03125]
        assert code == 0 and payload["nonincreasing"]
        assert payload["error"][-1] < 0.5 * payload["error"][0]


LINE = HalfStrip(1, None, 100.0)
PLANE = HalfStrip(2, None, 100.0)

MC_PROBLEMS = [
    (TOWARD, LinearOblique.make([-1], "0.7"), LINE),
    (Linear.make(1, -1, "0.5*cos(2*pi*y1) + 0.2"), LinearOblique.make([-1], "0.3"), LINE),
    (Linear.make([[1, 0], [0, 1]], [0, -1], 0), LinearOblique.make([0, -1], "sin(2*pi*y1) + 0.3"),
     PLANE),
]


def test_criterion_09_monte_carlo():
    with criterion(9, "MC: local time oracle, PDE agreement on 3 problems, divergence flags"):
        T = 10.0
        batch = simulate_reflected(Linear.make(1, 0, 0), LinearOblique.make([-1], "0"), LINE,
                                   [0.0], 1e-2, T, seed=2024, paths=100_000)
        exact = 2 * np.sqrt(T / np.pi)
        assert abs(batch.local_time.mean() - exact) < 3 * batch.standard_error(batch.local_time)
        for k, (op, bop, dom) in enumerate(MC_PROBLEMS):
            pde = mu_limit(op, bop, n_per=64 if op.dim == 1 else 32)
            assert pde.uniqueness_flag == UNIQUE
            est = mu_mc_estimate(op, bop, pde.lam, dom, np.zeros(op.dim), T, 8192, seed=100 + k)
            assert abs(est["mu_hat"] - pde.mu) <= 3 * est["std_error"] + 0.05
        for op in (TOWARD, AWAY):
            flag = lemma31_check(op, LinearOblique.make([-1], "0"), LINE, [0.0], seed=7)["diverges"]
            assert flag == e1_criterion(op)["satisfied"]


def test_criterion_10_slope_discontinuity():
    with criterion(10, "slope scan of cos(2 pi y2): gap 1 +- 1e-2"):
        scan = slope_scan("cos(2*pi*y2)", [0.0, 0.2, 0.1, 0.05])
        assert abs(scan.gap - 1.0) < 1e-2


def _corpus_schemes(cfg):
    """Every discrete system the corpus configuration leads to."""
    op = cfg.operator()
    d = cfg.dim
    n_per = cfg.integer("n_per", 32)
    yield assemble_interior(op, TorusGrid(d, n_per))
    if not any(k.startswith("gamma") or k == "g" for k in cfg.problem) or \
            cfg.problem.get("operator") is None:
        return
    bop = cfg.boundary()
    strip = make_strip(d, n_per, 4.0, cfg.psi(), cfg.number("z_ratio", 1.0))
    B, g, term = assemble_neumann(bop, strip, alpha=1e-2)
    yield attach_boundary(assemble_interior(op, strip, zeroth=1e-4), B, g, term)
    for eps in cfg.numbers("epsilons", []):
        problem = TwoScaleProblem(op, bop, cfg.psi(), cfg.number("tangential_period", None))
        grid = epsilon_grid(problem, eps, cfg.integer("n_fast", 32), z_ratio=cfg.number("z_ratio"))
        X = grid.physical_coords()
        lin = op.base if isinstance(op, Semilinear) else op
        scale = 1 / eps if lin.singular_drift else 1.0
        s = assemble_interior(op, grid, x=X, y=X / eps, zeroth=1.0, drift_scale=scale,
                              H_scale=1 / eps)
        B, g, term = assemble_neumann(bop, grid, x=X, y=X / eps)
        yield attach_boundary(s, B, g, term)


def _random_pairs(rng, count, size):
    for _ in range(count):
        r1 = rng.normal(size=size)
        yield r1, r1 + np.abs(rng.normal(size=size)) * (rng.uniform(size=size) < 0.5)


def test_criterion_11_scheme_integrity(tmp_path):
    with criterion(11, "monotone corpus systems, comparison on 100 pairs, golden CLI files"):
        checked = 0
        for path in sorted(CONFIGS.glob("*.cfg")):
            cfg = load_config(path).validate()
            if "operator" not in cfg.problem:
                continue
            for scheme in _corpus_schemes(cfg):
                for M in scheme.matrices:
                    check_monotone(M, scheme.grid)
                    checked += 1
        assert checked >= 20

        rng = np.random.default_rng(11)
        strip = StripGrid.uniform(2, 16, 2.0, None)
        lin = assemble_interior(Linear.make([["1 + 0.3*sin(2*pi*y1)", 0], [0, 1]], [0, "-0.5"]),
                                strip, zeroth=0.5)
        B, g, _ = assemble_neumann(LinearOblique.make([0.3, -1], 0.0), strip, alpha=0.1)
        lin = attach_boundary(lin, B, g)
        hjb = assemble_interior(HJB((Linear.make(1, "0.5"), Linear.make("2 + sin(2*pi*y1)", "-1"))),
                                TorusGrid(1, 32), zeroth=0.3)
        pairs = 0
        for scheme in (lin, hjb):
            for r1, r2 in _random_pairs(rng, 50, scheme.size):
                u = solve_stationary(scheme.shifted(rhs=r1))
                v = solve_stationary(scheme.shifted(rhs=r2))
                assert np.all(u <= v + 1e-9)
                pairs += 1
        assert pairs == 100

        for case in CASES:
            out = tmp_path / case[0]
            assert run_case(case, out) == case[4]
            assert differences(out, GOLDEN / case[0]) == [], case[0]
