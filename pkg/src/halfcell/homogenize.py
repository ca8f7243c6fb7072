"""Oscillating two-scale problems, their effective limits and convergence studies.

The two-scale problem on ``Omega_eps = {x_N > eps psi(x'/eps)}`` is

    -tr(A(x, x/eps) D^2u) - eps^-1 b(x, x/eps).Du + u = f(x, x/eps),
    Du.gamma(x, x/eps) - g(x, x/eps) = 0   on the oscillating boundary,

(``b`` without the ``eps^-1`` for a regular drift) and, for a semilinear
operator ``F = Linear + H``, the rescaled form
``F(eps D^2u, Du, x, x/eps) + eps u = eps f`` divided by ``eps``.  The
domain is cut at ``x_N = R_lid`` with a homogeneous Neumann lid.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .correctors import EffectiveData
from .errors import ResolutionInsufficient
from .expr import evaluate
from .grids import StripGrid
from .model import Linear, Semilinear
from .parallel import pmap
from .schemes import assemble_interior, assemble_neumann, attach_boundary, solve_stationary

MIN_NODES_PER_CELL = 16
DEFAULT_EPS = (1 / 4, 1 / 8, 1 / 16, 1 / 32)
R_LID = 4.0

__all__ = [
    "TwoScaleProblem",
    "GridSolution",
    "ConvergenceStudy",
    "solve_epsilon_problem",
    "solve_effective",
    "convergence_study",
]


@dataclass(frozen=True)
class TwoScaleProblem:
    """Operator, boundary operator and boundary graph of the oscillating problem.

    ``op.f`` (``op.base.f`` for semilinear operators) is the source ``f``.
    ``tangential_period`` is the period of the data in ``x'``; ``None``
    means the data do not depend on ``x'``, so one fast cell suffices.
    """

    op: object
    bop: object
    psi: object = None
    tangential_period: float | None = None

    @property
    def dim(self) -> int:
        return self.op.dim


@dataclass
class GridSolution:
    grid: StripGrid
    values: np.ndarray

    def at(self, points) -> np.ndarray:
        """Interpolate at physical points (flat grids only)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g = self.grid
        if g.dim == 1:
            return np.interp(pts[:, 0], g.z(), self.values)
        if g.psi is not None:
            raise ValueError("interpolation needs a flat grid")
        s = g.tangential()
        V = self.values.reshape(g.shape)
        s_ext = np.concatenate([s, [g.period]])
        V_ext = np.vstack([V, V[:1]])
        interp = RegularGridInterpolator((s_ext, g.z()), V_ext)
        return interp(np.stack([np.mod(pts[:, 0], g.period), pts[:, 1]], axis=-1))


def _scaled_graph(psi, eps):
    if psi is None:
        return None
    return lambda s: eps * np.broadcast_to(evaluate(psi, {"y1": np.asarray(s) / eps}), np.shape(s))


def epsilon_grid(problem: TwoScaleProblem, eps: float, n_fast: int = 32, R_lid: float = R_LID,
                 z_ratio: float | None = None) -> StripGrid:
    """Grid of the eps-problem: ``n_fast`` nodes per fast period."""
    if n_fast < MIN_NODES_PER_CELL:
        raise ResolutionInsufficient(
            f"{n_fast} nodes per fast period; at least {MIN_NODES_PER_CELL} are needed")
    h = eps / n_fast
    if problem.dim == 1:
        return StripGrid(1, 1, int(round(R_lid / h)), R_lid)
    period = eps if problem.tangential_period is None else problem.tangential_period
    cells = period / eps
    if abs(cells - round(cells)) > 1e-9:
        raise ValueError("the tangential period must be a multiple of eps")
    n_t = int(round(cells)) * n_fast
    if z_ratio is None:
        z_ratio = 1.5 if problem.psi is not None else 1.0
    n_z = int(round(R_lid / (z_ratio * h)))
    return StripGrid(2, n_t, n_z, R_lid, _scaled_graph(problem.psi, eps), period)


def solve_epsilon_problem(problem: TwoScaleProblem, eps: float, n_fast: int = 32,
                          R_lid: float = R_LID, z_ratio: float | None = None,
                          drift: str = "auto") -> GridSolution:
    """Grid solution ``u^eps`` of the oscillating problem."""
    grid = epsilon_grid(problem, eps, n_fast, R_lid, z_ratio)
    X = grid.physical_coords()
    Y = X / eps
    op = problem.op
    lin = op.base if isinstance(op, Semilinear) else op
    scale = 1.0 / eps if lin.singular_drift else 1.0
    scheme = assemble_interior(op, grid, x=X, y=Y, zeroth=1.0, drift=drift,
                               drift_scale=scale, H_scale=1.0 / eps)
    B, g, term = assemble_neumann(problem.bop, grid, x=X, y=Y)
    scheme = attach_boundary(scheme, B, g, term)
    return GridSolution(grid, solve_stationary(scheme))


def solve_effective(eff: EffectiveData, dim: int | None = None, h: float = 1 / 256,
                    R_lid: float = R_LID, n_t: int = 4) -> GridSolution:
    """Solve ``F_bar(D^2u, Du) + u = 0`` with ``mu_bar(Du) = 0`` on the flat half-space."""
    d = dim or len(eff.gamma_bar)
    if eff.A_bar is None:
        raise ValueError("effective interior data are missing")
    if eff.gamma_bar is None or eff.gamma_bar[-1] <= 0:
        raise ValueError("effective boundary condition is not oblique")
    n_z = int(round(R_lid / h))
    grid = StripGrid(1, 1, n_z, R_lid) if d == 1 else StripGrid(2, n_t, n_z, R_lid)
    op = eff.interior_operator()
    scheme = assemble_interior(op, grid, zeroth=1.0)
    B, g, _ = assemble_neumann(eff.boundary_operator(), grid)
    scheme = attach_boundary(scheme, B, g)
    return GridSolution(grid, solve_stationary(scheme))


@dataclass
class ConvergenceStudy:
    epsilons: list
    errors: list
    reference: str
    window: tuple
    runtimes: list = field(default_factory=list)
    sup_norms: list = field(default_factory=list)

    @property
    def nonincreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.errors, self.errors[1:]))

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilons, "error": self.errors, "reference": self.reference,
                "window": list(self.window), "nonincreasing": self.nonincreasing}

    def write_csv(self, path, header: str | None = None) -> Path:
        """``epsilon,error`` table; an optional comment line records run metadata."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            if header is not None:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["epsilon", "error"])
            for e, err in zip(self.epsilons, self.errors):
                w.writerow([repr(float(e)), repr(float(err))])
        return path

    def write_plot_data(self, path) -> Path:
        path = Path(path)
        lines = ["# epsilon error"] + [f"{e!r} {err!r}" for e, err in zip(self.epsilons, self.errors)]
        path.write_text("\n".join(lines) + "\n")
        return path


def _window_nodes(sol: GridSolution, window):
    X = sol.grid.physical_coords()
    lo, hi = window
    mask = (X[:, -1] >= lo - 1e-12) & (X[:, -1] <= hi + 1e-12)
    return X[mask], sol.values[mask]


def convergence_study(problem: TwoScaleProblem, eff: EffectiveData | None = None,
                      epsilons=DEFAULT_EPS, window=(0.0, 2.0), n_fast: int = 32,
                      R_lid: float = R_LID, reference: str = "effective",
                      reference_eps: float = 1 / 64, effective_h: float = 1 / 1024,
                      z_ratio: float | None = None) -> ConvergenceStudy:
    """Sup-norm distance on the window ``{lo <= x_N <= hi}`` between ``u^eps`` and a reference.

    ``reference="effective"`` compares with the effective solution built
    from ``eff``; ``reference="fine"`` with the eps-problem at
    ``reference_eps`` (1D or flat boundary only).
    """
    if R_lid - window[1] < 1:
        raise ValueError("the window must stay at least one unit below the lid")
    if reference == "effective":
        if eff is None:
            raise ValueError("effective data required")
        ref = solve_effective(eff, problem.dim, effective_h, R_lid)
        label = "effective"
    elif reference == "fine":
        ref = solve_epsilon_problem(problem, reference_eps, n_fast, R_lid, z_ratio)
        label = f"eps={reference_eps!r}"
        if problem.dim == 2:
            raise ValueError("fine references are only interpolated in 1D")
    else:
        raise ValueError(f"unknown reference {reference!r}")

    def one(eps):
        t0 = time.perf_counter()
        sol = solve_epsilon_problem(problem, eps, n_fast, R_lid, z_ratio)
        pts, vals = _window_nodes(sol, window)
        err = float(np.max(np.abs(vals - ref.at(pts))))
        return err, time.perf_counter() - t0, float(np.max(np.abs(sol.values)))

    out = pmap(one, list(epsilons))
    return ConvergenceStudy([float(e) for e in epsilons], [o[0] for o in out], label,
                            tuple(window), [o[1] for o in out], [o[2] for o in out])
