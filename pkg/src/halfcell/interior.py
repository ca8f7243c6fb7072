"""Ergodic constants on the periodic cell via the vanishing-discount limit.

For a periodic operator ``F`` the problem ``F(D^2u, Du, y) = lambda`` has a
unique constant ``lambda`` admitting a periodic solution.  We solve the
discounted problems ``F + delta u_delta = 0`` and use
``-delta u_delta(anchor) -> lambda`` (first order in ``delta``), removing
the leading error by Richardson extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ExtrapolationUnstable
from .expr import parse, to_source
from .grids import TorusGrid
from .model import HJB, Linear, PucciMinus, Semilinear
from .parallel import pmap
from .schemes import assemble_interior, solve_stationary

DEFAULT_DELTAS = (1e-2, 5e-3, 2.5e-3)
TARGET_TOL = 1e-5

__all__ = [
    "ErgodicSolution",
    "LinearityReport",
    "lambda_torus",
    "drift_cell",
    "drift_cell_lambda",
    "linearity_audit",
    "e1_criterion",
    "richardson",
]


@dataclass
class ErgodicSolution:
    constant: float
    corrector: np.ndarray
    residual_sup: float
    history: list = field(default_factory=list)
    grid: object = None

    def as_dict(self) -> dict:
        return {
            "constant": self.constant,
            "residual": self.residual_sup,
            "history": [[float(d), float(v)] for d, v in self.history],
        }


def richardson(d1: float, v1, d2: float, v2):
    """Value at parameter 0 of the line through ``(d1, v1)`` and ``(d2, v2)``."""
    return v2 + (v2 - v1) * d2 / (d1 - d2)


def lambda_torus(op, grid: TorusGrid, deltas=DEFAULT_DELTAS, x=None, anchor: int = 0,
                 tol: float = TARGET_TOL, drift: str = "auto", method: str | None = None,
                 check: bool = True) -> ErgodicSolution:
    """Ergodic constant and corrector of ``op`` on the torus ``grid``.

    ``x`` freezes the slow variable.  The corrector is extrapolated to
    ``delta = 0`` node-wise and normalised to vanish at ``anchor``.
    """
    deltas = [float(d) for d in deltas]
    if len(deltas) < 2 or any(b >= a for a, b in zip(deltas, deltas[1:])) or deltas[-1] <= 0:
        raise ValueError("delta schedule must be positive, decreasing and of length >= 2")
    x = np.zeros(grid.dim) if x is None else np.atleast_1d(np.asarray(x, dtype=float))

    def solve(delta):
        scheme = assemble_interior(op, grid, x=x, zeroth=delta, drift=drift)
        return solve_stationary(scheme, method=method)

    sols = pmap(solve, deltas)
    ests = [-d * u[anchor] for d, u in zip(deltas, sols)]
    history = list(zip(deltas, ests))
    rich = [richardson(deltas[k - 1], ests[k - 1], deltas[k], ests[k]) for k in range(1, len(deltas))]
    lam = float(rich[-1])
    if check and len(rich) >= 2 and abs(rich[-1] - rich[-2]) > 10 * tol:
        raise ExtrapolationUnstable(
            f"extrapolated constants {rich[-2]:.3e} and {rich[-1]:.3e} disagree beyond {10 * tol:.1e}")
    v_prev = sols[-2] - sols[-2][anchor]
    v_last = sols[-1] - sols[-1][anchor]
    corrector = richardson(deltas[-2], v_prev, deltas[-1], v_last)
    res = ergodic_residual(op, grid, lam, corrector, x, drift)
    return ErgodicSolution(lam, corrector, res, history, grid)


def ergodic_residual(op, grid, lam, corrector, x=None, drift="auto") -> float:
    """Sup norm of ``F(D^2v, Dv, y) - lam`` on the grid."""
    scheme = assemble_interior(op, grid, x=x, zeroth=0.0, drift=drift)
    return float(np.max(np.abs(scheme.residual(corrector) - lam)))


def _dot_source(vec, p) -> str:
    terms = [f"({to_source(e)})*({float(pk)!r})" for e, pk in zip(vec, p) if pk != 0]
    return " + ".join(terms) if terms else "0"


def drift_cell(A, b, p) -> Linear:
    """Cell operator ``-tr(A D^2v) - b.(p + Dv)`` as a :class:`Linear`."""
    lin = Linear.make(A, b)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (lin.dim,):
        raise ValueError("p has the wrong dimension")
    return Linear(lin.A, lin.b, parse(_dot_source(lin.b, p)), lin.singular_drift)


def drift_cell_lambda(A, b, p, grid: TorusGrid, x=None, **kw) -> ErgodicSolution:
    """Constant ``lambda_bar(p)`` of ``-tr(A D^2v) - b.(p + Dv) = lambda_bar``."""
    return lambda_torus(drift_cell(A, b, p), grid, x=x, **kw)


@dataclass
class LinearityReport:
    slope: np.ndarray
    values: list
    deviation: float

    def as_dict(self) -> dict:
        return {"slope": self.slope.tolist(), "values": self.values, "deviation": self.deviation}


def linearity_audit(A, b, ps, grid: TorusGrid, x=None, **kw) -> LinearityReport:
    """Fit ``lambda_bar(p) = c.p`` to samples and report the worst misfit."""
    ps = np.atleast_2d(np.asarray(ps, dtype=float))
    d = grid.dim
    if ps.shape[1] != d:
        ps = ps.reshape(-1, d)
    if np.linalg.matrix_rank(ps) < d or len(ps) < d + 1:
        raise ValueError(f"need at least {d + 1} samples spanning R^{d}")
    vals = [drift_cell_lambda(A, b, p, grid, x=x, **kw).constant for p in ps]
    slope, *_ = np.linalg.lstsq(ps, np.asarray(vals), rcond=None)
    dev = float(np.max(np.abs(ps @ slope - vals)))
    return LinearityReport(slope, [float(v) for v in vals], dev)


def _halved(op):
    if isinstance(op, HJB):
        return HJB(tuple(_halved(c) for c in op.controls))
    if isinstance(op, Linear):
        half = tuple(tuple(parse(f"0.5*({to_source(a)})") for a in row) for row in op.A)
        return Linear(half, op.b, op.f, op.singular_drift)
    raise TypeError("the criterion needs a Linear or HJB operator")


def e1_criterion(op, f_N=None, grid: TorusGrid | None = None, tol: float = 1e-6,
                 x=None, **kw) -> dict:
    """Sign test for a bounded periodic subsolution of ``F_hat(D^2w, -f_N + Dw) = 0``.

    ``F_hat`` keeps the second-order and drift parts of ``op`` (diffusion
    halved) and drops the source.  Satisfied iff its ergodic constant is
    ``<= tol``.
    """
    if isinstance(op, (PucciMinus, Semilinear)):
        raise TypeError("the criterion needs a Linear or HJB operator")
    d = op.dim
    f_N = np.eye(d)[-1] if f_N is None else np.atleast_1d(np.asarray(f_N, dtype=float))
    grid = grid or TorusGrid(d, 64)

    def shifted(ctrl: Linear) -> Linear:
        return Linear(ctrl.A, ctrl.b, parse(f"-({_dot_source(ctrl.b, f_N)})"), ctrl.singular_drift)

    half = _halved(op)
    hat = HJB(tuple(shifted(c) for c in half.controls)) if isinstance(half, HJB) else shifted(half)
    sol = lambda_torus(hat, grid, x=x, **kw)
    return {"satisfied": bool(sol.constant <= tol), "lambda_hat": sol.constant,
            "residual": sol.residual_sup}
