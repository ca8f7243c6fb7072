"""Boundary ergodic constant on periodic half-strips.

The constant ``mu`` makes ``F(D^2u, Du, x) = lambda`` in the half-space
type domain with ``L(Du, x) = mu`` on its boundary solvable by a bounded
function.  It is approximated through the doubly penalised problem

    F(D^2u, Du, x) + eps u = lambda + eps ubar     in the strip {0 < z < R},
    L(Du, x) + alpha u = 0                         on the bottom,
    D(u - ubar) . n_R = 0                          on the lid,

with ``-alpha u(0) -> mu`` as first ``eps -> 0``, then ``alpha -> 0`` and
finally ``R -> infinity``.  The lid condition is imposed on ``u - ubar``
(``ubar`` the periodic interior corrector), which is what the solution
approaches away from the boundary; for a constant ``ubar`` it is the plain
homogeneous Neumann condition.  When the limit is sensitive to the schedule
or to ``R`` the constant is flagged as possibly non-unique.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ExtrapolationUnstable
from .grids import StripGrid, TorusGrid, sample_periodic
from .interior import ErgodicSolution, lambda_torus, richardson
from .model import LinearOblique, NonlinearHomogeneous
from .parallel import pmap
from .schemes import assemble_interior, assemble_neumann, attach_boundary, solve_stationary

log = logging.getLogger(__name__)

DEFAULT_EPS = (1e-4, 1e-5, 1e-6)
DEFAULT_ALPHAS = (1e-1, 3e-2, 1e-2)
DEFAULT_HEIGHTS = (4.0, 8.0)
UNIQUE = "unique-consistent"
SUSPECT = "suspect-nonunique"

__all__ = [
    "MuResult",
    "make_strip",
    "solve_penalized",
    "mu_limit",
    "verify_mu",
    "UNIQUE",
    "SUSPECT",
]


@dataclass
class MuResult:
    mu: float
    corrector: np.ndarray
    grid: StripGrid
    uniqueness_flag: str
    lam: float
    alpha_history: list = field(default_factory=list)
    epsilon_history: list = field(default_factory=list)
    R_history: list = field(default_factory=list)
    R_drift: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def unique(self) -> bool:
        return self.uniqueness_flag == UNIQUE

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "lambda": self.lam,
            "uniqueness_flag": self.uniqueness_flag,
            "R_drift": self.R_drift,
            "alpha_history": self.alpha_history,
            "epsilon_history": self.epsilon_history,
            "R_history": self.R_history,
            "notes": self.notes,
        }


def make_strip(dim: int, n_per: int, height: float, psi=None, z_ratio: float = 1.0) -> StripGrid:
    """Strip with ``n_per`` nodes per unit length (tangentially and, scaled, normally)."""
    if dim == 1:
        return StripGrid(1, 1, int(round(height * n_per / z_ratio)), height)
    return StripGrid.uniform(2, n_per, height, psi, z_ratio)


def _ubar_nodes(ubar, strip: StripGrid):
    if ubar is None:
        return np.zeros(strip.size)
    if isinstance(ubar, ErgodicSolution):
        return sample_periodic(ubar.corrector, ubar.grid, strip.physical_coords())
    ubar = np.asarray(ubar, dtype=float)
    if ubar.shape != (strip.size,):
        raise ValueError("interior corrector does not match the strip grid")
    return ubar


def lid_correction(op, strip: StripGrid, ubar, x=None, drift: str = "auto"):
    """Per-control right-hand-side corrections imposing ``D(u - ubar).n_R = 0`` on the lid.

    The grid reflects ``u`` across the lid; the correction adds back the
    jump of ``ubar`` across it, obtained by applying the scheme on a strip
    one layer taller to the exact ``ubar``.  Semilinear terms are not
    corrected.  Returns None when ``ubar`` is not an interior solution.
    """
    if not isinstance(ubar, ErgodicSolution):
        return None
    from .model import Semilinear

    lin = op.base if isinstance(op, Semilinear) else op
    tall = StripGrid(strip.dim, strip.n_t, strip.n_z + 1, strip.height + strip.h_z, strip.psi,
                     strip.period)
    ub = _ubar_nodes(ubar, strip)
    ub_tall = _ubar_nodes(ubar, tall)
    s_strip = assemble_interior(lin, strip, x=x, drift=drift)
    s_tall = assemble_interior(lin, tall, x=x, drift=drift)
    lid = strip.lid_mask()
    I, J = np.nonzero(lid.reshape(strip.shape)) if strip.dim == 2 else (None, np.flatnonzero(lid))
    rows = J if strip.dim == 1 else I * (tall.n_z + 1) + J
    out = []
    for Ms, Mt in zip(s_strip.matrices, s_tall.matrices):
        c = np.zeros(strip.size)
        c[lid] = (Mt @ ub_tall)[rows] - (Ms @ ub)[lid]
        out.append(c)
    return out


def solve_penalized(op, bop, strip: StripGrid, lam: float, ubar=None, eps: float = 1e-4,
                    alpha: float = 1e-2, x=None, drift: str = "auto", method: str | None = None,
                    check_regime: bool = True):
    """Grid solution of the penalised strip problem (lid condition built into the grid)."""
    if check_regime and not 0 < eps < alpha < 1:
        raise ValueError("need 0 < eps < alpha < 1")
    ub = _ubar_nodes(ubar, strip)
    x = np.zeros(strip.dim) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    scheme = assemble_interior(op, strip, x=x, zeroth=eps, drift=drift)
    scheme = scheme.shifted(rhs=lam + eps * ub)
    corr = lid_correction(op, strip, ubar, x, drift)
    if corr is not None:
        scheme.rhs = [r - c for r, c in zip(scheme.rhs, corr)]
    B, g, term = assemble_neumann(bop, strip, x=x, alpha=alpha)
    scheme = attach_boundary(scheme, B, g, term)
    if method is None and scheme.kind == "pucci":
        # explicit marching contracts at rate ~eps per step here
        method = "howard"
    return solve_stationary(scheme, method=method)


def _extrapolate(params, values, tol, polynomial=False):
    """Extrapolation to parameter 0 plus an instability flag.

    The estimate is the line through the last two points, or with
    ``polynomial=True`` the interpolating polynomial through all of them.
    With three or more points both are formed; disagreement beyond
    ``tol`` (relative to 1 + |estimate|) marks the sequence as not being in
    its asymptotic regime.
    """
    line = richardson(params[-2], values[-2], params[-1], values[-1])
    if len(params) < 3:
        return line, False, 0.0
    coef = np.polyfit(np.asarray(params) / params[0], np.asarray(values), len(params) - 1)
    poly = float(coef[-1])
    spread = abs(poly - line)
    est = poly if polynomial else line
    return est, spread > tol * (1.0 + abs(est)), spread


def mu_limit(op, bop, dim: int | None = None, n_per: int = 64, psi=None, z_ratio: float = 1.0,
             eps_schedule=DEFAULT_EPS, alpha_schedule=DEFAULT_ALPHAS,
             heights=DEFAULT_HEIGHTS, lam: float | None = None, ubar=None, x=None,
             extrap_tol: float = 1e-4, drift_tol: float = 1e-4, drift: str = "auto",
             method: str | None = None, strict: bool = False) -> MuResult:
    """Boundary ergodic constant by the eps -> 0, alpha -> 0, R -> infinity limits.

    ``lam``/``ubar`` default to the interior ergodic pair of ``op`` on a
    torus with the same resolution.  ``strict=True`` raises
    :class:`ExtrapolationUnstable` instead of flagging.
    """
    dim = dim or op.dim
    for name, sched in (("eps", eps_schedule), ("alpha", alpha_schedule)):
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError(f"{name} schedule must be strictly decreasing")
    if any(b <= a for a, b in zip(heights, heights[1:])):
        raise ValueError("heights must be strictly increasing")
    if max(eps_schedule) >= min(alpha_schedule):
        raise ValueError("every eps must be below every alpha")
    x = np.zeros(dim) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    if lam is None:
        interior = lambda_torus(op, TorusGrid(dim, n_per), x=x, drift=drift)
        lam, ubar = interior.constant, interior
    result_notes = []
    eps_hist, alpha_hist, R_hist = [], [], []
    flagged = False
    corrector = None
    strip = None
    for R in heights:
        strip = make_strip(dim, n_per, R, psi, z_ratio)

        def run(pair):
            a, e = pair
            return solve_penalized(op, bop, strip, lam, ubar, e, a, x, drift, method)

        pairs = [(a, e) for a in alpha_schedule for e in eps_schedule]
        sols = dict(zip(pairs, pmap(run, pairs)))
        per_alpha, fields = [], []
        for a in alpha_schedule:
            vals = [-a * sols[(a, e)][0] for e in eps_schedule]
            for e, v in zip(eps_schedule, vals):
                eps_hist.append({"R": R, "alpha": a, "eps": e, "value": float(v)})
            est, unstable, spread = _extrapolate(list(eps_schedule), vals, extrap_tol, True)
            if unstable:
                flagged = True
                result_notes.append(f"eps extrapolation unstable at R={R}, alpha={a}: spread {spread:.2e}")
            per_alpha.append(est)
            us = [sols[(a, e)] - sols[(a, e)][0] for e in eps_schedule]
            fields.append(richardson(eps_schedule[-2], us[-2], eps_schedule[-1], us[-1]))
            alpha_hist.append({"R": R, "alpha": a, "value": float(est)})
        mu_R, unstable, spread = _extrapolate(list(alpha_schedule), per_alpha, extrap_tol * 10)
        if unstable:
            flagged = True
            result_notes.append(f"alpha extrapolation unstable at R={R}: spread {spread:.2e}")
        R_hist.append({"R": R, "mu": float(mu_R)})
        corrector = richardson(alpha_schedule[-2], fields[-2], alpha_schedule[-1], fields[-1])
    mu = R_hist[-1]["mu"]
    R_drift = abs(R_hist[-1]["mu"] - R_hist[-2]["mu"]) if len(R_hist) > 1 else 0.0
    if R_drift > drift_tol:
        flagged = True
        result_notes.append(f"mu moves by {R_drift:.2e} between the last two heights")
    flag = SUSPECT if flagged else UNIQUE
    if flagged and strict:
        raise ExtrapolationUnstable("; ".join(result_notes))
    for note in result_notes:
        log.info(note)
    return MuResult(float(mu), corrector, strip, flag, float(lam), alpha_hist, eps_hist,
                    R_hist, float(R_drift), result_notes)


def verify_mu(op, bop, mu: float, corrector, strip: StripGrid, lam: float = 0.0, x=None,
              drift: str = "auto", recompute: dict | None = None) -> dict:
    """Residuals of ``(lam, mu, corrector)`` in the discrete strip problem.

    Pass ``recompute`` (keyword arguments for :func:`mu_limit`) to also
    solve again on heights ``(R, 2R)`` and report the drift of ``mu``.
    """
    x = np.zeros(strip.dim) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    interior = assemble_interior(op, strip, x=x, zeroth=0.0, drift=drift)
    bottom = strip.bottom_mask()
    r_int = interior.residual(corrector) - lam
    B, g, term = assemble_neumann(bop, strip, x=x)
    r_b = B @ corrector - g
    if term is not None:
        r_b = r_b + term(corrector)[0]
    r_b = r_b - mu
    report = {
        "interior_residual": float(np.max(np.abs(r_int[~bottom]))),
        "boundary_residual": float(np.max(np.abs(r_b[bottom]))),
    }
    if recompute is not None:
        kw = dict(recompute)
        kw["heights"] = (strip.height, 2 * strip.height)
        res = mu_limit(op, bop, **kw)
        report["R_drift"] = res.R_drift
        report["mu_R"] = res.R_history[0]["mu"]
        report["mu_2R"] = res.R_history[1]["mu"]
    return report


def shifted_boundary(bop, p):
    """``L(p + q) `` as an operator in ``q``: the data ``g`` absorbs ``p.gamma``."""
    from .expr import parse, to_source

    base = bop.base if isinstance(bop, NonlinearHomogeneous) else bop
    p = np.atleast_1d(np.asarray(p, dtype=float))
    terms = [f"({to_source(gk)})*({float(pk)!r})" for gk, pk in zip(base.gamma, p) if pk != 0]
    g = parse(f"({to_source(base.g)})" + "".join(f" - {t}" for t in terms))
    new = LinearOblique(base.gamma, g)
    if isinstance(bop, NonlinearHomogeneous):
        raise NotImplementedError("gradient shifts of nonlinear boundary operators")
    return new
