"""Cell problems of periodic homogenization and the effective coefficients they define.

Interior: the first corrector ``v(p, x, .)`` solves the drift cell problem
at level zero; the second cell problem then fixes the effective operator
``F_bar(M, p, x)`` as its ergodic constant.  With the Bellman sign
convention used here ``F_bar`` reduces to ``F`` when no coefficient depends
on the fast variable.

Boundary: the half-space cell problem gives ``mu_bar(p)``, an affine
function ``gamma_bar . p - g_bar``; the effective Neumann condition is
``mu_bar(Du) = 0``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .boundary import SUSPECT, mu_limit, shifted_boundary
from .errors import AffinityViolation, NonzeroCellConstant
from .expr import parse, to_source
from .grids import TorusGrid
from .interior import ErgodicSolution, drift_cell, lambda_torus
from .model import Linear, LinearOblique, Semilinear
from .parallel import pmap
from .schemes import NodalLinear, gradient_matrices

FD_STEP = 1e-4
CELL_TOL = 1e-6

__all__ = [
    "EffectiveData",
    "first_corrector",
    "second_corrector_and_Fbar",
    "effective_interior",
    "effective_boundary",
    "mu_bar_at",
    "CellCorrectors",
    "cell_correctors",
]


@dataclass
class EffectiveData:
    """Effective interior data ``F_bar(M, p) = -tr(A_bar M) - b_bar.p - f_bar`` and
    boundary data ``mu_bar(p) = gamma_bar.p - g_bar`` at a frozen slow point."""

    x: list
    A_bar: list | None = None
    b_bar: list | None = None
    f_bar: float | None = None
    F_table: list = field(default_factory=list)
    gamma_bar: list | None = None
    g_bar: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "x": list(self.x),
            "interior": {"A_bar": self.A_bar, "b_bar": self.b_bar, "f_bar": self.f_bar,
                         "F_table": self.F_table},
            "boundary": {"gamma_bar": self.gamma_bar, "g_bar": self.g_bar},
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EffectiveData":
        inner, bd = d.get("interior", {}), d.get("boundary", {})
        return cls(d.get("x", []), inner.get("A_bar"), inner.get("b_bar"), inner.get("f_bar"),
                   inner.get("F_table", []), bd.get("gamma_bar"), bd.get("g_bar"),
                   d.get("diagnostics", {}))

    def merged(self, other: "EffectiveData") -> "EffectiveData":
        """Interior fields from ``self`` or ``other``, boundary fields likewise."""
        pick = lambda a, b: a if a is not None else b  # noqa: E731
        diag = dict(other.diagnostics)
        diag.update(self.diagnostics)
        return EffectiveData(self.x or other.x, pick(self.A_bar, other.A_bar),
                             pick(self.b_bar, other.b_bar), pick(self.f_bar, other.f_bar),
                             self.F_table or other.F_table, pick(self.gamma_bar, other.gamma_bar),
                             pick(self.g_bar, other.g_bar), diag)

    def mu_bar(self, p) -> float:
        return float(np.dot(self.gamma_bar, np.atleast_1d(p)) - self.g_bar)

    def F_bar(self, M, p) -> float:
        M = np.atleast_2d(M)
        return float(-np.trace(np.asarray(self.A_bar) @ M) - np.dot(self.b_bar, np.atleast_1d(p))
                     - self.f_bar)

    def interior_operator(self) -> Linear:
        """Constant-coefficient operator ``F_bar`` as a :class:`Linear` (regular drift)."""
        return Linear.make(self.A_bar, self.b_bar, self.f_bar, singular_drift=False)

    def boundary_operator(self) -> LinearOblique:
        """``-mu_bar``: same zero set, oblique with respect to the outward normal."""
        return LinearOblique.make([-g for g in self.gamma_bar], -self.g_bar)


# -- first corrector -------------------------------------------------------------------------


def first_corrector(A, b, p, grid: TorusGrid, x=None, tol: float = CELL_TOL, **kw) -> ErgodicSolution:
    """Periodic solution of ``-tr(A D^2v) - b.(p + Dv) = 0``.

    Raises :class:`NonzeroCellConstant` when the cell constant at ``p`` is
    not zero: the singular drift then produces a first-order limit.
    """
    sol = lambda_torus(drift_cell(A, b, p), grid, x=x, **kw)
    if abs(sol.constant) > tol:
        raise NonzeroCellConstant(sol.constant)
    return sol


def shift_gradient(H, p) -> "Expr":  # noqa: F821
    """``H(p + q)`` as an expression in ``q`` (names p1.., pn)."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    src = to_source(parse(H))
    norm = "sqrt(" + " + ".join(f"(p{k + 1} + {float(c)!r})^2" for k, c in enumerate(p)) + ")"
    src = re.sub(r"\bpn\b", norm, src)
    src = re.sub(r"\bp([1-9][0-9]*)\b",
                 lambda m: f"(p{m.group(1)} + {float(p[int(m.group(1)) - 1])!r})"
                 if int(m.group(1)) <= len(p) else m.group(0), src)
    return parse(src)


def _nonlinear_cell(op: Semilinear, p) -> Semilinear:
    base = drift_cell(op.base.A, op.base.b, p)
    return Semilinear(base, shift_gradient(op.H, p))


def _torus_gradient(grid, values):
    return np.stack([D @ values for D in gradient_matrices(grid, "central")], axis=-1)


@dataclass
class CellCorrectors:
    """First-corrector data at a frozen ``(x, p)`` feeding the second cell problem."""

    grid: TorusGrid
    x: np.ndarray
    p: np.ndarray
    A: np.ndarray           # (n, d, d) diffusion of the linearised operator
    b: np.ndarray           # (n, d) drift of the linearised cell operator
    f: np.ndarray           # (n,) source
    v_p: np.ndarray         # (d, n) derivative of v in p_k
    v_x: np.ndarray         # (d, n) derivative of v in x_j
    constant: float = 0.0


def _coeff_depends_on_x(op) -> bool:
    lin = op.base if isinstance(op, Semilinear) else op
    exprs = list(lin.exprs()) + ([op.H] if isinstance(op, Semilinear) else [])
    return any(e.depends_on("x") for e in exprs)


def cell_correctors(op, grid: TorusGrid, p=None, x=None, step: float = FD_STEP,
                    tol: float = CELL_TOL, **kw) -> CellCorrectors:
    """Solve the first cell problems needed for ``F_bar`` at ``(p, x)``.

    Derivatives of ``v`` in ``p`` and ``x`` are central differences across
    neighbouring cell solves with step ``step``.
    """
    d = grid.dim
    x = np.zeros(d) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    p = np.zeros(d) if p is None else np.atleast_1d(np.asarray(p, dtype=float))
    nonlinear = isinstance(op, Semilinear)
    lin = op.base if nonlinear else op
    pts = grid.physical_coords()
    A, b, f = lin.sample(x, pts)
    n = grid.size
    if not nonlinear and not lin.singular_drift:
        zero = np.zeros((d, n))
        return CellCorrectors(grid, x, p, A, np.zeros((n, d)), f, zero, zero.copy())

    def v_at(pp, xx):
        cell = _nonlinear_cell(op, pp) if nonlinear else drift_cell(lin.A, lin.b, pp)
        sol = lambda_torus(cell, grid, x=xx, **kw)
        if abs(sol.constant) > tol:
            raise NonzeroCellConstant(sol.constant)
        return sol

    jobs = [(p, x)]
    for k in range(d):
        e = np.eye(d)[k] * step
        jobs += [(p + e, x), (p - e, x)]
    x_dep = _coeff_depends_on_x(op)
    if x_dep:
        for j in range(d):
            e = np.eye(d)[j] * step
            jobs += [(p, x + e), (p, x - e)]
    sols = pmap(lambda job: v_at(*job), jobs)
    v0 = sols[0]
    v_p = np.stack([(sols[1 + 2 * k].corrector - sols[2 + 2 * k].corrector) / (2 * step)
                    for k in range(d)])
    if x_dep:
        off = 1 + 2 * d
        v_x = np.stack([(sols[off + 2 * j].corrector - sols[off + 1 + 2 * j].corrector) / (2 * step)
                        for j in range(d)])
    else:
        v_x = np.zeros((d, n))
    b_cell = b.copy()
    if nonlinear:
        q = p + _torus_gradient(grid, v0.corrector)
        b_cell = b - op.sample_Hp(q, x, pts)
    return CellCorrectors(grid, x, p, A, b_cell, f, v_p, v_x, v0.constant)


# -- second corrector -----------------------------------------------------------------------------


def second_corrector_and_Fbar(op, M, p, grid: TorusGrid, x=None, cell: CellCorrectors | None = None,
                              **kw) -> dict:
    """Effective operator value ``F_bar(M, p, x)`` and the second corrector ``w``.

    ``F_bar`` is the ergodic constant of
    ``-tr(A D^2w) - b.Dw - f_eff`` where ``f_eff`` collects the source,
    ``tr(A (M + 2 Dy(v_p) M + 2 Dy(v_x)))`` and ``b.(M v_p + v_x)``; for a
    regular (non-singular) drift ``b.p`` enters ``f_eff`` directly.
    """
    d = grid.dim
    M = np.atleast_2d(np.asarray(M, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if cell is None or isinstance(op, Semilinear) and not np.allclose(cell.p, p):
        cell = cell_correctors(op, grid, p, x, **kw)
    A, b, f = cell.A, cell.b, cell.f
    J = np.stack([_torus_gradient(grid, cell.v_p[k]) for k in range(d)], axis=-1)   # (n, i, k)
    K = np.stack([_torus_gradient(grid, cell.v_x[j]) for j in range(d)], axis=-1)   # (n, i, j)
    f_eff = f + np.einsum("nij,ji->n", A, M)
    f_eff = f_eff + 2 * np.einsum("nab,nbc,ca->n", A, J, M)
    f_eff = f_eff + 2 * np.einsum("nij,nji->n", A, K)
    Mvp = np.einsum("jk,kn->nj", M, cell.v_p)
    f_eff = f_eff + np.einsum("nj,nj->n", b, Mvp + cell.v_x.T)
    lin = op.base if isinstance(op, Semilinear) else op
    if not isinstance(op, Semilinear) and not lin.singular_drift:
        f_eff = f_eff + lin.sample(cell.x, grid.physical_coords())[1] @ p
    sol = lambda_torus(NodalLinear(A, b, f_eff), grid, **kw)
    return {"F_bar": sol.constant, "w": sol.corrector, "residual": sol.residual_sup}


def _basis(d):
    Ms = [np.zeros((d, d))]
    for i in range(d):
        Ms.append(np.outer(np.eye(d)[i], np.eye(d)[i]))
    for i in range(d):
        for j in range(i + 1, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0
            Ms.append(E)
    return Ms


def effective_interior(op, grid: TorusGrid, x=None, audit_samples: int = 3, seed: int = 0,
                       tol: float = 1e-3, strict: bool = True, **kw) -> EffectiveData:
    """Fit ``F_bar(M, p) = -tr(A_bar M) - b_bar.p - f_bar`` from basis samples.

    Linear input: ``F_bar`` is sampled at ``M`` in the symmetric basis and
    ``p`` in ``{0, e_k}``; the affine model is then audited at random
    off-basis samples (:class:`AffinityViolation` when the relative
    deviation exceeds ``tol`` and ``strict``).  Semilinear input: ``F_bar``
    is affine in ``M`` only, so a table over ``p`` in ``{0, +-e_k}`` with the
    ``M``-slopes is returned instead.
    """
    d = grid.dim
    x = np.zeros(d) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(op, Semilinear):
        return _effective_nonlinear(op, grid, x, audit_samples, seed, tol, strict, **kw)
    cell = cell_correctors(op, grid, None, x, **kw)
    Ms = _basis(d)
    samples = [(M, np.zeros(d)) for M in Ms] + [(np.zeros((d, d)), np.eye(d)[k]) for k in range(d)]
    vals = pmap(lambda mp: second_corrector_and_Fbar(op, mp[0], mp[1], grid, x, cell, **kw)["F_bar"],
                samples)
    F0 = vals[0]
    A_bar = np.zeros((d, d))
    for i in range(d):
        A_bar[i, i] = -(vals[1 + i] - F0)
    k = 1 + d
    for i in range(d):
        for j in range(i + 1, d):
            A_bar[i, j] = A_bar[j, i] = -(vals[k] - F0) / 2
            k += 1
    b_bar = np.array([-(vals[k + m] - F0) for m in range(d)])
    f_bar = -F0
    table = [{"M": M.tolist(), "p": p.tolist(), "value": float(v)} for (M, p), v in zip(samples, vals)]
    eff = EffectiveData(x.tolist(), A_bar.tolist(), b_bar.tolist(), float(f_bar), table)
    dev = _audit_interior(op, grid, x, cell, eff, audit_samples, seed, **kw)
    eff.diagnostics["interior_affinity_deviation"] = dev
    eff.diagnostics["cell_constant"] = cell.constant
    if strict and dev > tol:
        raise AffinityViolation(dev, tol)
    return eff


def _audit_interior(op, grid, x, cell, eff, samples, seed, **kw):
    rng = np.random.default_rng(seed)
    d = grid.dim
    worst = 0.0
    for _ in range(samples):
        B = rng.uniform(-1, 1, size=(d, d))
        M = 0.5 * (B + B.T)
        p = rng.uniform(-1, 1, size=d)
        val = second_corrector_and_Fbar(op, M, p, grid, x, cell, **kw)["F_bar"]
        model = eff.F_bar(M, p)
        worst = max(worst, abs(val - model) / (1.0 + abs(val)))
    return float(worst)


def _effective_nonlinear(op, grid, x, samples, seed, tol, strict, **kw):
    d = grid.dim
    ps = [np.zeros(d)] + [s * np.eye(d)[k] for k in range(d) for s in (1.0, -1.0)]
    Ms = _basis(d)
    table = []
    worst = 0.0
    rng = np.random.default_rng(seed)
    for p in ps:
        cell = cell_correctors(op, grid, p, x, **kw)
        vals = [second_corrector_and_Fbar(op, M, p, grid, x, cell, **kw)["F_bar"] for M in Ms]
        F0 = vals[0]
        slopes = np.zeros((d, d))
        for i in range(d):
            slopes[i, i] = -(vals[1 + i] - F0)
        k = 1 + d
        for i in range(d):
            for j in range(i + 1, d):
                slopes[i, j] = slopes[j, i] = -(vals[k] - F0) / 2
                k += 1
        table.append({"p": p.tolist(), "F_bar_M0": float(F0), "A_bar": slopes.tolist()})
        for _ in range(max(1, samples // len(ps) + 1)):
            B = rng.uniform(-1, 1, size=(d, d))
            M = 0.5 * (B + B.T)
            val = second_corrector_and_Fbar(op, M, p, grid, x, cell, **kw)["F_bar"]
            model = F0 - np.trace(slopes @ M)
            worst = max(worst, abs(val - model) / (1.0 + abs(val)))
    eff = EffectiveData(x.tolist(), F_table=table)
    eff.diagnostics["interior_affinity_deviation"] = float(worst)
    if strict and worst > tol:
        raise AffinityViolation(worst, tol)
    return eff


# -- boundary cell problem ---------------------------------------------------------------------------


def _boundary_cell_operator(op, p):
    lin = op.base if isinstance(op, Semilinear) else op
    if isinstance(op, Semilinear):
        return _nonlinear_cell(op, p)
    if lin.singular_drift:
        return drift_cell(lin.A, lin.b, p)
    return Linear.make(lin.A, None, 0.0)


def mu_bar_at(op, bop, p, x=None, **mu_kw):
    """Boundary cell constant ``mu_bar(p)`` (with ``mu_bar = -mu`` of the ergodic problem)."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    res = mu_limit(_boundary_cell_operator(op, p), shifted_boundary(bop, p), x=x, **mu_kw)
    return -res.mu, res


def effective_boundary(op, bop, x=None, audit_samples: int = 2, seed: int = 0,
                       tol: float = 1e-3, strict: bool = True, **mu_kw) -> EffectiveData:
    """``gamma_bar``, ``g_bar`` from the half-space cell problem at ``p = 0, e_k``.

    Extra random ``p`` samples audit that ``mu_bar`` is affine in ``p``.
    ``mu_kw`` is forwarded to :func:`mu_limit` (resolution, ``psi``,
    schedules).
    """
    d = op.dim
    x = np.zeros(d) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    rng = np.random.default_rng(seed)
    ps = [np.zeros(d)] + [np.eye(d)[k] for k in range(d)]
    ps += [rng.uniform(-1, 1, size=d) for _ in range(audit_samples)]
    out = [mu_bar_at(op, bop, p, x, **mu_kw) for p in ps]
    mus = [m for m, _ in out]
    g_bar = -mus[0]
    gamma_bar = np.array([mus[1 + k] - mus[0] for k in range(d)])
    dev = 0.0
    for p, m in zip(ps[1 + d:], mus[1 + d:]):
        dev = max(dev, abs(m - (gamma_bar @ p - g_bar)) / (1.0 + abs(m)))
    flags = [r.uniqueness_flag for _, r in out]
    eff = EffectiveData(x.tolist(), gamma_bar=gamma_bar.tolist(), g_bar=float(g_bar))
    eff.diagnostics.update({
        "boundary_affinity_deviation": float(dev),
        "mu_bar_samples": [{"p": p.tolist(), "mu_bar": float(m)} for p, m in zip(ps, mus)],
        "uniqueness_flags": flags,
        "oblique_margin": float(gamma_bar[-1]),
    })
    if SUSPECT in flags:
        eff.diagnostics["warning"] = "boundary cell constant flagged as possibly non-unique"
    if strict and dev > tol:
        raise AffinityViolation(dev, tol)
    return eff
