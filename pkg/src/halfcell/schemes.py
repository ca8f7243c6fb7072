"""Monotone finite-difference schemes and their stationary solvers.

A scheme is stored in row form: for each control ``k`` a sparse matrix
``M_k`` and right-hand side ``r_k`` so that the discrete equation reads

    max_k (M_k u - r_k)_i + N(u)_i = 0       at every node i,

where ``N`` collects optional gradient nonlinearities (semilinear interior
terms, nonlinear boundary terms).  Monotone means every off-diagonal
entry of every ``M_k`` is <= 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MonotonicityViolation, NonConvergence, ObliquenessTooWeak
from .grids import StripGrid, TorusGrid
from .model import HJB, Linear, NonlinearHomogeneous, PucciMinus, Semilinear

log = logging.getLogger(__name__)

LINEAR_TOL = 1e-10
NONLINEAR_TOL = 1e-8
CFL = 0.9

__all__ = [
    "DiscreteScheme",
    "NodalLinear",
    "assemble_operator",
    "assemble_interior",
    "assemble_neumann",
    "attach_boundary",
    "flatten_coefficients",
    "solve_stationary",
    "check_monotone",
    "gradient_matrices",
    "LINEAR_TOL",
    "NONLINEAR_TOL",
]


@dataclass
class DiscreteScheme:
    grid: object
    matrices: list
    rhs: list
    kind: str = "linear"
    nonlinear: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.matrices[0].shape[0]

    def values(self, u) -> np.ndarray:
        """``(M_k u - r_k)`` for every control, shape ``(controls, size)``."""
        return np.stack([M @ u - r for M, r in zip(self.matrices, self.rhs)])

    def residual(self, u) -> np.ndarray:
        out = self.values(u).max(axis=0)
        for term in self.nonlinear:
            out = out + term(u)[0]
        return out

    def policy(self, u, tie: float = 1e-12) -> np.ndarray:
        V = self.values(u)
        top = V.max(axis=0)
        scale = max(1.0, float(np.max(np.abs(top))))
        return np.argmax(V >= top - tie * scale, axis=0)

    def shifted(self, diag=0.0, rhs=0.0) -> "DiscreteScheme":
        """Copy with ``diag`` added to the diagonal and ``rhs`` to every right-hand side."""
        D = sp.diags(np.broadcast_to(diag, (self.size,)).astype(float))
        return DiscreteScheme(self.grid, [(M + D).tocsr() for M in self.matrices],
                              [r + rhs for r in self.rhs], self.kind, list(self.nonlinear))


@dataclass(frozen=True)
class NodalLinear:
    """Linear operator with coefficients given per grid node.

    ``A`` has shape ``(size, d, d)``, ``b`` ``(size, d)``, ``f`` ``(size,)``;
    used for linearised cell problems whose data are grid functions.
    """

    A: np.ndarray
    b: np.ndarray
    f: np.ndarray

    @property
    def dim(self) -> int:
        return self.A.shape[-1]


# -- coefficient handling ---------------------------------------------------------------------


def flatten_coefficients(grid, A, b):
    """Chain-rule transform of ``(A, b)`` to the flattened strip coordinates.

    With ``z = y_2 - psi(y_1)``: ``A~ = J A J^T`` for ``J = [[1, 0], [-psi', 1]]``
    and ``b~ = (b_1, b_2 - psi' b_1 - psi'' a_11)``.
    """
    if not isinstance(grid, StripGrid) or grid.dim == 1 or grid.psi is None:
        return A, b
    d1, d2 = grid.node_psi("d1"), grid.node_psi("d2")
    J = np.zeros(A.shape)
    J[:, 0, 0] = 1.0
    J[:, 1, 0] = -d1
    J[:, 1, 1] = 1.0
    At = J @ A @ np.swapaxes(J, -1, -2)
    bt = b.copy()
    bt[:, 1] = b[:, 1] - d1 * b[:, 0] - d2 * A[:, 0, 0]
    return At, bt


def check_monotone(M, grid=None, tol: float = 1e-12):
    """Raise :class:`MonotonicityViolation` if an off-diagonal entry is positive."""
    C = sp.coo_matrix(M)
    off = C.row != C.col
    scale = max(1.0, float(np.max(np.abs(M.diagonal()))))
    bad = off & (C.data > tol * scale)
    if np.any(bad):
        k = np.flatnonzero(bad)[0]
        node = int(C.row[k])
        if grid is not None:
            node = tuple(int(t) for t in np.unravel_index(node, grid.shape))
        raise MonotonicityViolation(node, f"weight {C.data[k]:.3e} on neighbour {int(C.col[k])}")


def assemble_operator(grid, A, b, c=None, drift: str = "auto", check: bool = True):
    """Sparse matrix of ``-tr(A D^2u) - b.Du + c u`` on ``grid``.

    ``A`` has shape ``(size, d, d)``, ``b`` ``(size, d)``.  Second
    derivatives use central differences; the mixed derivative uses the
    seven-point stencil oriented by the sign of ``a_12`` (monotone iff
    ``|a_12| h_1 h_2 <= min(a_11 h_2^2, a_22 h_1^2)``).  Drift terms are
    centred where that keeps the row monotone (``drift="auto"``) and
    upwinded otherwise; ``drift="upwind"`` forces upwinding.
    """
    n, d = grid.size, grid.dim
    h = grid.spacing
    A = np.asarray(A, dtype=float).reshape(n, d, d)
    b = np.asarray(b, dtype=float).reshape(n, d)
    diag = np.zeros(n) if c is None else np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()
    weights = {}

    def add(offset, w):
        weights[offset] = weights.get(offset, 0.0) + w

    axes = [tuple(int(k == j) for k in range(d)) for j in range(d)]
    plus = [None] * d
    minus = [None] * d
    for j in range(d):
        plus[j] = -A[:, j, j] / h[j] ** 2
        minus[j] = plus[j].copy()
        diag += 2 * A[:, j, j] / h[j] ** 2
    if d == 2:
        a12 = 0.5 * (A[:, 0, 1] + A[:, 1, 0])
        cpos = np.maximum(a12, 0.0) / (h[0] * h[1])
        cneg = np.maximum(-a12, 0.0) / (h[0] * h[1])
        cc = cpos + cneg
        for j in range(2):
            plus[j] = plus[j] + cc
            minus[j] = minus[j] + cc
        diag -= 2 * cc
        add((1, 1), -cpos)
        add((-1, -1), -cpos)
        add((1, -1), -cneg)
        add((-1, 1), -cneg)
    for j in range(d):
        bj = b[:, j]
        wp_c = plus[j] - bj / (2 * h[j])
        wm_c = minus[j] + bj / (2 * h[j])
        if drift == "central":
            central = np.ones(n, dtype=bool)
        elif drift == "upwind":
            central = np.zeros(n, dtype=bool)
        else:
            central = (wp_c <= 0) & (wm_c <= 0)
        pos = np.maximum(bj, 0.0) / h[j]
        neg = np.maximum(-bj, 0.0) / h[j]
        wp = np.where(central, wp_c, plus[j] - pos)
        wm = np.where(central, wm_c, minus[j] - neg)
        diag += np.where(central, 0.0, pos + neg)
        add(axes[j], wp)
        add(tuple(-o for o in axes[j]), wm)

    rows, cols, vals = [np.arange(n)], [np.arange(n)], [diag]
    for offset, w in weights.items():
        w = np.broadcast_to(w, (n,))
        keep = w != 0
        rows.append(np.arange(n)[keep])
        cols.append(grid.neighbor(offset)[keep])
        vals.append(w[keep])
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    M.sum_duplicates()
    if check:
        check_monotone(M, grid)
    return M


def node_points(grid, x=None):
    """Default sampling points: frozen slow point ``x`` and physical fast coordinates."""
    y = grid.physical_coords()
    if x is None:
        x = np.zeros(grid.dim)
    x = np.broadcast_to(np.asarray(x, dtype=float), y.shape)
    return x, y


def assemble_interior(op, grid, x=None, y=None, zeroth=0.0, drift: str = "auto",
                      drift_scale: float = 1.0, H_scale: float = 1.0) -> DiscreteScheme:
    """Discretize ``F(D^2u, Du, .) + zeroth * u`` on every node of ``grid``.

    Coefficients are sampled at per-node slow points ``x`` and fast points
    ``y`` (defaults: a frozen ``x`` and the physical node coordinates).
    ``drift_scale`` multiplies ``b`` (the 1/eps factor of two-scale
    problems) and ``H_scale`` the semilinear term.  Bottom-boundary rows
    of strips are placeholders until :func:`attach_boundary` is called.
    """
    if x is None or y is None:
        x0, y0 = node_points(grid, x if x is not None and np.ndim(x) == 1 else None)
        x = x0 if x is None or np.ndim(x) == 1 else x
        y = y0 if y is None else y
    if isinstance(op, PucciMinus):
        inner = assemble_interior(op.as_controls(), grid, x, y, zeroth, drift)
        inner.kind = "pucci"
        return inner
    if isinstance(op, HJB):
        mats, rhs = [], []
        for ctrl in op.controls:
            s = assemble_interior(ctrl, grid, x, y, zeroth, drift, drift_scale)
            mats += s.matrices
            rhs += s.rhs
        return DiscreteScheme(grid, mats, rhs, "hjb" if len(mats) > 1 else "linear")
    if isinstance(op, Semilinear):
        s = assemble_interior(op.base, grid, x, y, zeroth, drift, drift_scale)
        s.kind = "semilinear"
        s.nonlinear.append(_semilinear_term(op, grid, x, y, H_scale))
        return s
    if isinstance(op, NodalLinear):
        A, b = flatten_coefficients(grid, op.A, op.b * drift_scale)
        M = assemble_operator(grid, A, b, zeroth, drift=drift)
        return DiscreteScheme(grid, [M], [np.asarray(op.f, dtype=float)], "linear")
    if not isinstance(op, Linear):
        raise TypeError(f"cannot assemble {type(op).__name__}")
    A, b, f = op.sample(x, y)
    A, b = flatten_coefficients(grid, A, b * drift_scale)
    M = assemble_operator(grid, A, b, zeroth, drift=drift)
    return DiscreteScheme(grid, [M], [np.asarray(f, dtype=float)], "linear")


def _diff_matrix(grid, axis, kind):
    """First-difference matrix along ``axis``: 'central', 'forward' or 'backward'."""
    n = grid.size
    h = grid.spacing[axis]
    e = tuple(int(k == axis) for k in range(grid.dim))
    me = tuple(-o for o in e)
    I = np.arange(n)
    if kind == "central":
        rows = np.concatenate([I, I])
        cols = np.concatenate([grid.neighbor(e), grid.neighbor(me)])
        vals = np.concatenate([np.full(n, 0.5 / h), np.full(n, -0.5 / h)])
    elif kind == "forward":
        rows, cols = np.concatenate([I, I]), np.concatenate([grid.neighbor(e), I])
        vals = np.concatenate([np.full(n, 1 / h), np.full(n, -1 / h)])
    else:
        rows, cols = np.concatenate([I, I]), np.concatenate([I, grid.neighbor(me)])
        vals = np.concatenate([np.full(n, 1 / h), np.full(n, -1 / h)])
    D = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    D.sum_duplicates()
    return D


def gradient_matrices(grid, kind="central"):
    """Matrices mapping nodal values to the physical gradient components."""
    Ds = [_diff_matrix(grid, k, kind) for k in range(grid.dim)]
    if isinstance(grid, StripGrid) and grid.dim == 2 and grid.psi is not None:
        Ds[0] = (Ds[0] - sp.diags(grid.node_psi("d1")) @ Ds[1]).tocsr()
    return Ds


def _semilinear_term(op: Semilinear, grid, x, y, scale):
    Ds = gradient_matrices(grid, "central")
    mask = grid.boundary_mask()

    def term(u):
        p = np.stack([D @ u for D in Ds], axis=-1)
        H = scale * op.sample_H(p, x, y)
        Hp = scale * op.sample_Hp(p, x, y)
        J = sum(sp.diags(Hp[:, k]) @ Ds[k] for k in range(grid.dim))
        keep = sp.diags((~mask).astype(float))
        return np.where(mask, 0.0, H), (keep @ J).tocsr()

    return term


# -- boundary rows ---------------------------------------------------------------------------------


def assemble_neumann(bop, grid: StripGrid, x=None, y=None, alpha=0.0, check: bool = True):
    """Rows of the oblique condition ``L(Du) + alpha u`` on the bottom nodes.

    Returns ``(B, g, term)``: a sparse matrix with one row per grid node
    (zero away from the bottom), the boundary data on the bottom rows and,
    for nonlinear boundary operators, a nonlinear term for Newton's
    method (else None).  The normal part is a one-sided difference; the
    tangential part is upwinded against the sign of ``gamma_1`` so the row
    stays monotone.
    """
    n = grid.size
    mask = grid.bottom_mask()
    idx = np.flatnonzero(mask)
    if x is None or y is None:
        x0, y0 = node_points(grid, x if x is not None and np.ndim(x) == 1 else None)
        x = x0 if x is None or np.ndim(x) == 1 else x
        y = y0 if y is None else y
    base = bop.base if isinstance(bop, NonlinearHomogeneous) else bop
    gamma, g = base.sample(np.asarray(x)[idx], np.asarray(y)[idx])
    gamma = gamma.reshape(len(idx), grid.dim)
    hz = grid.h_z
    up = grid.neighbor((1,) if grid.dim == 1 else (0, 1))[idx]
    if grid.dim == 1:
        gz = gamma[:, 0]
        gt = np.zeros(len(idx))
    else:
        d1 = grid.node_psi("d1")[idx]
        gt = gamma[:, 0]
        gz = gamma[:, 1] - gt * d1
    weak = -gz < 10 * (grid.h_t if grid.dim == 2 else 0.0) * np.abs(gt)
    weak |= gz >= 0
    if check and np.any(weak):
        k = int(np.flatnonzero(weak)[0])
        raise ObliquenessTooWeak(int(idx[k]), f"normal part {-gz[k]:.3e}, tangential {gt[k]:.3e}")
    rows = [idx, idx]
    cols = [up, idx]
    vals = [gz / hz, -gz / hz + alpha]
    if grid.dim == 2:
        ht = grid.h_t
        right = grid.neighbor((1, 0))[idx]
        left = grid.neighbor((-1, 0))[idx]
        pos, neg = np.maximum(gt, 0) / ht, np.maximum(-gt, 0) / ht
        rows += [idx, idx, idx]
        cols += [idx, left, right]
        vals += [pos + neg, -pos, -neg]
    B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    B.sum_duplicates()
    if check:
        check_monotone(B, grid)
    rhs = np.zeros(n)
    rhs[idx] = g
    term = None
    if isinstance(bop, NonlinearHomogeneous):
        term = _boundary_term(bop, grid, idx, np.asarray(x)[idx], np.asarray(y)[idx], gt)
    return B, rhs, term


def _boundary_term(bop, grid, idx, x, y, gt):
    n = grid.size
    Dz = _diff_matrix(grid, grid.dim - 1, "forward")[idx]
    if grid.dim == 2:
        Dt = sp.vstack([
            (_diff_matrix(grid, 0, "backward") if t > 0 else _diff_matrix(grid, 0, "forward"))[i]
            for i, t in zip(idx, gt)
        ]).tocsr()
        Dt = (Dt - sp.diags(grid.node_psi("d1")[idx]) @ Dz).tocsr()
        Ds = [Dt, Dz]
    else:
        Ds = [Dz]
    E = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))

    def term(u, step=1e-7):
        p = np.stack([D @ u for D in Ds], axis=-1)
        pn = np.linalg.norm(p, axis=-1)
        h = bop.sample_h(pn, x, y)
        dh = (bop.sample_h(pn + step, x, y) - bop.sample_h(np.maximum(pn - step, 0), x, y)) / (
            pn + step - np.maximum(pn - step, 0))
        unit = p / np.maximum(pn, 1e-300)[:, None]
        J = sum(sp.diags(dh * unit[:, k]) @ Ds[k] for k in range(grid.dim))
        return E @ h, (E @ J).tocsr()

    return term


def attach_boundary(scheme: DiscreteScheme, B, g, term=None) -> DiscreteScheme:
    """Replace the bottom rows of every control by the boundary rows ``B u - g``."""
    mask = scheme.grid.bottom_mask()
    keep = sp.diags((~mask).astype(float))
    mats = [(keep @ M + B).tocsr() for M in scheme.matrices]
    rhs = [np.where(mask, g, r) for r in scheme.rhs]
    nonlinear = list(scheme.nonlinear)
    if term is not None:
        nonlinear.append(term)
    kind = scheme.kind if term is None or scheme.kind != "linear" else "semilinear"
    return DiscreteScheme(scheme.grid, mats, rhs, kind, nonlinear)


# -- solvers -------------------------------------------------------------------------------------------


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    history: list


def _solve_linear(M, r):
    return spla.spsolve(M.tocsc(), r)


def solve_stationary(scheme: DiscreteScheme, method: str | None = None, u0=None,
                     tol: float | None = None, max_iter: int = 200,
                     cfl: float = CFL, return_info: bool = False):
    """Solve ``scheme`` for its stationary grid function.

    Methods: ``"direct"`` (linear), ``"howard"`` (policy iteration for
    HJB), ``"march"`` (explicit monotone pseudo-time stepping, the default
    for Pucci operators), ``"newton"`` (gradient nonlinearities).  Raises
    :class:`NonConvergence` carrying the best iterate on failure.
    """
    if method is None:
        method = {"linear": "direct", "hjb": "howard", "pucci": "march",
                  "semilinear": "newton"}[scheme.kind]
    if method == "direct":
        u = _solve_linear(scheme.matrices[0], scheme.rhs[0])
        res = float(np.max(np.abs(scheme.residual(u))))
        info = SolveInfo(1, res, [res])
        scale = 1.0 + float(np.max(np.abs(scheme.rhs[0])))
        if not np.all(np.isfinite(u)) or res > (tol or LINEAR_TOL) * scale * 1e3:
            raise NonConvergence(f"linear solve residual {res:.3e}", u, info.history)
    elif method == "howard":
        u, info = _howard(scheme, u0, tol or LINEAR_TOL, max_iter)
    elif method == "march":
        u, info = _march(scheme, u0, tol or NONLINEAR_TOL, max_iter, cfl)
    elif method == "newton":
        u, info = _newton(scheme, u0, tol or NONLINEAR_TOL, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    return (u, info) if return_info else u


def _select(scheme, pol):
    n = scheme.size
    M = sp.csr_matrix((n, n))
    r = np.zeros(n)
    for k, (Mk, rk) in enumerate(zip(scheme.matrices, scheme.rhs)):
        sel = (pol == k).astype(float)
        M = M + sp.diags(sel) @ Mk
        r = r + sel * rk
    return M.tocsr(), r


def _howard(scheme, u0, tol, max_iter):
    pol = np.zeros(scheme.size, dtype=int) if u0 is None else scheme.policy(u0)
    history = []
    best = None
    for it in range(1, max_iter + 1):
        M, r = _select(scheme, pol)
        u = _solve_linear(M, r)
        res = float(np.max(np.abs(scheme.residual(u))))
        history.append(res)
        best = u
        new = scheme.policy(u)
        if np.array_equal(new, pol):
            scale = 1.0 + max(float(np.max(np.abs(rk))) for rk in scheme.rhs)
            if res <= tol * scale * 1e3:
                return u, SolveInfo(it, res, history)
            break
        pol = new
    raise NonConvergence(f"policy iteration stalled, residual {history[-1]:.3e}", best, history)


def _march(scheme, u0, tol, max_iter, cfl):
    dmax = max(float(M.diagonal().max()) for M in scheme.matrices)
    dt = cfl / dmax
    u = np.zeros(scheme.size) if u0 is None else np.array(u0, dtype=float)
    history = []
    steps = max_iter * 1000
    for it in range(1, steps + 1):
        R = scheme.residual(u)
        res = float(np.max(np.abs(R)))
        if it % 100 == 1:
            history.append(res)
        if res < tol:
            return u, SolveInfo(it, res, history)
        u = u - dt * R
    raise NonConvergence(f"pseudo-time marching residual {res:.3e}", u, history)


def _newton(scheme, u0, tol, max_iter):
    if len(scheme.matrices) != 1:
        raise NotImplementedError("Newton iteration needs a single control")
    M, r = scheme.matrices[0], scheme.rhs[0]
    u = _solve_linear(M, r) if u0 is None else np.array(u0, dtype=float)

    def full(v):
        R = M @ v - r
        J = M
        for term in scheme.nonlinear:
            val, jac = term(v)
            R = R + val
            J = J + jac
        return R, J.tocsr()

    R, J = full(u)
    res = float(np.max(np.abs(R)))
    history = [res]
    for it in range(1, max_iter + 1):
        if res < tol:
            check_monotone(J, scheme.grid, tol=1e-9)
            return u, SolveInfo(it, res, history)
        du = _solve_linear(J, R)
        step = 1.0
        while True:
            cand = u - step * du
            Rc, Jc = full(cand)
            rc = float(np.max(np.abs(Rc)))
            if rc < res or step < 1e-4:
                break
            step *= 0.5
        u, R, J, res = cand, Rc, Jc, rc
        history.append(res)
    raise NonConvergence(f"Newton residual {res:.3e}", u, history)
