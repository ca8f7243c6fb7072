"""Operators, boundary operators and domains, plus sampled assumption audits.

Sign conventions follow the Bellman form used throughout the package::

    F(M, p, x) = -tr(A M) - b.p - f          (Linear)
    F(M, p, x) = max_k  F_k(M, p, x)          (HJB, controls F_k Linear)
    F(M, p, x) = -(kappa * sum(e > 0) + Kappa * sum(e < 0))   (minimal Pucci,
                 e the eigenvalues of M)
    F(M, p, x) = Linear(M, p, x) + H(p, x)    (Semilinear)

and oblique boundary operators ``L(p, x) = p.gamma - g`` (+ ``h(|p|)``).
Coefficient expressions are functions of the slow variable ``x1..xN`` and
the fast, periodic variable ``y1..yN``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .expr import Expr, evaluate, parse, periodicity_defect

__all__ = [
    "Linear",
    "HJB",
    "PucciMinus",
    "Semilinear",
    "LinearOblique",
    "NonlinearHomogeneous",
    "Torus",
    "HalfStrip",
    "OscillatingHalfPlane",
    "AuditItem",
    "AuditReport",
    "evaluate_operator",
    "evaluate_boundary",
    "audit_assumptions",
    "signed_distance_and_normal",
    "graph_samples",
    "bindings",
]


def bindings(x=None, y=None, dim: int = 1, p=None) -> dict:
    """Variable bindings for points ``x``, ``y`` (arrays with trailing axis ``dim``)."""
    env = {}
    for prefix, pts in (("x", x), ("y", y), ("p", p)):
        if pts is None:
            continue
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 0:
            pts = pts[None]
        for k in range(dim):
            env[f"{prefix}{k + 1}"] = pts[..., k]
        if prefix == "p":
            env["pn"] = np.sqrt(np.sum(pts**2, axis=-1))
    return env


def _npoints(x, y) -> tuple:
    shapes = [np.shape(a)[:-1] for a in (x, y) if a is not None and np.ndim(a) > 1]
    return np.broadcast_shapes(*shapes) if shapes else ()


def _sample(e: Expr, env: dict, shape: tuple) -> np.ndarray:
    return np.broadcast_to(np.asarray(evaluate(e, env), dtype=float), shape).copy()


def _as_matrix(A, dim=None):
    if isinstance(A, (str, int, float, Expr)):
        d = dim or 1
        A = [[A if i == j else 0.0 for j in range(d)] for i in range(d)]
    return tuple(tuple(parse(a) for a in row) for row in A)


def _as_vector(b, dim):
    if b is None:
        b = [0.0] * dim
    if isinstance(b, (str, int, float, Expr)):
        b = [b] if dim == 1 else [b] * dim
    return tuple(parse(v) for v in b)


# -- interior operators --------------------------------------------------------------


@dataclass(frozen=True)
class Linear:
    """``-tr(A D^2u) - b.Du - f``.

    ``singular_drift`` marks ``b`` as carrying the 1/eps factor of the
    singular two-scale problem (it then enters the first cell problem).
    """

    A: tuple
    b: tuple
    f: Expr
    singular_drift: bool = True

    @classmethod
    def make(cls, A, b=None, f=0.0, singular_drift=True, dim=None):
        A = _as_matrix(A, dim)
        return cls(A, _as_vector(b, len(A)), parse(f), singular_drift)

    @property
    def dim(self) -> int:
        return len(self.A)

    def exprs(self):
        yield from (a for row in self.A for a in row)
        yield from self.b
        yield self.f

    def sample(self, x=None, y=None):
        """Coefficient arrays ``(A[..., d, d], b[..., d], f[...])`` at the given points."""
        d = self.dim
        shape = _npoints(x, y)
        env = bindings(x, y, d)
        A = np.empty(shape + (d, d))
        for i in range(d):
            for j in range(d):
                A[..., i, j] = _sample(self.A[i][j], env, shape)
        b = np.stack([_sample(e, env, shape) for e in self.b], axis=-1)
        return A, b, _sample(self.f, env, shape)

    def with_f(self, f) -> "Linear":
        return Linear(self.A, self.b, parse(f), self.singular_drift)


@dataclass(frozen=True)
class HJB:
    """Pointwise supremum of finitely many linear controls."""

    controls: tuple

    def __post_init__(self):
        if not self.controls:
            raise ValueError("HJB operator needs at least one control")
        if len({c.dim for c in self.controls}) != 1:
            raise ValueError("controls have different dimensions")

    @property
    def dim(self) -> int:
        return self.controls[0].dim

    def exprs(self):
        for c in self.controls:
            yield from c.exprs()


@dataclass(frozen=True)
class PucciMinus:
    """``-M^-(M)`` with the minimal Pucci operator of ellipticity bounds kappa <= Kappa."""

    kappa: float
    Kappa: float
    dim: int = 1

    def __post_init__(self):
        if not 0 < self.kappa <= self.Kappa:
            raise ValueError("need 0 < kappa <= Kappa")

    def exprs(self):
        return iter(())

    def as_controls(self) -> HJB:
        """Monotone grid-aligned control set whose supremum approximates the operator.

        Exact in 1D; in 2D the eigenvectors are restricted to the axis and
        diagonal directions of the grid.
        """
        k, K = self.kappa, self.Kappa
        if self.dim == 1:
            return HJB((Linear.make(k), Linear.make(K)))
        m, d = (k + K) / 2, (K - k) / 2
        mats = [[[k, 0], [0, K]], [[K, 0], [0, k]], [[m, d], [d, m]], [[m, -d], [-d, m]]]
        return HJB(tuple(Linear.make(A) for A in mats))


@dataclass(frozen=True)
class Semilinear:
    """Linear part plus a gradient nonlinearity ``H(p, x, y)`` (variables p1.., pn)."""

    base: Linear
    H: Expr

    @property
    def dim(self) -> int:
        return self.base.dim

    def exprs(self):
        yield from self.base.exprs()
        yield self.H

    def sample_H(self, p, x=None, y=None):
        env = bindings(x, y, self.dim, p=p)
        shape = np.broadcast_shapes(_npoints(x, y), np.shape(p)[:-1])
        return _sample(self.H, env, shape)

    def sample_Hp(self, p, x=None, y=None, step: float = 1e-6):
        """Central-difference gradient of H in p, shape ``(..., d)``."""
        p = np.asarray(p, dtype=float)
        out = []
        for k in range(self.dim):
            dp = np.zeros(self.dim)
            dp[k] = step
            out.append((self.sample_H(p + dp, x, y) - self.sample_H(p - dp, x, y)) / (2 * step))
        return np.stack(out, axis=-1)


Operator = Union[Linear, HJB, PucciMinus, Semilinear]


def _pucci_value(op: PucciMinus, M):
    eig = np.linalg.eigvalsh(np.atleast_2d(M))
    return -(op.kappa * eig[eig > 0].sum() + op.Kappa * eig[eig < 0].sum())


def evaluate_operator(op: Operator, M, p, x=None, y=None, return_control: bool = False):
    """Value of ``F(M, p, .)`` with coefficients sampled at ``(x, y)``.

    For HJB operators the maximising control is the lowest index among
    ties; pass ``return_control=True`` to get it as well.
    """
    d = op.dim
    M = np.atleast_2d(np.asarray(M, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if M.shape != (d, d) or p.shape != (d,):
        raise ValueError(f"dimension mismatch: operator is {d}D, got M{M.shape}, p{p.shape}")
    x = np.zeros(d) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    y = np.zeros(d) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (d,) or y.shape != (d,):
        raise ValueError("dimension mismatch in evaluation point")
    if isinstance(op, Linear):
        A, b, f = op.sample(x, y)
        val = float(-np.trace(A @ M) - b @ p - f)
        return (val, 0) if return_control else val
    if isinstance(op, HJB):
        vals = [evaluate_operator(c, M, p, x, y) for c in op.controls]
        k = int(np.argmax(vals))
        return (vals[k], k) if return_control else vals[k]
    if isinstance(op, PucciMinus):
        val = float(_pucci_value(op, M))
        return (val, 0) if return_control else val
    if isinstance(op, Semilinear):
        val = evaluate_operator(op.base, M, p, x, y) + float(op.sample_H(p, x, y))
        return (val, 0) if return_control else val
    raise TypeError(f"unsupported operator {type(op).__name__}")


# -- boundary operators ------------------------------------------------------------------


@dataclass(frozen=True)
class LinearOblique:
    """``L(p, x) = p.gamma(x, y) - g(x, y)``."""

    gamma: tuple
    g: Expr

    @classmethod
    def make(cls, gamma, g=0.0):
        if isinstance(gamma, (str, int, float, Expr)):
            gamma = [gamma]
        return cls(tuple(parse(v) for v in gamma), parse(g))

    @property
    def dim(self) -> int:
        return len(self.gamma)

    def exprs(self):
        yield from self.gamma
        yield self.g

    def sample(self, x=None, y=None):
        shape = _npoints(x, y)
        env = bindings(x, y, self.dim)
        gamma = np.stack([_sample(e, env, shape) for e in self.gamma], axis=-1)
        return gamma, _sample(self.g, env, shape)

    def with_g(self, g) -> "LinearOblique":
        return LinearOblique(self.gamma, parse(g))


@dataclass(frozen=True)
class NonlinearHomogeneous:
    """``L(p, x) = p.gamma - g + h(|p|)`` with ``h`` an expression in ``pn``.

    (L1) needs ``|h'| < gamma.n``; (L3) needs ``h(t)/t -> 0``, which holds
    for capped ``h``.
    """

    base: LinearOblique
    h: Expr

    @property
    def dim(self) -> int:
        return self.base.dim

    def exprs(self):
        yield from self.base.exprs()
        yield self.h

    def sample_h(self, pnorm, x=None, y=None):
        env = bindings(x, y, self.dim)
        env["pn"] = np.asarray(pnorm, dtype=float)
        shape = np.broadcast_shapes(_npoints(x, y), np.shape(pnorm))
        return _sample(self.h, env, shape)


BoundaryOperator = Union[LinearOblique, NonlinearHomogeneous]


def evaluate_boundary(bop: BoundaryOperator, p, x=None, y=None) -> float:
    d = bop.dim
    p = np.atleast_1d(np.asarray(p, dtype=float))
    x = np.zeros(d) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    y = np.zeros(d) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
    if isinstance(bop, LinearOblique):
        gamma, g = bop.sample(x, y)
        return float(p @ gamma - g)
    base = evaluate_boundary(bop.base, p, x, y)
    return base + float(bop.sample_h(np.linalg.norm(p), x, y))


# -- domains --------------------------------------------------------------------------------


@dataclass(frozen=True)
class Torus:
    dim: int = 1


@dataclass(frozen=True)
class HalfStrip:
    """``{y_N > psi(y')}`` cut at ``y_N = height`` (psi None means flat)."""

    dim: int = 1
    psi: Expr | None = None
    height: float = 4.0


@dataclass(frozen=True)
class OscillatingHalfPlane:
    """``{x_N > eps * psi(x'/eps)}``."""

    dim: int = 2
    psi: Expr | None = None
    epsilon: float = 0.25


def graph_samples(psi, s, step: float = 1e-5):
    """Values, first and second derivatives of a 1D graph function by central differences.

    ``psi`` is an Expr in ``y1`` or a callable.
    """
    s = np.asarray(s, dtype=float)
    if psi is None:
        z = np.zeros_like(s)
        return z, z.copy(), z.copy()
    fn = psi if callable(psi) and not isinstance(psi, Expr) else (
        lambda t: np.broadcast_to(evaluate(psi, {"y1": t}), np.shape(t)))
    v0, vp, vm = fn(s), fn(s + step), fn(s - step)
    v0 = np.asarray(v0, dtype=float)
    return v0, (vp - vm) / (2 * step), (vp - 2 * v0 + vm) / step**2


def _graph(dom):
    if isinstance(dom, HalfStrip):
        return dom.psi, 1.0
    if isinstance(dom, OscillatingHalfPlane):
        return dom.psi, dom.epsilon
    raise ValueError(f"{type(dom).__name__} has no boundary")


def signed_distance_and_normal(dom, x):
    """Signed distance (positive inside) and outward unit normal at the foot point.

    The distance is the tangent-line approximation
    ``(x_N - psi(x')) / sqrt(1 + |psi'|^2)``: exact for flat graphs.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    psi, eps = _graph(dom)
    if dom.dim == 1:
        return float(x[0]), np.array([-1.0])
    if psi is None:
        return float(x[1]), np.array([0.0, -1.0])
    v, dv, _ = graph_samples(psi, np.array([x[0] / eps]))
    height, slope = eps * float(v[0]), float(dv[0])
    norm = np.sqrt(1.0 + slope**2)
    return (x[1] - height) / norm, np.array([slope, -1.0]) / norm


def contains(dom, x) -> bool:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(dom, Torus):
        return True
    psi, eps = _graph(dom)
    if dom.dim == 1 or psi is None:
        inside = x[-1] > 0
    else:
        inside = x[1] > eps * float(evaluate(psi, {"y1": x[0] / eps}))
    if isinstance(dom, HalfStrip):
        inside = inside and x[-1] < dom.height
    return bool(inside)


# -- audits ----------------------------------------------------------------------------------


@dataclass
class AuditItem:
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class AuditReport:
    items: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(i.passed for i in self.items.values())

    def __getitem__(self, key) -> AuditItem:
        return self.items[key]

    def as_dict(self) -> dict:
        return {k: {"passed": v.passed, "margin": v.margin, "detail": v.detail}
                for k, v in self.items.items()}


def _linear_parts(op):
    if isinstance(op, Linear):
        return [op]
    if isinstance(op, HJB):
        return list(op.controls)
    if isinstance(op, Semilinear):
        return [op.base]
    return []


def audit_assumptions(op: Operator, bop: BoundaryOperator | None = None, dom=None,
                      probes: int = 64, seed: int = 0, x=None) -> AuditReport:
    """Sample the structural assumptions on random tuples; report margins.

    Checks ellipticity (uniform, with margin kappa), symmetry and the
    diffusion lower bound of linear parts, a Lipschitz estimate in (M, p),
    periodicity of all coefficient expressions in y, obliqueness (L1) of
    the boundary operator and, for graph domains, periodicity and height
    of the graph.
    """
    probes = max(1, int(probes))
    rng = np.random.default_rng(seed)
    d = op.dim
    x0 = np.zeros(d) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    report = AuditReport()

    ys = rng.uniform(0, 1, size=(probes, d))
    # ellipticity: F(M+N) - F(M) <= -kappa tr N, N = v v^T >= 0
    margin = np.inf
    worst = ""
    for i in range(probes):
        M = np.zeros((d, d)) if i == 0 else _sym(rng, d, 10.0)
        p = rng.normal(size=d) * 10.0
        dirs = [np.eye(d)[k] for k in range(d)] + [_unit(rng, d)]
        for v in dirs:
            N = np.outer(v, v) * rng.uniform(0.5, 2.0)
            q = (evaluate_operator(op, M, p, x0, ys[i]) - evaluate_operator(op, M + N, p, x0, ys[i]))
            q /= np.trace(N)
            if q < margin:
                margin, worst = q, f"y={np.round(ys[i], 4).tolist()}"
    eig_margin = np.inf
    sym_defect = 0.0
    for lin in _linear_parts(op):
        A, _, _ = lin.sample(x0, ys)
        sym_defect = max(sym_defect, float(np.max(np.abs(A - np.swapaxes(A, -1, -2)))))
        eig_margin = min(eig_margin, float(np.min(np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2))))))
    if np.isfinite(eig_margin):
        margin = min(margin, eig_margin)
        worst += f"; smallest eigenvalue of A {eig_margin:.3g}"
    report.items["F3_uniform_ellipticity"] = AuditItem(bool(margin > 1e-12), float(margin), worst)
    if _linear_parts(op):
        report.items["H1_symmetry"] = AuditItem(sym_defect < 1e-12, sym_defect)

    # Lipschitz in (M, p) at fixed point
    K = 0.0
    for i in range(probes):
        M1, M2 = _sym(rng, d, 5.0), _sym(rng, d, 5.0)
        p1, p2 = rng.normal(size=d) * 5, rng.normal(size=d) * 5
        num = abs(evaluate_operator(op, M1, p1, x0, ys[i]) - evaluate_operator(op, M2, p2, x0, ys[i]))
        den = np.linalg.norm(p1 - p2) + np.linalg.norm(M1 - M2, 2)
        K = max(K, num / den)
    report.items["F1_lipschitz"] = AuditItem(bool(np.isfinite(K)), float(K), "difference-quotient estimate")

    per = 0.0
    for e in op.exprs():
        per = max(per, periodicity_defect(e, d, probes, seed, extra=bindings(x0, None, d)))
    report.items["F0_periodicity"] = AuditItem(per < 1e-12, per)

    if bop is not None:
        report.items.update(_audit_boundary(bop, dom, rng, probes, x0))
    if isinstance(dom, (HalfStrip, OscillatingHalfPlane)) and dom.dim == 2 and dom.psi is not None:
        per = periodicity_defect(dom.psi, 1, probes, seed)
        report.items["O1_graph_periodic"] = AuditItem(per < 1e-12, per)
        if isinstance(dom, HalfStrip):
            top = float(np.max(evaluate(dom.psi, {"y1": np.linspace(0, 1, 257)})))
            report.items["O1_height"] = AuditItem(dom.height > top + 1, dom.height - top - 1)
    return report


def _audit_boundary(bop, dom, rng, probes, x0):
    d = bop.dim
    out = {}
    worst = np.inf
    per = 0.0
    for e in bop.exprs():
        if e is not getattr(bop, "h", None):
            per = max(per, periodicity_defect(e, d, probes, 0, extra=bindings(x0, None, d)))
    for i in range(probes):
        s = rng.uniform(0, 1)
        if d == 1:
            y, n = np.array([0.0]), np.array([-1.0])
        else:
            psi = None if dom is None else _graph(dom)[0]
            v, dv, _ = graph_samples(psi, np.array([s]))
            y = np.array([s, float(v[0])])
            n = np.array([float(dv[0]), -1.0]) / np.hypot(float(dv[0]), 1.0)
        p = rng.normal(size=d) * 5
        t = rng.uniform(0.1, 10)
        q = (evaluate_boundary(bop, p + t * n, x0, y) - evaluate_boundary(bop, p, x0, y)) / t
        worst = min(worst, q)
    out["L1_obliqueness"] = AuditItem(bool(worst > 0), float(worst), "min (L(p+tn)-L(p))/t")
    out["boundary_periodicity"] = AuditItem(per < 1e-12, per)
    if isinstance(bop, NonlinearHomogeneous):
        t = 1e6
        dev = 0.0
        for _ in range(8):
            p = _unit(rng, d)
            gamma, _ = bop.base.sample(x0, np.zeros(d))
            val = evaluate_boundary(bop, t * p, x0) / t
            dev = max(dev, abs(val - float(p @ gamma)))
        out["L3_homogeneous_limit"] = AuditItem(dev < 1e-3, dev, "|t^-1 L(tp) - p.gamma| at t=1e6")
    return out


def _sym(rng, d, scale):
    B = rng.normal(size=(d, d)) * scale
    return 0.5 * (B + B.T)


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)
