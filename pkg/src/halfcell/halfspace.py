"""Averages of periodic boundary data over tilted hyperplanes.

For a half-space ``H_q = {q.x > 0}`` the boundary constant of the flat
problem is minus the mean of ``g`` over ``{q.x = 0}``.  Rational slopes see
a periodic trace of ``g`` along the plane, irrational ones equidistribute
and see the cell mean, which makes ``q -> mu(q)`` discontinuous.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .expr import evaluate, parse
from .model import bindings
from .parallel import pmap

NODES_PER_UNIT = 32
DEFAULT_RADII = (50.0, 100.0, 200.0, 400.0)

__all__ = [
    "SlopeScan",
    "boundary_average",
    "tilted_normal",
    "slope_scan",
    "super_period",
]


def _plane_basis(q: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``q``'s orthogonal complement, as rows."""
    _, _, Vt = np.linalg.svd(q[None, :])
    return Vt[1:]


def boundary_average(g, q, R: float, nodes_per_unit: int = NODES_PER_UNIT) -> float:
    """Mean of ``g(y)`` over ``{q.y = 0} ∩ B(0, R)`` by the composite midpoint rule."""
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-9:
        raise ValueError("q must be a unit vector")
    if R < 1:
        raise ValueError("R must be at least 1")
    g = parse(g)
    d = len(q)
    basis = _plane_basis(q)
    n = max(int(np.ceil(2 * R * nodes_per_unit)), 2)
    t = -R + (np.arange(n) + 0.5) * (2 * R / n)
    if d == 2:
        pts = t[:, None] * basis[0][None, :]
    else:
        mesh = np.stack(np.meshgrid(*([t] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
        mesh = mesh[np.sum(mesh**2, axis=1) <= R * R]
        pts = mesh @ basis
    vals = np.broadcast_to(evaluate(g, bindings(None, pts, d)), (len(pts),))
    return float(np.mean(vals))


def tilted_normal(alpha: float) -> np.ndarray:
    """Unit normal ``(alpha, 1) / sqrt(1 + alpha^2)``."""
    return np.array([alpha, 1.0]) / np.hypot(alpha, 1.0)


def super_period(alpha) -> float | None:
    """Length along ``{q_alpha.y = 0}`` after which a periodic ``g`` repeats.

    ``None`` when ``alpha`` is not a (moderate-denominator) rational.
    """
    frac = Fraction(alpha).limit_denominator(10_000)
    if abs(float(frac) - alpha) > 1e-12:
        return None
    p, k = abs(frac.numerator), frac.denominator
    # the line through 0 with direction (1, -alpha) returns to the lattice after k steps in y1
    return float(np.hypot(k, p)) if p else 1.0


@dataclass
class SlopeScan:
    alphas: list
    radii: dict
    averages: dict
    mu: dict
    fit_residual: dict
    mu_normal: float
    mu_limit: float
    gap: float
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "alphas": self.alphas,
            "mu": {repr(a): v for a, v in self.mu.items()},
            "fit_residual": {repr(a): v for a, v in self.fit_residual.items()},
            "mu_normal": self.mu_normal,
            "mu_limit": self.mu_limit,
            "gap": self.gap,
            "notes": self.notes,
        }

    def rows(self):
        for a in self.alphas:
            for R, avg in zip(self.radii[a], self.averages[a]):
                yield a, R, avg

    def write_csv(self, path, header: str | None = None) -> Path:
        """Long-format ``alpha,R,average`` table."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            if header is not None:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["alpha", "R", "average"])
            for a, R, avg in self.rows():
                w.writerow([repr(float(a)), repr(float(R)), repr(float(avg))])
        return path


def _fit_inverse_radius(radii, values):
    """Least-squares ``values ~ L + c / R``; returns ``L`` and the worst misfit."""
    radii = np.asarray(radii, dtype=float)
    V = np.column_stack([np.ones_like(radii), 1.0 / radii])
    coef, *_ = np.linalg.lstsq(V, np.asarray(values), rcond=None)
    return float(coef[0]), float(np.max(np.abs(V @ coef - values)))


def slope_scan(g, alphas, radii=DEFAULT_RADII, nodes_per_unit: int = NODES_PER_UNIT,
               workers: int | None = None) -> SlopeScan:
    """Boundary constants ``mu(q_alpha) = -average`` and the gap at ``alpha = 0``.

    For ``alpha != 0`` the radii are scaled by ``1/|alpha|`` so that each
    line crosses a comparable number of cells, and the averages are
    extrapolated in ``R`` by a ``L + c/R`` fit.  The tilted limit is the
    linear extrapolation of ``mu(q_alpha)`` to ``alpha = 0`` from the two
    smallest nonzero slopes.
    """
    alphas = [float(a) for a in alphas]
    if 0.0 not in alphas or len([a for a in alphas if a != 0]) < 2:
        raise ValueError("alphas must contain 0 and at least two nonzero slopes")
    g = parse(g)
    radii_of = {a: [float(r) / abs(a) if a else float(r) for r in radii] for a in alphas}
    jobs = [(a, R) for a in alphas for R in radii_of[a]]
    vals = pmap(lambda job: boundary_average(g, tilted_normal(job[0]), job[1], nodes_per_unit),
                jobs, workers)
    averages = {a: [] for a in alphas}
    for (a, _), v in zip(jobs, vals):
        averages[a].append(v)
    mu, resid = {}, {}
    notes = []
    for a in alphas:
        if a == 0:
            mu[a] = -averages[a][-1]
            resid[a] = float(np.ptp(averages[a]))
        else:
            L, r = _fit_inverse_radius(radii_of[a], averages[a])
            mu[a], resid[a] = -L, r
    tilted = sorted((abs(a), a) for a in alphas if a != 0)
    (s1, a1), (s2, a2) = tilted[0], tilted[1]
    limit = mu[a1] + (mu[a1] - mu[a2]) * s1 / (s2 - s1)
    if abs(mu[a1] - mu[a2]) > 0.1:
        notes.append("tilted constants vary strongly with the slope")
    return SlopeScan(alphas, radii_of, averages, mu, resid, mu[0.0], float(limit),
                     float(abs(mu[0.0] - limit)), notes)
