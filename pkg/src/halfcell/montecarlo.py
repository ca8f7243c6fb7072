"""Monte Carlo simulation of reflected diffusions above a periodic boundary.

The generator of ``F = -tr(A D^2u) - b.Du - f`` is ``tr(A D^2) + b.D``, so
paths follow ``dX = b dt + sigma dW`` with ``sigma sigma^T = 2A`` and are
pushed back along ``-gamma`` when they cross the boundary.  With that
convention the boundary condition ``Du.gamma - g = mu`` gives

    u(x) = E[ int (f + lambda) ds + int (g + mu) d|k| + u(X_T) ],

which is the identity behind :func:`mu_mc_estimate`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator, StepRejected
from .expr import evaluate
from .model import HJB, HalfStrip, Linear, LinearOblique, bindings, graph_samples
from .parallel import pmap

BLOCK = 1024
STEP_CHUNK = 256
MAX_PENETRATION = 1.0

__all__ = [
    "PathBatch",
    "simulate_reflected",
    "lemma31_check",
    "mu_mc_estimate",
    "jackknife",
]


@dataclass
class PathBatch:
    """Per-path accumulators of one simulation.

    ``local_time_at[:, j]`` is ``|k|`` at ``horizons[j]``; the last column
    equals ``local_time``.
    """

    paths: int
    dt: float
    T: float
    seed: int
    int_f: np.ndarray
    int_g: np.ndarray
    local_time: np.ndarray
    hit_lid: np.ndarray
    horizons: np.ndarray
    local_time_at: np.ndarray
    final: np.ndarray

    def mean_local_time(self) -> np.ndarray:
        return self.local_time_at.mean(axis=0)

    def standard_error(self, values) -> float:
        values = np.asarray(values, dtype=float)
        return float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else float("nan")


class _Coefficients:
    """Samples of drift, noise factor, source and boundary data at path positions."""

    def __init__(self, op: Linear, bop: LinearOblique, x_slow):
        self.op, self.bop, self.d = op, bop, op.dim
        self.x = np.asarray(x_slow, dtype=float)
        self.const_interior = all(e.is_constant for e in op.exprs())
        self.const_boundary = all(e.is_constant for e in bop.exprs())
        if self.const_interior:
            A, b, f = op.sample(self.x[None], np.zeros((1, self.d)))
            self._interior = (b[0], _noise_factor(A)[0], float(f[0]), A[0])

    def _env(self, y):
        return bindings(np.broadcast_to(self.x, y.shape), y, self.d)

    def interior(self, y):
        if self.const_interior:
            b, s, f, A = self._interior
            n = len(y)
            return (np.broadcast_to(b, (n, self.d)), np.broadcast_to(s, (n, self.d, self.d)),
                    np.full(n, f), np.broadcast_to(A, (n, self.d, self.d)))
        A, b, f = self.op.sample(np.broadcast_to(self.x, y.shape), y)
        return b, _noise_factor(A), f, A

    def boundary(self, y):
        n = len(y)
        if self.const_boundary:
            gamma = np.array([float(evaluate(e)) for e in self.bop.gamma])
            return np.broadcast_to(gamma, (n, self.d)), np.full(n, float(evaluate(self.bop.g)))
        env = self._env(y)
        gamma = np.stack([np.broadcast_to(evaluate(e, env), (n,)) for e in self.bop.gamma], axis=-1)
        return gamma, np.broadcast_to(evaluate(self.bop.g, env), (n,)).astype(float)


def _noise_factor(A):
    """Symmetric square root of ``2A`` (``A`` positive semidefinite)."""
    w, V = np.linalg.eigh(2.0 * np.asarray(A))
    return (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(V, -1, -2)


def _graph(psi, s):
    if psi is None:
        zero = np.zeros_like(s)
        return zero, zero
    vals, d1, _ = graph_samples(psi, s)
    return vals, d1


def _simulate_block(coef: _Coefficients, dom: HalfStrip, x0, dt, n_steps, seed, block,
                    checkpoints, lam):
    d = coef.d
    rng = np.random.Generator(np.random.Philox(key=[seed, block]))
    X = np.tile(np.asarray(x0, dtype=float), (BLOCK, 1))
    int_f = np.zeros(BLOCK)
    int_g = np.zeros(BLOCK)
    k = np.zeros(BLOCK)
    lid = np.zeros(BLOCK, dtype=bool)
    k_at = np.zeros((BLOCK, len(checkpoints)))
    height = float(dom.height)
    step = 0
    while step < n_steps:
        m = min(STEP_CHUNK, n_steps - step)
        dW = rng.standard_normal((m, BLOCK, d)) * np.sqrt(dt)
        U = rng.random((m, BLOCK))
        for j in range(m):
            b, s, f, A = coef.interior(X)
            int_f += (f + lam) * dt
            Z = X + b * dt + np.einsum("nij,nj->ni", s, dW[j])
            psi_X, dpsi_X = _graph(dom.psi, X[:, 0]) if d > 1 else (np.zeros(BLOCK), np.zeros(BLOCK))
            psi_Z, dpsi_Z = _graph(dom.psi, Z[:, 0]) if d > 1 else (np.zeros(BLOCK), np.zeros(BLOCK))
            z0 = X[:, -1] - psi_X
            z1 = Z[:, -1] - psi_Z
            # minimum of the height above the graph over the step (Brownian bridge)
            var = 2.0 * dt * A[:, -1, -1]
            if d > 1:
                var = 2.0 * dt * (A[:, -1, -1] - 2 * dpsi_X * A[:, 0, -1] + dpsi_X**2 * A[:, 0, 0])
            var = np.clip(var, 0.0, None)
            zmin = 0.5 * (z0 + z1 - np.sqrt((z1 - z0) ** 2 - 2.0 * var * np.log1p(-U[j])))
            pen = np.clip(-np.minimum(zmin, z1), 0.0, None)
            hit = pen > 0
            if np.any(hit):
                if pen.max() > MAX_PENETRATION:
                    raise StepRejected(f"penetration {pen.max():.3g} exceeds one cell; reduce dt")
                gamma, g = coef.boundary(Z[hit])
                dp = dpsi_Z[hit]
                kappa = dp * gamma[:, 0] - gamma[:, -1] if d > 1 else -gamma[:, -1]
                if np.any(kappa <= 0):
                    raise StepRejected("reflection direction does not point into the domain")
                dk = pen[hit] / kappa
                Zh = Z[hit] - gamma * dk[:, None]
                if dom.psi is not None:
                    below = Zh[:, -1] < _graph(dom.psi, Zh[:, 0])[0]
                    Zh[below, -1] = _graph(dom.psi, Zh[below, 0])[0]
                Z[hit] = Zh
                k[hit] += dk
                # boundary data at the contact point on the graph
                contact = Zh.copy()
                contact[:, -1] = _graph(dom.psi, Zh[:, 0])[0] if d > 1 else 0.0
                int_g[hit] += coef.boundary(contact)[1] * dk
            top = Z[:, -1] - (_graph(dom.psi, Z[:, 0])[0] if d > 1 else 0.0)
            over = top > height
            if np.any(over):
                Z[over, -1] -= 2.0 * (top[over] - height)
                lid |= over
            X = Z
            step += 1
            for c, n_c in enumerate(checkpoints):
                if step == n_c:
                    k_at[:, c] = k
    return int_f, int_g, k, lid, k_at, X


def _linear_only(op):
    if not isinstance(op, Linear):
        raise TypeError("path simulation needs a Linear operator (freeze HJB controls first)")
    return op


def simulate_reflected(op: Linear, bop: LinearOblique, dom: HalfStrip, x0, dt: float, T: float,
                       seed: int, paths: int = 10_000, horizons=None, x=None, lam: float = 0.0,
                       workers: int | None = None) -> PathBatch:
    """Simulate ``paths`` reflected paths of the diffusion of ``op`` up to time ``T``.

    Paths come in blocks of 1024, each with its own counter-based stream
    keyed by ``(seed, block)``, so a run with fewer paths reproduces the
    prefix of a larger one.  ``int_f`` accumulates ``f + lam``.
    """
    op = _linear_only(op)
    if not isinstance(bop, LinearOblique):
        raise TypeError("path simulation needs a linear oblique boundary operator")
    d = op.dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (d,):
        raise ValueError("x0 has the wrong dimension")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a positive multiple of dt")
    horizons = np.array([T] if horizons is None else sorted(set(float(h) for h in horizons) | {T}))
    if horizons[-1] > T + 1e-12:
        raise ValueError("horizons must not exceed T")
    checkpoints = [int(round(h / dt)) for h in horizons]
    coef = _Coefficients(op, bop, np.zeros(d) if x is None else x)
    n_blocks = -(-paths // BLOCK)
    out = pmap(lambda blk: _simulate_block(coef, dom, x0, dt, n_steps, int(seed), blk,
                                           checkpoints, lam),
               list(range(n_blocks)), workers)
    cat = [np.concatenate([o[i] for o in out])[:paths] for i in range(6)]
    return PathBatch(paths, float(dt), float(T), int(seed), cat[0], cat[1], cat[2], cat[3],
                     horizons, cat[4], cat[5])


def jackknife(estimator, columns, groups: int = 32):
    """Delete-a-group jackknife estimate and standard error of ``estimator(*means)``."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    n = len(cols[0])
    groups = max(2, min(groups, n))
    edges = np.linspace(0, n, groups + 1).astype(int)
    sums = np.array([[c[a:b].sum() for c in cols] for a, b in zip(edges[:-1], edges[1:])])
    sizes = np.diff(edges)
    total = sums.sum(axis=0)
    full = estimator(*(total / n))
    loo = np.array([estimator(*((total - s) / (n - m))) for s, m in zip(sums, sizes)])
    se = np.sqrt((groups - 1) / groups * np.sum((loo - loo.mean()) ** 2))
    return float(full), float(se)


def mu_mc_estimate(op: Linear, bop: LinearOblique, lam: float, dom: HalfStrip, x0, T: float,
                   paths: int, seed: int, dt: float = 1e-2, x=None, min_local_time: float = 1e-2,
                   workers: int | None = None) -> dict:
    """Ratio estimate ``-(E int (f+lam) ds + E int g d|k|) / E|k|_T`` with jackknife error."""
    batch = simulate_reflected(op, bop, dom, x0, dt, T, seed, paths, x=x, lam=lam, workers=workers)
    mean_k = float(batch.local_time.mean())
    if mean_k < min_local_time:
        raise DegenerateDenominator(f"mean local time {mean_k:.3e} is below {min_local_time:.1e}")
    est, se = jackknife(lambda a, b, c: -(a + b) / c, [batch.int_f, batch.int_g, batch.local_time])
    return {"mu_hat": est, "std_error": se, "mean_local_time": mean_k, "paths": paths,
            "T": float(T), "dt": float(dt), "seed": int(seed)}


def lemma31_check(op, bop: LinearOblique, dom: HalfStrip, x0, horizons=(5.0, 10.0, 20.0),
                  dt: float = 1e-2, paths: int = 4096, seed: int = 0, threshold: float = 0.05,
                  x=None, workers: int | None = None) -> dict:
    """Growth of ``E|k|_T`` across ``horizons`` and a divergence flag.

    The flag is raised when the growth rate over the last interval exceeds
    ``threshold``.  For HJB operators each control is frozen in turn; the
    flag then requires divergence under every control.
    """
    horizons = sorted(float(h) for h in horizons)
    if len(horizons) < 2:
        raise ValueError("need at least two horizons")
    controls = op.controls if isinstance(op, HJB) else (op,)
    tables = []
    for ctrl in controls:
        batch = simulate_reflected(ctrl, bop, dom, x0, dt, horizons[-1], seed, paths,
                                   horizons=horizons, x=x, workers=workers)
        means = batch.mean_local_time()
        ses = batch.local_time_at.std(axis=0, ddof=1) / np.sqrt(paths)
        rate = (means[-1] - means[-2]) / (horizons[-1] - horizons[-2])
        tables.append({"horizons": horizons, "mean_local_time": means.tolist(),
                       "std_error": ses.tolist(), "last_rate": float(rate),
                       "diverges": bool(rate > threshold)})
    return {"diverges": all(t["diverges"] for t in tables), "growth": tables,
            "threshold": threshold}
