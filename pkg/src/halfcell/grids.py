"""Uniform grids on periodic cells and on periodic half-strips, plus grid-function I/O.

Half-strips are flattened by the terrain-following map ``z = y_N - psi(y')``
so the bottom boundary is the grid line ``z = 0`` and the artificial lid is
``z = height``.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

from .model import graph_samples

__all__ = [
    "TorusGrid",
    "StripGrid",
    "sample_periodic",
    "write_csv",
    "write_binary",
    "read_binary",
]


class TorusGrid:
    """``n_per**dim`` nodes on the cell ``[0, period)^dim`` with periodic wrapping."""

    def __init__(self, dim: int, n_per: int, period: float = 1.0):
        if dim not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        if n_per < 2:
            raise ValueError("need at least two nodes per period")
        self.dim = dim
        self.n_per = int(n_per)
        self.period = float(period)
        self.h = self.period / self.n_per
        self.shape = (self.n_per,) * dim
        self.size = self.n_per**dim
        self.spacing = (self.h,) * dim

    def __repr__(self):
        return f"TorusGrid(dim={self.dim}, n_per={self.n_per})"

    def coords(self) -> np.ndarray:
        axes = [np.arange(n) * self.h for n in self.shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    physical_coords = coords

    def neighbor(self, offset) -> np.ndarray:
        idx = np.arange(self.size).reshape(self.shape)
        for axis, o in enumerate(offset):
            if o:
                idx = np.roll(idx, -o, axis=axis)
        return idx.ravel()

    def boundary_mask(self) -> np.ndarray:
        return np.zeros(self.size, dtype=bool)

    lid_mask = boundary_mask


class StripGrid:
    """Flattened periodic half-strip ``{psi(y') < y_N < psi(y') + height}``.

    Parameters
    ----------
    dim : 1 or 2
    n_t : tangential nodes per period (ignored in 1D)
    n_z : number of intervals on ``[0, height]`` in the flattened coordinate
    height : lid height ``R``
    psi : Expr in ``y1``, callable of the tangential coordinate, or None (flat)
    period : tangential period
    """

    def __init__(self, dim: int, n_t: int, n_z: int, height: float, psi=None,
                 period: float = 1.0):
        if dim not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        self.dim = dim
        self.n_t = int(n_t) if dim == 2 else 1
        self.n_z = int(n_z)
        self.height = float(height)
        self.period = float(period)
        self.h_t = self.period / self.n_t if dim == 2 else np.inf
        self.h_z = self.height / self.n_z
        self.shape = (self.n_z + 1,) if dim == 1 else (self.n_t, self.n_z + 1)
        self.size = int(np.prod(self.shape))
        self.spacing = (self.h_z,) if dim == 1 else (self.h_t, self.h_z)
        self.psi = psi
        s = self.tangential()
        if dim == 2 and psi is not None:
            self.psi_values, self.dpsi, self.d2psi = graph_samples(psi, s, step=0.01 * self.h_t)
            if not np.all(np.isfinite(self.psi_values)):
                raise ValueError("graph function is not finite on the grid")
        else:
            self.psi_values = self.dpsi = self.d2psi = np.zeros_like(s)

    def __repr__(self):
        return (f"StripGrid(dim={self.dim}, n_t={self.n_t}, n_z={self.n_z}, "
                f"height={self.height})")

    @classmethod
    def uniform(cls, dim: int, n_per: int, height: float, psi=None, z_ratio: float = 1.0):
        """Strip with ``n_per`` tangential nodes per unit and ``h_z = z_ratio * h_t``."""
        h_z = z_ratio / n_per
        return cls(dim, n_per, int(round(height / h_z)), height, psi)

    def tangential(self) -> np.ndarray:
        return np.arange(self.n_t) * (self.h_t if self.dim == 2 else 0.0)

    def z(self) -> np.ndarray:
        return np.arange(self.n_z + 1) * self.h_z

    def coords(self) -> np.ndarray:
        """Flattened coordinates ``(s, z)`` (or ``z`` in 1D) per node."""
        if self.dim == 1:
            return self.z()[:, None]
        S, Z = np.meshgrid(self.tangential(), self.z(), indexing="ij")
        return np.stack([S.ravel(), Z.ravel()], axis=-1)

    def physical_coords(self) -> np.ndarray:
        c = self.coords()
        if self.dim == 2:
            c[:, 1] += np.repeat(self.psi_values, self.n_z + 1)
        return c

    def node_psi(self, which: str = "values") -> np.ndarray:
        arr = {"values": self.psi_values, "d1": self.dpsi, "d2": self.d2psi}[which]
        return np.repeat(arr, self.n_z + 1) if self.dim == 2 else np.zeros(self.size)

    def neighbor(self, offset) -> np.ndarray:
        """Flat neighbour indices; z is reflected at both ends (ghost nodes)."""
        if self.dim == 1:
            (oz,) = offset
            i = np.zeros(self.size, dtype=int)
            j = np.arange(self.size)
        else:
            ot, oz = offset
            I, J = np.meshgrid(np.arange(self.n_t), np.arange(self.n_z + 1), indexing="ij")
            i, j = (I.ravel() + ot) % self.n_t, J.ravel()
        j = j + oz
        j = np.where(j > self.n_z, 2 * self.n_z - j, j)
        j = np.abs(j)
        return j if self.dim == 1 else i * (self.n_z + 1) + j

    def bottom_mask(self) -> np.ndarray:
        return self.coords()[:, -1] == 0.0

    def lid_mask(self) -> np.ndarray:
        return np.isclose(self.coords()[:, -1], self.height)

    boundary_mask = bottom_mask

    def index(self, i: int, j: int | None = None) -> int:
        if self.dim == 1:
            return int(i)
        return int(i) * (self.n_z + 1) + int(j)

    def column(self, values: np.ndarray, i: int = 0) -> np.ndarray:
        return np.asarray(values).reshape(self.shape)[i] if self.dim == 2 else np.asarray(values)

    def bottom_values(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values).reshape(self.shape)
        return v[:, 0] if self.dim == 2 else v[:1]


def sample_periodic(values: np.ndarray, grid: TorusGrid, points: np.ndarray, order: int = 3):
    """Interpolate a torus grid function at arbitrary points (periodic spline)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    data = np.asarray(values, dtype=float).reshape(grid.shape)
    coords = (pts / grid.h).T
    return ndimage.map_coordinates(data, coords, order=order, mode="grid-wrap")


def write_csv(path, grid, values, columns=None) -> Path:
    """Node coordinates plus value, one node per row."""
    path = Path(path)
    coords = grid.physical_coords()
    names = columns or [f"x{k + 1}" for k in range(coords.shape[1])] + ["value"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for c, v in zip(coords, np.ravel(values)):
            w.writerow([repr(float(t)) for t in c] + [repr(float(v))])
    return path


def write_binary(path, values, shape=None) -> Path:
    """``int32`` rank, ``int32`` extents, then little-endian float64 data (row major)."""
    arr = np.asarray(values, dtype="<f8")
    if shape is not None:
        arr = arr.reshape(shape)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(struct.pack("<i", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())
    return path


def read_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (ndim,) = struct.unpack_from("<i", raw, 0)
    shape = struct.unpack_from(f"<{ndim}i", raw, 4)
    return np.frombuffer(raw, dtype="<f8", offset=4 + 4 * ndim).reshape(shape).copy()
