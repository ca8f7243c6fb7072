"""Convergence of the oscillating problem to its effective limit in 1D.

The medium a(y) = 2 + sin(2 pi y) with the matching singular drift b = a'
homogenizes to the harmonic mean sqrt(3).  The errors against the
effective solution shrink as eps does.
"""

import numpy as np

from halfcell.correctors import effective_boundary, effective_interior
from halfcell.grids import TorusGrid
from halfcell.homogenize import TwoScaleProblem, convergence_study
from halfcell.model import Linear, LinearOblique


def main():
    op = Linear.make("2 + sin(2*pi*y1)", "2*pi*cos(2*pi*y1)", 1)
    bop = LinearOblique.make([-1], "0.5")
    eff = effective_interior(op, TorusGrid(1, 32)).merged(effective_boundary(op, bop, n_per=32))
    print(f"A_bar = {eff.A_bar[0][0]:.6f} (harmonic mean {np.sqrt(3):.6f})")
    print(f"gamma_bar = {eff.gamma_bar}, g_bar = {eff.g_bar:.6f}")
    study = convergence_study(TwoScaleProblem(op, bop), eff, (1 / 4, 1 / 8, 1 / 16, 1 / 32),
                              (0.0, 2.0), n_fast=32, effective_h=1 / 1024)
    for e, err in zip(study.epsilons, study.errors):
        print(f"eps = {e:<8g} error = {err:.3e}")
    print(f"nonincreasing: {study.nonincreasing}")


if __name__ == "__main__":
    main()
