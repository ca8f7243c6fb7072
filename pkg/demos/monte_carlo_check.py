"""Cross-check of the strip solver with the reflected-diffusion ratio estimator."""

import numpy as np

from halfcell.boundary import mu_limit
from halfcell.model import HalfStrip, Linear, LinearOblique
from halfcell.montecarlo import mu_mc_estimate


def main():
    op = Linear.make(1, -1, "0.5*cos(2*pi*y1) + 0.2")
    bop = LinearOblique.make([-1], "0.3")
    pde = mu_limit(op, bop, n_per=64)
    est = mu_mc_estimate(op, bop, pde.lam, HalfStrip(1, None, 100.0), np.zeros(1), 10.0, 8192,
                         seed=3)
    print(f"strip solver: mu = {pde.mu:+.5f} (lambda = {pde.lam:+.5f})")
    print(f"paths:        mu = {est['mu_hat']:+.5f} +- {est['std_error']:.5f}, "
          f"E|k|_T = {est['mean_local_time']:.3f}")


if __name__ == "__main__":
    main()
