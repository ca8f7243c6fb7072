"""Boundary constant of -u'' + b u' on the half-line, for drift toward and away from 0.

With the drift pushing paths onto the boundary the constant is pinned down
(-g0) and the penalised strip solves agree across lid heights.  With the
drift pointing away, the boundary is visited finitely often: the strip
values move with the lid and the run is flagged.  The Monte Carlo local
time tells the same story.
"""

import numpy as np

from halfcell.boundary import mu_limit
from halfcell.interior import e1_criterion
from halfcell.model import HalfStrip, Linear, LinearOblique
from halfcell.montecarlo import lemma31_check

LINE = HalfStrip(1, None, 100.0)


def main():
    for name, b in (("toward", -1.0), ("away", 1.0)):
        op = Linear.make(1, b, 0)
        res = mu_limit(op, LinearOblique.make([-1], "0.7"), n_per=64)
        e1 = e1_criterion(op)
        growth = lemma31_check(op, LinearOblique.make([-1], "0"), LINE, [0.0], seed=1)
        rates = growth["growth"][0]["mean_local_time"]
        print(f"drift {name:6s}: mu = {res.mu:+.6f} [{res.uniqueness_flag}], "
              f"R-drift {res.R_drift:.2e}")
        print(f"              e1 test: lambda_hat = {e1['lambda_hat']:+.4f}, "
              f"satisfied = {e1['satisfied']}")
        print(f"              E|k|_T at T = 5, 10, 20: {np.round(rates, 3).tolist()}, "
              f"diverges = {growth['diverges']}")


if __name__ == "__main__":
    main()
