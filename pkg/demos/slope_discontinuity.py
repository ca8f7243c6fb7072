"""The flat boundary constant jumps as the normal tilts away from e2.

For g = cos(2 pi y2) the plane {y2 = 0} only sees g = 1, while any slightly
tilted plane crosses all cells and sees the cell mean 0.
"""

from halfcell.halfspace import slope_scan


def main():
    scan = slope_scan("cos(2*pi*y2)", [0.0, 0.2, 0.1, 0.05])
    for a in scan.alphas:
        print(f"alpha = {a:<5g} mu = {scan.mu[a]:+.5f}")
    print(f"mu(e2) = {scan.mu_normal:+.5f}, tilted limit {scan.mu_limit:+.5f}, gap {scan.gap:.5f}")


if __name__ == "__main__":
    main()
