import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halfcell.halfspace import boundary_average, slope_scan, super_period, tilted_normal

COS2 = "cos(2*pi*y2)"


def line_average_of_cos(alpha, R):
    """Exact mean of cos(2 pi y2) over the segment of {q_alpha.y = 0} inside B(0, R)."""
    c = alpha / np.hypot(alpha, 1.0)
    return np.sinc(2 * c * R)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-5, 5), angle=st.floats(0, 2 * np.pi), R=st.floats(1, 60))
def test_constant_data(c, angle, R):
    q = np.array([np.cos(angle), np.sin(angle)])
    assert boundary_average(repr(c), q, R) == pytest.approx(c, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(c=st.floats(-3, 3), alpha=st.floats(-2, 2), R=st.floats(1, 40))
def test_adding_a_constant_shifts_the_average(c, alpha, R):
    q = tilted_normal(alpha)
    base = boundary_average(COS2, q, R)
    assert boundary_average(f"{COS2} + {c!r}", q, R) == pytest.approx(base + c, abs=1e-10)


@pytest.mark.parametrize("R", [1.0, 7.3, 50.0, 400.0])
def test_normal_direction_sees_trace_at_zero(R):
    assert boundary_average(COS2, [0.0, 1.0], R) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("R", [50.0, 100.0, 237.0])
def test_tilted_average_matches_closed_form(R):
    assert boundary_average(COS2, tilted_normal(0.2), R) == pytest.approx(
        line_average_of_cos(0.2, R), abs=1e-4)


def test_tilted_average_is_near_cell_mean():
    # |average| <= 1 / (2 pi c R); at R = 50 that bound is 0.016, at R = 100 it is 0.008
    assert abs(boundary_average(COS2, tilted_normal(0.2), 50.0)) < 0.0163
    assert abs(boundary_average(COS2, tilted_normal(0.2), 100.0)) < 1e-2


def test_super_period_lengths():
    assert super_period(0.2) == pytest.approx(np.hypot(5, 1))
    assert super_period(0.0) == 1.0
    assert super_period(-2 / 3) == pytest.approx(np.hypot(3, 2))
    assert super_period(np.sqrt(2)) is None


def test_rational_slope_exact_over_super_periods():
    g = "cos(2*pi*y2) + sin(2*pi*y1) + 0.3*cos(2*pi*(y1 + 2*y2))"
    L = super_period(0.2)
    vals = [boundary_average(g, tilted_normal(0.2), m * L / 2) for m in (2, 3, 8)]
    np.testing.assert_allclose(vals, vals[0], atol=1e-12)
    assert vals[0] == pytest.approx(0.0, abs=1e-12)


def test_rational_slope_sees_periodic_trace():
    # slope 1: the line y1 = -y2 meets cos(2 pi (y1 + y2)) only at its maximum
    q = np.array([1.0, 1.0]) / np.sqrt(2)
    assert boundary_average("cos(2*pi*(y1 + y2))", q, 30.0) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("shift", [(1, 0), (0, 1), (2, -3)])
def test_lattice_shift_invariance(shift):
    g = "cos(2*pi*y2) + 0.5*sin(2*pi*(y1 - y2))"
    moved = f"cos(2*pi*(y2 + {shift[1]})) + 0.5*sin(2*pi*((y1 + {shift[0]}) - (y2 + {shift[1]})))"
    for alpha in (0.0, 0.2, 0.37):
        q = tilted_normal(alpha)
        assert boundary_average(moved, q, 40.0) == pytest.approx(boundary_average(g, q, 40.0),
                                                                 abs=1e-10)


def test_three_dimensional_plane():
    assert boundary_average("cos(2*pi*y3)", [0.0, 0.0, 1.0], 6.0) == pytest.approx(1.0)
    assert boundary_average("2.5", [0.6, 0.0, 0.8], 6.0) == pytest.approx(2.5)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        boundary_average(COS2, [1.0, 1.0], 10.0)
    with pytest.raises(ValueError):
        boundary_average(COS2, [0.0, 1.0], 0.5)
    with pytest.raises(ValueError):
        slope_scan(COS2, [0.1, 0.2])
    with pytest.raises(ValueError):
        slope_scan(COS2, [0.0, 0.1])


@pytest.mark.parametrize("g,gap", [(COS2, 1.0), (f"{COS2} + 0.5", 1.0), ("0.8", 0.0)])
def test_slope_scan_gap(g, gap):
    scan = slope_scan(g, [0.0, 0.05, 0.1, 0.2])
    assert scan.gap == pytest.approx(gap, abs=1e-2)


def test_slope_scan_signs_and_csv(tmp_path):
    scan = slope_scan(f"{COS2} + 0.5", [0.0, 0.1, 0.2], radii=(50, 100))
    assert scan.mu_normal == pytest.approx(-1.5, abs=1e-12)
    assert scan.mu_limit == pytest.approx(-0.5, abs=1e-2)
    assert scan.radii[0.2] == [250.0, 500.0]
    path = scan.write_csv(tmp_path / "scan.csv", header="run")
    with path.open() as fh:
        assert fh.readline() == "# run\n"
        rows = list(csv.reader(fh))
    assert rows[0] == ["alpha", "R", "average"]
    assert len(rows) == 1 + 6
    assert [float(v) for v in rows[1]] == [0.0, 50.0, 1.5]
