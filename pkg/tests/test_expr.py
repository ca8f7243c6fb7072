import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halfcell.expr import (ArityError, EvaluationError, ExprSyntaxError, UnknownIdentifier,
                           evaluate, parse, periodicity_defect, to_source)


@pytest.mark.parametrize("src, env, expected", [
    ("1 + 0.5*sin(2*pi*y1)", {"y1": 0.25}, 1.5),
    ("cos(2*pi*y2)", {"y2": 0.0}, 1.0),
    ("2^3", {}, 8.0),
    ("y1 - floor(y1)", {"y1": 2.75}, 0.75),
    ("1/(2+sin(2*pi*y1))", {"y1": 0.25}, 1 / 3),
    ("-2^2", {}, -4.0),
    ("2^3^2", {}, 512.0),
    ("min(x1, 3) + max(x1, 3)", {"x1": 1.0}, 4.0),
    ("sqrt(abs(-9)) * exp(0)", {}, 3.0),
])
def test_evaluate_examples(src, env, expected):
    assert evaluate(parse(src), env) == pytest.approx(expected, abs=1e-15)


def test_unbalanced_parenthesis_reports_column():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 + (")
    assert info.value.column == 7
    assert info.value.line == 1


def test_unknown_identifier_and_arity():
    with pytest.raises(UnknownIdentifier):
        parse("tan(y1)")
    with pytest.raises(UnknownIdentifier):
        parse("z1 + 1")
    with pytest.raises(ArityError):
        parse("min(y1)")
    with pytest.raises(ArityError):
        parse("sin(y1, y2)")


def test_division_by_zero_is_an_error():
    with pytest.raises(EvaluationError):
        evaluate(parse("1/y1"), {"y1": 0.0})
    with pytest.raises(EvaluationError):
        evaluate(parse("1/y1"), {"y1": np.array([1.0, 0.0])})


def test_unbound_variable():
    with pytest.raises(EvaluationError):
        evaluate(parse("y1 + y2"), {"y1": 1.0})


def test_vectorised_evaluation_matches_scalar():
    e = parse("2 + sin(2*pi*y1)*cos(2*pi*y2)")
    ys = np.random.default_rng(0).uniform(size=(50, 2))
    vec = evaluate(e, {"y1": ys[:, 0], "y2": ys[:, 1]})
    scal = [evaluate(e, {"y1": a, "y2": b}) for a, b in ys]
    np.testing.assert_array_equal(vec, scal)


def test_periodicity_defect():
    assert periodicity_defect(parse("2 + sin(2*pi*y1) + cos(4*pi*y2)"), 2) < 1e-12
    assert periodicity_defect(parse("y1 - floor(y1)"), 1) < 1e-12
    assert periodicity_defect(parse("y1"), 1) == pytest.approx(1.0)


CORPUS = [
    "1 + 0.5*sin(2*pi*y1)", "2 + sin(2*pi*y1)", "-(2*pi*cos(2*pi*y1))*((p1 + 0.5*p1^3/3)/(1+0.5*p1^2))",
    "min(max(y1, 0.2), 0.8) - floor(y2)", "-x1^2 + 3/(1 + y1^2)", "exp(-pn)*abs(p1)",
]


@pytest.mark.parametrize("src", CORPUS)
def test_round_trip(src):
    e = parse(src)
    again = parse(to_source(e))
    assert again == e
    assert to_source(again) == to_source(e)


_atoms = st.sampled_from(["y1", "y2", "x1", "pi", "1", "2.5", "0.5"])


def _combine(children):
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda t: f"({t[0]} {t[1]} {t[2]})")
    call = st.tuples(st.sampled_from(["sin", "cos", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})")
    neg = children.map(lambda c: f"-{c}")
    return binary | call | neg


expressions = st.recursive(_atoms, _combine, max_leaves=12)


@settings(max_examples=150, deadline=None)
@given(expressions, st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_round_trip_and_purity(src, a, b, c):
    e = parse(src)
    env = {"y1": a, "y2": b, "x1": c}
    v1 = evaluate(e, env)
    assert evaluate(e, env) == v1 or (math.isnan(v1))
    v2 = evaluate(parse(to_source(e)), env)
    assert v2 == pytest.approx(v1, rel=1e-12, abs=1e-12) or (math.isnan(v1) and math.isnan(v2))
