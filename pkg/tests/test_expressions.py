from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lordiag.expressions import ExprError, evaluate, parse_expr, print_expr


def ev(text, x=0.0, y=0.0, z=0.0):
    return evaluate(parse_expr(text), x, y, z)


def test_exp_of_two_x():
    assert ev("exp(2*x)", x=1.0) == pytest.approx(math.exp(2.0), rel=1e-15)


def test_additive_identity():
    for x in (0.0, -1.3, 2.5):
        assert ev("x + 0*y", x=x, y=7.0) == pytest.approx(x, abs=0)


def test_hyperbolic_identity():
    assert ev("sinh(z)^2 - cosh(z)^2", z=0.7) == pytest.approx(-1.0, rel=1e-14)


def test_pi_constant_and_functions():
    assert ev("sin(pi*x)", x=0.5) == pytest.approx(1.0, rel=1e-15)
    assert ev("sqrt(x)", x=4.0) == pytest.approx(2.0)
    assert ev("cos(0)") == 1.0


def test_vectorized_evaluation():
    xs = np.linspace(0.0, 1.0, 11)
    vals = evaluate(parse_expr("x^2 - x/2"), xs, 0.0, 0.0)
    assert np.allclose(vals, xs**2 - xs / 2)


def test_negative_integer_exponent():
    assert ev("x^-2", x=2.0) == pytest.approx(0.25)
    assert ev("x^(-2)", x=2.0) == pytest.approx(0.25)


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("x + foo", "unknown identifier"),
        ("(x + 1", "unbalanced parentheses"),
        ("x^2.5", "non-integer exponent"),
        ("x^y", "non-integer exponent"),
        ("bogus(x)", "unknown function"),
        ("x + ", "unexpected end"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ExprError) as err:
        parse_expr(text)
    assert fragment in str(err.value)


def test_error_byte_offset():
    with pytest.raises(ExprError) as err:
        parse_expr("x + foo*2")
    assert err.value.offset == 4


def test_error_byte_offset_counts_utf8_bytes():
    # non-ascii character before the error occupies two bytes
    with pytest.raises(ExprError) as err:
        parse_expr("é + 1")
    assert err.value.offset == 0
    with pytest.raises(ExprError) as err:
        parse_expr("(é)")
    assert err.value.offset == 1


# --- grammar round-trip property -------------------------------------------

_number = st.one_of(
    st.integers(min_value=0, max_value=999).map(str),
    st.floats(min_value=0.0, max_value=1e3, allow_nan=False).map(repr),
)
_leaf = st.one_of(_number, st.sampled_from(["x", "y", "z", "pi"]))


def _compound(children):
    op2 = st.tuples(children, st.sampled_from(["+", "-", "*", "/"]), children).map(
        lambda t: f"{t[0]} {t[1]} {t[2]}"
    )
    fn = st.tuples(st.sampled_from(["sin", "cos", "exp", "sinh", "cosh", "sqrt"]), children).map(
        lambda t: f"{t[0]}({t[1]})"
    )
    neg = children.map(lambda s: f"-({s})")
    grouped = children.map(lambda s: f"({s})")
    powed = st.tuples(children, st.integers(min_value=0, max_value=5)).map(
        lambda t: f"({t[0]})^{t[1]}"
    )
    return st.one_of(op2, fn, neg, grouped, powed)


_grammar_text = st.recursive(_leaf, _compound, max_leaves=20)


@settings(max_examples=200, deadline=None)
@given(_grammar_text)
def test_parse_print_parse_identity(text):
    ast = parse_expr(text)
    assert parse_expr(print_expr(ast)) == ast


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(min_value=0.1, max_value=10.0), min_size=1, max_size=6),
    st.floats(min_value=0.1, max_value=1.0),
)
def test_polynomial_matches_horner(coeffs, x):
    text = " + ".join(
        repr(c) if k == 0 else f"{c!r}*x^{k}" for k, c in enumerate(coeffs)
    )
    parsed = evaluate(parse_expr(text), x, 0.0, 0.0)
    horner = 0.0
    for c in reversed(coeffs):
        horner = horner * x + c
    assert abs(parsed - horner) <= 1e-14 * abs(horner)
