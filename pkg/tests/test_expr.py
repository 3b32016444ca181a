import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layer_fem import expr
from layer_fem.errors import ExprDomainError, ExprSyntaxError, UnboundVariableError, UnknownIdentifierError
from layer_fem.expr import BinOp, Neg, Num, Var


def value_at(source, **bindings):
    return expr.evaluate(expr.parse(source, parameters=("eps", "c0")), bindings)


def test_parse_examples():
    assert value_at("x*(1-x)^2", x=0.5) == pytest.approx(0.125)
    assert value_at("0", x=0.3) == 0.0
    assert value_at("-(x+1)*x*(x-1/2)*(x-27/30)^3", x=0.0) == 0.0


def test_evaluate_examples():
    assert value_at("exp(-x/eps)", x=0.0, eps=0.01) == 1.0
    assert value_at("x^2", x=3.0) == 9.0
    assert value_at("sin(pi*x)", x=0.5) == pytest.approx(1.0)
    assert value_at("pow(x, 3)", x=2.0) == 8.0
    assert value_at("abs(x) + sign(x)", x=-2.0) == 1.0


def test_precedence_and_associativity():
    assert value_at("2^3^2") == 512.0
    assert value_at("-2^2") == -4.0
    assert value_at("8/4/2") == 1.0
    assert value_at("1-2-3") == -4.0
    assert expr.parse("-x^2") == Neg(BinOp("^", Var("x"), Num(2.0)))


def test_scientific_notation():
    assert value_at("1e-3 + 2.5E2 + .5") == pytest.approx(250.501)


def test_vectorized_evaluation():
    x = np.linspace(0.0, 1.0, 5)
    values = expr.evaluate(expr.parse("x*(1-x)"), {"x": x})
    np.testing.assert_allclose(values, x * (1 - x))


def test_constant_broadcasts_to_binding_shape():
    values = expr.evaluate(expr.parse("2"), {"x": np.zeros(3)})
    assert values.shape == (3,)


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ExprSyntaxError) as info:
        expr.parse("x + * 2")
    assert info.value.offset == 4
    assert "number" in info.value.expected


def test_syntax_error_offset_counts_utf8_bytes():
    with pytest.raises(ExprSyntaxError) as info:
        expr.parse("x + ε")
    assert info.value.offset == 4


def test_missing_parenthesis():
    with pytest.raises(ExprSyntaxError) as info:
        expr.parse("sin(x")
    assert info.value.expected == "')'"


def test_wrong_arity():
    with pytest.raises(ExprSyntaxError):
        expr.parse("pow(x)")


def test_unknown_identifier_lists_allowed_names():
    with pytest.raises(UnknownIdentifierError) as info:
        expr.parse("alpha*x")
    assert info.value.name == "alpha"
    assert "eps" in info.value.allowed and "x" in info.value.allowed


def test_parameters_extend_allowed_names():
    e = expr.parse("alpha*x", parameters=("eps", "alpha"))
    assert expr.evaluate(e, {"alpha": 2.0, "x": 3.0}) == 6.0


def test_unbound_variable():
    with pytest.raises(UnboundVariableError) as info:
        expr.evaluate(expr.parse("x + eps"), {"x": 1.0})
    assert info.value.names == ("eps",)


@pytest.mark.parametrize("source, bindings", [
    ("ln(x)", {"x": 0.0}),
    ("sqrt(x)", {"x": -1.0}),
    ("1/x", {"x": 0.0}),
    ("x^0.5", {"x": -4.0}),
])
def test_domain_errors(source, bindings):
    with pytest.raises(ExprDomainError):
        expr.evaluate(expr.parse(source), bindings)


def test_domain_error_names_subexpression_and_index():
    with pytest.raises(ExprDomainError) as info:
        expr.evaluate(expr.parse("1 + ln(x)"), {"x": np.array([1.0, 2.0, -1.0])})
    assert info.value.subexpression == "ln(x)"
    assert info.value.index == 2


def test_derivative_examples():
    assert expr.evaluate(expr.differentiate(expr.parse("u^3"), "u"), {"u": 2.0}) == 12.0
    assert expr.differentiate(expr.parse("c0", parameters=("c0",)), "x") == Num(0.0)
    assert expr.evaluate(expr.differentiate(expr.parse("x*(1-x)"), "x"), {"x": 0.0}) == 1.0


def test_derivative_of_functions():
    cases = {
        "exp(2*x)": lambda x: 2 * math.exp(2 * x),
        "ln(x)": lambda x: 1 / x,
        "sqrt(x)": lambda x: 0.5 / math.sqrt(x),
        "cos(x)": lambda x: -math.sin(x),
        "x^x": lambda x: x**x * (math.log(x) + 1),
        "x^1.5": lambda x: 1.5 * math.sqrt(x),
        "abs(x)": lambda x: math.copysign(1.0, x),
    }
    for source, expected in cases.items():
        derivative = expr.differentiate(expr.parse(source), "x")
        assert expr.evaluate(derivative, {"x": 0.7}) == pytest.approx(expected(0.7)), source


def test_constant_folding():
    assert expr.mul(Num(2.0), Num(3.0)) == Num(6.0)
    assert expr.add(Var("x"), Num(0.0)) == Var("x")
    assert expr.mul(Var("x"), Num(0.0)) == Num(0.0)
    assert expr.differentiate(expr.parse("3*x + 1"), "x") == Num(3.0)


def test_substitute_and_free_symbols():
    e = expr.parse("u^2 + x")
    shifted = expr.substitute(e, "u", expr.parse("u + 1"))
    assert expr.free_symbols(shifted) == {"u", "x"}
    assert expr.evaluate(shifted, {"u": 1.0, "x": 0.5}) == 4.5


def test_operators_build_expressions():
    e = Var("x") * 2 + 1
    assert expr.evaluate(e, {"x": 3.0}) == 7.0


def test_evaluation_is_deterministic():
    e = expr.parse("exp(sin(x))*x^3 - x/7")
    x = np.linspace(-1.0, 1.0, 101)
    first = expr.evaluate(e, {"x": x})
    second = expr.evaluate(e, {"x": x})
    assert np.array_equal(first, second)


# Smooth expressions in x without domain restrictions on [-1, 1].
_leaves = st.one_of(
    st.just("x"),
    st.floats(min_value=0.25, max_value=2.0).map(lambda v: f"{v:.3f}"),
)
smooth_sources = st.recursive(
    _leaves,
    lambda children: st.one_of(
        st.tuples(children, st.sampled_from("+-*"), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(st.sampled_from(["sin", "cos"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        st.tuples(_leaves, st.sampled_from(["2", "3"])).map(lambda t: f"({t[0]})^{t[1]}"),
        children.map(lambda c: f"-{c}"),
    ),
    max_leaves=6,
)


@settings(max_examples=200, deadline=None)
@given(smooth_sources, st.floats(min_value=-1.0, max_value=1.0))
def test_derivative_matches_central_difference(source, x):
    e = expr.parse(source)
    derivative = expr.evaluate(expr.differentiate(e, "x"), {"x": x})
    h = 1e-6
    difference = (expr.evaluate(e, {"x": x + h}) - expr.evaluate(e, {"x": x - h})) / (2 * h)
    scale = 1.0 + abs(expr.evaluate(e, {"x": x})) + abs(derivative)
    assert abs(derivative - difference) <= 1e-5 * scale


printable_sources = st.recursive(
    _leaves | st.just("eps") | st.just("pi"),
    lambda children: st.one_of(
        st.tuples(children, st.sampled_from("+-*/^"), children).map(lambda t: f"{t[0]} {t[1]} {t[2]}"),
        st.tuples(st.sampled_from(["sin", "exp", "ln", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda c: f"-({c})"),
        children.map(lambda c: f"({c})"),
    ),
    max_leaves=8,
)


@settings(max_examples=200, deadline=None)
@given(printable_sources)
def test_print_then_parse_is_identity(source):
    tree = expr.parse(source)
    assert expr.parse(expr.to_string(tree)) == tree
