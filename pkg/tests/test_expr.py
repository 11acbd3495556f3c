"""Expression mini-language: parsing, printing, evaluation.

The random evaluation test cross-checks the vectorized evaluator against an
independent scalar interpreter written directly from the grammar notes
(recursive, one sample at a time, math module arithmetic).
"""
import math
import random

import numpy as np
import pytest

from nxs.data import Chunk, PortType
from nxs.errors import DomainError, ExprSyntaxError
from nxs.expr import (BinOp, Call, ExprProgram, Neg, Num, Var, eval_expression,
                      evaluate, parse_expr, to_source)


# -- fixed-value anchors -------------------------------------------------------

def test_power_is_right_associative():
    assert evaluate("2^3^2", 1.0) == 512.0
    assert evaluate("(2^3)^2", 1.0) == 64.0


def test_unary_minus_binds_looser_than_power():
    assert evaluate("-2^2", 0.0) == -4.0
    assert evaluate("(-2)^2", 0.0) == 4.0


def test_simple_arithmetic():
    assert evaluate("x - 4", 6.0) == 2.0
    assert evaluate("1 + 2 * 3", 0.0) == 7.0
    assert evaluate("(1 + 2) * 3", 0.0) == 9.0
    assert evaluate("7 / 2", 0.0) == 3.5


def test_vectorized_over_arrays():
    out = evaluate("x^2", np.array([-2.0, 3.0]))
    assert np.array_equal(out, np.array([4.0, 9.0]))
    out = evaluate("abs(x)", np.array([[-1.0, 2.0], [3.0, -4.0]]))
    assert np.array_equal(out, np.array([[1.0, 2.0], [3.0, 4.0]]))


def test_constant_broadcasts_to_input_shape():
    out = evaluate("3", np.zeros((4, 2)))
    assert out.shape == (4, 2)
    assert np.all(out == 3.0)


def test_functions():
    assert evaluate("sqrt(x)", 9.0) == 3.0
    assert evaluate("exp(0)", 0.0) == 1.0
    assert math.isclose(float(evaluate("log(x)", math.e)), 1.0, rel_tol=1e-15)
    assert evaluate("min(x, 2)", 5.0) == 2.0
    assert evaluate("max(x, 2)", 5.0) == 5.0


def test_scientific_notation_literals():
    assert evaluate("1e3 + x", 1.0) == 1001.0
    assert evaluate("2.5e-2", 0.0) == 0.025


# -- error reporting ----------------------------------------------------------

def test_domain_error_reports_first_offending_sample():
    with pytest.raises(DomainError) as info:
        evaluate("sqrt(x)", np.array([4.0, -1.0, 9.0]))
    assert info.value.func == "sqrt"
    assert info.value.sample_position == 1

    with pytest.raises(DomainError) as info:
        evaluate("log(x)", np.array([1.0, 2.0, 0.0]))
    assert info.value.func == "log"
    assert info.value.sample_position == 2


def test_syntax_error_positions():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("2 $ 3")
    assert info.value.position == 2

    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("2 +")
    assert info.value.position == 3

    with pytest.raises(ExprSyntaxError):
        parse_expr("(1 + 2")
    with pytest.raises(ExprSyntaxError):
        parse_expr("foo(3)")
    with pytest.raises(ExprSyntaxError):
        parse_expr("min(1)")
    with pytest.raises(ExprSyntaxError):
        parse_expr("sqrt(1, 2)")
    with pytest.raises(ExprSyntaxError):
        parse_expr("")


def test_nonfinite_counter_accumulates():
    program = ExprProgram("1 / x")
    program(np.array([1.0, 0.0, 2.0]))
    assert program.nonfinite_total == 1
    program(np.zeros(3))
    assert program.nonfinite_total == 4


# -- structure ------------------------------------------------------------------

def random_ast(rng, depth):
    if depth <= 0 or rng.random() < 0.2:
        if rng.random() < 0.5:
            return Var()
        return Num(round(rng.uniform(0.0, 4.0), 3))
    r = rng.random()
    if r < 0.12:
        return Neg(random_ast(rng, depth - 1))
    if r < 0.22:
        return Call("abs", (random_ast(rng, depth - 1),))
    if r < 0.30:
        return Call("sqrt", (Call("abs", (random_ast(rng, depth - 1),)),))
    if r < 0.38:
        arg = BinOp("+", Call("abs", (random_ast(rng, depth - 1),)), Num(1.0))
        return Call("log", (arg,))
    if r < 0.50:
        func = "min" if rng.random() < 0.5 else "max"
        return Call(func, (random_ast(rng, depth - 1), random_ast(rng, depth - 1)))
    if r < 0.60:
        return BinOp("^", random_ast(rng, depth - 1), Num(float(rng.choice([2, 3]))))
    op = rng.choice(["+", "-", "*", "/"])
    return BinOp(op, random_ast(rng, depth - 1), random_ast(rng, depth - 1))


def oracle(node, x):
    """Scalar reference interpreter (nan-propagating min/max, IEEE division)."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return x
    if isinstance(node, Neg):
        return -oracle(node.operand, x)
    if isinstance(node, Call):
        vals = [oracle(a, x) for a in node.args]
        if node.func == "abs":
            return abs(vals[0])
        if node.func == "sqrt":
            return math.sqrt(vals[0]) if not math.isnan(vals[0]) else math.nan
        if node.func == "log":
            return math.log(vals[0]) if not math.isnan(vals[0]) else math.nan
        if node.func == "exp":
            try:
                return math.exp(vals[0])
            except OverflowError:
                return math.inf
        if any(math.isnan(v) for v in vals):
            return math.nan
        return min(vals) if node.func == "min" else max(vals)
    a, b = oracle(node.left, x), oracle(node.right, x)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        if (math.isinf(a) and b == 0.0) or (math.isinf(b) and a == 0.0):
            return math.nan
        return a * b
    if node.op == "/":
        if b == 0.0:
            if a == 0.0 or math.isnan(a):
                return math.nan
            return math.copysign(math.inf, a) * math.copysign(1.0, b)
        if math.isinf(a) and math.isinf(b):
            return math.nan
        return a / b
    return a ** b  # exponents are small integers by construction


def same_value(a, b):
    if math.isnan(a) and math.isnan(b):
        return True
    if a == b:
        return True
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


def test_random_expressions_match_scalar_interpreter():
    rng = random.Random(20260821)
    checked = 0
    for _ in range(300):
        ast = random_ast(rng, 4)
        program = ExprProgram(to_source(ast))
        xs = np.array([rng.uniform(-3.0, 3.0) for _ in range(4)])
        out = program(xs)
        for x, got in zip(xs, out):
            want = oracle(ast, float(x))
            assert same_value(float(got), want), (
                f"{to_source(ast)} at x={x}: impl {got!r}, reference {want!r}")
            checked += 1
    assert checked == 1200


def test_print_parse_round_trip_preserves_structure():
    rng = random.Random(7)
    for _ in range(500):
        ast = random_ast(rng, 4)
        again = parse_expr(to_source(ast))
        assert again == ast, to_source(ast)


def test_round_trip_of_canonical_strings():
    for source in ["x - 4", "2^3^2", "(2^3)^2", "-(x + 1)", "x * (x + 1)",
                   "min(x, max(x, 1))", "abs(x)^3", "2^-3", "x / x"]:
        ast = parse_expr(source)
        assert parse_expr(to_source(ast)) == ast


def test_application_is_stateless_across_chunk_boundaries():
    program = ExprProgram("x^2 - 3 * x + 1")
    rng = np.random.default_rng(11)
    whole = rng.normal(size=64)
    split = np.concatenate([program(whole[:17]), program(whole[17:])])
    assert np.array_equal(program(whole), split)


def test_eval_expression_keeps_chunk_timestamps():
    ts = np.arange(8) / 100.0
    chunk = Chunk(ts, ("a", "b"), np.arange(16.0).reshape(8, 2), 100.0)
    out = eval_expression("x + 1", chunk)
    assert np.array_equal(out.timestamps, ts)
    assert np.array_equal(out.data, chunk.data + 1.0)
    # accepts a pre-parsed tree as well
    out2 = eval_expression(parse_expr("x + 1"), chunk)
    assert np.array_equal(out2.data, out.data)


def test_apply_function_node_squares_and_counts_nonfinite():
    from nxs.expr import ApplyFunction
    from nxs.graph import Node, Pipeline, Probe, run

    class Source(Node):
        kind = "Src"
        output_type = PortType.SIGNAL

        def __init__(self, name):
            super().__init__(name)
            self.n = 0

        def update(self, ctx):
            ts = np.array([self.n / 100.0])
            self.out.push(Chunk(ts, ("v",), np.array([[float(self.n)]]), 100.0))
            self.n += 1

    p = Pipeline()
    src = p.add(Source("src"))
    fn = p.add(ApplyFunction("fn", expr="1 / x"), inputs=src)
    probe = p.add(Probe("probe"), inputs=fn)
    report = run(p, max_steps=5, paced=False)
    values = [c.data[0, 0] for c in probe.chunks()]
    assert math.isinf(values[0])
    assert values[1:] == [1.0, 0.5, 1 / 3, 0.25]
    assert report.node_counters["fn"]["nonfinite_samples"] == 1
