from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from folgame.fol import (
    And,
    BinOp,
    Compare,
    Const,
    DefinitionError,
    EvaluationError,
    Exists,
    Not,
    Or,
    ParseError,
    PredCall,
    Var,
    eval_arith,
    eval_atomic,
    max_action_bound,
    parse_problem,
    preorder,
    preorder_index,
    pretty_print,
)
from folgame.hsr import hsr_problem, hsr_source


def body_indices(problem, case=-1):
    return [(type(n).__name__, n.index) for n in preorder(problem.predicates[0].cases[case].result)]


def test_hsr_body_indices():
    p = hsr_problem(3, 3, 8)
    assert len(p.predicates) == 1
    assert body_indices(p) == [("Exists", 0), ("And", 1), ("PredCall", 2), ("PredCall", 3)]


def test_single_call_body():
    p = parse_problem("""
        pred A(x) { case x <= 0 -> true; case _ -> B(x - 1); }
        pred B(x) { case _ -> A(x); }
        entry A(2)
    """)
    assert [(type(n).__name__, n.index) for n in preorder(p.by_name["B"].cases[0].result)] == [("PredCall", 0)]


def test_arity_error():
    bad = hsr_source_with("HSR(k - 1)")
    with pytest.raises(DefinitionError, match="arity|argument"):
        parse_problem(bad)


def hsr_source_with(call: str) -> str:
    return f"""
    pred HSR(k, q, n) {{
      case n = 1 -> true;
      case _ -> exists m in [1, n): {call} and HSR(k, q - 1, n - m);
    }}
    entry HSR(1, 1, 2)
    """


@pytest.mark.parametrize("src, err", [
    ("pred A(x) { case x = 1 -> true; } entry A(1)", DefinitionError),  # no catch-all
    ("pred A(x) { case _ -> C(x); } entry A(1)", DefinitionError),  # unknown predicate
    ("pred A(x) { case _ -> exists y in [0, z): A(y); } entry A(1)", DefinitionError),  # unbound
    ("pred A(x, x) { case _ -> true; } entry A(1, 1)", ParseError),  # reported with a position
    ("pred A(x) { case _ -> true; } pred A(y) { case _ -> true; } entry A(1)", ParseError),
    ("pred A(x) { case _ -> A(x / 0); } entry A(1)", DefinitionError),
    ("pred A(x) { case _ -> true; entry A(1)", ParseError),
    ("pred A(x) { case _ -> $; } entry A(1)", ParseError),
])
def test_load_errors(src, err):
    with pytest.raises(err):
        parse_problem(src)


def test_parse_error_position():
    with pytest.raises(ParseError) as info:
        parse_problem("pred A(x) {\n  case _ -> @;\n} entry A(1)")
    assert info.value.line == 2


def test_preorder_index_examples():
    p1, p2 = PredCall("P", ()), PredCall("Q", ())
    f = preorder_index(Exists("x", None, And(p1, p2)))
    assert [n.index for n in preorder(f)] == [0, 1, 2, 3]
    g = preorder_index(Not(Or(p1, p2)))
    assert [(type(n).__name__, n.index) for n in preorder(g)] == [("Not", 0), ("Or", 1), ("PredCall", 2), ("PredCall", 3)]
    assert preorder_index(p1).index == 0
    assert preorder_index(f) == f


def test_eval_arith():
    assert eval_arith(BinOp("-", Var("n"), Var("m")), {"n": 16, "m": 5}) == 11
    assert eval_arith(BinOp("-", Var("k"), Const(1)), {"k": 4}) == 3
    with pytest.raises(EvaluationError):
        eval_arith(BinOp("/", Var("x"), Const(0)), {"x": 3})
    with pytest.raises(EvaluationError):
        eval_arith(Var("zz"), {})


def test_eval_atomic_guards():
    p = hsr_problem(3, 3, 8).predicates[0]
    g1, g2 = p.cases[0].guard, p.cases[1].guard
    assert eval_atomic(g1, {"n": 1, "k": 0, "q": 0})
    assert eval_atomic(g2, {"n": 5, "k": 0, "q": 3})
    assert not eval_atomic(Compare(">", Var("n"), Const(1)), {"n": 1})


def test_max_action_bound():
    assert max_action_bound(hsr_problem(3, 3, 8)) == 7
    p = parse_problem("pred A(x) { case x > 0 -> A(x - 1) and A(x - 1); case _ -> true; } entry A(2)")
    assert max_action_bound(p) == 2


@pytest.mark.slow
def test_max_action_bound_paper_instance():
    assert hsr_problem(7, 7, 128).max_actions == 127


def test_unicode_synonyms_parse_equal():
    ascii_src = "pred A(n) { case n <= 1 -> true; case _ -> exists m in [1, n): not A(m) and A(n - m); } entry A(4)"
    uni_src = "pred A(n) { case n ≤ 1 → true; case _ → ∃ m in [1, n): ¬ A(m) ∧ A(n - m); } entry A(4)"
    assert parse_problem(ascii_src) == parse_problem(uni_src)


@pytest.mark.parametrize("k,q,n", [(0, 0, 1), (3, 3, 8), (4, 4, 16), (2, 5, 9)])
def test_pretty_round_trip_hsr(k, q, n):
    p = hsr_problem(k, q, n)
    assert parse_problem(pretty_print(p)) == p


arith = st.recursive(
    st.one_of(st.integers(-5, 5).map(Const), st.sampled_from(["x", "y"]).map(Var)),
    lambda inner: st.builds(BinOp, st.sampled_from(["+", "-", "*"]), inner, inner),
    max_leaves=6,
)


@settings(max_examples=60, deadline=None)
@given(arith)
def test_pretty_round_trip_random_arith(expr):
    from folgame.fol import format_arith
    src = f"pred A(x, y) {{ case {format_arith(expr)} > 0 -> true; case _ -> false; }} entry A(1, 2)"
    p = parse_problem(src)
    assert parse_problem(pretty_print(p)) == p
    g = p.predicates[0].cases[0].guard
    assert eval_arith(g.left, {"x": 3, "y": -2}) == eval_arith(expr, {"x": 3, "y": -2})


def test_source_kept_but_not_compared():
    p = hsr_problem(1, 1, 2)
    assert p.source == hsr_source(type("I", (), {"k": 1, "q": 1, "n": 2})())
