"""First-order problem definitions over finite integer domains.

A problem is a set of guarded predicate definitions plus an entry call::

    pred HSR(k, q, n) {
      case n = 1 -> true;
      case n > 1 and (k = 0 or q = 0) -> false;
      case _ -> exists m in [1, n): HSR(k - 1, q - 1, m) and HSR(k, q - 1, n - m);
    }
    entry HSR(3, 3, 8)

Formula nodes of every predicate body carry a preorder index, which is what
the game state vector is laid out by.
"""
from __future__ import annotations

import dataclasses
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Union

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class FolError(Exception):
    """Base class for problem definition and evaluation errors."""


class ParseError(FolError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class DefinitionError(FolError):
    """A syntactically valid problem that violates a load-time check."""


class EvaluationError(FolError):
    """Runtime failure while evaluating arithmetic or guards."""


class UnboundedDomainError(FolError):
    pass


# ---------------------------------------------------------------------------
# Arithmetic

@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "ArithExpr"
    right: "ArithExpr"


ArithExpr = Union[Const, Var, BinOp]


def _check_int64(value: int) -> int:
    if value < INT64_MIN or value > INT64_MAX:
        raise EvaluationError(f"integer overflow: {value} does not fit in 64 bits")
    return value


def eval_arith(e: ArithExpr, env: Mapping[str, int]) -> int:
    """Evaluate ``e`` under ``env``; ``/`` is floor division."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EvaluationError(f"unbound variable {e.name!r}") from None
    a = eval_arith(e.left, env)
    b = eval_arith(e.right, env)
    if e.op == "+":
        return _check_int64(a + b)
    if e.op == "-":
        return _check_int64(a - b)
    if e.op == "*":
        return _check_int64(a * b)
    if b == 0:
        raise EvaluationError("division by zero")
    return _check_int64(a // b)


def arith_vars(e: ArithExpr) -> Iterator[str]:
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, BinOp):
        yield from arith_vars(e.left)
        yield from arith_vars(e.right)


# ---------------------------------------------------------------------------
# Atomic propositions (comparisons, and boolean combinations in guards)

_COMPARATORS = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class Compare:
    op: str
    left: ArithExpr
    right: ArithExpr


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    left: "Atomic"
    right: "Atomic"


@dataclass(frozen=True)
class BoolNot:
    child: "Atomic"


Atomic = Union[Compare, BoolConst, BoolOp, BoolNot]


def eval_atomic(a: Atomic, env: Mapping[str, int]) -> bool:
    if isinstance(a, Compare):
        return _COMPARATORS[a.op](eval_arith(a.left, env), eval_arith(a.right, env))
    if isinstance(a, BoolConst):
        return a.value
    if isinstance(a, BoolNot):
        return not eval_atomic(a.child, env)
    if a.op == "and":
        return eval_atomic(a.left, env) and eval_atomic(a.right, env)
    return eval_atomic(a.left, env) or eval_atomic(a.right, env)


def atomic_vars(a: Atomic) -> Iterator[str]:
    if isinstance(a, Compare):
        yield from arith_vars(a.left)
        yield from arith_vars(a.right)
    elif isinstance(a, BoolNot):
        yield from atomic_vars(a.child)
    elif isinstance(a, BoolOp):
        yield from atomic_vars(a.left)
        yield from atomic_vars(a.right)


# ---------------------------------------------------------------------------
# Formulas

@dataclass(frozen=True)
class Domain:
    """Half-open integer range ``[lo, hi)``."""

    lo: ArithExpr
    hi: ArithExpr


@dataclass(frozen=True)
class ForAll:
    var: str
    domain: Domain
    child: "Formula"
    index: int = -1


@dataclass(frozen=True)
class Exists:
    var: str
    domain: Domain
    child: "Formula"
    index: int = -1


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"
    index: int = -1


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"
    index: int = -1


@dataclass(frozen=True)
class Not:
    child: "Formula"
    index: int = -1


@dataclass(frozen=True)
class PredCall:
    name: str
    args: tuple[ArithExpr, ...]
    index: int = -1


@dataclass(frozen=True)
class Atom:
    """A comparison used as a formula leaf; the game ends on reaching it."""

    prop: Atomic
    index: int = -1


Formula = Union[ForAll, Exists, And, Or, Not, PredCall, Atom]
Quantifier = (ForAll, Exists)
Connective = (And, Or)


def children(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, (ForAll, Exists, Not)):
        return (f.child,)
    if isinstance(f, (And, Or)):
        return (f.left, f.right)
    return ()


def preorder(f: Formula) -> Iterator[Formula]:
    """Yield the nodes of ``f`` root first, then left subtree, then right."""
    stack = [f]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def preorder_index(body: Formula) -> Formula:
    """Return a copy of ``body`` whose k-th preorder node has ``index == k``."""
    counter = iter(range(1 << 62))

    def walk(node: Formula) -> Formula:
        idx = next(counter)
        if isinstance(node, (ForAll, Exists, Not)):
            return dataclasses.replace(node, index=idx, child=walk(node.child))
        if isinstance(node, (And, Or)):
            left = walk(node.left)
            right = walk(node.right)
            return dataclasses.replace(node, index=idx, left=left, right=right)
        return dataclasses.replace(node, index=idx)

    return walk(body)


def formula_size(f: Formula) -> int:
    return sum(1 for _ in preorder(f))


# ---------------------------------------------------------------------------
# Problems

@dataclass(frozen=True)
class Case:
    guard: Atomic
    result: Union[bool, Formula]


@dataclass(frozen=True)
class PredicateDef:
    name: str
    params: tuple[str, ...]
    cases: tuple[Case, ...]
    pred_id: int = 0

    def fire(self, args: tuple[int, ...]) -> int:
        """Index of the first case whose guard holds for ``args``."""
        env = dict(zip(self.params, args))
        for i, case in enumerate(self.cases):
            if eval_atomic(case.guard, env):
                return i
        # unreachable once the catch-all check has passed
        raise EvaluationError(f"no guard of {self.name} fires for {args}")


@dataclass(frozen=True)
class Problem:
    predicates: tuple[PredicateDef, ...]
    entry_name: str
    entry_args: tuple[int, ...]
    source: str = field(default="", compare=False, repr=False)

    @cached_property
    def by_name(self) -> dict[str, PredicateDef]:
        return {p.name: p for p in self.predicates}

    @property
    def entry(self) -> PredCall:
        return PredCall(self.entry_name, tuple(Const(a) for a in self.entry_args))

    @property
    def entry_pred(self) -> PredicateDef:
        return self.by_name[self.entry_name]

    @cached_property
    def max_tree_len(self) -> int:
        sizes = [
            formula_size(c.result)
            for p in self.predicates
            for c in p.cases
            if not isinstance(c.result, bool)
        ]
        return max(sizes, default=0)

    @cached_property
    def max_params(self) -> int:
        return max(len(p.params) for p in self.predicates)

    @cached_property
    def max_actions(self) -> int:
        return max_action_bound(self)

    def pretty(self) -> str:
        return pretty_print(self)


# ---------------------------------------------------------------------------
# Tokenizer and recursive-descent parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|==|->|≤|≥|≠|→|∃|∀|∧|∨|¬|[-+*/=<>(){}\[\],;:_])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"pred", "case", "entry", "exists", "forall", "in", "and", "or", "not", "true", "false"}
_SYNONYMS = {
    "==": "=", "≠": "!=", "≤": "<=", "≥": ">=", "→": "->",
    "∃": "exists", "∀": "forall", "∧": "and", "∨": "or", "¬": "not",
}


@dataclass(frozen=True)
class Token:
    kind: str  # "int" | "name" | "kw" | "op" | "eof"
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        pos = m.end()
        if kind == "nl":
            line += 1
            line_start = pos
            continue
        if kind in ("ws", "comment"):
            continue
        text = _SYNONYMS.get(text, text)
        if kind == "name" and text in _KEYWORDS:
            kind = "kw"
        elif kind == "name" and text == "_":
            kind = "op"
        elif kind == "op" and text in _KEYWORDS:
            kind = "kw"
        tokens.append(Token(kind, text, line, col))
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.pos = 0

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        found = tok.text or "end of input"
        return ParseError(f"{message}, found {found!r}", tok.line, tok.column)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "kw") and self.tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        tok = self.tok
        self.pos += 1
        return tok

    def name(self) -> str:
        if self.tok.kind != "name":
            raise self.error("expected a name")
        text = self.tok.text
        self.pos += 1
        return text

    # -- grammar
    def problem(self) -> tuple[list[tuple[PredicateDef, Token]], tuple[str, tuple[int, ...], Token]]:
        preds = []
        entry = None
        while self.tok.kind != "eof":
            if self.at("pred"):
                start = self.tok
                preds.append((self.predicate(), start))
            elif self.at("entry"):
                if entry is not None:
                    raise self.error("duplicate entry declaration")
                start = self.tok
                self.pos += 1
                name = self.name()
                self.expect("(")
                args = []
                if not self.at(")"):
                    args.append(self.int_literal())
                    while self.accept(","):
                        args.append(self.int_literal())
                self.expect(")")
                entry = (name, tuple(args), start)
            else:
                raise self.error("expected 'pred' or 'entry'")
        if entry is None:
            raise self.error("missing entry declaration")
        return preds, entry

    def int_literal(self) -> int:
        neg = self.accept("-")
        if self.tok.kind != "int":
            raise self.error("expected an integer literal")
        value = int(self.tok.text)
        self.pos += 1
        return _check_int64(-value if neg else value)

    def predicate(self) -> PredicateDef:
        self.expect("pred")
        name = self.name()
        self.expect("(")
        params = []
        if not self.at(")"):
            params.append(self.name())
            while self.accept(","):
                params.append(self.name())
        self.expect(")")
        self.expect("{")
        cases = []
        while not self.at("}"):
            self.expect("case")
            if self.accept("_"):
                guard: Atomic = BoolConst(True)
            else:
                guard = self.guard_or()
            self.expect("->")
            if self.accept("true"):
                result: Union[bool, Formula] = True
            elif self.accept("false"):
                result = False
            else:
                result = self.formula()
            cases.append(Case(guard, result))
            if not self.accept(";") and not self.at("}"):
                raise self.error("expected ';'")
        self.expect("}")
        return PredicateDef(name, tuple(params), tuple(cases))

    # guards: boolean combinations of comparisons
    def guard_or(self) -> Atomic:
        left = self.guard_and()
        while self.accept("or"):
            left = BoolOp("or", left, self.guard_and())
        return left

    def guard_and(self) -> Atomic:
        left = self.guard_unary()
        while self.accept("and"):
            left = BoolOp("and", left, self.guard_unary())
        return left

    def guard_unary(self) -> Atomic:
        if self.accept("not"):
            return BoolNot(self.guard_unary())
        if self.accept("true"):
            return BoolConst(True)
        if self.accept("false"):
            return BoolConst(False)
        if self.at("("):
            saved = self.pos
            try:
                self.pos += 1
                inner = self.guard_or()
                self.expect(")")
                return inner
            except ParseError:
                self.pos = saved
        return self.comparison()

    def comparison(self) -> Compare:
        left = self.arith()
        if self.tok.text not in _COMPARATORS or self.tok.kind != "op":
            raise self.error("expected a comparison operator")
        op = self.tok.text
        self.pos += 1
        return Compare(op, left, self.arith())

    # formulas
    def formula(self) -> Formula:
        left = self.formula_and()
        while self.accept("or"):
            left = Or(left, self.formula_and())
        return left

    def formula_and(self) -> Formula:
        left = self.formula_unary()
        while self.accept("and"):
            left = And(left, self.formula_unary())
        return left

    def formula_unary(self) -> Formula:
        if self.accept("not"):
            return Not(self.formula_unary())
        if self.at("exists") or self.at("forall"):
            kind = Exists if self.tok.text == "exists" else ForAll
            self.pos += 1
            var = self.name()
            self.expect("in")
            self.expect("[")
            lo = self.arith()
            self.expect(",")
            hi = self.arith()
            self.expect(")")
            self.expect(":")
            return kind(var, Domain(lo, hi), self.formula())
        if self.at("("):
            saved = self.pos
            try:
                self.pos += 1
                inner = self.formula()
                self.expect(")")
                return inner
            except ParseError:
                self.pos = saved
        if self.tok.kind == "name" and self.tokens[self.pos + 1].text == "(":
            name = self.name()
            self.expect("(")
            args = []
            if not self.at(")"):
                args.append(self.arith())
                while self.accept(","):
                    args.append(self.arith())
            self.expect(")")
            return PredCall(name, tuple(args))
        return Atom(self.comparison())

    # arithmetic
    def arith(self) -> ArithExpr:
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.pos += 1
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> ArithExpr:
        left = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.pos += 1
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> ArithExpr:
        tok = self.tok
        if tok.kind == "int":
            self.pos += 1
            return Const(_check_int64(int(tok.text)))
        if tok.kind == "name":
            self.pos += 1
            return Var(tok.text)
        if self.accept("-"):
            return BinOp("-", Const(0), self.factor())
        if self.accept("("):
            inner = self.arith()
            self.expect(")")
            return inner
        raise self.error("expected an arithmetic expression")


def _check_formula(f: Formula, bound: set[str], preds: Mapping[str, PredicateDef], where: str) -> None:
    def need(names: Iterator[str]) -> None:
        for v in names:
            if v not in bound:
                raise DefinitionError(f"unbound variable {v!r} in {where}")

    if isinstance(f, (ForAll, Exists)):
        need(arith_vars(f.domain.lo))
        need(arith_vars(f.domain.hi))
        _check_const_division(f.domain.lo, where)
        _check_const_division(f.domain.hi, where)
        _check_formula(f.child, bound | {f.var}, preds, where)
    elif isinstance(f, (And, Or)):
        _check_formula(f.left, bound, preds, where)
        _check_formula(f.right, bound, preds, where)
    elif isinstance(f, Not):
        _check_formula(f.child, bound, preds, where)
    elif isinstance(f, PredCall):
        if f.name not in preds:
            raise DefinitionError(f"unknown predicate {f.name!r} in {where}")
        arity = len(preds[f.name].params)
        if len(f.args) != arity:
            raise DefinitionError(
                f"arity error: {f.name} takes {arity} argument(s), called with {len(f.args)} in {where}"
            )
        for a in f.args:
            need(arith_vars(a))
            _check_const_division(a, where)
    else:
        need(atomic_vars(f.prop))


def _check_const_division(e: ArithExpr, where: str) -> None:
    if isinstance(e, BinOp):
        if e.op == "/" and isinstance(e.right, Const) and e.right.value == 0:
            raise DefinitionError(f"division by constant zero in {where}")
        _check_const_division(e.left, where)
        _check_const_division(e.right, where)


def parse_problem(source: str) -> Problem:
    """Parse problem DSL text, assign preorder indices and run load-time checks."""
    raw_preds, (entry_name, entry_args, entry_tok) = _Parser(source).problem()

    preds: dict[str, PredicateDef] = {}
    for pred_id, (p, tok) in enumerate(raw_preds):
        if p.name in preds:
            raise ParseError(f"duplicate predicate {p.name!r}", tok.line, tok.column)
        if len(set(p.params)) != len(p.params):
            raise ParseError(f"repeated parameter name in {p.name!r}", tok.line, tok.column)
        if not p.cases or p.cases[-1].guard != BoolConst(True):
            raise DefinitionError(f"predicate {p.name!r} lacks a final catch-all case ('case _ -> ...')")
        cases = tuple(
            c if isinstance(c.result, bool) else Case(c.guard, preorder_index(c.result))
            for c in p.cases
        )
        preds[p.name] = dataclasses.replace(p, cases=cases, pred_id=pred_id)

    for p in preds.values():
        params = set(p.params)
        for i, c in enumerate(p.cases):
            where = f"{p.name} case {i + 1}"
            for v in atomic_vars(c.guard):
                if v not in params:
                    raise DefinitionError(f"unbound variable {v!r} in guard of {where}")
            if not isinstance(c.result, bool):
                _check_formula(c.result, params, preds, where)

    if entry_name not in preds:
        raise DefinitionError(f"entry references unknown predicate {entry_name!r}")
    arity = len(preds[entry_name].params)
    if len(entry_args) != arity:
        raise DefinitionError(
            f"arity error: entry {entry_name} takes {arity} argument(s), given {len(entry_args)}"
        )
    return Problem(tuple(preds.values()), entry_name, entry_args, source=source)


# ---------------------------------------------------------------------------
# Pretty printing (fully parenthesised, so it reparses to the same tree)

def format_arith(e: ArithExpr) -> str:
    if isinstance(e, Const):
        return str(e.value) if e.value >= 0 else f"(0 - {-e.value})"
    if isinstance(e, Var):
        return e.name
    return f"({format_arith(e.left)} {e.op} {format_arith(e.right)})"


def format_atomic(a: Atomic) -> str:
    if isinstance(a, Compare):
        return f"{format_arith(a.left)} {a.op} {format_arith(a.right)}"
    if isinstance(a, BoolConst):
        return "true" if a.value else "false"
    if isinstance(a, BoolNot):
        return f"not ({format_atomic(a.child)})"
    return f"({format_atomic(a.left)}) {a.op} ({format_atomic(a.right)})"


def format_formula(f: Formula) -> str:
    if isinstance(f, (ForAll, Exists)):
        kw = "forall" if isinstance(f, ForAll) else "exists"
        lo, hi = format_arith(f.domain.lo), format_arith(f.domain.hi)
        return f"({kw} {f.var} in [{lo}, {hi}): {format_formula(f.child)})"
    if isinstance(f, (And, Or)):
        kw = "and" if isinstance(f, And) else "or"
        return f"({format_formula(f.left)} {kw} {format_formula(f.right)})"
    if isinstance(f, Not):
        return f"(not {format_formula(f.child)})"
    if isinstance(f, PredCall):
        return f"{f.name}({', '.join(format_arith(a) for a in f.args)})"
    return f"({format_atomic(f.prop)})"


def pretty_print(p: Problem) -> str:
    lines = []
    for pred in p.predicates:
        lines.append(f"pred {pred.name}({', '.join(pred.params)}) {{")
        for i, c in enumerate(pred.cases):
            last = i == len(pred.cases) - 1
            guard = "_" if last and c.guard == BoolConst(True) else format_atomic(c.guard)
            if isinstance(c.result, bool):
                result = "true" if c.result else "false"
            else:
                result = format_formula(c.result)
            lines.append(f"  case {guard} -> {result};")
        lines.append("}")
    args = ", ".join(str(a) for a in p.entry_args)
    lines.append(f"entry {p.entry_name}({args})")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Action-space bound

def max_action_bound(p: Problem, max_calls: int = 200_000, max_steps: int = 20_000_000) -> int:
    """Largest number of legal moves at any reachable decision node.

    Walks every distinct predicate call reachable from the entry (each call's
    body is enumerated once), so the bound is exact whenever the walk stays
    within ``max_calls``/``max_steps``; beyond that the domain is treated as
    unbounded.
    """
    best = 0
    seen: set[tuple[str, tuple[int, ...]]] = set()
    queue: deque[tuple[str, tuple[int, ...]]] = deque([(p.entry_name, p.entry_args)])
    steps = 0

    def walk(f: Formula, env: dict[str, int]) -> None:
        nonlocal best, steps
        steps += 1
        if steps > max_steps:
            raise UnboundedDomainError(f"action bound search exceeded {max_steps} steps")
        if isinstance(f, (ForAll, Exists)):
            lo = eval_arith(f.domain.lo, env)
            hi = eval_arith(f.domain.hi, env)
            best = max(best, hi - lo)
            for v in range(lo, hi):
                walk(f.child, {**env, f.var: v})
        elif isinstance(f, (And, Or)):
            best = max(best, 2)
            walk(f.left, env)
            walk(f.right, env)
        elif isinstance(f, Not):
            walk(f.child, env)
        elif isinstance(f, PredCall):
            call = (f.name, tuple(eval_arith(a, env) for a in f.args))
            if call not in seen:
                seen.add(call)
                if len(seen) > max_calls:
                    raise UnboundedDomainError(f"more than {max_calls} distinct predicate calls reachable")
                queue.append(call)

    seen.add(queue[0])
    while queue:
        name, args = queue.popleft()
        pred = p.by_name[name]
        case = pred.cases[pred.fire(args)]
        if not isinstance(case.result, bool):
            walk(case.result, dict(zip(pred.params, args)))
    return max(best, 2)
