"""Two-player semantic games induced by first-order problems.

Proponent (P) defends the truth of the formula, Opponent (OP) attacks it.
P owns existential quantifiers and disjunctions, OP owns universal
quantifiers and conjunctions; negation swaps the roles. Negations, predicate
calls and guards are resolved silently, so every state returned by this
module is either terminal or a decision point for exactly one player.

States are immutable and keyed by their raw vector
``[pred_id, params..., action_vec...]`` plus cursor and polarity. Quantifier
slots of ``action_vec`` hold the picked domain value, connective slots the
branch (0 left, 1 right), untouched slots -1.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .fol import (
    And,
    Atom,
    EvaluationError,
    Exists,
    ForAll,
    Formula,
    Not,
    Or,
    PredCall,
    Problem,
    eval_arith,
    eval_atomic,
    preorder,
)

MAX_SILENT_STEPS = 10_000


class GameError(Exception):
    pass


class IllegalMoveError(GameError):
    pass


class SearchLimitError(GameError):
    pass


class Role(enum.Enum):
    P = "P"
    OP = "OP"

    @property
    def other(self) -> "Role":
        return Role.OP if self is Role.P else Role.P


class Player(enum.IntEnum):
    PLAYER0 = 0
    PLAYER1 = 1

    @property
    def other(self) -> "Player":
        return Player(1 - self)


class _Body:
    """Preorder node table for one formula case of one predicate."""

    def __init__(self, formula: Formula):
        self.nodes = list(preorder(formula))
        self.right: dict[int, int] = {}
        for node in self.nodes:
            if isinstance(node, (And, Or)):
                self.right[node.index] = node.right.index


class _Compiled:
    def __init__(self, problem: Problem):
        self.problem = problem
        self.preds = problem.predicates
        self.bodies: dict[tuple[int, int], _Body] = {}
        quantifier_slots = set()
        for pred in problem.predicates:
            for ci, case in enumerate(pred.cases):
                if not isinstance(case.result, bool):
                    body = _Body(case.result)
                    self.bodies[pred.pred_id, ci] = body
                    quantifier_slots.update(
                        n.index for n in body.nodes if isinstance(n, (ForAll, Exists))
                    )
        self.max_tree_len = problem.max_tree_len
        self.max_params = problem.max_params
        self.n_actions = problem.max_actions
        self.width = 1 + self.max_params + self.max_tree_len
        bound = max([1, self.n_actions] + [abs(a) for a in problem.entry_args])
        scale = np.ones(self.width)
        scale[0] = max(1, len(self.preds))
        scale[1 : 1 + self.max_params] = bound
        for i in quantifier_slots:
            scale[1 + self.max_params + i] = bound
        self.scale = scale
        self.transitions: dict[tuple, "GameState"] = {}
        self.initial: Optional["GameState"] = None


def _compiled(problem: Problem) -> _Compiled:
    c = problem.__dict__.get("_semgame")
    if c is None:
        c = _Compiled(problem)
        problem.__dict__["_semgame"] = c
    return c


@dataclass(frozen=True, eq=False)
class GameState:
    """A game position: predicate, its arguments and the moves made in its body.

    ``env`` caches variable bindings at the cursor; it is derivable from the
    other fields. ``truth`` is None for non-terminal states.
    """

    problem: Problem = field(repr=False)
    pred_id: int
    params: tuple[int, ...]
    case: int
    action_vec: tuple[int, ...]
    cursor: int
    polarity: Role
    env: tuple[tuple[str, int], ...] = field(repr=False)
    truth: Optional[bool] = None
    n_actions: int = 0
    key: tuple = field(default=(), repr=False)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GameState) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    @property
    def raw(self) -> tuple[int, ...]:
        return self.key[:-2]

    @property
    def terminal(self) -> bool:
        return self.truth is not None

    @property
    def node(self) -> Optional[Formula]:
        body = _compiled(self.problem).bodies.get((self.pred_id, self.case))
        return None if body is None else body.nodes[self.cursor]


def _make(problem, pred_id, params, case, action_vec, cursor, polarity, env, truth=None, n_actions=0):
    c = _compiled(problem)
    pad_p = c.max_params - len(params)
    pad_a = c.max_tree_len - len(action_vec)
    key = (pred_id, *params, *([-1] * pad_p), *action_vec, *([-1] * pad_a), cursor, polarity.value)
    return GameState(problem, pred_id, params, case, action_vec, cursor, polarity,
                     env, truth, n_actions, key)


def _enter(problem: Problem, pred_id: int, args: tuple[int, ...], polarity: Role, trace=None) -> GameState:
    c = _compiled(problem)
    pred = c.preds[pred_id]
    case_i = pred.fire(args)
    result = pred.cases[case_i].result
    env = tuple(zip(pred.params, args))
    if isinstance(result, bool):
        return _make(problem, pred_id, args, case_i, (), 0, polarity, env, truth=result)
    body = c.bodies[pred_id, case_i]
    state = _make(problem, pred_id, args, case_i, (-1,) * len(body.nodes), 0, polarity, env)
    return _resolve(state, trace)


def _resolve(state: GameState, trace=None) -> GameState:
    """Advance through silent nodes until a decision point or the game ends."""
    problem = state.problem
    c = _compiled(problem)
    for _ in range(MAX_SILENT_STEPS):
        if state.truth is not None:
            return state
        if trace is not None:
            trace.append(state)
        body = c.bodies[state.pred_id, state.case]
        node = body.nodes[state.cursor]
        if isinstance(node, Not):
            state = _make(problem, state.pred_id, state.params, state.case, state.action_vec,
                          state.cursor + 1, state.polarity.other, state.env)
        elif isinstance(node, (ForAll, Exists)):
            env = dict(state.env)
            width = eval_arith(node.domain.hi, env) - eval_arith(node.domain.lo, env)
            if width <= 0:
                # empty domain: forall is vacuously true, exists false
                return _make(problem, state.pred_id, state.params, state.case, state.action_vec,
                             state.cursor, state.polarity, state.env, truth=isinstance(node, ForAll))
            return _make(problem, state.pred_id, state.params, state.case, state.action_vec,
                         state.cursor, state.polarity, state.env, n_actions=width)
        elif isinstance(node, (And, Or)):
            return _make(problem, state.pred_id, state.params, state.case, state.action_vec,
                         state.cursor, state.polarity, state.env, n_actions=2)
        elif isinstance(node, Atom):
            truth = eval_atomic(node.prop, dict(state.env))
            return _make(problem, state.pred_id, state.params, state.case, state.action_vec,
                         state.cursor, state.polarity, state.env, truth=truth)
        else:
            assert isinstance(node, PredCall)
            env = dict(state.env)
            args = tuple(eval_arith(a, env) for a in node.args)
            callee = problem.by_name[node.name].pred_id
            return _enter(problem, callee, args, state.polarity, trace)
    raise GameError(f"more than {MAX_SILENT_STEPS} silent steps without a decision")


def initial_state(problem: Problem) -> GameState:
    c = _compiled(problem)
    if c.initial is None:
        c.initial = _enter(problem, problem.entry_pred.pred_id, problem.entry_args, Role.P)
    return c.initial


def is_terminal(s: GameState) -> bool:
    return s.truth is not None


def terminal_truth(s: GameState) -> bool:
    if s.truth is None:
        raise GameError("terminal_truth called on a non-terminal state")
    return s.truth


def _role_to_move(s: GameState) -> Role:
    node = s.node
    return Role.P if isinstance(node, (Exists, Or)) else Role.OP


def role_holder(s: GameState, role: Role) -> Player:
    """The player currently holding ``role``."""
    return Player.PLAYER0 if s.polarity is role else Player.PLAYER1


def player_to_move(s: GameState) -> Player:
    if s.truth is not None:
        raise GameError("player_to_move called on a terminal state")
    return role_holder(s, _role_to_move(s))


def role_to_move(s: GameState) -> Role:
    if s.truth is not None:
        raise GameError("role_to_move called on a terminal state")
    return _role_to_move(s)


def legal_actions(s: GameState) -> list[int]:
    if s.truth is not None:
        raise GameError("legal_actions called on a terminal state")
    return list(range(s.n_actions))


def legal_mask(s: GameState) -> np.ndarray:
    mask = np.zeros(_compiled(s.problem).n_actions, dtype=bool)
    mask[: s.n_actions] = True
    return mask


def move_value(s: GameState, move: int) -> int:
    """Domain value picked by ``move`` at a quantifier node (``lo + move``)."""
    node = s.node
    if not isinstance(node, (ForAll, Exists)):
        raise GameError("move_value is only defined at quantifier nodes")
    return eval_arith(node.domain.lo, dict(s.env)) + move


def _transition(s: GameState, m: int, trace=None) -> GameState:
    if s.truth is not None:
        raise IllegalMoveError("no moves from a terminal state")
    if not (0 <= m < s.n_actions) or isinstance(m, bool):
        raise IllegalMoveError(f"move {m} not in 0..{s.n_actions - 1}")
    c = _compiled(s.problem)
    body = c.bodies[s.pred_id, s.case]
    node = body.nodes[s.cursor]
    vec = list(s.action_vec)
    if isinstance(node, (ForAll, Exists)):
        # quantifier slots record the picked domain value, connective slots the branch
        value = eval_arith(node.domain.lo, dict(s.env)) + m
        vec[s.cursor] = value
        env = s.env + ((node.var, value),)
        cursor = s.cursor + 1
    else:
        vec[s.cursor] = m
        env = s.env
        cursor = s.cursor + 1 if m == 0 else body.right[s.cursor]
    nxt = _make(s.problem, s.pred_id, s.params, s.case, tuple(vec), cursor, s.polarity, env)
    return _resolve(nxt, trace)


def apply(s: GameState, m: int) -> GameState:
    """State after the player to move plays ``m``; pure and memoised."""
    cache = _compiled(s.problem).transitions
    k = (s.key, m)
    nxt = cache.get(k)
    if nxt is None:
        nxt = _transition(s, int(m))
        cache[k] = nxt
    return nxt


def transition_trace(s: GameState, m: int) -> list[GameState]:
    """Every intermediate position visited while applying ``m``.

    The first element has the move recorded and the cursor on the chosen
    child; silent nodes (negations, predicate calls) show up as unresolved
    positions. The last element equals ``apply(s, m)``.
    """
    trace: list[GameState] = []
    final = _transition(s, m, trace)
    if not trace or trace[-1] is not final:
        trace.append(final)
    return trace


def outcome_for(s: GameState, player: Player) -> int:
    """+1 if ``player`` wins at terminal ``s``, else -1."""
    if s.truth is None:
        raise GameError("outcome_for called on a non-terminal state")
    value = 1 if s.truth else -1
    return value if role_holder(s, Role.P) == player else -value


def raw_vector(s: GameState) -> tuple[int, ...]:
    return s.raw


def encode_state(s: GameState, scaled: bool = True) -> np.ndarray:
    """Fixed-length numeric vector; scaled to [-1, 1] for network input."""
    raw = np.asarray(s.raw, dtype=np.float64)
    if not scaled:
        return raw.astype(np.int64)
    return raw / _compiled(s.problem).scale


def input_dim(problem: Problem) -> int:
    return _compiled(problem).width


def n_actions(problem: Problem) -> int:
    return _compiled(problem).n_actions


def successors(s: GameState) -> Iterator[tuple[int, GameState]]:
    for m in range(s.n_actions):
        yield m, apply(s, m)


def reachable_states(problem: Problem, limit: int = 1_000_000) -> list[GameState]:
    """All states reachable from the initial state, breadth first."""
    start = initial_state(problem)
    seen = {start.key: start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        if s.truth is not None:
            continue
        for _, t in successors(s):
            if t.key not in seen:
                if len(seen) >= limit:
                    raise SearchLimitError(f"more than {limit} reachable states")
                seen[t.key] = t
                queue.append(t)
    return list(seen.values())


class Solver:
    """Exact minimax values with memoisation on the state key."""

    def __init__(self, node_limit: int = 5_000_000):
        self.node_limit = node_limit
        self.table: dict[tuple, int] = {}

    def value_p0(self, s: GameState) -> int:
        """Game value for Player0 under optimal play."""
        got = self.table.get(s.key)
        if got is not None:
            return got
        if s.truth is not None:
            v = outcome_for(s, Player.PLAYER0)
        else:
            if len(self.table) >= self.node_limit:
                raise SearchLimitError(f"solver exceeded {self.node_limit} nodes")
            maximise = player_to_move(s) == Player.PLAYER0
            v = -1 if maximise else 1
            for m in range(s.n_actions):
                cv = self.value_p0(apply(s, m))
                if maximise and cv > v or not maximise and cv < v:
                    v = cv
                if v == (1 if maximise else -1):
                    break
        self.table[s.key] = v
        return v

    def value(self, s: GameState, player: Optional[Player] = None) -> int:
        if player is None:
            player = player_to_move(s) if s.truth is None else role_holder(s, Role.P)
        v = self.value_p0(s)
        return v if player == Player.PLAYER0 else -v


def brute_force_value(s: GameState, player: Optional[Player] = None, solver: Optional[Solver] = None) -> int:
    """Exact value for ``player`` (default: the player to move, or the
    Proponent holder when ``s`` is terminal)."""
    return (solver or Solver()).value(s, player)


__all__ = [
    "EvaluationError",
    "GameError",
    "GameState",
    "IllegalMoveError",
    "Player",
    "Role",
    "SearchLimitError",
    "Solver",
    "apply",
    "brute_force_value",
    "encode_state",
    "initial_state",
    "input_dim",
    "is_terminal",
    "legal_actions",
    "legal_mask",
    "move_value",
    "n_actions",
    "outcome_for",
    "player_to_move",
    "raw_vector",
    "reachable_states",
    "role_holder",
    "role_to_move",
    "successors",
    "terminal_truth",
    "transition_trace",
]
