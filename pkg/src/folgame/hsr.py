"""Highest-safe-rung benchmark HSR(k, q, n).

``k`` jars, ``q`` tests, a ladder of ``n`` rungs. The Proponent picks a
testing rung ``m``; the Opponent answers "break" (search the ``m`` rungs below
with one jar fewer) or "not break" (search the ``n - m`` rungs above). Both
branches spend a test.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from .fol import And, Exists, Problem, parse_problem
from .semgame import GameState, Player, Role, Solver, initial_state, role_to_move

HSR_TEMPLATE = """\
# highest safe rung: k jars, q tests, n rungs
pred HSR(k, q, n) {{
  case n = 1 -> true;
  case n > 1 and (k = 0 or q = 0) -> false;
  case _ -> exists m in [1, n): HSR(k - 1, q - 1, m) and HSR(k, q - 1, n - m);
}}
entry HSR({k}, {q}, {n})
"""


class Verdict(enum.Enum):
    CORRECT = "Correct"
    FAULT = "Fault"
    NO_CORRECT_ACTION = "NoCorrectActionExists"


class Branch(enum.IntEnum):
    BREAK = 0  # left conjunct HSR(k-1, q-1, m)
    NOT_BREAK = 1  # right conjunct HSR(k, q-1, n-m)


@dataclass(frozen=True)
class HsrInstance:
    k: int
    q: int
    n: int

    def __post_init__(self):
        if self.k < 0 or self.q < 0 or self.n < 1:
            raise ValueError(f"invalid HSR instance ({self.k}, {self.q}, {self.n})")


def hsr_source(inst: HsrInstance) -> str:
    return HSR_TEMPLATE.format(k=inst.k, q=inst.q, n=inst.n)


def hsr_problem(k: int | HsrInstance, q: int | None = None, n: int | None = None) -> Problem:
    inst = k if isinstance(k, HsrInstance) else HsrInstance(k, q, n)
    return parse_problem(hsr_source(inst))


@lru_cache(maxsize=1)
def _reference_predicate():
    return hsr_problem(1, 1, 2).predicates[0]


def is_hsr_problem(p: Problem) -> bool:
    if len(p.predicates) != 1:
        return False
    pred, ref = p.predicates[0], _reference_predicate()
    return pred.params == ref.params and pred.cases == ref.cases


@lru_cache(maxsize=None)
def _n_max_recurrence(k: int, q: int) -> int:
    if k == 0 or q == 0:
        return 1
    return _n_max_recurrence(k - 1, q - 1) + _n_max_recurrence(k, q - 1)


_validated = False


def validate_n_max(k_max: int = 3, q_max: int = 3, solver: Optional[Solver] = None) -> None:
    """Check the recurrence against exhaustive game search for small k, q.

    For each (k, q) the game must be won at ``n = N(k, q)`` and lost at
    ``N(k, q) + 1``; raises AssertionError otherwise.
    """
    solver = solver or Solver()
    for k in range(k_max + 1):
        for q in range(q_max + 1):
            top = _n_max_recurrence(k, q)
            for n, expect in ((top, 1), (top + 1, -1)):
                got = solver.value(initial_state(hsr_problem(k, q, n)), Player.PLAYER0)
                if got != expect:
                    raise AssertionError(f"N({k},{q})={top} disagrees with search at n={n}")


def n_max(k: int, q: int) -> int:
    """Largest ladder height solvable with ``k`` jars and ``q`` tests."""
    global _validated
    if k < 0 or q < 0:
        raise ValueError("k and q must be non-negative")
    if not _validated:
        validate_n_max(2, 2)
        _validated = True
    return _n_max_recurrence(k, q)


def is_true(k: int, q: int, n: int) -> bool:
    return n <= n_max(k, q)


def proponent_range(k: int, q: int, n: int) -> tuple[int, int]:
    """Inclusive range of winning test rungs (may be empty)."""
    return n - n_max(k, q - 1), n_max(k - 1, q - 1)


def proponent_correct(k: int, q: int, n: int, m: int) -> Verdict:
    if not 1 <= m < n:
        raise ValueError(f"m={m} outside [1, {n})")
    if n > n_max(k, q):
        return Verdict.NO_CORRECT_ACTION
    lo, hi = proponent_range(k, q, n)
    return Verdict.CORRECT if lo <= m <= hi else Verdict.FAULT


def opponent_correct(k: int, q: int, n: int, m: int, branch: Branch | int, rule: str = "exact") -> Verdict:
    """Classify the Opponent's answer to test rung ``m``.

    ``rule="exact"`` marks a branch correct iff the subgame it leads to is
    false: "break" when ``m > N(k-1, q-1)``, "not break" when
    ``m < n - N(k, q-1)``. ``rule="published"`` applies the four-way rule as
    originally stated, whose n > N(k, q) clauses disagree with the exact
    rule at the interval boundaries.
    """
    branch = Branch(branch)
    below = n_max(k - 1, q - 1)
    above = n - n_max(k, q - 1)
    if rule == "exact":
        good = set()
        if m > below:
            good.add(Branch.BREAK)
        if m < above:
            good.add(Branch.NOT_BREAK)
    elif rule == "published":
        if n > n_max(k, q):
            if below <= m <= above:
                return Verdict.CORRECT
            good = {Branch.NOT_BREAK} if m > above else set()
            if m < below:
                good.add(Branch.BREAK)
        else:
            good = set()
            if m < above:
                good.add(Branch.NOT_BREAK)
            if m > below:
                good.add(Branch.BREAK)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    if not good:
        return Verdict.NO_CORRECT_ACTION
    return Verdict.CORRECT if branch in good else Verdict.FAULT


@dataclass
class MoveAnnotation:
    state: GameState
    player: Player
    role: Role
    move: int
    verdict: Verdict
    winning: bool  # mover had a correct move available
    forced_loss: bool
    caught: bool = False  # the opponent exploited the mistake
    fault: bool = False


@dataclass
class FaultRecord:
    faults: dict[Player, int] = field(default_factory=lambda: {Player.PLAYER0: 0, Player.PLAYER1: 0})
    moves: list[MoveAnnotation] = field(default_factory=list)

    def __getitem__(self, player: Player) -> int:
        return self.faults[player]


def classify(state: GameState, move: int) -> tuple[Verdict, Role]:
    """Correctness of ``move`` at an HSR decision state."""
    k, q, n = state.params
    node = state.node
    role = role_to_move(state)
    if isinstance(node, Exists):
        return proponent_correct(k, q, n, move + 1), role
    assert isinstance(node, And)
    m = state.action_vec[0]
    return opponent_correct(k, q, n, m, move), role


def fault_check(traj) -> FaultRecord:
    """Count faults in a finished HSR game.

    A move is a fault when it is classified ``Fault`` although a correct move
    existed, and the opponent catches it: the opponent's next move is correct,
    or the game ends right away with the mover losing. Players who are forced
    to lose accrue no faults.
    """
    if not is_hsr_problem(traj.problem):
        raise ValueError("fault_check needs a trajectory of the HSR problem")
    record = FaultRecord()
    steps = list(traj.steps)
    for step in steps:
        verdict, role = classify(step.state, step.move)
        winning = verdict is not Verdict.NO_CORRECT_ACTION
        record.moves.append(
            MoveAnnotation(step.state, step.player, role, step.move, verdict, winning, not winning)
        )
    for i, ann in enumerate(record.moves):
        if ann.verdict is not Verdict.FAULT:
            continue
        nxt = record.moves[i + 1] if i + 1 < len(record.moves) else None
        if nxt is not None:
            ann.caught = nxt.player != ann.player and nxt.verdict is Verdict.CORRECT
        else:
            ann.caught = traj.outcome[ann.player] < 0
        if ann.caught:
            ann.fault = True
            record.faults[ann.player] += 1
    return record


def correct_moves(state: GameState) -> list[int]:
    """Moves classified Correct at ``state`` (empty when none exists)."""
    return [m for m in range(state.n_actions) if classify(state, m)[0] is Verdict.CORRECT]


__all__ = [
    "Branch",
    "FaultRecord",
    "HsrInstance",
    "MoveAnnotation",
    "Verdict",
    "classify",
    "correct_moves",
    "fault_check",
    "hsr_problem",
    "hsr_source",
    "is_hsr_problem",
    "is_true",
    "n_max",
    "opponent_correct",
    "proponent_correct",
    "proponent_range",
    "validate_n_max",
]
