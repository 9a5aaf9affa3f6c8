from __future__ import annotations

import numpy as np
import pytest

from folgame.fol import parse_problem
from folgame.hsr import hsr_problem
from folgame.semgame import (
    IllegalMoveError,
    Player,
    Role,
    Solver,
    apply,
    brute_force_value,
    encode_state,
    initial_state,
    is_terminal,
    legal_actions,
    outcome_for,
    player_to_move,
    reachable_states,
    terminal_truth,
    transition_trace,
)

NEG = parse_problem("""
pred A(n) { case _ -> not B(n); }
pred B(n) { case _ -> exists m in [0, n): m = 1; }
entry A(3)
""")


def test_initial_state_layout():
    s = initial_state(hsr_problem(4, 4, 16))
    assert s.raw == (0, 4, 4, 16, -1, -1, -1, -1)
    assert s.cursor == 0 and not is_terminal(s)


def test_entry_guard_constant_is_terminal():
    s = initial_state(hsr_problem(3, 3, 1))
    assert is_terminal(s) and terminal_truth(s)
    s = initial_state(hsr_problem(0, 2, 5))
    assert is_terminal(s) and not terminal_truth(s)
    assert not is_terminal(initial_state(hsr_problem(3, 3, 8)))


def test_negation_flips_polarity():
    s = initial_state(NEG)
    assert s.polarity is Role.OP
    assert s.problem.predicates[s.pred_id].name == "B"
    # Exists belongs to P, now held by Player1
    assert player_to_move(s) == Player.PLAYER1


def test_player_to_move_hsr():
    s = initial_state(hsr_problem(3, 3, 8))
    assert player_to_move(s) == Player.PLAYER0
    t = apply(s, 3)
    assert player_to_move(t) == Player.PLAYER1
    assert legal_actions(t) == [0, 1]


def test_legal_actions_root():
    assert len(legal_actions(initial_state(hsr_problem(4, 4, 16)))) == 15


def test_paper_vector_trace():
    s = initial_state(hsr_problem(4, 4, 16))
    s = apply(s, 4)  # m = 5
    trace = transition_trace(s, 0)
    assert any(t.raw == (0, 4, 4, 16, 5, 0, -1, -1) and t.cursor == 2 for t in trace)
    assert trace[-1].raw == (0, 3, 3, 5, -1, -1, -1, -1)
    assert trace[-1] == apply(s, 0)


def test_reentry_terminal_true():
    s = apply(initial_state(hsr_problem(1, 1, 2)), 0)
    for branch in (0, 1):
        t = apply(s, branch)
        assert is_terminal(t) and terminal_truth(t)


def test_outcomes_and_negation():
    t = apply(apply(initial_state(hsr_problem(1, 1, 2)), 0), 0)
    assert outcome_for(t, Player.PLAYER0) == 1 and outcome_for(t, Player.PLAYER1) == -1
    lost = apply(apply(initial_state(hsr_problem(1, 1, 3)), 1), 0)  # m=2, break: HSR(0,0,2) false
    assert outcome_for(lost, Player.PLAYER0) == -1
    s = initial_state(NEG)
    win = apply(s, 1)  # Player1 (as P of B) picks m=1, atom true
    assert terminal_truth(win) and outcome_for(win, Player.PLAYER1) == 1


def test_illegal_moves():
    s = initial_state(hsr_problem(3, 3, 8))
    for bad in (-1, 7, 100):
        with pytest.raises(IllegalMoveError):
            apply(s, bad)


def test_encoding_injective_and_scaled():
    states = reachable_states(hsr_problem(3, 3, 8))
    assert len({s.raw for s in states}) == len(states)
    assert len({tuple(encode_state(s)) for s in states}) == len(states)
    for s in states:
        x = encode_state(s)
        assert np.all(np.abs(x) <= 1.0 + 1e-12)


def test_brute_force_examples():
    assert brute_force_value(initial_state(hsr_problem(1, 1, 2))) == 1
    assert brute_force_value(initial_state(hsr_problem(1, 1, 3))) == -1
    for k, q in [(0, 0), (2, 3), (5, 1)]:
        s = initial_state(hsr_problem(k, q, 1))
        assert brute_force_value(s, Player.PLAYER0) == 1


def test_solver_values_consistent_with_children():
    solver = Solver()
    for s in reachable_states(hsr_problem(2, 3, 7)):
        if s.truth is not None:
            continue
        mover = player_to_move(s)
        best = max(solver.value(apply(s, m), mover) for m in range(s.n_actions))
        assert solver.value(s) == best
