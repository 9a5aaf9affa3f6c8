"""Learning strategies for semantic games of first-order problems.

Submodules:

* ``fol``: problem DSL, AST, parser and pretty printer
* ``semgame``: the two-player semantic game and an exact solver
* ``hsr``: the highest-safe-rung benchmark and its correctness oracles
* ``nn``: numpy policy/value networks, losses and Adam
* ``mcts``: neural MCTS with count retention and Q-injection
* ``train``: self-play, training, arena and the experiment loop
* ``score``: Elo and alpha-Rank scoring of checkpoints
"""
from __future__ import annotations

from .fol import FolError, Problem, parse_problem, pretty_print
from .hsr import hsr_problem, n_max
from .semgame import Player, Role, Solver, apply, brute_force_value, initial_state
from .train import EXPERIMENTS, ExperimentConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "FolError",
    "Player",
    "Problem",
    "Role",
    "Solver",
    "apply",
    "brute_force_value",
    "hsr_problem",
    "initial_state",
    "n_max",
    "parse_problem",
    "pretty_print",
    "run_experiment",
]
