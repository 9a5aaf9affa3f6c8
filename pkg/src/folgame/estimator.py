"""scikit-learn style wrapper around the experiment loop.

``fit`` takes a problem (a :class:`~folgame.fol.Problem`, DSL text or an
HSR triple) rather than a feature matrix; prediction works on encoded
states.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .fol import Problem, parse_problem
from .hsr import hsr_problem
from .semgame import GameState, encode_state, legal_mask, player_to_move
from .train import ExperimentConfig, run_experiment


def _as_problem(X) -> Problem:
    if isinstance(X, Problem):
        return X
    if isinstance(X, str):
        return parse_problem(X)
    if isinstance(X, (tuple, list)) and len(X) == 3 and all(isinstance(v, (int, np.integer)) for v in X):
        return hsr_problem(*(int(v) for v in X))
    raise TypeError("fit expects a Problem, DSL source text or an HSR (k, q, n) triple")


class SemanticGameLearner(BaseEstimator):
    """Learns policy/value networks for a semantic game by self-play."""

    def __init__(self, experiment: str = "CE_Q_Sep", max_iters: int = 30, seed: int = 0,
                 stop: str = "convergence", num_simulations: int = 25, self_plays: int = 100,
                 trunk: Sequence[int] = (128, 128), out_dir: Optional[str] = None):
        self.experiment = experiment
        self.max_iters = max_iters
        self.seed = seed
        self.stop = stop
        self.num_simulations = num_simulations
        self.self_plays = self_plays
        self.trunk = trunk
        self.out_dir = out_dir

    def fit(self, X, y=None):
        problem = _as_problem(X)
        cfg = ExperimentConfig(name=self.experiment, num_simulations=self.num_simulations,
                               self_plays=self.self_plays, trunk=tuple(self.trunk))
        res = run_experiment(cfg, problem, self.max_iters, self.seed, self.out_dir, self.stop)
        self.problem_ = problem
        self.config_ = cfg
        self.nets_ = res.nets
        self.reports_ = res.reports
        self.converged_ = res.converged
        self.n_iter_ = len(res.reports)
        return self

    def _inputs(self, X, mask, players):
        check_is_fitted(self, "nets_")
        if isinstance(X, GameState) or (isinstance(X, (list, tuple)) and X and isinstance(X[0], GameState)):
            states = [X] if isinstance(X, GameState) else list(X)
            if any(s.truth is not None for s in states):
                raise ValueError("cannot predict at terminal states")
            x = np.stack([encode_state(s) for s in states])
            mask = np.stack([legal_mask(s) for s in states])
            players = np.array([int(player_to_move(s)) for s in states])
            return x, mask, players
        x = check_array(X, dtype=np.float64)
        if x.shape[1] != self.nets_.input_dim:
            raise ValueError(f"expected {self.nets_.input_dim} features, got {x.shape[1]}")
        if mask is None:
            mask = np.ones((len(x), self.nets_.n_actions), dtype=bool)
        mask = check_array(mask, dtype=bool)
        if mask.shape != (len(x), self.nets_.n_actions):
            raise ValueError("mask shape does not match X and the action width")
        if players is None:
            players = np.zeros(len(x), dtype=int)
        return x, mask, np.asarray(players)

    def predict_proba(self, X, mask=None, players=None) -> np.ndarray:
        """Policy-network move probabilities (rows sum to 1 on the mask)."""
        x, mask, players = self._inputs(X, mask, players)
        return self.nets_.predict(x, mask, players)[0]

    def predict(self, X, mask=None, players=None) -> np.ndarray:
        """Highest-probability move index per state."""
        return np.argmax(self.predict_proba(X, mask, players), axis=1)

    def value(self, X, players=None) -> np.ndarray:
        x, _, players = self._inputs(X, None, players)
        return self.nets_.value(x, players)
