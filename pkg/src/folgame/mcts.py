"""Neural MCTS over semantic games.

One simulation selects a path with the PUCT rule, fully expands the leaf
(priors from the policy net, optionally Q seeded from child value
estimates), evaluates the leaf and backs its value up the path as an
incremental mean. Values are always stored from the perspective of the player
to move at the node they belong to; the turn order of a semantic game is not
alternating, so signs are fixed per node rather than per depth.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import IO, Optional, Protocol, Sequence

import numpy as np

from .semgame import (
    GameError,
    GameState,
    IllegalMoveError,
    Player,
    Solver,
    apply,
    encode_state,
    legal_mask,
    outcome_for,
    player_to_move,
)

MAX_PATH = 100_000


class Retention(enum.Enum):
    FRESH = "fresh"
    KEEP_COUNTS = "keep_counts"


@dataclass(frozen=True)
class MctsConfig:
    num_simulations: int = 25
    c_puct: float = 1.0
    q_injection: bool = False
    retention: Retention = Retention.FRESH

    def __post_init__(self):
        if self.num_simulations < 1:
            raise ValueError("num_simulations must be >= 1")
        if not self.c_puct > 0:
            raise ValueError("c_puct must be > 0")


class Evaluator(Protocol):
    def evaluate(self, state: GameState) -> tuple[np.ndarray, float]:
        """Prior over the legal moves of ``state`` and its value for the mover."""

    def values(self, states: Sequence[GameState]) -> np.ndarray:
        """Values of non-terminal states, each for its own mover."""


class NetworkEvaluator:
    """Evaluates states with a frozen :class:`~folgame.nn.NetworkSet`.

    Results are cached per state key, so the networks must not change while
    the evaluator is in use.
    """

    def __init__(self, nets, cache: bool = True):
        self.nets = nets
        self._cache: Optional[dict] = {} if cache else None
        self.calls = 0

    def evaluate(self, state):
        if self._cache is not None:
            hit = self._cache.get(state.key)
            if hit is not None and hit[0] is not None:
                return hit
        self.calls += 1
        probs, values = self.nets.predict(encode_state(state)[None], legal_mask(state)[None],
                                          [int(player_to_move(state))])
        out = (probs[0, : state.n_actions], float(values[0]))
        if self._cache is not None:
            self._cache[state.key] = out
        return out

    def values(self, states):
        out = np.empty(len(states))
        todo = []
        for i, s in enumerate(states):
            hit = self._cache.get(s.key) if self._cache is not None else None
            if hit is not None:
                out[i] = hit[1]
            else:
                todo.append(i)
        if todo:
            self.calls += 1
            x = np.stack([encode_state(states[i]) for i in todo])
            players = [int(player_to_move(states[i])) for i in todo]
            v = self.nets.value(x, players)
            for i, val in zip(todo, v):
                out[i] = val
                if self._cache is not None:
                    self._cache.setdefault(states[i].key, (None, float(val)))
        return out


class OracleEvaluator:
    """Exact game values from brute-force search and uniform priors."""

    def __init__(self, solver: Optional[Solver] = None):
        self.solver = solver or Solver()

    def evaluate(self, state):
        return np.full(state.n_actions, 1.0 / state.n_actions), float(self.solver.value(state))

    def values(self, states):
        return np.array([float(self.solver.value(s)) for s in states])


class UniformEvaluator:
    """Uniform priors and zero values (a network with zero weights)."""

    def evaluate(self, state):
        return np.full(state.n_actions, 1.0 / state.n_actions), 0.0

    def values(self, states):
        return np.zeros(len(states))


class NodeStats:
    __slots__ = ("state", "player", "N", "Q", "prior", "children", "visited")

    def __init__(self, state: GameState):
        self.state = state
        self.player = player_to_move(state)
        n = state.n_actions
        self.N = np.zeros(n, dtype=np.int64)
        self.Q = np.zeros(n)
        self.prior = np.full(n, 1.0 / n)
        self.children: Optional[list[GameState]] = None
        self.visited = False


class SearchTree:
    """Node statistics keyed by state key, plus the current root."""

    def __init__(self, root: GameState, retention: Retention = Retention.FRESH):
        self.retention = retention
        self.nodes: dict[tuple, NodeStats] = {}
        self.root = root

    def node(self, state: GameState) -> NodeStats:
        got = self.nodes.get(state.key)
        if got is None:
            got = self.nodes[state.key] = NodeStats(state)
        return got

    def reroot(self, state: GameState) -> None:
        """Move the root to ``state``; Fresh trees forget everything."""
        if self.retention is Retention.FRESH:
            self.nodes = {}
        self.root = state


def select_path(tree: SearchTree, c_puct: float = 1.0) -> tuple[list[tuple[NodeStats, int]], GameState]:
    """Walk down by PUCT until a terminal or unvisited state."""
    path: list[tuple[NodeStats, int]] = []
    s = tree.root
    while s.truth is None:
        node = tree.node(s)
        if not node.visited:
            break
        if len(path) >= MAX_PATH:
            raise GameError("search path exceeded the depth cap (cyclic game?)")
        score = node.Q + c_puct * node.prior * np.sqrt(node.N.sum()) / (node.N + 1)
        a = int(np.argmax(score))
        path.append((node, a))
        s = node.children[a]
    return path, s


def roll_out(leaf: GameState, children: Sequence[GameState], evaluator) -> np.ndarray:
    """Value of every child for the player to move at ``leaf``."""
    mover = player_to_move(leaf)
    out = np.empty(len(children))
    open_idx = []
    for i, c in enumerate(children):
        if c.truth is not None:
            out[i] = outcome_for(c, mover)
        else:
            open_idx.append(i)
    if open_idx:
        vals = evaluator.values([children[i] for i in open_idx])
        for i, v in zip(open_idx, vals):
            out[i] = v if player_to_move(children[i]) == mover else -v
    return out


def expand(tree: SearchTree, leaf: GameState, evaluator, q_injection: bool = False) -> float:
    """Create all children of ``leaf``; returns its value for its mover."""
    if leaf.truth is not None:
        raise GameError("cannot expand a terminal state")
    node = tree.node(leaf)
    node.children = [apply(leaf, m) for m in range(leaf.n_actions)]
    prior, value = evaluator.evaluate(leaf)
    node.prior = np.asarray(prior, dtype=np.float64)
    if q_injection:
        node.Q = roll_out(leaf, node.children, evaluator)
    node.visited = True
    return value


def backup(path: Sequence[tuple[NodeStats, int]], value: float, player: Player) -> None:
    """Incremental-mean update along ``path``; ``value`` is for ``player``."""
    for node, a in path:
        v = value if node.player == player else -value
        node.N[a] += 1
        node.Q[a] += (v - node.Q[a]) / node.N[a]


def simulate(tree: SearchTree, evaluator, cfg: MctsConfig, trace: Optional[IO[str]] = None) -> None:
    path, leaf = select_path(tree, cfg.c_puct)
    if leaf.truth is not None:
        player = Player.PLAYER0
        value = float(outcome_for(leaf, player))
    else:
        player = player_to_move(leaf)
        value = expand(tree, leaf, evaluator, cfg.q_injection)
    backup(path, value, player)
    if trace is not None:
        trace.write(json.dumps({
            "path": [list(node.state.raw) for node, _ in path],
            "actions": [a for _, a in path],
            "leaf": list(leaf.raw),
            "value": value,
            "player": int(player),
        }) + "\n")


def run_simulations(tree: SearchTree, evaluator, cfg: MctsConfig, trace: Optional[IO[str]] = None) -> None:
    if tree.root.truth is not None:
        return
    for _ in range(cfg.num_simulations):
        simulate(tree, evaluator, cfg, trace)


def empirical_policy(tree: SearchTree, state: Optional[GameState] = None) -> np.ndarray:
    """(1 + N(s,a)) / (|A| + sum N(s,.)) over the legal moves of ``state``."""
    state = tree.root if state is None else state
    node = tree.nodes.get(state.key)
    if node is None or not node.visited:
        raise GameError("empirical policy requested for an unexpanded state")
    return (1.0 + node.N) / (len(node.N) + node.N.sum())


def advance_root(tree: SearchTree, move: int) -> None:
    root = tree.root
    if root.truth is not None or not 0 <= move < root.n_actions:
        raise IllegalMoveError(f"move {move} is not legal at the root")
    tree.reroot(apply(root, move))


class MctsAgent:
    """Chooses moves by MCTS; owns one search tree reused per its retention."""

    def __init__(self, evaluator, cfg: MctsConfig):
        self.evaluator = evaluator
        self.cfg = cfg
        self.tree: Optional[SearchTree] = None

    def policy(self, state: GameState) -> np.ndarray:
        if self.tree is None:
            self.tree = SearchTree(state, self.cfg.retention)
        else:
            self.tree.reroot(state)
        run_simulations(self.tree, self.evaluator, self.cfg)
        return empirical_policy(self.tree)

    def reset(self) -> None:
        self.tree = None


__all__ = [
    "MctsAgent",
    "MctsConfig",
    "NetworkEvaluator",
    "NodeStats",
    "OracleEvaluator",
    "Retention",
    "SearchTree",
    "UniformEvaluator",
    "advance_root",
    "backup",
    "empirical_policy",
    "expand",
    "roll_out",
    "run_simulations",
    "select_path",
    "simulate",
]
