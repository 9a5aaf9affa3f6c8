"""Self-play, replay, training, arena evaluation and the experiment loop."""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import hsr
from .fol import Problem, pretty_print
from .mcts import MctsAgent, MctsConfig, NetworkEvaluator, Retention
from .nn import NetworkSet, TrainBatch, advantage
from .semgame import (
    GameState,
    Player,
    Solver,
    apply,
    encode_state,
    initial_state,
    input_dim,
    legal_mask,
    n_actions,
    outcome_for,
    player_to_move,
)

EXPERIMENTS = ("AZ", "CE", "CE_Sep", "CE_Q_Sep", "PPO_CLIP_Sep", "PPO_KL_Sep", "PPO_KL_Sep_2NN")
METRIC_COLUMNS = ("iter", "faults_newP", "faults_newOP", "faults_oldP", "faults_oldOP",
                  "policy_loss", "value_loss")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "CE_Q_Sep"
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    num_simulations: int = 25
    self_plays: int = 100
    beta: float = 1.0
    eps: float = 0.2
    arena_games: int = 20
    convergence_window: int = 5
    replay_iterations: int = 20
    c_puct: float = 1.0
    trunk: tuple[int, ...] = (128, 128)
    opponent_trunk: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; valid names: {', '.join(EXPERIMENTS)}")
        object.__setattr__(self, "trunk", tuple(int(w) for w in self.trunk))
        object.__setattr__(self, "opponent_trunk", tuple(int(w) for w in self.opponent_trunk))
        for f in ("batch_size", "epochs", "num_simulations", "arena_games", "convergence_window",
                  "replay_iterations"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1")
        if self.self_plays < 0 or self.lr <= 0:
            raise ConfigError("self_plays must be >= 0 and lr > 0")

    # flags derived from the name
    @property
    def retention(self) -> Retention:
        return Retention.FRESH if self.name == "AZ" else Retention.KEEP_COUNTS

    @property
    def q_injection(self) -> bool:
        return self.name == "CE_Q_Sep" or self.name.startswith("PPO")

    @property
    def separate(self) -> bool:
        return "_Sep" in self.name

    @property
    def per_player(self) -> bool:
        return self.name.endswith("_2NN")

    @property
    def policy_loss(self) -> str:
        if self.name.startswith("PPO_CLIP"):
            return "ppo_clip"
        if self.name.startswith("PPO_KL"):
            return "ppo_kl"
        return "cem"

    def mcts(self, retention: Optional[Retention] = None) -> MctsConfig:
        return MctsConfig(self.num_simulations, self.c_puct, self.q_injection,
                          self.retention if retention is None else retention)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["trunk"] = list(self.trunk)
        d["opponent_trunk"] = list(self.opponent_trunk)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)


def make_networks(cfg: ExperimentConfig, problem: Problem, seed: int) -> NetworkSet:
    return NetworkSet(input_dim(problem), n_actions(problem), cfg.trunk, separate=cfg.separate,
                      per_player=cfg.per_player, opponent_trunk=cfg.opponent_trunk, seed=seed)


@dataclass
class Step:
    state: GameState
    player: Player
    move: int
    pi: np.ndarray  # empirical policy over legal moves


@dataclass
class Trajectory:
    problem: Problem
    steps: list[Step] = field(default_factory=list)
    final: Optional[GameState] = None

    @property
    def outcome(self) -> dict[Player, int]:
        return {p: outcome_for(self.final, p) for p in Player}

    def z(self) -> list[int]:
        out = self.outcome
        return [out[s.player] for s in self.steps]


def play_game(problem: Problem, agents: Sequence, rng: Optional[np.random.Generator] = None,
              start: Optional[GameState] = None) -> Trajectory:
    """Play one game; ``agents[p]`` moves for Player p.

    With ``rng`` the move is sampled from the agent's policy, otherwise the
    lowest-index argmax is played.
    """
    state = initial_state(problem) if start is None else start
    traj = Trajectory(problem)
    while state.truth is None:
        player = player_to_move(state)
        pi = agents[int(player)].policy(state)
        move = int(rng.choice(len(pi), p=pi)) if rng is not None else int(np.argmax(pi))
        traj.steps.append(Step(state, player, move, pi))
        state = apply(state, move)
    traj.final = state
    return traj


def self_play_phase(nets: NetworkSet, problem: Problem, cfg: ExperimentConfig,
                    rng: np.random.Generator) -> list[Trajectory]:
    """``cfg.self_plays`` games of the networks against themselves.

    A single tree serves both players; with KeepCounts it lives for the whole
    phase and is dropped afterwards.
    """
    agent = MctsAgent(NetworkEvaluator(nets), cfg.mcts())
    return [play_game(problem, (agent, agent), rng) for _ in range(cfg.self_plays)]


@dataclass
class Rows:
    """Column arrays of training rows."""

    x: np.ndarray
    mask: np.ndarray
    target: np.ndarray
    player: np.ndarray
    z: np.ndarray
    action: np.ndarray
    x_next: np.ndarray
    player_next: np.ndarray
    terminal: np.ndarray

    def __len__(self):
        return len(self.z)

    @classmethod
    def concat(cls, parts: Sequence["Rows"]) -> "Rows":
        return cls(*(np.concatenate([getattr(p, f.name) for p in parts])
                     for f in dataclasses.fields(cls)))


def trajectory_rows(trajs: Sequence[Trajectory], problem: Problem) -> Rows:
    width = n_actions(problem)
    xs, masks, targets, players, zs, actions, xn, pn, term = ([] for _ in range(9))
    for t in trajs:
        z = t.z()
        states = [s.state for s in t.steps] + [t.final]
        for i, st in enumerate(t.steps):
            xs.append(encode_state(st.state))
            masks.append(legal_mask(st.state))
            row = np.zeros(width)
            row[: len(st.pi)] = st.pi
            targets.append(row)
            players.append(int(st.player))
            zs.append(z[i])
            actions.append(st.move)
            nxt = states[i + 1]
            xn.append(encode_state(nxt))
            done = nxt.truth is not None
            term.append(done)
            pn.append(int(st.player) if done else int(player_to_move(nxt)))
    dim = input_dim(problem)
    if not xs:
        empty = np.zeros((0, dim))
        return Rows(empty, np.zeros((0, width), bool), np.zeros((0, width)), np.zeros(0, int),
                    np.zeros(0), np.zeros(0, int), empty.copy(), np.zeros(0, int), np.zeros(0, bool))
    return Rows(np.array(xs), np.array(masks), np.array(targets), np.array(players),
                np.array(zs, dtype=float), np.array(actions), np.array(xn), np.array(pn),
                np.array(term))


class ReplayBuffer:
    """Rows of the most recent ``capacity`` iterations."""

    def __init__(self, capacity: int = 20):
        self.capacity = capacity
        self.batches: deque[tuple[int, Rows]] = deque(maxlen=capacity)

    def push(self, iteration: int, rows: Rows) -> None:
        self.batches.append((iteration, rows))

    @property
    def iterations(self) -> list[int]:
        return [i for i, _ in self.batches]

    def __len__(self) -> int:
        return sum(len(r) for _, r in self.batches)

    def rows(self) -> Rows:
        return Rows.concat([r for _, r in self.batches])


def compute_advantages(nets: NetworkSet, rows: Rows) -> np.ndarray:
    """Advantages under the current value network.

    A move that ends the game is treated as a same-player transition whose
    reward is the mover's outcome, so the advantage is ``z - V(s)``.
    """
    v_s = nets.value(rows.x, rows.player)
    v_next = np.zeros(len(rows))
    live = ~rows.terminal
    if live.any():
        v_next[live] = nets.value(rows.x_next[live], rows.player_next[live])
    same = rows.terminal | (rows.player_next == rows.player)
    return advantage(v_s, v_next, rows.z, rows.terminal, same)


def train_phase(buffer: ReplayBuffer, nets: NetworkSet, cfg: ExperimentConfig,
                rng: np.random.Generator) -> tuple[list[float], list[float]]:
    """Epochs of shuffled minibatch Adam; returns mean losses per epoch."""
    rows = buffer.rows()
    n = len(rows)
    if n == 0:
        raise ValueError("replay buffer is empty")
    ppo = cfg.policy_loss != "cem"
    p_hist, v_hist = [], []
    for _ in range(cfg.epochs):
        adv = compute_advantages(nets, rows) if ppo else None
        perm = rng.permutation(n)
        lp_sum = lv_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = TrainBatch(rows.x[idx], rows.mask[idx], rows.target[idx], rows.player[idx],
                               rows.z[idx], rows.action[idx], None if adv is None else adv[idx])
            lp, lv = nets.train_step(batch, cfg.policy_loss, cfg.lr, cfg.beta, cfg.eps)
            lp_sum += lp * len(idx)
            lv_sum += lv * len(idx)
        p_hist.append(lp_sum / n)
        v_hist.append(lv_sum / n)
    return p_hist, v_hist


# ---------------------------------------------------------------------------
# Fault counting and the arena

def solver_fault_check(traj: Trajectory, solver: Optional[Solver] = None) -> dict[Player, int]:
    """Fault counts for problems without a closed-form oracle.

    A move is a fault when it turns a won position into a lost one and the
    opponent's next move keeps it lost (or the game ends there).
    """
    solver = solver or Solver()
    faults = {Player.PLAYER0: 0, Player.PLAYER1: 0}
    steps = traj.steps
    for i, st in enumerate(steps):
        if solver.value(st.state, st.player) != 1:
            continue
        after = apply(st.state, st.move)
        if solver.value(after, st.player) != -1:
            continue
        if i + 1 < len(steps):
            nxt = steps[i + 1]
            if nxt.player == st.player:
                continue
            caught = solver.value(apply(nxt.state, nxt.move), st.player) == -1
        else:
            caught = outcome_for(traj.final, st.player) < 0
        faults[st.player] += int(caught)
    return faults


def count_faults(traj: Trajectory, solver: Optional[Solver] = None) -> dict[Player, int]:
    if hsr.is_hsr_problem(traj.problem):
        return dict(hsr.fault_check(traj).faults)
    return solver_fault_check(traj, solver)


def arena(new_nets: NetworkSet, old_nets: NetworkSet, problem: Problem, cfg: ExperimentConfig,
          games: Optional[int] = None) -> dict[str, int]:
    """Fault counts of new vs old, each side taking Player0 (Proponent) once."""
    games = cfg.arena_games if games is None else games
    mcfg = cfg.mcts()
    solver = Solver()
    new_ev, old_ev = NetworkEvaluator(new_nets), NetworkEvaluator(old_nets)
    totals = {"faults_newP": 0, "faults_newOP": 0, "faults_oldP": 0, "faults_oldOP": 0}
    for first, second, kp, kop in ((new_ev, old_ev, "faults_newP", "faults_oldOP"),
                                   (old_ev, new_ev, "faults_oldP", "faults_newOP")):
        agents = (MctsAgent(first, mcfg), MctsAgent(second, mcfg))
        for _ in range(games):
            f = count_faults(play_game(problem, agents), solver)
            totals[kp] += f[Player.PLAYER0]
            totals[kop] += f[Player.PLAYER1]
    return totals


@dataclass
class IterationReport:
    iteration: int
    faults: dict[str, int]
    policy_losses: list[float]
    value_losses: list[float]
    seconds: float = 0.0

    @property
    def total_faults(self) -> int:
        return sum(self.faults.values())

    def csv_row(self) -> list[str]:
        return [str(self.iteration)] + [str(self.faults[k]) for k in METRIC_COLUMNS[1:5]] + [
            repr(self.policy_losses[-1]), repr(self.value_losses[-1])]

    def to_json(self) -> dict:
        return {"iter": self.iteration, **self.faults,
                "policy_loss": self.policy_losses[-1], "value_loss": self.value_losses[-1],
                "policy_losses": self.policy_losses, "value_losses": self.value_losses,
                "seconds": self.seconds}


def check_convergence(history: Sequence[IterationReport], window: int = 5) -> bool:
    if len(history) < window:
        return False
    return all(r.total_faults == 0 for r in history[-window:])


def first_zero_iteration(history: Sequence[IterationReport]) -> Optional[int]:
    for r in history:
        if r.total_faults == 0:
            return r.iteration
    return None


@dataclass
class RunResult:
    reports: list[IterationReport]
    converged: bool
    out_dir: Optional[Path]
    nets: NetworkSet

    @property
    def first_zero(self) -> Optional[int]:
        return first_zero_iteration(self.reports)


def run_experiment(cfg: ExperimentConfig, problem: Problem, max_iters: int = 100, seed: int = 0,
                   out_dir: Optional[str | Path] = None, stop: str = "convergence",
                   log: Optional[Callable[[IterationReport], None]] = None) -> RunResult:
    """Iterate self-play, training and the arena.

    ``stop="convergence"`` ends after ``convergence_window`` fault-free
    iterations in a row, ``"first_zero"`` at the first fault-free one and
    ``"never"`` runs all ``max_iters``.
    """
    if stop not in ("convergence", "first_zero", "never"):
        raise ConfigError(f"unknown stop rule {stop!r}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(
            {"experiment": cfg.to_dict(), "seed": seed, "max_iters": max_iters, "stop": stop},
            indent=2, sort_keys=True) + "\n")
        with open(out / "metrics.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(METRIC_COLUMNS)
        (out / "metrics.jsonl").write_text("")
    nets = make_networks(cfg, problem, seed)
    buffer = ReplayBuffer(cfg.replay_iterations)
    reports: list[IterationReport] = []
    converged = False
    for it in range(1, max_iters + 1):
        t0 = time.perf_counter()
        trajs = self_play_phase(nets, problem, cfg, np.random.default_rng([seed, it, 0]))
        buffer.push(it, trajectory_rows(trajs, problem))
        old = nets.copy()
        lp, lv = train_phase(buffer, nets, cfg, np.random.default_rng([seed, it, 1]))
        faults = arena(nets, old, problem, cfg)
        report = IterationReport(it, faults, lp, lv, time.perf_counter() - t0)
        reports.append(report)
        if out is not None:
            nets.save(out / f"iter_{it:03d}.ckpt",
                      meta={"iteration": it, "experiment": cfg.name, "seed": seed,
                            "problem": problem.source or pretty_print(problem)})
            with open(out / "metrics.csv", "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(report.csv_row())
            with open(out / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(report.to_json(), sort_keys=True) + "\n")
        if log is not None:
            log(report)
        converged = check_convergence(reports, cfg.convergence_window)
        if stop == "convergence" and converged or stop == "first_zero" and report.total_faults == 0:
            break
    if out is not None:
        (out / "summary.json").write_text(json.dumps({
            "iterations": len(reports),
            "converged": converged,
            "first_zero_iteration": first_zero_iteration(reports),
            "experiment": cfg.name,
            "seed": seed,
        }, indent=2, sort_keys=True) + "\n")
    return RunResult(reports, converged, out, nets)


__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "IterationReport",
    "ReplayBuffer",
    "Rows",
    "RunResult",
    "Step",
    "Trajectory",
    "arena",
    "check_convergence",
    "compute_advantages",
    "count_faults",
    "first_zero_iteration",
    "make_networks",
    "play_game",
    "run_experiment",
    "self_play_phase",
    "solver_fault_check",
    "train_phase",
    "trajectory_rows",
]
