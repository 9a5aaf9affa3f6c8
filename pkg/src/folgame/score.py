"""Ground-truth-free scoring of training runs: Elo and alpha-Rank.

Checkpoints meet arena-style: argmax move choice, search trees handled by the
run's retention mode and kept across the games of one pairing. With fresh
trees every game of a pairing is identical, so it is played once and counted
``games`` times.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .fol import Problem, parse_problem, pretty_print
from .mcts import MctsAgent, MctsConfig, NetworkEvaluator, Retention
from .nn import NetworkSet
from .semgame import Player, outcome_for
from .train import ExperimentConfig, make_networks, play_game

ALPHAS = (0.1, 1.0, 10.0, math.inf)


class ScoreError(Exception):
    pass


# ---------------------------------------------------------------------------
# Elo

@dataclass
class EloState:
    ratings: dict[str, float] = field(default_factory=dict)
    k: float = 32.0
    initial: float = 1000.0

    def add(self, name: str, rating: Optional[float] = None) -> None:
        self.ratings[name] = self.initial if rating is None else float(rating)

    def __getitem__(self, name: str) -> float:
        return self.ratings[name]


def elo_expected(ra: float, rb: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((rb - ra) / 400.0))


def elo_match_update(state: EloState, a: str, b: str, score: float, games: int) -> EloState:
    """One update for a whole match: a scored ``score`` points in ``games`` games."""
    for name in (a, b):
        if name not in state.ratings:
            raise KeyError(f"unknown Elo entity {name!r}")
    if not 0 <= score <= games:
        raise ValueError("match score out of range")
    delta = state.k * (score - games * elo_expected(state.ratings[a], state.ratings[b]))
    state.ratings[a] += delta
    state.ratings[b] -= delta
    return state


def elo_update(state: EloState, a: str, b: str, result: float) -> EloState:
    """Update after one game; ``result`` is a's score (1 win, 0.5 draw, 0 loss)."""
    for name in (a, b):
        if name not in state.ratings:
            raise KeyError(f"unknown Elo entity {name!r}")
    if result not in (0, 0.5, 1):
        raise ValueError(f"result must be 0, 0.5 or 1, got {result}")
    delta = state.k * (result - elo_expected(state.ratings[a], state.ratings[b]))
    state.ratings[a] += delta
    state.ratings[b] -= delta
    return state


# ---------------------------------------------------------------------------
# payoff tables

@dataclass
class PayoffTable:
    """``M[i, j]``: mean Proponent-side outcome of checkpoint i against j."""

    M: np.ndarray
    games: int

    def __post_init__(self):
        if self.M.ndim != 2 or self.M.shape[0] != self.M.shape[1]:
            raise ValueError("payoff table must be square")
        if np.any(np.abs(self.M) > 1):
            raise ValueError("payoff entries must lie in [-1, 1]")

    def sub(self, n: int) -> "PayoffTable":
        return PayoffTable(self.M[:n, :n].copy(), self.games)


def _as_nets(ckpt) -> NetworkSet:
    return ckpt if isinstance(ckpt, NetworkSet) else NetworkSet.load(ckpt)


def play_cell(p_eval, op_eval, problem: Problem, mcfg: MctsConfig, games: int) -> float:
    """Mean Proponent-side (Player0) outcome over ``games`` argmax games."""
    agents = (MctsAgent(p_eval, mcfg), MctsAgent(op_eval, mcfg))
    n = 1 if mcfg.retention is Retention.FRESH else games
    total = sum(outcome_for(play_game(problem, agents).final, Player.PLAYER0) for _ in range(n))
    return total / n


def _payoff_row(args) -> list[float]:
    i, ckpts, source, mcfg, games = args
    problem = parse_problem(source)
    evals = [NetworkEvaluator(_as_nets(c)) for c in ckpts]
    return [play_cell(evals[i], evals[j], problem, mcfg, games) for j in range(len(evals))]


def build_payoff_table(checkpoints: Sequence, problem: Problem, games: int = 20,
                       mcfg: Optional[MctsConfig] = None, threads: int = 1) -> PayoffTable:
    """Play every ordered pair of checkpoints (self-pairs included)."""
    if len(checkpoints) < 1:
        raise ScoreError("need at least one checkpoint")
    if games < 1:
        raise ScoreError("games must be >= 1")
    mcfg = mcfg or MctsConfig()
    try:
        nets = [_as_nets(c) for c in checkpoints]
    except (OSError, ValueError) as exc:
        raise ScoreError(f"cannot load checkpoint: {exc}") from exc
    n = len(nets)
    if threads > 1 and n > 1:
        source = problem.source or pretty_print(problem)
        jobs = [(i, nets, source, mcfg, games) for i in range(n)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_payoff_row, jobs))
    else:
        evals = [NetworkEvaluator(x) for x in nets]
        rows = [[play_cell(evals[i], evals[j], problem, mcfg, games) for j in range(n)]
                for i in range(n)]
    return PayoffTable(np.array(rows, dtype=float), games)


# ---------------------------------------------------------------------------
# alpha-Rank

def fixation_probability(delta: np.ndarray | float, alpha: float, m: int) -> np.ndarray:
    """Fermi-process fixation probability of a mutant with payoff gain ``delta``."""
    d = np.asarray(delta, dtype=float)
    out = np.full(d.shape, 1.0 / m)
    if math.isinf(alpha):
        out = np.where(d > 0, 1.0, np.where(d < 0, 0.0, out))
        return out if out.ndim else float(out)
    x = alpha * d
    pos, neg = x > 0, x < 0
    xp = np.where(pos, x, 1.0)
    out = np.where(pos, -np.expm1(-xp) / -np.expm1(-m * xp), out)
    y = np.where(neg, -x, 1.0)
    out = np.where(neg, np.exp(-(m - 1) * y) * (-np.expm1(-y)) / (-np.expm1(-m * y)), out)
    return out if out.ndim else float(out)


def _clone_classes(vectors: np.ndarray) -> list[int]:
    """For each index, the newest index with an identical vector."""
    rep = list(range(len(vectors)))
    for i in range(len(vectors)):
        for j in range(len(vectors) - 1, i, -1):
            if np.array_equal(vectors[i], vectors[j]):
                rep[i] = j
                break
    return rep


@dataclass
class AlphaRankResult:
    pi_p: np.ndarray  # score per checkpoint (Proponent-population mass)
    pi_op: np.ndarray
    stationary: np.ndarray  # over joint (P, OP) profiles of the reduced game
    alpha: float
    converged: bool
    iterations: int

    @property
    def scores(self) -> np.ndarray:
        return self.pi_p


def transition_matrix(M: np.ndarray, alpha: float, m: int) -> np.ndarray:
    """Single-mutation Markov chain over joint profiles (i, j), flattened i*nq + j."""
    n_p, n_q = M.shape
    k = n_p * n_q
    eta = 1.0 / max((n_p - 1) + (n_q - 1), 1)
    C = np.zeros((k, k))
    for i in range(n_p):
        for j in range(n_q):
            s = i * n_q + j
            for i2 in range(n_p):
                if i2 != i:
                    C[s, i2 * n_q + j] = eta * fixation_probability(M[i2, j] - M[i, j], alpha, m)
            for j2 in range(n_q):
                if j2 != j:
                    # the Opponent population is paid -M
                    C[s, i * n_q + j2] = eta * fixation_probability(M[i, j] - M[i, j2], alpha, m)
            C[s, s] = 1.0 - C[s].sum()
    return C


def stationary_distribution(C: np.ndarray, tol: float = 1e-10, max_squarings: int = 64) -> tuple[np.ndarray, bool, int]:
    """Power iteration, accelerated by squaring the transition matrix.

    Step t applies ``C^(2^t)``; stops once successive iterates differ by less
    than ``tol`` in L1.
    """
    k = C.shape[0]
    pi = np.full(k, 1.0 / k)
    P = C.copy()
    for it in range(1, max_squarings + 1):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol and np.abs(nxt @ C - nxt).sum() < tol:
            return nxt, True, it
        pi = nxt
        P = P @ P
        P /= P.sum(axis=1, keepdims=True)
    return pi, False, max_squarings


def alpha_rank(M: np.ndarray, alpha: float = math.inf, m: int = 50,
               dedupe_clones: bool = True) -> AlphaRankResult:
    """Two-population alpha-Rank of a Proponent/Opponent payoff table.

    With ``dedupe_clones`` strategies with identical payoff vectors are
    merged into the newest of them before ranking, so copies of one strategy
    do not split its mass; merged-away checkpoints score 0.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ValueError("payoff table must be a finite matrix")
    n_p, n_q = M.shape
    if dedupe_clones:
        rep_p = _clone_classes(M)
        rep_q = _clone_classes(M.T)
    else:
        rep_p, rep_q = list(range(n_p)), list(range(n_q))
    keep_p = sorted(set(rep_p))
    keep_q = sorted(set(rep_q))
    R = M[np.ix_(keep_p, keep_q)]
    if R.size == 1:
        stat, ok, iters = np.ones(1), True, 0
    else:
        stat, ok, iters = stationary_distribution(transition_matrix(R, alpha, m))
    joint = stat.reshape(len(keep_p), len(keep_q))
    pi_p, pi_q = np.zeros(n_p), np.zeros(n_q)
    pi_p[keep_p] = joint.sum(axis=1)
    pi_q[keep_q] = joint.sum(axis=0)
    return AlphaRankResult(pi_p, pi_q, stat, alpha, ok, iters)


def alpha_rank_sweep(M: np.ndarray, alphas: Sequence[float] = ALPHAS, m: int = 50,
                     dedupe_clones: bool = True) -> AlphaRankResult:
    """Result for the largest alpha whose power iteration converged."""
    best = None
    for a in sorted(alphas):
        res = alpha_rank(M, a, m, dedupe_clones)
        if res.converged:
            best = res
    if best is None:
        raise ScoreError("alpha-Rank power iteration did not converge for any alpha")
    return best


# ---------------------------------------------------------------------------
# scoring a run directory

@dataclass
class ScoreResult:
    iterations: list[int]
    elo_new: list[float]
    elo_prev: list[float]
    alpharank: list[float]
    alpha: list[float]
    payoff: PayoffTable


def elo_series(table: PayoffTable, iterations: Sequence[int], k: float = 32.0,
               initial: float = 1000.0) -> tuple[list[float], list[float]]:
    """Sequential new-vs-previous Elo over consecutive checkpoints.

    The new checkpoint starts at its predecessor's rating and plays
    ``games`` games on each side; ratings move once per match.
    """
    st = EloState(k=k, initial=initial)
    st.add(str(iterations[0]))
    new, prev = [initial], [initial]
    g = table.games
    for t in range(1, len(iterations)):
        a, b = str(iterations[t]), str(iterations[t - 1])
        st.add(a, st[b])
        wins = g * (1 + table.M[t, t - 1]) / 2 + g * (1 - table.M[t - 1, t]) / 2
        elo_match_update(st, a, b, float(wins), 2 * g)
        new.append(st[a])
        prev.append(st[b])
    return new, prev


def _run_checkpoints(run_dir: Path) -> list[tuple[int, Path]]:
    found = sorted(run_dir.glob("iter_*.ckpt"))
    if not found:
        raise ScoreError(f"no checkpoints in {run_dir}")
    return [(int(p.stem.split("_")[1]), p) for p in found]


def score_run(run_dir: str | Path, games: int = 20, threads: int = 1,
              alphas: Sequence[float] = ALPHAS, m: int = 50, include_initial: bool = True,
              dedupe_clones: bool = True, write: bool = True) -> ScoreResult:
    """Elo and alpha-Rank series for the checkpoints of a run directory.

    With ``include_initial`` the untrained networks (rebuilt from the run's
    config and seed) enter as iteration 0.
    """
    run_dir = Path(run_dir)
    ckpts = _run_checkpoints(run_dir)
    nets0, meta = NetworkSet.load_with_meta(ckpts[0][1])
    source = meta.get("problem")
    if not source:
        raise ScoreError("checkpoint carries no problem source")
    problem = parse_problem(source)
    cfg_path = run_dir / "config.json"
    if cfg_path.exists():
        conf = json.loads(cfg_path.read_text())
        cfg, seed = ExperimentConfig.from_dict(conf["experiment"]), conf["seed"]
    else:
        cfg, seed = ExperimentConfig(name=meta.get("experiment", "CE_Q_Sep")), meta.get("seed", 0)
    iters = [i for i, _ in ckpts]
    sources: list = [p for _, p in ckpts]
    if include_initial:
        iters = [0] + iters
        sources = [make_networks(cfg, problem, seed)] + sources
    table = build_payoff_table(sources, problem, games, cfg.mcts(), threads)
    elo_new, elo_prev = elo_series(table, iters)
    scores, used = [], []
    for t in range(len(iters)):
        res = alpha_rank_sweep(table.M[: t + 1, : t + 1], alphas, m, dedupe_clones)
        scores.append(float(res.pi_p[t]))
        used.append(res.alpha)
    result = ScoreResult(iters, elo_new, elo_prev, scores, used, table)
    if write:
        write_scores(run_dir, result)
    return result


def write_scores(run_dir: Path, res: ScoreResult) -> None:
    with open(run_dir / "elo.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "rating_new", "rating_prev"])
        for it, a, b in zip(res.iterations, res.elo_new, res.elo_prev):
            w.writerow([it, repr(a), repr(b)])
    with open(run_dir / "alpharank.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "score"])
        for it, s in zip(res.iterations, res.alpharank):
            w.writerow([it, repr(s)])
    with open(run_dir / "payoff.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "mean_outcome", "games"])
        for a, ia in enumerate(res.iterations):
            for b, ib in enumerate(res.iterations):
                w.writerow([ia, ib, repr(float(res.payoff.M[a, b])), res.payoff.games])


__all__ = [
    "ALPHAS",
    "AlphaRankResult",
    "EloState",
    "PayoffTable",
    "ScoreError",
    "ScoreResult",
    "alpha_rank",
    "alpha_rank_sweep",
    "build_payoff_table",
    "elo_expected",
    "elo_match_update",
    "elo_series",
    "elo_update",
    "fixation_probability",
    "play_cell",
    "score_run",
    "stationary_distribution",
    "transition_matrix",
]
