"""Command-line interface: ``folgame {train,oracle,score,play,eval}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, TextIO

import yaml

from . import hsr
from .fol import And, Exists, FolError, ForAll, Problem, parse_problem
from .mcts import MctsAgent, NetworkEvaluator
from .nn import CheckpointError, NetworkSet
from .score import ScoreError, score_run
from .semgame import (
    GameError,
    Player,
    Solver,
    apply,
    initial_state,
    move_value,
    outcome_for,
    player_to_move,
    role_to_move,
)
from .train import ConfigError, ExperimentConfig, Step, Trajectory, arena, count_faults, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
RUN_KEYS = {"experiment", "problem", "seed", "max_iters", "out", "run_id", "stop"}
EXPERIMENT_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"name"}


# ---------------------------------------------------------------------------
# run configuration files

def load_problem(spec) -> Problem:
    """``{"hsr": [k, q, n]}`` or ``{"file": path}`` or DSL text."""
    if isinstance(spec, str):
        return parse_problem(spec)
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("problem must be {hsr: [k, q, n]} or {file: path}")
    (kind, value), = spec.items()
    if kind == "hsr":
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise ConfigError("problem.hsr needs three integers k, q, n")
        try:
            return hsr.hsr_problem(*(int(v) for v in value))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if kind == "file":
        try:
            return parse_problem(Path(value).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read problem file: {exc}") from exc
    raise ConfigError(f"unknown problem kind {kind!r}")


def effective_config(raw: dict) -> dict:
    """Defaults plus overrides; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - RUN_KEYS - EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    exp = {k: raw[k] for k in EXPERIMENT_KEYS if k in raw}
    cfg = ExperimentConfig(name=raw.get("experiment", "CE_Q_Sep"), **exp)
    out = {
        "experiment": cfg.name,
        "problem": raw.get("problem", {"hsr": [3, 3, 8]}),
        "seed": int(raw.get("seed", 0)),
        "max_iters": int(raw.get("max_iters", 100)),
        "out": str(raw.get("out", "runs")),
        "run_id": raw.get("run_id"),
        "stop": raw.get("stop", "convergence"),
    }
    out.update({k: v for k, v in cfg.to_dict().items() if k != "name"})
    return out


def read_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}") from exc
    return effective_config(raw)


# ---------------------------------------------------------------------------
# commands

def cmd_train(args, out: TextIO) -> int:
    conf = read_config(args.config)
    if args.seed is not None:
        conf["seed"] = args.seed
    if args.out is not None:
        conf["out"] = args.out
    if args.max_iters is not None:
        conf["max_iters"] = args.max_iters
    problem = load_problem(conf["problem"])
    cfg = ExperimentConfig.from_dict(
        {"name": conf["experiment"], **{k: conf[k] for k in EXPERIMENT_KEYS}})
    run_id = conf["run_id"] or f"{cfg.name}_seed{conf['seed']}"
    run_dir = Path(conf["out"]) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "run_config.json").write_text(json.dumps(conf, indent=2, sort_keys=True) + "\n")
    print(json.dumps(conf, sort_keys=True), file=out)

    def log(r):
        print(f"iter {r.iteration}: " + " ".join(f"{k}={v}" for k, v in r.faults.items())
              + f" policy_loss={r.policy_losses[-1]:.4f} value_loss={r.value_losses[-1]:.4f}", file=out)

    res = run_experiment(cfg, problem, conf["max_iters"], conf["seed"], run_dir, conf["stop"], log)
    print(f"done: {len(res.reports)} iterations, converged={res.converged}, "
          f"first_zero={res.first_zero}, run_dir={run_dir}", file=out)
    return EXIT_OK


def cmd_oracle(args, out: TextIO) -> int:
    k, q, n = args.k, args.q, args.n
    try:
        inst = hsr.HsrInstance(k, q, n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    top = hsr.n_max(k, q)
    closed = n <= top
    if not args.no_search:
        searched = Solver(args.node_limit).value(initial_state(hsr.hsr_problem(inst)), Player.PLAYER0) == 1
        if searched != closed:
            raise GameError(f"search ({searched}) disagrees with closed form ({closed})")
    print(f"HSR({k},{q},{n}): {'true' if closed else 'false'}; N({k},{q})={top}", file=out)
    if args.m is not None:
        if not 1 <= args.m < n:
            raise ConfigError(f"m must lie in [1, {n})")
        v = hsr.proponent_correct(k, q, n, args.m)
        print(f"Proponent m={args.m}: {v.value}", file=out)
        for branch in hsr.Branch:
            v = hsr.opponent_correct(k, q, n, args.m, branch)
            name = branch.name.lower().replace("_", " ")
            print(f"Opponent m={args.m} {name}: {v.value}", file=out)
    return EXIT_OK


def cmd_score(args, out: TextIO) -> int:
    res = score_run(args.run_dir, games=args.games, threads=args.threads,
                    include_initial=not args.no_initial)
    for it, e, s in zip(res.iterations, res.elo_new, res.alpharank):
        print(f"iter {it}: elo={e:.1f} alpharank={s:.4f}", file=out)
    print(f"wrote elo.csv, alpharank.csv, payoff.csv to {args.run_dir}", file=out)
    return EXIT_OK


def _load_agent(path: str):
    nets, meta = NetworkSet.load_with_meta(path)
    if not meta.get("problem"):
        raise ConfigError(f"{path}: checkpoint carries no problem")
    problem = parse_problem(meta["problem"])
    cfg = ExperimentConfig(name=meta.get("experiment", "CE_Q_Sep"))
    return nets, problem, cfg


def describe(state) -> str:
    node = state.node
    head = f"{state.problem.predicates[state.pred_id].name}{tuple(state.params)}"
    role = role_to_move(state).value
    if isinstance(node, (Exists, ForAll)):
        kind = "exists" if isinstance(node, Exists) else "forall"
        opts = ", ".join(f"{m}: {node.var}={move_value(state, m)}" for m in range(state.n_actions))
        return f"{head} [{role} picks {kind} {node.var}] {opts}"
    kind = "and" if isinstance(node, And) else "or"
    return f"{head} [{role} picks {kind} branch] 0: left, 1: right"


def parse_move(text: str, state) -> Optional[int]:
    text = text.strip()
    node = state.node
    if "=" in text and isinstance(node, (Exists, ForAll)):
        var, _, val = text.partition("=")
        if var.strip() != node.var:
            return None
        try:
            value = int(val)
        except ValueError:
            return None
        move = value - move_value(state, 0)
    else:
        try:
            move = int(text)
        except ValueError:
            return None
    return move if 0 <= move < state.n_actions else None


class _Human:
    def __init__(self, inp: TextIO, out: TextIO):
        self.inp, self.out = inp, out

    def move(self, state) -> int:
        while True:
            print(describe(state), file=self.out)
            print("your move> ", end="", file=self.out, flush=True)
            line = self.inp.readline()
            if not line:
                raise EOFError("input ended before the game finished")
            move = parse_move(line, state)
            if move is not None:
                return move
            print(f"invalid move {line.strip()!r}; enter 0..{state.n_actions - 1}", file=self.out)


def cmd_play(args, out: TextIO, inp: TextIO) -> int:
    nets, problem, cfg = _load_agent(args.checkpoint)
    human_player = Player.PLAYER0 if args.role == "P" else Player.PLAYER1
    agent = MctsAgent(NetworkEvaluator(nets), cfg.mcts())
    human = _Human(inp, out)
    state = initial_state(problem)
    traj = Trajectory(problem)
    while state.truth is None:
        player = player_to_move(state)
        if player == human_player:
            move = human.move(state)
            pi = None
        else:
            pi = agent.policy(state)
            move = int(pi.argmax())
            print(f"{describe(state)}\nagent plays {move}", file=out)
        traj.steps.append(Step(state, player, move, pi))
        state = apply(state, move)
    traj.final = state
    won = outcome_for(state, human_player) > 0
    print(f"game over: formula is {'true' if state.truth else 'false'}; "
          f"{'you win' if won else 'agent wins'}", file=out)
    if hsr.is_hsr_problem(problem):
        record = hsr.fault_check(traj)
        for ann in record.moves:
            who = "you" if ann.player == human_player else "agent"
            flag = " FAULT" if ann.fault else ""
            print(f"  {who} ({ann.role.value}) move {ann.move}: {ann.verdict.value}{flag}", file=out)
    else:
        faults = count_faults(traj)
        print(f"  faults: you={faults[human_player]} agent={faults[human_player.other]}", file=out)
    return EXIT_OK


def cmd_eval(args, out: TextIO) -> int:
    new, problem, cfg = _load_agent(args.new)
    old, problem_old, _ = _load_agent(args.old)
    if problem != problem_old:
        raise ConfigError("checkpoints were trained on different problems")
    faults = arena(new, old, problem, cfg, games=args.games)
    print(json.dumps(faults, sort_keys=True), file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="folgame", description=__doc__)
    ap.add_argument("--seed", type=int, default=None, help="override the run seed")
    ap.add_argument("--out", default=None, help="output directory for runs")
    ap.add_argument("--threads", type=int, default=1, help="workers for payoff tables")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment from a YAML/JSON config")
    p.add_argument("config")
    p.add_argument("--max-iters", type=int, default=None)

    p = sub.add_parser("oracle", help="closed-form and search verdicts for HSR")
    p.add_argument("k", type=int)
    p.add_argument("q", type=int)
    p.add_argument("n", type=int)
    p.add_argument("m", type=int, nargs="?")
    p.add_argument("--no-search", action="store_true", help="skip the exhaustive check")
    p.add_argument("--node-limit", type=int, default=2_000_000)

    p = sub.add_parser("score", help="Elo and alpha-Rank series of a run")
    p.add_argument("run_dir")
    p.add_argument("--games", type=int, default=20)
    p.add_argument("--no-initial", action="store_true", help="leave out the untrained networks")

    p = sub.add_parser("play", help="play against a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--role", choices=("P", "OP"), default="P")

    p = sub.add_parser("eval", help="arena fault counts of two checkpoints")
    p.add_argument("new")
    p.add_argument("old")
    p.add_argument("--games", type=int, default=20)
    return ap


def main(argv: Optional[list[str]] = None, out: TextIO = sys.stdout, inp: TextIO = sys.stdin) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            return cmd_train(args, out)
        if args.command == "oracle":
            return cmd_oracle(args, out)
        if args.command == "score":
            return cmd_score(args, out)
        if args.command == "play":
            return cmd_play(args, out, inp)
        return cmd_eval(args, out)
    except (ConfigError, FolError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GameError, ScoreError, CheckpointError, OSError, EOFError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
