from __future__ import annotations

import numpy as np
import pytest

from folgame.hsr import hsr_problem, proponent_range
from folgame.mcts import Retention
from folgame.nn import kl_divergence
from folgame.semgame import Player, apply, initial_state, outcome_for, player_to_move
from folgame.train import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    IterationReport,
    ReplayBuffer,
    Rows,
    arena,
    check_convergence,
    compute_advantages,
    count_faults,
    make_networks,
    play_game,
    run_experiment,
    self_play_phase,
    train_phase,
    trajectory_rows,
)

TINY = dict(self_plays=6, num_simulations=6, epochs=2, arena_games=2, trunk=(8,), opponent_trunk=(6,))


def test_flag_table():
    table = {
        "AZ": (Retention.FRESH, False, False, False, "cem"),
        "CE": (Retention.KEEP_COUNTS, False, False, False, "cem"),
        "CE_Sep": (Retention.KEEP_COUNTS, False, True, False, "cem"),
        "CE_Q_Sep": (Retention.KEEP_COUNTS, True, True, False, "cem"),
        "PPO_CLIP_Sep": (Retention.KEEP_COUNTS, True, True, False, "ppo_clip"),
        "PPO_KL_Sep": (Retention.KEEP_COUNTS, True, True, False, "ppo_kl"),
        "PPO_KL_Sep_2NN": (Retention.KEEP_COUNTS, True, True, True, "ppo_kl"),
    }
    assert set(table) == set(EXPERIMENTS)
    for name, flags in table.items():
        c = ExperimentConfig(name=name)
        assert (c.retention, c.q_injection, c.separate, c.per_player, c.policy_loss) == flags


def test_defaults_and_validation():
    c = ExperimentConfig()
    assert (c.lr, c.batch_size, c.epochs, c.num_simulations, c.self_plays) == (1e-3, 64, 10, 25, 100)
    assert (c.beta, c.eps, c.arena_games, c.convergence_window, c.replay_iterations) == (1.0, 0.2, 20, 5, 20)
    with pytest.raises(ConfigError, match="AZ"):
        ExperimentConfig(name="XY")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"name": "CE", "bogus": 1})
    assert ExperimentConfig.from_dict(c.to_dict()) == c


def test_self_play_short_games_and_labels():
    p = hsr_problem(1, 1, 2)
    cfg = ExperimentConfig(name="CE", **TINY)
    trajs = self_play_phase(make_networks(cfg, p, 0), p, cfg, np.random.default_rng(0))
    assert len(trajs) == 6
    for t in trajs:
        assert len(t.steps) <= 2
        s = initial_state(p)
        for st in t.steps:
            assert st.state == s
            s = apply(s, st.move)
        assert s == t.final
        assert t.z() == [outcome_for(t.final, st.player) for st in t.steps]


def test_self_play_deterministic():
    p = hsr_problem(2, 2, 4)
    cfg = ExperimentConfig(name="CE_Q_Sep", **TINY)
    runs = [self_play_phase(make_networks(cfg, p, 1), p, cfg, np.random.default_rng(5)) for _ in range(2)]
    assert [[s.move for s in t.steps] for t in runs[0]] == [[s.move for s in t.steps] for t in runs[1]]


def _rows(n, it):
    z = np.full(n, float(it))
    return Rows(np.zeros((n, 2)), np.ones((n, 2), bool), np.full((n, 2), 0.5), np.zeros(n, int), z,
                np.zeros(n, int), np.zeros((n, 2)), np.zeros(n, int), np.ones(n, bool))


def test_buffer_eviction():
    buf = ReplayBuffer(20)
    for it in range(1, 26):
        buf.push(it, _rows(3, it))
    assert buf.iterations == list(range(6, 26))
    assert len(buf) == 60
    assert set(buf.rows().z) == set(float(i) for i in range(6, 26))


def test_train_phase_cem_moves_toward_target():
    p = hsr_problem(3, 3, 8)
    cfg = ExperimentConfig(name="CE", epochs=10, trunk=(8,))
    nets = make_networks(cfg, p, 0)
    traj = play_game(p, [Fixed(), Fixed()])
    rows = trajectory_rows([traj], p)
    one = Rows(*(getattr(rows, f)[:1] for f in Rows.__dataclass_fields__))
    buf = ReplayBuffer()
    buf.push(1, one)
    before = kl_divergence(one.target, nets.predict(one.x, one.mask, one.player)[0])[0]
    lp, _ = train_phase(buf, nets, cfg, np.random.default_rng(0))
    after = kl_divergence(one.target, nets.predict(one.x, one.mask, one.player)[0])[0]
    assert after < before and lp[-1] < lp[0]


class Fixed:
    def policy(self, state):
        pi = np.full(state.n_actions, 0.5 / state.n_actions)
        pi[0] += 0.5
        return pi


def test_ppo_first_epoch_loss_is_minus_mean_advantage():
    p = hsr_problem(2, 2, 4)
    cfg = ExperimentConfig(name="PPO_KL_Sep", epochs=1, batch_size=10_000, trunk=(8,))
    nets = make_networks(cfg, p, 0)
    trajs = self_play_phase(nets, p, ExperimentConfig(name="PPO_KL_Sep", **TINY), np.random.default_rng(0))
    rows = trajectory_rows(trajs, p)
    rows.target[:] = nets.predict(rows.x, rows.mask, rows.player)[0]
    adv = compute_advantages(nets, rows)
    buf = ReplayBuffer()
    buf.push(1, rows)
    lp, _ = train_phase(buf, nets, cfg, np.random.default_rng(0))
    assert lp[0] == pytest.approx(-adv.mean(), abs=1e-9)


def test_per_player_rows_only_train_their_net():
    p = hsr_problem(2, 2, 4)
    cfg = ExperimentConfig(name="PPO_KL_Sep_2NN", **TINY)
    nets = make_networks(cfg, p, 0)
    rows = trajectory_rows(self_play_phase(nets, p, cfg, np.random.default_rng(0)), p)
    keep = rows.player == int(Player.PLAYER0)
    only0 = Rows(*(getattr(rows, f)[keep] for f in Rows.__dataclass_fields__))
    frozen = {k: v.copy() for k, v in nets.nets[1].params.items()}
    buf = ReplayBuffer()
    buf.push(1, only0)
    train_phase(buf, nets, cfg, np.random.default_rng(0))
    assert all(np.array_equal(frozen[k], nets.nets[1].params[k]) for k in frozen)


def test_check_convergence():
    def rep(i, f):
        return IterationReport(i, {"faults_newP": f, "faults_newOP": 0, "faults_oldP": 0, "faults_oldOP": 0}, [0.0], [0.0])
    assert not check_convergence([])
    assert check_convergence([rep(i, 0) for i in range(5)])
    assert not check_convergence([rep(i, 0) for i in range(4)] + [rep(4, 1)])
    assert check_convergence([rep(0, 3)] + [rep(i, 0) for i in range(1, 6)])


class OracleAgent:
    def policy(self, state):
        k, q, n = state.params
        pi = np.zeros(state.n_actions)
        lo, hi = proponent_range(k, q, n)
        good = [m - 1 for m in range(max(lo, 1), min(hi, n - 1) + 1)]
        pi[good[0] if good else 0] = 1.0
        return pi


class RandomAgent:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def policy(self, state):
        pi = np.zeros(state.n_actions)
        pi[self.rng.integers(state.n_actions)] = 1.0
        return pi


def test_random_proponent_accrues_faults():
    p = hsr_problem(3, 3, 8)
    total = sum(count_faults(play_game(p, [RandomAgent(s), OracleAgentOP()]))[Player.PLAYER0] for s in range(20))
    assert total > 0


class OracleAgentOP:
    """Opponent that always picks a branch that is false for the Proponent, if any."""

    def policy(self, state):
        from folgame.hsr import correct_moves
        pi = np.zeros(state.n_actions)
        good = correct_moves(state)
        pi[good[0] if good else 0] = 1.0
        return pi


def test_forced_loss_proponent_never_faulted():
    p = hsr_problem(3, 3, 9)
    for s in range(10):
        f = count_faults(play_game(p, [RandomAgent(s), OracleAgentOP()]))
        assert f[Player.PLAYER0] == 0


def test_arena_identical_nets_on_solved_instance():
    p = hsr_problem(1, 1, 2)
    cfg = ExperimentConfig(name="CE", **TINY)
    nets = make_networks(cfg, p, 0)
    assert arena(nets, nets.copy(), p, cfg) == {"faults_newP": 0, "faults_newOP": 0, "faults_oldP": 0, "faults_oldOP": 0}


def test_run_experiment_outputs(tmp_path):
    p = hsr_problem(2, 2, 4)
    cfg = ExperimentConfig(name="CE_Q_Sep", **TINY)
    assert run_experiment(cfg, p, 0, 0).reports == []
    res = run_experiment(cfg, p, 3, 0, tmp_path / "r", stop="never")
    assert len(res.reports) == 3
    assert sorted(x.name for x in (tmp_path / "r").glob("iter_*.ckpt")) == ["iter_001.ckpt", "iter_002.ckpt", "iter_003.ckpt"]
    lines = (tmp_path / "r" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "iter,faults_newP,faults_newOP,faults_oldP,faults_oldOP,policy_loss,value_loss"
    assert len(lines) == 4
    res2 = run_experiment(cfg, p, 3, 0, tmp_path / "r2", stop="never")
    assert (tmp_path / "r2" / "metrics.csv").read_bytes() == (tmp_path / "r" / "metrics.csv").read_bytes()
