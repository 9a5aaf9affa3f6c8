"""Policy/value MLPs in numpy with hand-derived gradients.

Hidden layers use ReLU, the policy head a masked softmax over ``n_actions``
slots and the value head tanh. Two wirings per player:

* shared heads: one trunk feeding both heads
* separate: an independent policy MLP and value MLP

and two player wirings: one network set shared by both players, or one per
player. Losses return ``(loss, dlogits)`` / ``(loss, dpre)`` so the network
can backpropagate them; every loss is something to *minimise*.
"""
from __future__ import annotations

import copy
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"FGNN"
CHECKPOINT_VERSION = 1
LOG_CLAMP = 1e-12


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    n_actions: int
    trunk: tuple[int, ...] = (128, 128)
    separate: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.n_actions < 1 or any(w < 1 for w in self.trunk):
            raise ValueError(f"all widths must be >= 1: {self}")

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Parameter names and shapes in declaration order."""
        out = []
        towers = [("policy_trunk", ("policy",)), ("value_trunk", ("value",))] if self.separate \
            else [("trunk", ("policy", "value"))]
        for prefix, heads in towers:
            fan_in = self.input_dim
            for i, width in enumerate(self.trunk):
                out.append((f"{prefix}.{i}.W", (fan_in, width)))
                out.append((f"{prefix}.{i}.b", (width,)))
                fan_in = width
            for head in heads:
                width = self.n_actions if head == "policy" else 1
                out.append((f"{head}.W", (fan_in, width)))
                out.append((f"{head}.b", (width,)))
        return out


def init_params(cfg: MlpConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.shapes():
        if name.endswith(".W"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not mask.any(axis=-1).all():
        raise ValueError("every row of the legality mask needs at least one legal action")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Forward:
    probs: Optional[np.ndarray]
    value: Optional[np.ndarray]
    logits: Optional[np.ndarray]
    acts: dict[str, list[np.ndarray]]


class PolicyValueNet:
    """One policy/value network (either wiring) and its parameters."""

    def __init__(self, cfg: MlpConfig, seed: int = 0, params: Optional[dict[str, np.ndarray]] = None):
        self.cfg = cfg
        self.seed = seed
        self.params = init_params(cfg, seed) if params is None else params

    @classmethod
    def zeros(cls, cfg: MlpConfig) -> "PolicyValueNet":
        return cls(cfg, params={name: np.zeros(shape) for name, shape in cfg.shapes()})

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _trunk(self, prefix: str, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        h = x
        for i in range(len(self.cfg.trunk)):
            h = np.maximum(h @ self.params[f"{prefix}.{i}.W"] + self.params[f"{prefix}.{i}.b"], 0.0)
            acts.append(h)
        return acts

    def forward(self, x: np.ndarray, mask: Optional[np.ndarray] = None,
                policy: bool = True, value: bool = True) -> Forward:
        p = self.params
        acts = {}
        probs = logits = v = None
        if self.cfg.separate:
            if policy:
                acts["policy_trunk"] = self._trunk("policy_trunk", x)
            if value:
                acts["value_trunk"] = self._trunk("value_trunk", x)
            hp = acts.get("policy_trunk", [None])[-1]
            hv = acts.get("value_trunk", [None])[-1]
        else:
            acts["trunk"] = self._trunk("trunk", x)
            hp = hv = acts["trunk"][-1]
        if policy:
            logits = hp @ p["policy.W"] + p["policy.b"]
            if mask is None:
                mask = np.ones_like(logits, dtype=bool)
            probs = masked_softmax(logits, mask)
        if value:
            v = np.tanh(hv @ p["value.W"] + p["value.b"])[:, 0]
        return Forward(probs, v, logits, acts)

    def _trunk_backward(self, prefix: str, acts: list[np.ndarray], dh: np.ndarray,
                        grads: dict[str, np.ndarray]) -> None:
        for i in reversed(range(len(self.cfg.trunk))):
            dz = dh * (acts[i + 1] > 0)
            grads[f"{prefix}.{i}.W"] = acts[i].T @ dz
            grads[f"{prefix}.{i}.b"] = dz.sum(axis=0)
            if i > 0:
                dh = dz @ self.params[f"{prefix}.{i}.W"].T

    def backward(self, fwd: Forward, dlogits: Optional[np.ndarray],
                 dvalue_pre: Optional[np.ndarray]) -> dict[str, np.ndarray]:
        """Gradients of a loss given its derivative wrt logits and value pre-activation."""
        p = self.params
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}
        if self.cfg.separate:
            if dlogits is not None:
                hp = fwd.acts["policy_trunk"]
                grads["policy.W"] = hp[-1].T @ dlogits
                grads["policy.b"] = dlogits.sum(axis=0)
                self._trunk_backward("policy_trunk", hp, dlogits @ p["policy.W"].T, grads)
            if dvalue_pre is not None:
                hv = fwd.acts["value_trunk"]
                dv = dvalue_pre[:, None]
                grads["value.W"] = hv[-1].T @ dv
                grads["value.b"] = dv.sum(axis=0)
                self._trunk_backward("value_trunk", hv, dv @ p["value.W"].T, grads)
        else:
            acts = fwd.acts["trunk"]
            dh = np.zeros_like(acts[-1])
            if dlogits is not None:
                grads["policy.W"] = acts[-1].T @ dlogits
                grads["policy.b"] = dlogits.sum(axis=0)
                dh = dh + dlogits @ p["policy.W"].T
            if dvalue_pre is not None:
                dv = dvalue_pre[:, None]
                grads["value.W"] = acts[-1].T @ dv
                grads["value.b"] = dv.sum(axis=0)
                dh = dh + dv @ p["value.W"].T
            self._trunk_backward("trunk", acts, dh, grads)
        return grads


def forward_policy(net: PolicyValueNet, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return net.forward(np.atleast_2d(x), np.atleast_2d(mask), value=False).probs


def forward_value(net: PolicyValueNet, x: np.ndarray) -> np.ndarray:
    return net.forward(np.atleast_2d(x), policy=False).value


# ---------------------------------------------------------------------------
# Losses

def loss_cem(probs: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy ``-sum_a target * log(probs)``, averaged over the batch."""
    b = probs.shape[0]
    loss = -np.sum(target * np.log(np.maximum(probs, LOG_CLAMP))) / b
    dlogits = (probs * target.sum(axis=1, keepdims=True) - target) / b
    return float(loss), dlogits


def _ratio(probs, target, actions):
    rows = np.arange(len(actions))
    denom = target[rows, actions]
    if np.any(denom <= 0):
        raise ZeroDivisionError("behaviour probability of a sampled action is zero")
    return probs[rows, actions] / denom


def _dratio_dlogits(probs, actions, ratio):
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(actions)), actions] = 1.0
    return ratio[:, None] * (onehot - probs)


def loss_ppo_clip(probs, target, actions, adv, eps: float = 0.2) -> tuple[float, np.ndarray]:
    """Negated clipped surrogate; ratio = pi_theta(a) / pi_hat(a)."""
    b = probs.shape[0]
    r = _ratio(probs, target, actions)
    unclipped = r * adv
    clipped = np.clip(r, 1.0 - eps, 1.0 + eps) * adv
    objective = np.minimum(unclipped, clipped)
    dobj_dr = np.where(unclipped <= clipped, adv, 0.0)
    dlogits = -(dobj_dr[:, None] * _dratio_dlogits(probs, actions, r)) / b
    return float(-objective.mean()), dlogits


def kl_divergence(target: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Row-wise KL[target || probs] over the support of ``target``."""
    safe_t = np.where(target > 0, target, 1.0)
    return np.sum(np.where(target > 0, target * (np.log(safe_t) - np.log(np.maximum(probs, LOG_CLAMP))), 0.0),
                  axis=1)


def loss_ppo_kl(probs, target, actions, adv, beta: float = 1.0) -> tuple[float, np.ndarray]:
    """Negated ``ratio * adv - beta * KL[pi_hat, pi_theta]``."""
    b = probs.shape[0]
    r = _ratio(probs, target, actions)
    objective = r * adv - beta * kl_divergence(target, probs)
    dkl = probs * target.sum(axis=1, keepdims=True) - target
    dobj = adv[:, None] * _dratio_dlogits(probs, actions, r) - beta * dkl
    return float(-objective.mean()), -dobj / b


def loss_ppo(probs, target, actions, adv, variant: str = "kl", eps: float = 0.2, beta: float = 1.0):
    if variant == "clip":
        return loss_ppo_clip(probs, target, actions, adv, eps)
    if variant == "kl":
        return loss_ppo_kl(probs, target, actions, adv, beta)
    raise ValueError(f"unknown PPO variant {variant!r}")


def loss_value(v: np.ndarray, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error; the gradient is wrt the pre-tanh activation."""
    b = v.shape[0]
    diff = v - z
    dpre = 2.0 * diff / b * (1.0 - v * v)
    return float(np.mean(diff * diff)), dpre


def advantage(v_s, v_next, reward, terminal, same_player):
    """Advantage of a transition under the current value estimates.

    Values are from the perspective of the player to move at each state.
    ``same_player`` says whether the player to move after the transition is
    the one who just moved.
    """
    v_s, v_next, reward = np.asarray(v_s, float), np.asarray(v_next, float), np.asarray(reward, float)
    terminal, same_player = np.asarray(terminal, bool), np.asarray(same_player, bool)
    at_end = np.where(same_player, -v_s + reward, -v_s - reward)
    ongoing = np.where(same_player, v_next - v_s, -v_next - v_s)
    out = np.where(terminal, at_end, ongoing)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3) -> dict[str, np.ndarray]:
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


# ---------------------------------------------------------------------------
# Network sets (wiring across players) and checkpoints

@dataclass
class TrainBatch:
    x: np.ndarray
    mask: np.ndarray
    target: np.ndarray  # empirical policy, zero off the mask
    player: np.ndarray
    z: np.ndarray
    action: np.ndarray
    adv: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.z)

    def take(self, idx) -> "TrainBatch":
        adv = None if self.adv is None else self.adv[idx]
        return TrainBatch(self.x[idx], self.mask[idx], self.target[idx], self.player[idx],
                          self.z[idx], self.action[idx], adv)


def batch_loss(net: PolicyValueNet, batch: TrainBatch, policy_loss: str = "cem",
               beta: float = 1.0, eps: float = 0.2):
    """Policy loss, value loss and summed gradients for one network."""
    fwd = net.forward(batch.x, batch.mask)
    if policy_loss == "cem":
        lp, dlogits = loss_cem(fwd.probs, batch.target)
    elif policy_loss in ("ppo_clip", "ppo_kl"):
        lp, dlogits = loss_ppo(fwd.probs, batch.target, batch.action, batch.adv,
                               variant=policy_loss[4:], eps=eps, beta=beta)
    else:
        raise ValueError(f"unknown policy loss {policy_loss!r}")
    lv, dpre = loss_value(fwd.value, batch.z)
    return lp, lv, net.backward(fwd, dlogits, dpre)


class NetworkSet:
    """The networks of one agent: one shared, or one per player."""

    def __init__(self, input_dim: int, n_actions: int, trunk: Sequence[int] = (128, 128),
                 separate: bool = False, per_player: bool = False,
                 opponent_trunk: Optional[Sequence[int]] = None, seed: int = 0,
                 nets: Optional[list[PolicyValueNet]] = None):
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.trunk = tuple(trunk)
        self.separate = separate
        self.per_player = per_player
        self.opponent_trunk = tuple(opponent_trunk) if opponent_trunk is not None else self.trunk
        self.seed = seed
        if nets is None:
            cfgs = [MlpConfig(input_dim, n_actions, self.trunk, separate)]
            if per_player:
                cfgs.append(MlpConfig(input_dim, n_actions, self.opponent_trunk, separate))
            nets = [PolicyValueNet(cfg, seed=seed + 7919 * i) for i, cfg in enumerate(cfgs)]
        self.nets = nets
        self.adam = [AdamState() for _ in nets]

    @property
    def wiring(self) -> dict:
        return {"pv": "separate" if self.separate else "shared",
                "players": "per_player" if self.per_player else "shared"}

    def index(self, player) -> int:
        return int(player) if self.per_player else 0

    def net_for(self, player) -> PolicyValueNet:
        return self.nets[self.index(player)]

    def _groups(self, players: Optional[np.ndarray], n: int) -> Iterable[tuple[int, np.ndarray]]:
        if not self.per_player or players is None:
            yield 0, np.arange(n)
            return
        players = np.asarray(players)
        for i in range(len(self.nets)):
            idx = np.flatnonzero(players == i)
            if len(idx):
                yield i, idx

    def predict(self, x: np.ndarray, mask: np.ndarray, players=None) -> tuple[np.ndarray, np.ndarray]:
        x, mask = np.atleast_2d(x), np.atleast_2d(mask)
        probs = np.zeros(mask.shape)
        values = np.zeros(len(x))
        for i, idx in self._groups(players, len(x)):
            fwd = self.nets[i].forward(x[idx], mask[idx])
            probs[idx] = fwd.probs
            values[idx] = fwd.value
        return probs, values

    def value(self, x: np.ndarray, players=None) -> np.ndarray:
        x = np.atleast_2d(x)
        values = np.zeros(len(x))
        for i, idx in self._groups(players, len(x)):
            values[idx] = self.nets[i].forward(x[idx], policy=False).value
        return values

    def train_step(self, batch: TrainBatch, policy_loss: str = "cem", lr: float = 1e-3,
                   beta: float = 1.0, eps: float = 0.2) -> tuple[float, float]:
        """One Adam update per network on the rows routed to it."""
        lp_sum = lv_sum = 0.0
        for i, idx in self._groups(batch.player, len(batch)):
            net = self.nets[i]
            lp, lv, grads = batch_loss(net, batch.take(idx), policy_loss, beta, eps)
            net.params = adam_step(net.params, grads, self.adam[i], lr)
            lp_sum += lp * len(idx)
            lv_sum += lv * len(idx)
        n = max(len(batch), 1)
        return lp_sum / n, lv_sum / n

    def copy(self) -> "NetworkSet":
        return copy.deepcopy(self)

    # -- checkpoints
    def save(self, path: str | Path, meta: Optional[dict] = None) -> None:
        header = {
            "wiring": self.wiring,
            "input_dim": self.input_dim,
            "n_actions": self.n_actions,
            "trunk": list(self.trunk),
            "opponent_trunk": list(self.opponent_trunk),
            "seed": self.seed,
            "nets": [
                {"trunk": list(net.cfg.trunk), "seed": net.seed,
                 "tensors": [[name, list(shape)] for name, shape in net.cfg.shapes()]}
                for net in self.nets
            ],
            "meta": meta or {},
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        payload = b"".join(
            np.ascontiguousarray(net.params[name], dtype="<f8").tobytes()
            for net in self.nets
            for name, _ in net.cfg.shapes()
        )
        body = struct.pack("<HI", CHECKPOINT_VERSION, len(head)) + head + payload
        Path(path).write_bytes(CHECKPOINT_MAGIC + body + struct.pack("<I", zlib.crc32(body)))

    @classmethod
    def load(cls, path: str | Path) -> "NetworkSet":
        return cls.load_with_meta(path)[0]

    @classmethod
    def load_with_meta(cls, path: str | Path) -> tuple["NetworkSet", dict]:
        data = Path(path).read_bytes()
        if len(data) < 14 or data[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        body, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
        version, head_len = struct.unpack("<HI", body[:6])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
        if zlib.crc32(body) != crc:
            raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
        header = json.loads(body[6 : 6 + head_len].decode("utf-8"))
        offset = 6 + head_len
        nets = []
        for spec in header["nets"]:
            cfg = MlpConfig(header["input_dim"], header["n_actions"], tuple(spec["trunk"]),
                            header["wiring"]["pv"] == "separate")
            params = {}
            for name, shape in spec["tensors"]:
                count = int(np.prod(shape))
                chunk = body[offset : offset + 8 * count]
                if len(chunk) != 8 * count:
                    raise CheckpointError(f"{path}: truncated tensor {name}")
                params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
                offset += 8 * count
            nets.append(PolicyValueNet(cfg, seed=spec["seed"], params=params))
        if offset != len(body):
            raise CheckpointError(f"{path}: trailing bytes after tensors")
        ns = cls(header["input_dim"], header["n_actions"], header["trunk"],
                 separate=header["wiring"]["pv"] == "separate",
                 per_player=header["wiring"]["players"] == "per_player",
                 opponent_trunk=header["opponent_trunk"], seed=header["seed"], nets=nets)
        return ns, header["meta"]
