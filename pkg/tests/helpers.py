"""Shared oracles for the test suite."""
from __future__ import annotations

import numpy as np

from folgame.nn import MlpConfig, PolicyValueNet, TrainBatch, batch_loss


def random_batch(rng, input_dim=5, n_actions=4, rows=6):
    x = rng.normal(size=(rows, input_dim))
    mask = rng.random((rows, n_actions)) < 0.7
    mask[np.arange(rows), rng.integers(0, n_actions, rows)] = True
    target = rng.random((rows, n_actions)) * mask + 0.05 * mask
    target /= target.sum(axis=1, keepdims=True)
    action = np.array([rng.choice(np.flatnonzero(m)) for m in mask])
    z = rng.choice([-1.0, 1.0], size=rows)
    adv = rng.normal(size=rows)
    return TrainBatch(x, mask, target, np.zeros(rows, int), z, action, adv)


def grad_check(net: PolicyValueNet, batch: TrainBatch, part: str, policy_loss: str = "cem",
               h: float = 1e-6) -> float:
    """Worst per-tensor relative error of analytic vs central-difference gradients.

    ``part`` selects which loss is differentiated: "policy" or "value".
    """
    def loss_only():
        lp, lv, _ = batch_loss(net, batch, policy_loss)
        return lp if part == "policy" else lv

    fwd = net.forward(batch.x, batch.mask)
    from folgame.nn import loss_cem, loss_ppo, loss_value
    if part == "policy":
        if policy_loss == "cem":
            _, dl = loss_cem(fwd.probs, batch.target)
        else:
            _, dl = loss_ppo(fwd.probs, batch.target, batch.action, batch.adv, variant=policy_loss[4:])
        grads = net.backward(fwd, dl, None)
    else:
        _, dpre = loss_value(fwd.value, batch.z)
        grads = net.backward(fwd, None, dpre)
    worst = 0.0
    for name, p in net.params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_only()
            p[idx] = old - h
            down = loss_only()
            p[idx] = old
            num[idx] = (up - down) / (2 * h)
        denom = max(np.linalg.norm(num) + np.linalg.norm(grads[name]), 1e-10)
        worst = max(worst, np.linalg.norm(num - grads[name]) / denom)
    return worst


def small_net(seed, separate=False, input_dim=5, n_actions=4, trunk=(8, 6)):
    return PolicyValueNet(MlpConfig(input_dim, n_actions, trunk, separate), seed=seed)
