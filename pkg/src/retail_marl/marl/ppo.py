"""Clipped PPO update over a rollout buffer."""

from __future__ import annotations

import numpy as np

from ..nn import Tensor, clip_grad_norm, minimum
from ..nn.layers import gradients
from .buffer import RolloutBuffer
from .policy import ActorCritic


class UpdateError(FloatingPointError):
    pass


def clipped_surrogate(ratio, advantage, eps: float) -> np.ndarray:
    """Per-sample min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1 - eps, 1 + eps) * advantage)


def standardize(x: np.ndarray) -> np.ndarray:
    std = x.std()
    return (x - x.mean()) / std if std > 1e-8 else x - x.mean()


def minibatches(n_samples: int, steps_per_batch: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n_samples)
    return [order[i:i + steps_per_batch] for i in range(0, n_samples, steps_per_batch)]


def ppo_loss(ac: ActorCritic, obs, actions, old_logp, adv, returns, time_left, masks, cfg):
    """Total loss tensor plus diagnostics for one minibatch of (step, env) samples.

    ``adv`` holds one advantage per sample; it is broadcast to every agent and
    standardized over the minibatch's agent-steps.
    """
    n = obs.shape[1]
    a = standardize(np.repeat(adv[:, None], n, axis=1))
    lp, ent, v = ac.evaluate(obs, actions, time_left, masks=masks)
    ratio = (lp - old_logp).exp()
    surr = minimum(ratio * a, ratio.clip(1 - cfg.clip_eps, 1 + cfg.clip_eps) * a)
    policy_obj = surr.mean()
    value_loss = ((v - returns) ** 2).mean()
    entropy = ent.mean()
    loss = -policy_obj + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    r = ratio.data
    stats = {
        "policy_loss": -float(policy_obj.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "clip_frac": float(np.mean(np.abs(r - 1) > cfg.clip_eps)),
        "approx_kl": float(np.mean(old_logp - lp.data)),
        "adv_mean": float(a.mean()),
        "adv_std": float(a.std()),
    }
    return loss, stats


def ppo_update(ac: ActorCritic, buffer: RolloutBuffer, cfg, optimizer, rng: np.random.Generator) -> dict:
    """Run ``cfg.epochs`` passes of minibatch updates. Returns averaged loss statistics.

    ``first_clip_frac`` reports the clip fraction of the very first minibatch,
    evaluated before any parameter change.
    """
    if buffer.advantages is None:
        raise UpdateError("compute advantages before the PPO update")
    S = len(buffer)
    n = buffer.n_agents
    flat = lambda x: x.reshape(S, *x.shape[2:])  # noqa: E731
    obs, actions, old_lp = flat(buffer.obs), flat(buffer.actions), flat(buffer.log_probs)
    adv, ret, tl = flat(buffer.advantages), flat(buffer.returns), flat(buffer.time_left)
    masks = None if buffer.masks is None else (flat(buffer.masks[0]), flat(buffer.masks[1]))
    steps_per_batch = max(1, cfg.minibatch_size // n)
    params = ac.parameters()
    totals: dict[str, float] = {}
    count = 0
    first_clip = None
    for epoch in range(cfg.epochs):
        for b, idx in enumerate(minibatches(S, steps_per_batch, rng)):
            mb_masks = None if masks is None else (masks[0][idx], masks[1][idx])
            ac.zero_grad()
            loss, stats = ppo_loss(ac, obs[idx], actions[idx], old_lp[idx], adv[idx], ret[idx], tl[idx], mb_masks, cfg)
            if not np.isfinite(loss.data):
                raise UpdateError(f"non-finite loss in epoch {epoch}, minibatch {b}")
            if first_clip is None:
                first_clip = stats["clip_frac"]
            loss.backward()
            grads = gradients(ac)
            stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(params, grads)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in totals.items()}
    out["first_clip_frac"] = first_clip
    return out


__all__ = ["clipped_surrogate", "ppo_loss", "ppo_update", "standardize", "UpdateError", "Tensor"]
