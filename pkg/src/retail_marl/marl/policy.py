"""Shared-parameter actors (MAPPO or MAPPO+GAT) and the pooled centralized critic."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..graph import ItemGraph
from ..nn import GatLayer, Linear, MlpEncoder, Module, Tensor, categorical_head, categorical_log_prob_entropy, concat
from ..nn import checkpoint

ARCHS = ("mappo", "mappo-gat")


@dataclass(frozen=True)
class NetConfig:
    """Layer sizes. MAPPO uses a wider encoder so both variants carry similar parameter counts."""

    mappo_hidden: int = 96
    gat_hidden: int = 64
    heads: int = 4
    head_hidden: int = 64
    critic_hidden: int = 64
    attn_dropout: float = 0.1
    edge_drop: float = 0.1
    leaky_slope: float = 0.2

    def to_dict(self) -> dict:
        return asdict(self)


class PolicySet(Module):
    """One actor shared by all agents. In GAT mode the head reads [h; z]."""

    def __init__(self, arch: str, obs_dim: int, n_actions: int, net: NetConfig, rng: np.random.Generator):
        if arch not in ARCHS:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
        self.arch = arch
        d = net.gat_hidden if arch == "mappo-gat" else net.mappo_hidden
        self.encoder = MlpEncoder([obs_dim, d, d], rng)
        if arch == "mappo-gat":
            if d % net.heads:
                raise ValueError(f"hidden size {d} not divisible by {net.heads} heads")
            self.gat = GatLayer(d, net.heads, d // net.heads, rng, slope=net.leaky_slope,
                                attn_dropout=net.attn_dropout, edge_drop=net.edge_drop)
            self.feature_dim = 2 * d
        else:
            self.gat = None
            self.feature_dim = d
        self.head = MlpEncoder([self.feature_dim, net.head_hidden, n_actions], rng, final_activation="linear")

    def features(self, obs: Tensor, index, n_nodes: int, masks=None) -> Tensor:
        """Per-agent actor input: h (MAPPO) or [h; z] (MAPPO+GAT). ``obs`` is (B, n, obs_dim)."""
        h = self.encoder(obs)
        if self.gat is None:
            return h
        z = self.gat(h, index, n_nodes, masks=masks)
        return concat([h, z], axis=-1)

    def logits(self, features: Tensor) -> Tensor:
        return self.head(features)


class Critic(Module):
    """Project each agent's features, mean-pool over agents, append time-to-go, regress value."""

    def __init__(self, feature_dim: int, hidden: int, rng: np.random.Generator):
        self.proj = Linear(feature_dim, hidden, rng)
        self.value = MlpEncoder([hidden + 1, hidden, 1], rng, final_activation="linear")

    def __call__(self, features: Tensor, time_left: np.ndarray) -> Tensor:
        pooled = self.proj(features).tanh().mean(axis=-2)
        tl = Tensor(np.asarray(time_left, dtype=float).reshape(-1, 1))
        return self.value(concat([pooled, tl], axis=-1)).reshape(-1)


class ActorCritic(Module):
    def __init__(self, arch: str, graph: ItemGraph, obs_dim: int, n_actions: int,
                 net: NetConfig | None = None, seed: int = 0):
        from .. import rng as rngmod

        self.net = net or NetConfig()
        self.arch = arch
        self.graph = graph
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        init = rngmod.stream("init", arch, seed)
        self.actor = PolicySet(arch, obs_dim, n_actions, self.net, init)
        self.critic = Critic(self.actor.feature_dim, self.net.critic_hidden, init)
        self.index = graph.attention_index()
        self.n_edges = len(self.index[0])

    @property
    def uses_graph(self) -> bool:
        return self.actor.gat is not None

    def sample_masks(self, rng: np.random.Generator, batch: int):
        """Edge-keep and attention-dropout masks for one GAT forward, or None without GAT."""
        if not self.uses_graph:
            return None
        return self.actor.gat.sample_masks(rng, batch, self.index)

    def forward(self, obs: np.ndarray, masks=None) -> tuple[Tensor, Tensor]:
        """Actor logits (B, n, A) and the actor features the critic pools."""
        feats = self.actor.features(Tensor(obs), self.index, self.graph.n, masks=masks)
        return self.actor.logits(feats), feats

    def value(self, feats: Tensor, time_left: np.ndarray) -> Tensor:
        return self.critic(feats.detach(), time_left)

    def act(self, obs: np.ndarray, time_left: np.ndarray, rng: np.random.Generator | None = None,
            greedy: bool = False, masks=None):
        """Batch of joint actions for ``obs`` of shape (B, n, obs_dim). Returns (sample, values)."""
        logits, feats = self.forward(obs, masks=masks)
        sample = categorical_head(logits.data, rng=rng, greedy=greedy)
        return sample, self.value(feats, time_left).data

    def evaluate(self, obs: np.ndarray, actions: np.ndarray, time_left: np.ndarray, masks=None):
        logits, feats = self.forward(obs, masks=masks)
        lp, ent = categorical_log_prob_entropy(logits, actions)
        return lp, ent, self.value(feats, time_left)

    def census(self) -> dict[str, int]:
        return {"actor": self.actor.num_parameters(), "critic": self.critic.num_parameters(),
                "total": self.num_parameters()}

    def meta(self) -> dict:
        return {"arch": self.arch, "obs_dim": self.obs_dim, "n_actions": self.n_actions,
                "net": self.net.to_dict(), "skus": list(self.graph.skus)}

    def save(self, path, extra: dict | None = None) -> None:
        checkpoint.save(self.parameters(), path, {**self.meta(), **(extra or {})})

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, p in self.parameters().items():
            p.data = snap[k].copy()


def load_actor_critic(path, graph: ItemGraph) -> tuple[ActorCritic, dict]:
    import json

    with open(path) as fh:
        payload = json.load(fh)
    meta = payload.get("meta", {})
    for key in ("arch", "obs_dim", "n_actions", "net"):
        if key not in meta:
            raise checkpoint.CheckpointError(f"checkpoint {path} lacks '{key}' metadata")
    if list(graph.skus) != meta.get("skus", list(graph.skus)):
        raise checkpoint.CheckpointError(f"checkpoint {path} was trained on a different SKU set")
    ac = ActorCritic(meta["arch"], graph, meta["obs_dim"], meta["n_actions"], NetConfig(**meta["net"]))
    checkpoint.load_into(ac.parameters(), payload)
    return ac, meta
