"""Dense layers, MLP encoder, multi-head graph attention and categorical heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autodiff import Tensor, concat, log_softmax, segment_max, segment_sum

ACTIVATIONS = ("tanh", "relu", "linear")


class Parameter(Tensor):
    def __init__(self, data, group: str = "dense"):
        super().__init__(data, requires_grad=True)
        self.group = group

    def zero_grad(self) -> None:
        self.grad = None


class Module:
    """Registers Parameter and Module attributes in definition order."""

    def __setattr__(self, key, value):
        if isinstance(value, (Parameter, Module)):
            self.__dict__.setdefault("_order", []).append(key)
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key in self.__dict__.get("_order", []):
            val = self.__dict__[key]
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(_uniform(rng, d_in, (d_in, d_out)))
        self.bias = Parameter(_uniform(rng, d_in, (d_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ValueError(f"Linear expects last dim {self.d_in}, got {x.shape[-1]}")
        return x @ self.weight + self.bias


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return x.tanh()
    if kind == "relu":
        return x.relu()
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


class MlpEncoder(Module):
    """Affine + nonlinearity stack. ``final_activation`` controls the last layer."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, activation: str = "tanh",
                 final_activation: str | None = None):
        if len(sizes) < 2:
            raise ValueError("MlpEncoder needs at least input and output sizes")
        self.sizes = list(sizes)
        self.activation = activation
        self.final_activation = activation if final_activation is None else final_activation
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layer = Linear(a, b, rng)
            setattr(self, f"l{i}", layer)
            self.layers.append(layer)

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            x = activate(x, self.activation if i < len(self.layers) - 1 else self.final_activation)
        return x


def mlp_forward(encoder: MlpEncoder, x) -> Tensor:
    return encoder(x if isinstance(x, Tensor) else Tensor(x))


class GatLayer(Module):
    """Single multi-head graph attention layer with self-inclusion.

    For node i and head h the attention set is {i} U N(i). Output is the
    concatenation of per-head attention-weighted sums of projected neighbors.
    """

    def __init__(self, d_in: int, heads: int, d_head: int, rng: np.random.Generator, slope: float = 0.2,
                 attn_dropout: float = 0.1, edge_drop: float = 0.1):
        self.d_in, self.heads, self.d_head = d_in, heads, d_head
        self.slope = slope
        self.attn_dropout = attn_dropout
        self.edge_drop = edge_drop
        self.proj = Parameter(_uniform(rng, d_in, (d_in, heads * d_head)), group="gat_projection")
        self.attn_src = Parameter(_uniform(rng, 2 * d_head, (heads, d_head)), group="gat_attention")
        self.attn_dst = Parameter(_uniform(rng, 2 * d_head, (heads, d_head)), group="gat_attention")
        self.last_attention: np.ndarray | None = None

    @property
    def d_out(self) -> int:
        return self.heads * self.d_head

    def attention_vector(self, head: int) -> np.ndarray:
        """a^(h) as one vector of length 2*d_head: [target part, neighbor part]."""
        return np.concatenate([self.attn_src.data[head], self.attn_dst.data[head]])

    def sample_masks(self, rng: np.random.Generator, batch: int,
                     index: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Edge-keep mask (batch, E, 1) and scaled attention-dropout mask (batch, E, heads).

        Self entries are never dropped.
        """
        tgt, src = index
        keep = rng.random((batch, len(tgt), 1)) >= self.edge_drop
        keep[:, tgt == src] = True
        drop = (rng.random((batch, len(tgt), self.heads)) >= self.attn_dropout) / (1.0 - self.attn_dropout)
        return keep.astype(float), drop

    def __call__(self, h: Tensor, index: tuple[np.ndarray, np.ndarray], n_nodes: int,
                 rng: np.random.Generator | None = None, training: bool = False,
                 masks: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
        """``h`` has shape (batch, n, d_in); ``index`` is (target, source) over {i} U N(i).

        Stochastic regularization runs when explicit ``masks`` are given, or
        when ``training`` is set and an ``rng`` is supplied.
        """
        if h.shape[-1] != self.d_in:
            raise ValueError(f"GAT expects embedding dim {self.d_in}, got {h.shape[-1]}")
        if h.shape[-2] != n_nodes:
            raise ValueError(f"GAT got {h.shape[-2]} node embeddings for a {n_nodes}-node graph")
        tgt, src = index
        B = h.shape[0]
        if masks is None and training and rng is not None:
            masks = self.sample_masks(rng, B, index)
        wh = (h @ self.proj).reshape(B, n_nodes, self.heads, self.d_head)
        s_tgt = (wh * self.attn_src).sum(axis=-1)
        s_src = (wh * self.attn_dst).sum(axis=-1)
        e = (s_tgt.take(tgt, axis=1) + s_src.take(src, axis=1)).leaky_relu(self.slope)
        shift = segment_max(e.data, tgt, n_nodes, axis=1)
        ex = (e - np.take(shift, tgt, axis=1)).exp()
        if masks is not None:
            ex = ex * masks[0]
        denom = segment_sum(ex, tgt, n_nodes, axis=1)
        alpha = ex / denom.take(tgt, axis=1)
        self.last_attention = alpha.data
        if masks is not None:
            alpha = alpha * masks[1]
        msg = wh.take(src, axis=1) * alpha.reshape(B, len(tgt), self.heads, 1)
        z = segment_sum(msg, tgt, n_nodes, axis=1)
        return z.reshape(B, n_nodes, self.heads * self.d_head)


def gat_forward(layer: GatLayer, embeddings, graph, rng: np.random.Generator | None = None,
                training: bool = False) -> Tensor:
    h = embeddings if isinstance(embeddings, Tensor) else Tensor(embeddings)
    squeeze = h.ndim == 2
    if squeeze:
        h = h.reshape(1, *h.shape)
    z = layer(h, graph.attention_index(), graph.n, rng=rng, training=training)
    return z.reshape(*z.shape[1:]) if squeeze else z


# -- categorical heads -------------------------------------------------------

@dataclass(frozen=True)
class CategoricalSample:
    action: np.ndarray
    log_prob: np.ndarray
    entropy: np.ndarray


def _log_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_head(logits, rng: np.random.Generator | None = None, greedy: bool = False) -> CategoricalSample:
    """Sample (or argmax) actions from the last axis of ``logits``."""
    logits = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    logp = _log_probs(logits)
    p = np.exp(logp)
    if greedy:
        action = logits.argmax(axis=-1)
    else:
        if rng is None:
            raise ValueError("sampling needs an rng stream")
        u = rng.random(logits.shape[:-1] + (1,))
        action = np.minimum((np.cumsum(p, axis=-1) < u).sum(axis=-1), logits.shape[-1] - 1)
    lp = np.take_along_axis(logp, action[..., None], axis=-1)[..., 0]
    ent = -(p * np.where(p > 0, logp, 0.0)).sum(axis=-1)
    return CategoricalSample(action, lp, ent)


def categorical_log_prob_entropy(logits: Tensor, actions: np.ndarray) -> tuple[Tensor, Tensor]:
    """Differentiable log-probabilities of ``actions`` and entropies."""
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, np.asarray(actions)[..., None], 1.0, axis=-1)
    lp = (logp * onehot).sum(axis=-1)
    ent = -(logp.exp() * logp).sum(axis=-1)
    return lp, ent


__all__ = [
    "Parameter", "Module", "Linear", "MlpEncoder", "GatLayer", "mlp_forward", "gat_forward",
    "categorical_head", "categorical_log_prob_entropy", "CategoricalSample", "concat",
]


def gradients(module: Module) -> dict[str, np.ndarray]:
    """Gradient per parameter; parameters off the loss path get zeros."""
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in module.parameters().items()}
