"""Central finite-difference check of the actor stack (MLP encoder -> GAT -> categorical head)."""

import numpy as np

from retail_marl.graph import ItemGraph
from retail_marl.nn import GatLayer, MlpEncoder, Module, Tensor, categorical_log_prob_entropy, concat

STEP = 1e-4
KINK = 1e-3


class ActorStack(Module):
    def __init__(self, d_obs, d_hidden, heads, n_actions, rng):
        self.enc = MlpEncoder([d_obs, d_hidden, d_hidden], rng)
        self.gat = GatLayer(d_hidden, heads, d_hidden // heads, rng)
        self.head = MlpEncoder([2 * d_hidden, d_hidden, n_actions], rng, final_activation="linear")

    def loss(self, x, index, n, actions, weights, masks):
        h = self.enc(Tensor(x))
        z = self.gat(h, index, n, masks=masks)
        logits = self.head(concat([h, z], axis=-1))
        lp, ent = categorical_log_prob_entropy(logits, actions)
        return (lp * weights).sum() + 0.1 * ent.sum() + (logits * logits).mean()

    def attention_logits(self, x, index, n):
        h = self.enc(Tensor(x)).data
        wh = (h @ self.gat.proj.data).reshape(x.shape[0], n, self.gat.heads, self.gat.d_head)
        s_t = (wh * self.gat.attn_src.data).sum(-1)
        s_s = (wh * self.gat.attn_dst.data).sum(-1)
        return s_t[:, index[0]] + s_s[:, index[1]]


def random_graph(n, rng):
    nb = []
    for i in range(n):
        cand = [j for j in range(n) if j != i and rng.random() < 0.5]
        nb.append(tuple(cand))
    return ItemGraph(tuple(f"S{i}" for i in range(n)), tuple(nb), tuple(tuple(1.0 for _ in r) for r in nb), n, 1.0)


def draw(seed):
    """One random problem, redrawn until no attention logit sits within KINK of the leaky-relu kink."""
    attempt = 0
    while True:
        rng = np.random.default_rng([seed, attempt])
        n = 5
        g = random_graph(n, rng)
        index = g.attention_index()
        model = ActorStack(int(rng.integers(2, 6)), 4 * int(rng.integers(1, 3)), 2, 5, rng)
        for p in model.parameters().values():
            p.data = p.data * rng.uniform(0.5, 2.0)
        x = rng.normal(size=(2, n, model.enc.sizes[0]))
        masks = model.gat.sample_masks(rng, 2, index) if rng.random() < 0.5 else None
        if np.min(np.abs(model.attention_logits(x, index, n))) > KINK:
            return model, (x, index, n, rng.integers(5, size=(2, n)), rng.normal(size=(2, n)), masks)
        attempt += 1


def max_relative_error(seed):
    model, args = draw(seed)
    model.zero_grad()
    model.loss(*args).backward()
    worst = 0.0
    for p in model.parameters().values():
        grad = p.grad
        for idx in np.ndindex(p.data.shape):
            old = p.data[idx]
            p.data[idx] = old + STEP
            up = model.loss(*args).data
            p.data[idx] = old - STEP
            down = model.loss(*args).data
            p.data[idx] = old
            num = (up - down) / (2 * STEP)
            worst = max(worst, abs(grad[idx] - num) / max(abs(grad[idx]), abs(num), 1e-6))
    return worst
