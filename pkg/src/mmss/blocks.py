"""Neural building blocks: linear layers, self-attention, soft pooling, MLP head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node


def glorot_uniform(rng, d_in, d_out):
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def _param(value, name):
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


@dataclass
class LinearLayer:
    w: Node
    b: Node

    @classmethod
    def init(cls, rng, d_in, d_out, name="linear"):
        return cls(
            w=_param(glorot_uniform(rng, d_in, d_out), f"{name}.w"),
            b=_param(np.zeros(d_out), f"{name}.b"),
        )

    @property
    def d_in(self):
        return self.w.value.shape[0]

    @property
    def d_out(self):
        return self.w.value.shape[1]

    def __call__(self, x):
        """Apply to a vector (d_in,) or a matrix (n, d_in)."""
        x = ag.as_node(x)
        if x.value.ndim == 1:
            row = ag.reshape(x, (1, -1))
            return ag.reshape(ag.add(ag.matmul(row, self.w), self.b), (self.d_out,))
        return ag.add(ag.matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


@dataclass
class SelfAttentionLayer:
    """Scaled dot-product self-attention, no mask, no residual."""

    w_q: Node
    w_k: Node
    w_v: Node
    b_q: Node
    b_k: Node
    b_v: Node
    heads: int = 1

    def __post_init__(self):
        shapes = {p.value.shape for p in (self.w_q, self.w_k, self.w_v)}
        if len(shapes) != 1:
            raise ValueError(f"projection weights disagree: {sorted(shapes)}")
        d_out = self.d_out
        for b in (self.b_q, self.b_k, self.b_v):
            if b.value.shape != (d_out,):
                raise ValueError(f"bias shape {b.value.shape} != ({d_out},)")
        if self.heads < 1 or d_out % self.heads:
            raise ValueError(f"d_out={d_out} not divisible by heads={self.heads}")

    @classmethod
    def init(cls, rng, d_in, d_out, heads=1, name="attn"):
        ws = {k: _param(glorot_uniform(rng, d_in, d_out), f"{name}.w_{k}") for k in "qkv"}
        bs = {k: _param(np.zeros(d_out), f"{name}.b_{k}") for k in "qkv"}
        return cls(ws["q"], ws["k"], ws["v"], bs["q"], bs["k"], bs["v"], heads=heads)

    @property
    def d_in(self):
        return self.w_q.value.shape[0]

    @property
    def d_out(self):
        return self.w_q.value.shape[1]

    def __call__(self, x):
        x = ag.as_node(x)
        if x.value.ndim != 2 or x.value.shape[0] < 1:
            raise ValueError(f"self-attention needs a non-empty n x d matrix, got {x.value.shape}")
        q = ag.add(ag.matmul(x, self.w_q), self.b_q)
        k = ag.add(ag.matmul(x, self.w_k), self.b_k)
        v = ag.add(ag.matmul(x, self.w_v), self.b_v)
        d_head = self.d_out // self.heads
        inv_sqrt = 1.0 / math.sqrt(d_head)
        outs = []
        for h in range(self.heads):
            lo, hi = h * d_head, (h + 1) * d_head
            if self.heads == 1:
                qh, kh, vh = q, k, v
            else:
                qh, kh, vh = (ag.slice_cols(t, lo, hi) for t in (q, k, v))
            scores = ag.scale(ag.matmul(qh, ag.transpose(kh)), inv_sqrt)
            outs.append(ag.matmul(ag.softmax(scores, axis=1), vh))
        return outs[0] if self.heads == 1 else ag.concat(outs, axis=1)

    def parameters(self):
        return [self.w_q, self.w_k, self.w_v, self.b_q, self.b_k, self.b_v]


def soft_pool(x):
    """Per-column softmax-weighted average over the rows of ``x``."""
    x = ag.as_node(x)
    if x.value.ndim != 2 or x.value.shape[0] < 1:
        raise ValueError(f"soft_pool needs a non-empty n x d matrix, got {x.value.shape}")
    weights = ag.softmax(x, axis=0)
    return ag.sum_(ag.mul(weights, x), axis=0)


@dataclass
class MlpHead:
    """Two linear layers with a GELU in between, ending in a scalar."""

    layer1: LinearLayer
    layer2: LinearLayer

    def __post_init__(self):
        if self.layer2.d_out != 1 or self.layer1.d_out != self.layer2.d_in:
            raise ValueError("MlpHead layers do not chain to a scalar output")

    @classmethod
    def init(cls, rng, d, name="mlp"):
        hidden = -(-d // 2)
        return cls(
            LinearLayer.init(rng, d, hidden, f"{name}.layer1"),
            LinearLayer.init(rng, hidden, 1, f"{name}.layer2"),
        )

    def __call__(self, x):
        out = self.layer2(ag.gelu(self.layer1(x)))
        return ag.reshape(out, ())

    def parameters(self):
        return self.layer1.parameters() + self.layer2.parameters()
