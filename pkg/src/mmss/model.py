"""MM-SS forward pass.

Visual RoI rows are projected by self-attention, five interaction encoders
(self-attention + soft pooling) produce one vector per product/review pairing,
the concatenation feeds a GELU fusion layer and a linear scoring head, and
each interaction additionally drives its own subtask head.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .blocks import LinearLayer, MlpHead, SelfAttentionLayer, soft_pool


class InteractionKind(enum.Enum):
    PtRt = "ptrt"
    PvRv = "pvrv"
    PtRv = "ptrv"
    PvRt = "pvrt"
    RtRv = "rtrv"
    Global = "global"

    @classmethod
    def parse(cls, text):
        return cls(text.lower())


# fusion order of F_c; also the order of every per-subtask loop
SUBTASKS = (
    InteractionKind.PtRt,
    InteractionKind.PvRv,
    InteractionKind.PtRv,
    InteractionKind.PvRt,
    InteractionKind.RtRv,
)

# which bundle operands each interaction concatenates along the sequence axis
OPERANDS = {
    InteractionKind.PtRt: ("t_p", "t_r"),
    InteractionKind.PvRv: ("v_p", "v_r"),
    InteractionKind.PtRv: ("t_p", "v_r"),
    InteractionKind.PvRt: ("v_p", "t_r"),
    InteractionKind.RtRv: ("t_r", "v_r"),
}


@dataclass
class FeatureBundle:
    t_p: np.ndarray
    t_r: np.ndarray
    v_p_raw: np.ndarray
    v_r_raw: np.ndarray
    v_p: object = None
    v_r: object = None

    @classmethod
    def from_records(cls, product, review):
        return cls(
            t_p=product.text_features,
            t_r=review.text_features,
            v_p_raw=product.image_features,
            v_r_raw=review.image_features,
        )

    @property
    def projected(self):
        return self.v_p is not None and self.v_r is not None


@dataclass
class ModelDims:
    d_t: int
    d_roi: int
    d_f: int
    d_g: int
    heads: int = 1

    @property
    def d_v(self):
        # visual rows share the sequence axis with text rows, so widths must match
        return self.d_t


@dataclass
class ModelParams:
    dims: ModelDims
    visual_proj: SelfAttentionLayer
    interaction_layers: dict
    fusion: LinearLayer
    global_head: LinearLayer
    subtask_proj: dict
    subtask_heads: dict
    log_vars: dict

    @classmethod
    def init(cls, dims, seed):
        """Glorot-uniform weights, zero biases, zero log-variances."""
        rng = np.random.default_rng(seed)
        visual = SelfAttentionLayer.init(rng, dims.d_roi, dims.d_v, dims.heads, "visual_proj")
        inter = {
            k: SelfAttentionLayer.init(rng, dims.d_t, dims.d_f, dims.heads, f"interact.{k.value}")
            for k in SUBTASKS
        }
        fusion = LinearLayer.init(rng, 5 * dims.d_f, dims.d_g, "fusion")
        head = LinearLayer.init(rng, dims.d_g, 1, "global_head")
        proj = {k: LinearLayer.init(rng, dims.d_f, dims.d_f, f"subtask_proj.{k.value}") for k in SUBTASKS}
        heads = {k: MlpHead.init(rng, dims.d_f, f"subtask_head.{k.value}") for k in SUBTASKS}
        log_vars = {
            k: ag.Node(np.zeros(()), requires_grad=True, name=f"log_var.{k.value}") for k in SUBTASKS
        }
        return cls(dims, visual, inter, fusion, head, proj, heads, log_vars)

    def named_parameters(self):
        """Deterministically ordered ``(name, node)`` pairs."""
        out = []
        for p in self.visual_proj.parameters():
            out.append((p.name, p))
        for k in SUBTASKS:
            out.extend((p.name, p) for p in self.interaction_layers[k].parameters())
        out.extend((p.name, p) for p in self.fusion.parameters())
        out.extend((p.name, p) for p in self.global_head.parameters())
        for k in SUBTASKS:
            out.extend((p.name, p) for p in self.subtask_proj[k].parameters())
            out.extend((p.name, p) for p in self.subtask_heads[k].parameters())
        for k in SUBTASKS:
            out.append((self.log_vars[k].name, self.log_vars[k]))
        return out


@dataclass
class DirectConcatParams:
    """Ablation without feature-specific encoders: pooled features into one MLP."""

    dims: ModelDims
    head: MlpHead

    @classmethod
    def init(cls, dims, seed):
        rng = np.random.default_rng(seed)
        d_in = 2 * dims.d_t + 2 * dims.d_roi
        return cls(dims, MlpHead.init(rng, d_in, "direct_head"))

    def named_parameters(self):
        return [(p.name, p) for p in self.head.parameters()]


@dataclass
class ForwardOutput:
    y_hat_g: ag.Node
    f_g_star: ag.Node
    y_hat_s: dict = field(default_factory=dict)
    f_s_star: dict = field(default_factory=dict)
    f_s: dict = field(default_factory=dict)


def project_visual(params, v_p_raw, v_r_raw):
    """Self-attend over product and review RoI rows jointly, then split."""
    n_p, n_r = len(v_p_raw), len(v_r_raw)
    if n_p < 1 or n_r < 1:
        raise ValueError(f"need at least one RoI row each, got {n_p} and {n_r}")
    joint = params.visual_proj(np.concatenate([v_p_raw, v_r_raw], axis=0))
    return ag.slice_rows(joint, 0, n_p), ag.slice_rows(joint, n_p, n_p + n_r)


def project(params, bundle):
    bundle.v_p, bundle.v_r = project_visual(params, bundle.v_p_raw, bundle.v_r_raw)
    return bundle


def interact(params, kind, bundle):
    if kind is InteractionKind.Global:
        raise ValueError("Global is not an interaction encoder")
    if not bundle.projected:
        raise ValueError("bundle has not been through project_visual")
    first, second = OPERANDS[kind]
    seq = ag.concat([getattr(bundle, first), getattr(bundle, second)], axis=0)
    return soft_pool(params.interaction_layers[kind](seq))


def forward(params, bundle, subtasks=SUBTASKS):
    """Global score and per-subtask predictions for one product/review pair.

    ``subtasks`` limits which subtask heads are evaluated; the global path
    always uses all five interactions.
    """
    if isinstance(params, DirectConcatParams):
        return forward_direct(params, bundle)
    if not bundle.projected:
        project(params, bundle)
    f = {k: interact(params, k, bundle) for k in SUBTASKS}
    f_c = ag.concat([f[k] for k in SUBTASKS], axis=0)
    f_g_star = ag.gelu(params.fusion(f_c))
    y_hat_g = ag.reshape(params.global_head(f_g_star), ())
    out = ForwardOutput(y_hat_g=y_hat_g, f_g_star=f_g_star, f_s=f)
    for k in subtasks:
        f_star = ag.gelu(params.subtask_proj[k](f[k]))
        out.f_s_star[k] = f_star
        out.y_hat_s[k] = params.subtask_heads[k](f_star)
    return out


def forward_direct(params, bundle):
    pooled = [
        np.asarray(m).mean(axis=0)
        for m in (bundle.t_p, bundle.v_p_raw, bundle.t_r, bundle.v_r_raw)
    ]
    x = ag.constant(np.concatenate(pooled))
    y = params.head(x)
    return ForwardOutput(y_hat_g=y, f_g_star=x)


def init_model(dims, seed, direct_concat=False):
    if direct_concat:
        return DirectConcatParams.init(dims, seed)
    return ModelParams.init(dims, seed)
