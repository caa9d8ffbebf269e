"""Training objectives: pairwise ranking, weighted subtask regression,
homoscedastic-uncertainty weighting, and their sum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag


@dataclass
class LossBreakdown:
    l_tar: float
    l_sub_per_task: dict = field(default_factory=dict)
    l_sub_combined: float = 0.0
    total: float = 0.0
    sigmas: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "l_tar": self.l_tar,
            "l_sub": dict(self.l_sub_per_task),
            "l_sub_combined": self.l_sub_combined,
            "sigmas": dict(self.sigmas),
            "total": self.total,
        }


def ranking_pairs(labels):
    """All ``(pos, neg)`` index pairs with ``labels[pos] > labels[neg]``."""
    labels = np.asarray(labels)
    pos, neg = np.nonzero(labels[:, None] > labels[None, :])
    return pos, neg


def ranking_loss(scores, labels, margin=1.0):
    """Mean pairwise hinge ``max(0, margin - s_pos + s_neg)``; 0 with no pairs."""
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    scores = ag.as_node(scores)
    pos, neg = ranking_pairs(labels)
    if pos.size == 0:
        return ag.mul(ag.sum_(scores), 0.0)
    gap = ag.sub(ag.take(scores, pos), ag.take(scores, neg))
    return ag.mean(ag.relu(ag.sub(margin, gap)))


def subtask_weight(pseudo, gold):
    return np.tanh(np.abs(np.asarray(pseudo, dtype=np.float64) - np.asarray(gold, dtype=np.float64)))


def subtask_loss(preds, pseudo, gold):
    """Per-subtask ``mean_i tanh(|y_s - y_g|) * |yhat_s - y_s|``.

    ``preds`` maps subtask -> node of shape (n,); ``pseudo`` maps subtask ->
    array (n,). Targets and weights carry no gradient.
    """
    gold = np.asarray(gold, dtype=np.float64)
    out = {}
    for s, pred in preds.items():
        target = np.asarray(pseudo[s], dtype=np.float64)
        w = subtask_weight(target, gold)
        resid = ag.abs_(ag.sub(pred, target))
        out[s] = ag.mean(ag.mul(resid, w))
    return out


def uncertainty_combine(losses, log_vars):
    """``sum_j exp(-eta_j) * L_j / 2 + eta_j / 2`` with ``eta_j = log sigma_j^2``."""
    terms = []
    for s, loss in losses.items():
        eta = log_vars[s]
        precision = ag.exp(ag.neg(eta))
        terms.append(ag.add(ag.scale(ag.mul(precision, loss), 0.5), ag.scale(eta, 0.5)))
    if not terms:
        return ag.constant(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return total


def total_loss(l_tar, l_sub_combined):
    return ag.add(l_tar, l_sub_combined)


def sigmas_from_log_vars(log_vars):
    return {s: float(np.exp(0.5 * np.asarray(eta.value if isinstance(eta, ag.Node) else eta)))
            for s, eta in log_vars.items()}
