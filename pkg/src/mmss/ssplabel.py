"""Self-supervised pseudo-labels for the interaction subtasks.

Per task, an anchor is the sigmoid(label)-weighted centroid of that task's
representations over an epoch. A representation's distance to its anchor is
a diagonal Mahalanobis distance divided by sqrt(scale). A subtask's raw
target mixes a ratio form and a difference form of the distance gap:

    y_s = (y_g + alpha2 * (chi_s - chi_g)) / 2 + alpha1 * chi_s * y_g / (2 * (chi_g + eps))

Raw targets are smoothed across epochs with an EWMA whose weight on the new
observation is 2 / (i + 1) at epoch i; epoch 1 targets are the gold labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class SspConfig:
    alpha1: float = 1.0
    alpha2: float = 1.0
    eps: float = 1e-8
    lambda_reg: float = 1e-6
    clamp: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not self.lambda_reg > 0:
            raise ValueError(f"lambda_reg must be > 0, got {self.lambda_reg}")


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass
class Anchor:
    anchor: np.ndarray
    diag_var: np.ndarray
    scale: float

    def distance(self, f):
        f = np.asarray(f, dtype=np.float64)
        if f.shape != self.anchor.shape:
            raise ValueError(f"representation shape {f.shape} != anchor shape {self.anchor.shape}")
        return mahalanobis_distance(f, self.anchor, self.diag_var, self.scale)


def mahalanobis_distance(f, anchor, diag_var, scale):
    """``sqrt(sum((f - A)^2 / var)) / sqrt(scale)`` for a diagonal covariance."""
    r = np.asarray(f, dtype=np.float64) - anchor
    return math.sqrt(float(np.sum(r * r / diag_var))) / math.sqrt(scale)


@dataclass
class _Accumulator:
    dim: int
    weight_sum: float = 0.0
    weighted_feature_sum: np.ndarray = None
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        if self.weighted_feature_sum is None:
            self.weighted_feature_sum = np.zeros(self.dim)
            self.mean = np.zeros(self.dim)
            self.m2 = np.zeros(self.dim)

    def add(self, weight, f):
        self.weighted_feature_sum += weight * f
        self.weight_sum += weight
        # Welford update for the unweighted per-dimension variance
        self.count += 1
        delta = f - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (f - self.mean)


class AnchorState:
    """Anchor statistics for the global task and the five subtasks.

    ``accumulate`` collects the current epoch, ``finalize`` stages an anchor,
    and ``advance_epoch`` makes staged anchors active for the next epoch.
    Only active anchors answer ``distance``.
    """

    def __init__(self, lambda_reg=1e-6):
        self.lambda_reg = lambda_reg
        self.accumulators = {}
        self.staged = {}
        self.active = {}

    def accumulate(self, task, label, f):
        f = np.asarray(f, dtype=np.float64).ravel()
        acc = self.accumulators.get(task)
        if acc is None:
            acc = self.accumulators[task] = _Accumulator(f.size)
        elif acc.dim != f.size:
            raise ValueError(f"task {task}: representation dim {f.size} != {acc.dim}")
        acc.add(_sigmoid(float(label)), f)

    def finalize(self, task):
        acc = self.accumulators.get(task)
        if acc is None or acc.count == 0:
            raise ValueError(f"task {task}: no accumulated samples")
        var = np.maximum(acc.m2 / acc.count, self.lambda_reg)
        entry = Anchor(
            anchor=acc.weighted_feature_sum / acc.weight_sum,
            diag_var=var,
            scale=float(acc.dim),
        )
        self.staged[task] = entry
        return entry

    def finalize_all(self):
        return {task: self.finalize(task) for task in list(self.accumulators)}

    def has_anchor(self, task):
        return task in self.active

    def distance(self, task, f):
        try:
            entry = self.active[task]
        except KeyError:
            raise ValueError(f"task {task}: no finalized anchor") from None
        return entry.distance(f)

    def reset_accumulators(self):
        self.accumulators = {}

    def to_dict(self):
        return {
            "lambda_reg": self.lambda_reg,
            "active": {
                task: {"anchor": a.anchor.tolist(), "diag_var": a.diag_var.tolist(), "scale": a.scale}
                for task, a in self.active.items()
            },
        }

    @classmethod
    def from_dict(cls, d):
        state = cls(lambda_reg=d["lambda_reg"])
        for task, a in d["active"].items():
            state.active[task] = Anchor(
                np.array(a["anchor"], dtype=np.float64),
                np.array(a["diag_var"], dtype=np.float64),
                float(a["scale"]),
            )
        return state


def offset_label(y_g, chi_g, chi_s, alpha1=1.0, alpha2=1.0, eps=1e-8):
    """Unclamped raw target. ``eps`` may be 0 here when ``chi_g > 0``."""
    return (y_g + alpha2 * (chi_s - chi_g)) / 2.0 + alpha1 * chi_s * y_g / (2.0 * (chi_g + eps))


def raw_pseudo_label(config, y_g, chi_g, chi_s):
    """Raw subtask target before smoothing; the offset is ``result - y_g``."""
    y_s = offset_label(y_g, chi_g, chi_s, config.alpha1, config.alpha2, config.eps)
    if config.clamp:
        y_s = min(4.0, max(0.0, y_s))
    return y_s


@dataclass
class PseudoLabelStore:
    epoch: int = 1
    values: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def beta(self):
        return 2.0 / (self.epoch + 1)

    def get(self, review_id, subtask, default=None):
        return self.values.get((review_id, subtask), default)

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "rows": [
                {"review_id": rid, "subtask": s, "value": v, "epoch": e}
                for e, rid, s, v in self.history
            ],
        }

    @classmethod
    def from_dict(cls, d):
        store = cls(epoch=int(d["epoch"]))
        for row in d["rows"]:
            store.history.append((row["epoch"], row["review_id"], row["subtask"], row["value"]))
            store.values[(row["review_id"], row["subtask"])] = row["value"]
        return store

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def ewma_update(store, review_id, subtask, raw_target, y_g):
    """Smoothed pseudo-label for this epoch, recorded in ``store``.

    A key seen for the first time starts at ``y_g`` whatever the epoch.
    """
    key = (review_id, subtask)
    prev = store.values.get(key)
    if store.epoch <= 1 or prev is None:
        value = float(y_g)
    else:
        beta = store.beta
        value = beta * float(raw_target) + (1.0 - beta) * prev
    store.values[key] = value
    store.history.append((store.epoch, review_id, subtask, value))
    return value


def advance_epoch(store, anchors):
    """Close the epoch: staged anchors go live, accumulators restart."""
    store.epoch += 1
    anchors.active.update(anchors.staged)
    anchors.staged = {}
    anchors.reset_accumulators()
