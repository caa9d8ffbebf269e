"""Training loop, Adam, checkpoints, and the multi-seed run driver."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .dataset import batch_by_product, load_manifest, make_synthetic
from .metrics import evaluate, mean_reports
from .model import (
    SUBTASKS,
    DirectConcatParams,
    FeatureBundle,
    InteractionKind,
    ModelDims,
    forward,
    init_model,
)
from .objectives import (
    LossBreakdown,
    ranking_loss,
    sigmas_from_log_vars,
    subtask_loss,
    total_loss,
    uncertainty_combine,
)
from .ssplabel import (
    AnchorState,
    PseudoLabelStore,
    SspConfig,
    advance_epoch,
    ewma_update,
    raw_pseudo_label,
)

log = logging.getLogger(__name__)

GLOBAL_TASK = "global"
CKPT_MAGIC = b"MMCK"
CKPT_VERSION = 1


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


class Adam:
    """Adam with bias correction over named leaf nodes."""

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in self.params}
        self.v = {name: np.zeros_like(p.value) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {name}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()


def adam_step(optimizer):
    optimizer.step()


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    n_products: int = 8
    reviews_per_product: int = 8
    d_t: int = 16
    d_roi: int = 16
    s_noise: float = 0.1
    seed: int = 7
    n_eval_products: int | None = None


@dataclass
class TrainConfig:
    d_f: int | None = None
    d_g: int | None = None
    heads: int = 1
    learning_rate: float = 3e-3
    batch_size: int = 32
    margin: float = 1.0
    epochs: int = 20
    seed: int = 0
    seeds: int = 1
    ssp: SspConfig = field(default_factory=SspConfig)
    ablate: list = field(default_factory=list)
    disable_ssp: bool = False
    direct_concat: bool = False
    tau: int = 3
    ndcg_at: list = field(default_factory=lambda: [3, 5])
    data: dict | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    out: str | None = None

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.seeds < 1:
            raise ConfigError(f"seeds must be >= 1, got {self.seeds}")
        if not self.margin > 0:
            raise ConfigError(f"margin must be > 0, got {self.margin}")
        for name in self.ablate:
            try:
                kind = InteractionKind.parse(name)
            except ValueError:
                raise ConfigError(f"unknown subtask {name!r} in ablate") from None
            if kind is InteractionKind.Global:
                raise ConfigError("cannot ablate the global task")
        return self

    @property
    def active_subtasks(self):
        if self.disable_ssp or self.direct_concat:
            return ()
        dropped = {InteractionKind.parse(a) for a in self.ablate}
        return tuple(k for k in SUBTASKS if k not in dropped)

    def model_dims(self, d_t, d_roi):
        return ModelDims(d_t=d_t, d_roi=d_roi, d_f=self.d_f or d_t, d_g=self.d_g or d_t, heads=self.heads)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(d.get("ssp"), dict):
            d["ssp"] = SspConfig(**d["ssp"])
        if isinstance(d.get("synthetic"), dict):
            d["synthetic"] = SyntheticSpec(**d["synthetic"])
        return cls(**d)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def forward_batch(params, batch, subtasks):
    return [
        forward(params, FeatureBundle.from_records(batch.product, r), subtasks=subtasks)
        for r in batch.reviews
    ]


def batch_objective(params, outs, labels, pseudo, config):
    """Total loss node and its breakdown for one single-product batch.

    ``pseudo`` maps each active subtask to its frozen targets; an empty map
    means ranking loss only.
    """
    scores = ag.concat([ag.reshape(o.y_hat_g, (1,)) for o in outs], axis=0)
    l_tar = ranking_loss(scores, labels, config.margin)
    breakdown = LossBreakdown(l_tar=float(l_tar.value))
    if not pseudo:
        breakdown.total = breakdown.l_tar
        return l_tar, breakdown
    preds = {
        s: ag.concat([ag.reshape(o.y_hat_s[s], (1,)) for o in outs], axis=0) for s in pseudo
    }
    l_sub = subtask_loss(preds, pseudo, labels)
    log_vars = {s: params.log_vars[s] for s in pseudo}
    l_comb = uncertainty_combine(l_sub, log_vars)
    total = total_loss(l_tar, l_comb)
    breakdown.l_sub_per_task = {s.value: float(v.value) for s, v in l_sub.items()}
    breakdown.l_sub_combined = float(l_comb.value)
    breakdown.sigmas = {s.value: v for s, v in sigmas_from_log_vars(log_vars).items()}
    breakdown.total = float(total.value)
    return total, breakdown


# --------------------------------------------------------------------------
# trainer
# --------------------------------------------------------------------------


class Trainer:
    """Model parameters, optimizer, and pseudo-label state for one seed."""

    def __init__(self, config, dims, seed=None):
        self.config = config
        self.dims = dims
        self.seed = config.seed if seed is None else seed
        self.params = init_model(dims, self.seed, direct_concat=config.direct_concat)
        self.optimizer = Adam(self.params.named_parameters(), lr=config.learning_rate)
        self.store = PseudoLabelStore()
        self.anchors = AnchorState(lambda_reg=config.ssp.lambda_reg)
        self.epoch = 1
        self.step_count = 0
        self.log = []
        self.log_sink = None

    @property
    def subtasks(self):
        return self.config.active_subtasks

    # -- one optimization step ------------------------------------------------

    def train_step(self, batch, batch_index=0):
        labels = np.array([r.label for r in batch.reviews], dtype=np.float64)
        outs = forward_batch(self.params, batch, self.subtasks)
        pseudo = self._pseudo_labels(batch, outs, labels) if self.subtasks else {}
        total, breakdown = batch_objective(self.params, outs, labels, pseudo, self.config)

        total.backward()
        self.optimizer.step()
        self.step_count += 1
        record = {"epoch": self.epoch, "batch": batch_index, "step": self.step_count}
        record.update(breakdown.as_dict())
        self.log.append(record)
        if self.log_sink is not None:
            self.log_sink.write(json.dumps(record) + "\n")
        return breakdown

    def _pseudo_labels(self, batch, outs, labels):
        cfg = self.config
        use_anchors = self.store.epoch > 1 and self.anchors.has_anchor(GLOBAL_TASK)
        pseudo = {s: np.empty(len(outs)) for s in self.subtasks}
        for i, (review, out) in enumerate(zip(batch.reviews, outs)):
            y_g = labels[i]
            f_g = out.f_g_star.value
            self.anchors.accumulate(GLOBAL_TASK, y_g, f_g)
            chi_g = self.anchors.distance(GLOBAL_TASK, f_g) if use_anchors else None
            for s in self.subtasks:
                f_s = out.f_s_star[s].value
                prev = self.store.get(review.review_id, s.value, default=y_g)
                self.anchors.accumulate(s.value, prev, f_s)
                if use_anchors and self.anchors.has_anchor(s.value):
                    chi_s = self.anchors.distance(s.value, f_s)
                    raw = raw_pseudo_label(cfg.ssp, y_g, chi_g, chi_s)
                else:
                    raw = y_g
                pseudo[s][i] = ewma_update(self.store, review.review_id, s.value, raw, y_g)
        return pseudo

    # -- epochs -----------------------------------------------------------------

    def batches(self, products):
        return batch_by_product(products, self.config.batch_size, seed=[self.seed, self.epoch])

    def train_epoch(self, products):
        losses = []
        for b, batch in enumerate(self.batches(products)):
            losses.append(self.train_step(batch, b))
        if self.subtasks:
            self.anchors.finalize_all()
            advance_epoch(self.store, self.anchors)
        summary = {
            "epoch": self.epoch,
            "l_tar": float(np.mean([l.l_tar for l in losses])),
            "total": float(np.mean([l.total for l in losses])),
        }
        self.epoch += 1
        return summary

    def predict(self, products):
        scores = {}
        for p in products:
            for r in p.reviews:
                out = forward(self.params, FeatureBundle.from_records(p, r), subtasks=())
                scores[r.review_id] = float(out.y_hat_g.value)
        return scores

    def evaluate(self, products):
        cfg = self.config
        return evaluate(products, self.predict(products), tau=cfg.tau, ns=tuple(cfg.ndcg_at))

    # -- checkpoints ------------------------------------------------------------

    def to_bytes(self):
        tensors = []
        for name, p in self.params.named_parameters():
            tensors.append(("param:" + name, p.value))
            tensors.append(("adam_m:" + name, self.optimizer.m[name]))
            tensors.append(("adam_v:" + name, self.optimizer.v[name]))
        index = []
        offset = 0
        for name, arr in tensors:
            index.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size * 8
        header = {
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "dims": dataclasses.asdict(self.dims),
            "seed": self.seed,
            "epoch": self.epoch,
            "step_count": self.step_count,
            "adam_t": self.optimizer.t,
            "store": self.store.to_dict(),
            "anchors": self.anchors.to_dict(),
            "tensors": index,
        }
        head = json.dumps(header).encode()
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC)
        buf.write(struct.pack("<BQ", CKPT_VERSION, len(head)))
        buf.write(head)
        for _, arr in tensors:
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob):
        if blob[:4] != CKPT_MAGIC:
            raise ValueError("not a checkpoint: bad magic bytes")
        version, head_len = struct.unpack_from("<BQ", blob, 4)
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        start = 4 + struct.calcsize("<BQ")
        header = json.loads(blob[start:start + head_len])
        payload = memoryview(blob)[start + head_len:]
        config = TrainConfig.from_dict(header["config"])
        trainer = cls(config, ModelDims(**header["dims"]), seed=header["seed"])
        arrays = {}
        for entry in header["tensors"]:
            n = int(np.prod(entry["shape"], dtype=np.int64))
            arr = np.frombuffer(payload, dtype="<f8", count=n, offset=entry["offset"])
            arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
        expected = sum(int(np.prod(e["shape"], dtype=np.int64)) * 8 for e in header["tensors"])
        if len(payload) != expected:
            raise ValueError("checkpoint payload size mismatch")
        for name, p in trainer.params.named_parameters():
            p.value[...] = arrays["param:" + name]
            trainer.optimizer.m[name][...] = arrays["adam_m:" + name]
            trainer.optimizer.v[name][...] = arrays["adam_v:" + name]
        trainer.optimizer.t = header["adam_t"]
        trainer.epoch = header["epoch"]
        trainer.step_count = header["step_count"]
        trainer.store = PseudoLabelStore.from_dict(header["store"])
        trainer.anchors = AnchorState.from_dict(header["anchors"])
        return trainer

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# run driver
# --------------------------------------------------------------------------


@dataclass
class Splits:
    train: list
    dev: list
    test: list


def load_splits(config):
    """Products for train/dev/test from manifests or the synthetic spec."""
    if config.data:
        train = load_manifest(config.data["train"])[1]
        dev = load_manifest(config.data["dev"])[1] if config.data.get("dev") else train
        test = load_manifest(config.data["test"])[1] if config.data.get("test") else dev
        return Splits(train, dev, test)
    return synthetic_splits(config.synthetic)


def synthetic_splits(spec):
    n_eval = spec.n_eval_products or spec.n_products
    make = lambda n, offset, prefix: make_synthetic(  # noqa: E731
        n, spec.reviews_per_product, spec.d_t, spec.d_roi,
        seed=spec.seed + offset, s_noise=spec.s_noise, prefix=prefix,
    )
    return Splits(
        train=make(spec.n_products, 0, "train-"),
        dev=make(n_eval, 1, "dev-"),
        test=make(n_eval, 2, "test-"),
    )


@dataclass
class SeedResult:
    seed: int
    best_epoch: int
    best_dev_map: float
    test_report: object
    checkpoint: bytes
    history: list


@dataclass
class RunResult:
    report: object
    seeds: list

    @property
    def checkpoint(self):
        return self.seeds[0].checkpoint


def train_one_seed(config, splits, seed, out_dir=None):
    d_t = splits.train[0].d_t
    d_roi = splits.train[0].d_roi
    trainer = Trainer(config, config.model_dims(d_t, d_roi), seed=seed)
    sink = None
    if out_dir is not None:
        sink = open(Path(out_dir) / f"log-seed{seed}.jsonl", "w")
        trainer.log_sink = sink
    best = (-1.0, 0, None)
    history = []
    try:
        for _ in range(config.epochs):
            summary = trainer.train_epoch(splits.train)
            dev = trainer.evaluate(splits.dev)
            summary["dev_map"] = dev.map_score
            history.append(summary)
            log.info("seed %d epoch %d l_tar %.4f dev MAP %.4f",
                     seed, summary["epoch"], summary["l_tar"], dev.map_score)
            if dev.map_score > best[0]:
                best = (dev.map_score, summary["epoch"], trainer.to_bytes())
    finally:
        if sink is not None:
            sink.close()
    best_trainer = Trainer.from_bytes(best[2])
    report = best_trainer.evaluate(splits.test)
    if out_dir is not None:
        Path(out_dir, f"best-seed{seed}.ckpt").write_bytes(best[2])
        trainer.store.save(Path(out_dir) / f"labels-seed{seed}.json")
    return SeedResult(seed, best[1], best[0], report, best[2], history)


def run_training(config, splits=None):
    """Train ``config.seeds`` seeds, select by dev MAP, report mean test metrics."""
    config.validate()
    if splits is None:
        splits = load_splits(config)
    out_dir = None
    if config.out:
        out_dir = Path(config.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=1))
    results = [
        train_one_seed(config, splits, config.seed + k, out_dir) for k in range(config.seeds)
    ]
    report = mean_reports([r.test_report for r in results])
    if out_dir is not None:
        report.save(out_dir / "report.json")
    return RunResult(report, results)


def with_overrides(config, **overrides):
    config = copy.deepcopy(config)
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    return config
