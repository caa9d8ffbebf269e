"""Per-product ranking metrics: MAP with binarized relevance and graded NDCG@N."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RankedList:
    """Entries ``(review_id, score, label)`` sorted by score desc, id asc."""

    entries: tuple

    @classmethod
    def build(cls, items):
        items = list(items)
        if not items:
            raise ValueError("a ranked list needs at least one entry")
        ordered = sorted(items, key=lambda e: (-float(e[1]), str(e[0])))
        return cls(tuple((str(r), float(s), int(y)) for r, s, y in ordered))

    @property
    def labels(self):
        return np.array([e[2] for e in self.entries])

    def __len__(self):
        return len(self.entries)


def average_precision(ranked, tau=3):
    """Mean of precision@k over the ranks k holding a relevant item (label >= tau).

    >>> average_precision(RankedList.build([("a", 3, 4), ("b", 2, 0), ("c", 1, 4)]))
    0.8333333333333333
    """
    rel = ranked.labels >= tau
    n_rel = int(rel.sum())
    if n_rel == 0:
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float(np.sum((hits / ranks)[rel]) / n_rel)


def dcg(labels, n):
    labels = np.asarray(labels, dtype=np.float64)[:n]
    discounts = np.log2(np.arange(2, labels.size + 2))
    return float(np.sum((2.0 ** labels - 1.0) / discounts))


def ndcg_at(ranked, n):
    """Graded NDCG with gain ``2^label - 1``; 1.0 when every label is 0."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    labels = ranked.labels
    ideal = dcg(np.sort(labels)[::-1], n)
    if ideal == 0.0:
        return 1.0
    return dcg(labels, n) / ideal


@dataclass
class EvalReport:
    map_score: float
    ndcg: dict
    per_product: dict = field(default_factory=dict)
    tau: int = 3

    def to_dict(self):
        return {
            "map": self.map_score,
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "tau": self.tau,
            "per_product": self.per_product,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            map_score=d["map"],
            ndcg={int(k): v for k, v in d["ndcg"].items()},
            per_product=d.get("per_product", {}),
            tau=d.get("tau", 3),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def table(self, title="MM-SS"):
        ns = sorted(self.ndcg)
        head = f"{'Method':<16}{'MAP':>8}" + "".join(f"{'N@' + str(n):>8}" for n in ns)
        row = f"{title:<16}{100 * self.map_score:>8.2f}" + "".join(
            f"{100 * self.ndcg[n]:>8.2f}" for n in ns
        )
        rule = "-" * len(head)
        return "\n".join([rule, head, rule, row, rule])


def evaluate(products, predictions, tau=3, ns=(3, 5)):
    """Aggregate MAP and NDCG@n as unweighted means over products.

    ``products`` is a sequence of ProductRecord; ``predictions`` maps
    review_id -> predicted score.
    """
    per_product = {}
    for p in products:
        items = []
        for r in p.reviews:
            if r.review_id not in predictions:
                raise KeyError(f"no prediction for review {r.review_id}")
            items.append((r.review_id, predictions[r.review_id], r.label))
        ranked = RankedList.build(items)
        entry = {"map": average_precision(ranked, tau)}
        for n in ns:
            entry[f"ndcg@{n}"] = ndcg_at(ranked, n)
        per_product[p.product_id] = entry
    if not per_product:
        raise ValueError("nothing to evaluate")
    map_score = float(np.mean([e["map"] for e in per_product.values()]))
    ndcg = {n: float(np.mean([e[f"ndcg@{n}"] for e in per_product.values()])) for n in ns}
    return EvalReport(map_score, ndcg, per_product, tau)


def mean_reports(reports):
    """Metric-wise mean of several reports (per-seed runs)."""
    ns = sorted(reports[0].ndcg)
    return EvalReport(
        map_score=float(np.mean([r.map_score for r in reports])),
        ndcg={n: float(np.mean([r.ndcg[n] for r in reports])) for n in ns},
        tau=reports[0].tau,
    )
