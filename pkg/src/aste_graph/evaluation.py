"""Exact-match triplet precision / recall / F1."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from . import POLARITIES
from .corpus import Triplet


class IdMismatch(ValueError):
    pass


def prf(matched: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = matched / predicted if predicted else 0.0
    r = matched / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    matched: int
    per_polarity: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self, name: str = "") -> str:
        rows = [("all", self.precision, self.recall, self.f1)]
        rows += [(pol, d["precision"], d["recall"], d["f1"]) for pol, d in self.per_polarity.items()]
        lines = [f"{name:<8}{'P':>8}{'R':>8}{'F1':>8}"]
        lines += [f"{label:<8}{100 * p:8.2f}{100 * r:8.2f}{100 * f:8.2f}" for label, p, r, f in rows]
        return "\n".join(lines)


def _as_mapping(items) -> Mapping:
    return items if isinstance(items, Mapping) else dict(enumerate(items))


def score(predicted: Mapping | Sequence[Iterable[Triplet]], gold: Mapping | Sequence[Iterable[Triplet]]) -> EvalReport:
    """Score per-sentence predictions against gold.

    Both arguments are either sequences aligned by position or mappings keyed by
    sentence id. Predicted duplicates count once; every gold triplet can be matched once.
    """
    predicted, gold = _as_mapping(predicted), _as_mapping(gold)
    if set(predicted) != set(gold):
        missing = set(gold) ^ set(predicted)
        raise IdMismatch(f"sentence ids differ between predictions and gold: {sorted(map(str, missing))[:5]}")
    n_gold = n_pred = n_match = 0
    by_pol = {p: Counter() for p in POLARITIES}
    for sid, gold_list in gold.items():
        g = Counter(gold_list)
        pred = set(predicted[sid])
        n_gold += sum(g.values())
        n_pred += len(pred)
        for t in g.elements():
            by_pol[t.polarity]["gold"] += 1
        for t in pred:
            by_pol[t.polarity]["pred"] += 1
            if g[t] > 0:
                g[t] -= 1
                n_match += 1
                by_pol[t.polarity]["match"] += 1
    p, r, f = prf(n_match, n_pred, n_gold)
    per = {}
    for pol, c in by_pol.items():
        pp, rr, ff = prf(c["match"], c["pred"], c["gold"])
        per[pol] = {"precision": pp, "recall": rr, "f1": ff, "gold": c["gold"], "predicted": c["pred"], "matched": c["match"]}
    return EvalReport(p, r, f, n_gold, n_pred, n_match, per)
