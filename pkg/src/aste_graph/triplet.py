"""Aspect/opinion pair representations, the relation classifier and triplet decoding."""

from __future__ import annotations

from typing import Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import Triplet

RELATION_LABELS = ("POS", "NEG", "NEU", "Invalid")
INVALID = 3
# lower edges of the token-distance buckets: 0,1,2,3,4,5-7,8-15,16+
_BUCKET_EDGES = (0, 1, 2, 3, 4, 5, 8, 16)


def pair_distance(aspect: tuple[int, int], opinion: tuple[int, int]) -> int:
    """Tokens strictly between the nearest ends of two spans (0 when adjacent or overlapping)."""
    return max(0, max(aspect[0], opinion[0]) - min(aspect[1], opinion[1]) - 1)


def distance_bucket(distance: int) -> int:
    return sum(distance >= edge for edge in _BUCKET_EDGES) - 1


class PairScorer(nn.Module):
    def __init__(self, d_span: int, d_cls: int, d_width: int = 25, hidden: int = 150, dropout: float = 0.1):
        super().__init__()
        self.width_emb = nn.Embedding(len(_BUCKET_EDGES), d_width)
        self.out_dim = 2 * d_span + d_width + d_cls
        self.mlp = nn.Sequential(nn.Linear(self.out_dim, hidden), nn.ReLU(), nn.Dropout(dropout),
                                 nn.Linear(hidden, len(RELATION_LABELS)))

    def represent(self, s_aspect, s_opinion, buckets, cls):
        """aspect ++ width ++ cls ++ opinion, row-wise."""
        return torch.cat([s_aspect, self.width_emb(buckets), cls.expand(s_aspect.size(0), -1), s_opinion], -1)

    def forward(self, s_aspect, s_opinion, buckets, cls):
        return self.mlp(self.represent(s_aspect, s_opinion, buckets, cls))


def pair_repr(s_aspect: torch.Tensor, s_opinion: torch.Tensor, aspect: tuple[int, int],
              opinion: tuple[int, int], cls: torch.Tensor, scorer: PairScorer) -> torch.Tensor:
    bucket = torch.tensor([distance_bucket(pair_distance(aspect, opinion))], device=s_aspect.device)
    return scorer.represent(s_aspect.unsqueeze(0), s_opinion.unsqueeze(0), bucket, cls.unsqueeze(0))[0]


def gold_relation_labels(pairs: Sequence[tuple[tuple[int, int], tuple[int, int]]],
                         triplets: Iterable[Triplet]) -> list[int]:
    gold = {(t.aspect, t.opinion): RELATION_LABELS.index(t.polarity) for t in triplets}
    return [gold.get(p, INVALID) for p in pairs]


def triplet_loss(logits: torch.Tensor, labels: torch.Tensor, n_sentences: int = 1) -> torch.Tensor:
    """Relation cross-entropy summed over pairs, divided by the number of sentences."""
    if logits.numel() == 0:
        return logits.sum() * 0.0
    return F.cross_entropy(logits, labels, reduction="sum") / n_sentences


def decode(pairs: Sequence[tuple[tuple[int, int], tuple[int, int]]], scores: torch.Tensor) -> list[Triplet]:
    """One triplet per pair whose best relation is not Invalid; exact duplicates dropped."""
    out, seen = [], set()
    for (aspect, opinion), label in zip(pairs, scores.argmax(-1).tolist()):
        if label == INVALID:
            continue
        t = Triplet(tuple(aspect), tuple(opinion), RELATION_LABELS[label])
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out
