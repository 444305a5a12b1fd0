"""Span enumeration, span representations, the mention filter and candidate selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import Triplet

log = logging.getLogger(__name__)

MENTION_LABELS = ("Target", "Opinion", "None")
TARGET, OPINION, NONE = range(3)


@dataclass
class SpanBudget:
    max_span_length: int = 8
    keep_ratio: float = 0.5

    def validate(self) -> None:
        if self.max_span_length < 1:
            raise ValueError("max_span_length must be >= 1")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValueError("keep_ratio must be in (0, 1]")


def enumerate_spans(n: int, max_len: int) -> list[tuple[int, int]]:
    """All inclusive (start, end) spans of width <= max_len, ordered by start then end."""
    return [(s, e) for s in range(n) for e in range(s, min(n, s + max_len))]


def width_bucket(start: int, end: int) -> int:
    return end - start


def gold_mention_labels(spans: Sequence[tuple[int, int]], triplets: Sequence[Triplet]) -> list[int]:
    """Target wins when a span is an aspect in one triplet and an opinion in another."""
    aspects = {t.aspect for t in triplets}
    opinions = {t.opinion for t in triplets}
    clash = aspects & opinions
    if clash:
        log.info("span(s) %s are both aspect and opinion; labelled Target", sorted(clash))
    return [TARGET if s in aspects else OPINION if s in opinions else NONE for s in spans]


def span_maxpool(h: torch.Tensor, span_index: torch.Tensor, max_len: int) -> torch.Tensor:
    """Max over ``h[b, start..end]`` for every span; ``span_index`` is (B, S, 2)."""
    b, n, d = h.shape
    ht = h.transpose(1, 2)
    pooled = []
    for w in range(1, max_len + 1):
        if w <= n:
            p = F.max_pool1d(ht, kernel_size=w, stride=1)          # (B, D, n - w + 1)
            p = F.pad(p, (0, w - 1))
        else:
            p = ht.new_zeros(b, d, n)
        pooled.append(p)
    table = torch.stack(pooled, 1)                                # (B, L, D, n)
    starts = span_index[..., 0]
    widths = (span_index[..., 1] - starts).clamp(0, max_len - 1)
    bi = torch.arange(b, device=h.device).unsqueeze(-1).expand_as(starts)
    return table[bi, widths, :, starts]


class SpanScorer(nn.Module):
    def __init__(self, d_word: int, d_cls: int, d_width: int = 25, max_len: int = 8,
                 hidden: int = 150, dropout: float = 0.1):
        super().__init__()
        self.max_len = max_len
        self.width_emb = nn.Embedding(max_len, d_width)
        self.out_dim = d_word + d_width + d_cls
        self.mlp = nn.Sequential(nn.Linear(self.out_dim, hidden), nn.ReLU(), nn.Dropout(dropout),
                                 nn.Linear(hidden, len(MENTION_LABELS)))

    def represent(self, h_out, span_index, cls):
        pooled = span_maxpool(h_out, span_index, self.max_len)
        widths = (span_index[..., 1] - span_index[..., 0]).clamp(0, self.max_len - 1)
        ctx = cls.unsqueeze(1).expand(-1, span_index.size(1), -1)
        return torch.cat([pooled, self.width_emb(widths), ctx], -1)

    def forward(self, h_out, span_index, cls):
        reps = self.represent(h_out, span_index, cls)
        return reps, self.mlp(reps)


def span_repr(span: tuple[int, int], h_out: torch.Tensor, cls: torch.Tensor, scorer: SpanScorer) -> torch.Tensor:
    """Representation of one span of one sentence (``h_out`` is (n, D))."""
    idx = torch.tensor([[span]], device=h_out.device)
    return scorer.represent(h_out.unsqueeze(0), idx, cls.unsqueeze(0))[0, 0]


def filter_loss(logits: torch.Tensor, labels: torch.Tensor, span_mask: torch.Tensor) -> torch.Tensor:
    """Mention cross-entropy summed over each sentence's real spans, averaged over the batch.

    Accepts ``(S, 3)`` logits for a single sentence as well.
    """
    if logits.dim() == 2:
        logits, labels, span_mask = logits.unsqueeze(0), labels.unsqueeze(0), span_mask.unsqueeze(0)
    ce = F.cross_entropy(logits.transpose(1, 2), labels, reduction="none")
    return (ce * span_mask).sum() / logits.size(0)


def select_candidates(probs: torch.Tensor, spans: Sequence[tuple[int, int]], n_words: int,
                      keep_ratio: float = 0.5) -> tuple[list[int], list[int]]:
    """Indices of spans kept as targets and as opinions.

    A span is kept for the class it argmaxes to; each list is capped at
    ceil(keep_ratio * n) (at least 1), ranked by descending class probability with
    ties going to the smaller start, then the smaller end.
    """
    cap = max(1, math.ceil(keep_ratio * n_words))
    best = probs.argmax(-1).tolist()
    rows = probs.tolist()
    kept = []
    for label in (TARGET, OPINION):
        idx = [i for i, b in enumerate(best) if b == label]
        idx.sort(key=lambda i: (-rows[i][label], spans[i][0], spans[i][1]))
        kept.append(idx[:cap])
    return kept[0], kept[1]
