"""KL-based loss that pushes the syntactic and semantic adjacency distributions apart."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class SeparationConfig:
    alpha: float = 10.0
    epsilon: float = 1e-8

    def validate(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


def _masked_log_softmax(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return torch.log_softmax(x, dim=-1)
    # finite fill: fully padded rows stay NaN-free in both passes
    return torch.log_softmax(x.masked_fill(~mask, -1e9), dim=-1)


def row_kl(p_logits: torch.Tensor, q_logits: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """KL(softmax(p) || softmax(q)) along the last axis; masked columns are excluded."""
    log_p = _masked_log_softmax(p_logits, mask)
    log_q = _masked_log_softmax(q_logits, mask)
    terms = log_p.exp() * (log_p - log_q)
    if mask is not None:
        terms = terms * mask
    return terms.sum(-1)


def separation_term(sym_kl, epsilon: float = 1e-8):
    """Per-row contribution log(1 + 1/(symmetric KL + eps)); decreasing in the divergence."""
    return torch.log1p(1.0 / (torch.as_tensor(sym_kl) + epsilon))


def separation_loss(a_syn: torch.Tensor, a_sem: torch.Tensor, mask: torch.Tensor | None = None,
                    epsilon: float = 1e-8) -> torch.Tensor:
    """sum_i log(1 + 1/(|KL(syn_i||sem_i)| + |KL(sem_i||syn_i)| + eps)).

    Accepts a single ``(n, n)`` pair or a batch ``(B, n, n)`` with a ``(B, n)`` word mask; the
    per-sentence sums are averaged over the batch.
    """
    batched = a_syn.dim() == 3
    if not batched:
        a_syn, a_sem = a_syn.unsqueeze(0), a_sem.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)
    col_mask = None if mask is None else mask.unsqueeze(1).expand(-1, a_syn.size(1), -1)
    sym = row_kl(a_syn, a_sem, col_mask).abs() + row_kl(a_sem, a_syn, col_mask).abs()
    per_row = separation_term(sym, epsilon)
    if mask is not None:
        per_row = per_row * mask.to(per_row.dtype)
    per_sentence = per_row.sum(-1)
    return per_sentence.mean() if batched else per_sentence[0]
