"""Syntactic and semantic adjacency construction and the per-channel GCN stacks."""

from __future__ import annotations

import torch
from torch import nn

from .corpus import Sentence


def build_syn_adjacency(sentence: Sentence | list[int]) -> torch.Tensor:
    """Symmetric 0/1 adjacency of the dependency tree, no self loops."""
    heads = sentence.dep_heads if isinstance(sentence, Sentence) else sentence
    n = len(heads)
    adj = torch.zeros(n, n)
    for i, h in enumerate(heads):
        if h > 0:
            adj[i, h - 1] = 1.0
            adj[h - 1, i] = 1.0
    return adj


def normalize_adjacency(adj: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """D^-1/2 (A + I) D^-1/2 for a (batched) dense adjacency."""
    eye = torch.eye(adj.size(-1), dtype=adj.dtype, device=adj.device)
    a_hat = adj + eye
    if mask is not None:
        m = mask.to(adj.dtype)
        a_hat = a_hat * m.unsqueeze(-1) * m.unsqueeze(-2)
    deg = a_hat.sum(-1)
    inv_sqrt = deg.clamp(min=1e-12).pow(-0.5) * (deg > 0)
    return inv_sqrt.unsqueeze(-1) * a_hat * inv_sqrt.unsqueeze(-2)


class SemanticAdjacency(nn.Module):
    """Row-stochastic attention matrix over words from multi-head scaled dot-product scores."""

    def __init__(self, dim: int, heads: int, combine: str = "mean"):
        super().__init__()
        if dim % heads:
            raise ValueError("heads must divide dim")
        if combine not in ("mean", "max"):
            raise ValueError("combine must be 'mean' or 'max'")
        self.heads, self.d_head, self.combine = heads, dim // heads, combine
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)

    def forward(self, h: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        squeeze = h.dim() == 2
        if squeeze:
            h = h.unsqueeze(0)
        b, n, _ = h.shape
        if mask is None:
            mask = torch.ones(b, n, dtype=torch.bool, device=h.device)
        q = self.q(h).view(b, n, self.heads, self.d_head).transpose(1, 2)
        k = self.k(h).view(b, n, self.heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / self.d_head ** 0.5
        scores = scores.mean(1) if self.combine == "mean" else scores.max(1).values
        scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        attn = torch.nan_to_num(attn) * mask.unsqueeze(-1)
        return attn.squeeze(0) if squeeze else attn


def build_sem_adjacency(h_bert: torch.Tensor, module: SemanticAdjacency, mask=None) -> torch.Tensor:
    return module(h_bert, mask)


class GCNStack(nn.Module):
    """``layers`` rounds of ReLU(norm(A) H W + b); width preserved."""

    def __init__(self, dim: int, layers: int = 2):
        super().__init__()
        if layers < 1:
            raise ValueError("GCN stack needs at least one layer")
        self.linears = nn.ModuleList(nn.Linear(dim, dim) for _ in range(layers))

    def forward(self, h: torch.Tensor, adj: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        norm = normalize_adjacency(adj, mask)
        for lin in self.linears:
            h = torch.relu(norm @ (h @ lin.weight.T) + lin.bias)
        if mask is not None:
            h = h * mask.unsqueeze(-1).to(h.dtype)
        return h


def syn_gcn(h: torch.Tensor, adj_syn: torch.Tensor, stack: GCNStack, mask=None) -> torch.Tensor:
    return stack(h, adj_syn, mask)


sem_gcn = syn_gcn
