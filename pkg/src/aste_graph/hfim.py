"""
Heterogeneous feature interaction between the syntactic and semantic branches.

Each branch concatenates the two channels, propagates with a normalized GCN
convolution, rescales node features with attention double-pooling, then runs
gated message passing over a sparsified graph whose edge weights are cosine
similarities of the endpoint features. ``MutualBiaffine`` is the drop-in
replacement used for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .graphs import GCNStack, normalize_adjacency


@dataclass
class HfimConfig:
    gcn_layers: int = 2          # SynGCN / SemGCN depth
    gcnconv_layers: int = 1
    gatedconv_layers: int = 1
    sadpool_layers: int = 1
    sparsify_threshold: float = 0.0
    interaction_mode: str = "hfim"   # "hfim" | "biaffine"
    sem_heads: int = 4
    sem_combine: str = "mean"        # head combination for the semantic adjacency

    def validate(self) -> None:
        if self.interaction_mode not in ("hfim", "biaffine"):
            raise ValueError(f"unknown interaction_mode {self.interaction_mode!r}")
        if self.gcn_layers < 1:
            raise ValueError("gcn_layers must be >= 1")
        if self.interaction_mode == "hfim" and min(self.gcnconv_layers, self.gatedconv_layers, self.sadpool_layers) < 1:
            raise ValueError("all interaction layer counts must be >= 1")


@dataclass
class SparseGraph:
    edge_index: torch.Tensor   # (2, E) rows are (src, dst)
    edge_attr: torch.Tensor    # (E,)
    num_nodes: int

    def to_dense(self) -> torch.Tensor:
        """Dense matrix with ``A[dst, src] = weight``."""
        dense = torch.zeros(self.num_nodes, self.num_nodes, dtype=self.edge_attr.dtype, device=self.edge_attr.device)
        dense[self.edge_index[1], self.edge_index[0]] = self.edge_attr
        return dense


def sadpool(h: torch.Tensor, a_sem: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """ReLU(H * (1 + row_mean(A_sem) + row_max(A_sem))), statistics over valid columns only."""
    if mask is None:
        s_mean = a_sem.mean(-1, keepdim=True)
        s_max = a_sem.max(-1, keepdim=True).values
    else:
        col = mask.unsqueeze(-2)
        n_valid = mask.sum(-1, keepdim=True).clamp(min=1).unsqueeze(-1).to(a_sem.dtype)
        s_mean = (a_sem * col).sum(-1, keepdim=True) / n_valid
        s_max = a_sem.masked_fill(~col, float("-inf")).max(-1, keepdim=True).values
        s_max = torch.nan_to_num(s_max, neginf=0.0)
    return torch.relu(h * (1.0 + s_mean + s_max))


class SADPool(nn.Module):
    def __init__(self, layers: int = 1):
        super().__init__()
        self.layers = layers

    def forward(self, h, a_sem, mask=None):
        for _ in range(self.layers):
            h = sadpool(h, a_sem, mask)
        return h


def gcn_conv(h: torch.Tensor, adj: torch.Tensor | SparseGraph, weight: torch.Tensor, mask=None) -> torch.Tensor:
    if isinstance(adj, SparseGraph):
        adj = adj.to_dense()
    out = normalize_adjacency(adj, mask) @ (h @ weight)
    if mask is not None:
        out = out * mask.unsqueeze(-1).to(out.dtype)
    return out


class GCNConv(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, bias: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim)) if bias else None
        nn.init.xavier_uniform_(self.weight)

    def forward(self, h, adj, mask=None):
        out = gcn_conv(h, adj, self.weight, mask)
        if self.bias is not None:
            out = out + self.bias
        return out


def sparsify(adj: torch.Tensor, feats: torch.Tensor, threshold: float = 0.0,
             mask: torch.Tensor | None = None) -> SparseGraph:
    """Edges j -> i wherever ``adj[i, j] > threshold``; weights are cosine(feats[i], feats[j]).

    Batched inputs ``(B, N, N)`` / ``(B, N, F)`` become one graph over ``B * N`` nodes.
    """
    if adj.dim() == 2:
        adj, feats = adj.unsqueeze(0), feats.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)
    b, n, _ = adj.shape
    keep = adj > threshold
    if mask is not None:
        keep = keep & mask.unsqueeze(-1) & mask.unsqueeze(-2)
    bi, dst, src = keep.nonzero(as_tuple=True)
    unit = F.normalize(feats, dim=-1, eps=1e-12)
    attr = (unit[bi, dst] * unit[bi, src]).sum(-1).clamp(-1.0, 1.0)
    edge_index = torch.stack([bi * n + src, bi * n + dst])
    return SparseGraph(edge_index, attr, b * n)


class GatedGraphConv(nn.Module):
    """m_i = sum_j e_ji * (h_j Theta); h_i <- GRUCell(m_i, h_i), repeated ``layers`` times."""

    def __init__(self, dim: int, layers: int = 1):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(layers, dim, dim))
        self.gru = nn.GRUCell(dim, dim)
        nn.init.xavier_uniform_(self.weight.view(-1, dim))

    def forward(self, h: torch.Tensor, edge_index: torch.Tensor, edge_attr: torch.Tensor) -> torch.Tensor:
        src, dst = edge_index
        for theta in self.weight:
            msg = (h @ theta)[src] * edge_attr.unsqueeze(-1)
            m = torch.zeros_like(h).index_add(0, dst, msg)
            h = self.gru(m, h)
        return h


def gated_graph_conv(h, edge_index, edge_attr, module: GatedGraphConv):
    return module(h, edge_index, edge_attr)


class MutualBiaffine(nn.Module):
    """syn' = softmax(syn W1 sem^T) sem and sem' = softmax(sem W2 syn^T) syn."""

    def __init__(self, dim: int):
        super().__init__()
        self.w1 = nn.Parameter(torch.empty(dim, dim))
        self.w2 = nn.Parameter(torch.empty(dim, dim))
        nn.init.xavier_uniform_(self.w1)
        nn.init.xavier_uniform_(self.w2)

    def forward(self, h_syn, h_sem, mask):
        key_mask = ~mask.unsqueeze(1)
        a1 = torch.softmax((h_syn @ self.w1 @ h_sem.transpose(1, 2)).masked_fill(key_mask, -1e9), dim=-1)
        a2 = torch.softmax((h_sem @ self.w2 @ h_syn.transpose(1, 2)).masked_fill(key_mask, -1e9), dim=-1)
        m = mask.unsqueeze(-1).to(h_syn.dtype)
        return (a1 @ h_sem) * m, (a2 @ h_syn) * m


class InteractionBranch(nn.Module):
    """GCNConv -> SADPool -> gated message passing over one graph (syntactic or semantic)."""

    def __init__(self, dim: int, cfg: HfimConfig):
        super().__init__()
        self.threshold = cfg.sparsify_threshold
        self.convs = nn.ModuleList(GCNConv(dim, dim) for _ in range(cfg.gcnconv_layers))
        self.sadpool = SADPool(cfg.sadpool_layers)
        self.gated = GatedGraphConv(dim, cfg.gatedconv_layers)

    def forward(self, h, adj, a_sem, mask, threshold=None):
        for conv in self.convs:
            h = torch.relu(conv(h, adj, mask))
        h = self.sadpool(h, a_sem, mask)
        graph = sparsify(adj, h, self.threshold if threshold is None else threshold, mask)
        b, n, d = h.shape
        out = torch.relu(self.gated(h.reshape(b * n, d), graph.edge_index, graph.edge_attr)).view(b, n, d)
        return out * mask.unsqueeze(-1).to(out.dtype)


class Interaction(nn.Module):
    """Graph-encoder stage (per-channel SynGCN/SemGCN) followed by the interaction stage.

    ``skip_graph_encoders`` passes the channels through unchanged; ``bypass_interaction``
    returns the graph-encoder outputs directly. Both exist for ablations.
    """

    def __init__(self, d_lstm: int, d_bert: int, cfg: HfimConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.d_lstm, self.d_bert = d_lstm, d_bert
        self.syn_gcn_lstm = GCNStack(d_lstm, cfg.gcn_layers)
        self.syn_gcn_bert = GCNStack(d_bert, cfg.gcn_layers)
        self.sem_gcn_lstm = GCNStack(d_lstm, cfg.gcn_layers)
        self.sem_gcn_bert = GCNStack(d_bert, cfg.gcn_layers)
        dim = d_lstm + d_bert
        if cfg.interaction_mode == "hfim":
            self.syn_branch = InteractionBranch(dim, cfg)
            self.sem_branch = InteractionBranch(dim, cfg)
        else:
            self.biaffine = MutualBiaffine(dim)
        self.skip_graph_encoders = False
        self.bypass_interaction = False

    def split(self, h):
        return h[..., :self.d_lstm], h[..., self.d_lstm:]

    def forward(self, h_lstm, h_bert, a_syn, a_sem, mask):
        if self.skip_graph_encoders:
            syn_l, syn_b, sem_l, sem_b = h_lstm, h_bert, h_lstm, h_bert
        else:
            syn_l = self.syn_gcn_lstm(h_lstm, a_syn, mask)
            syn_b = self.syn_gcn_bert(h_bert, a_syn, mask)
            sem_l = self.sem_gcn_lstm(h_lstm, a_sem, mask)
            sem_b = self.sem_gcn_bert(h_bert, a_sem, mask)
        if self.bypass_interaction:
            return syn_l, syn_b, sem_l, sem_b
        h_syn = torch.cat([syn_l, syn_b], -1)
        h_sem = torch.cat([sem_l, sem_b], -1)
        if self.cfg.interaction_mode == "biaffine":
            h_syn, h_sem = self.biaffine(h_syn, h_sem, mask)
        else:
            # the dependency graph is already sparse: keep exactly its edges
            h_syn = self.syn_branch(h_syn, a_syn, a_sem, mask, threshold=0.0)
            h_sem = self.sem_branch(h_sem, a_sem, a_sem, mask)
        return (*self.split(h_syn), *self.split(h_sem))


class Fusion(nn.Module):
    def __init__(self, d_lstm: int, d_bert: int, d_out: int):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(d_lstm + d_bert, d_out), nn.ReLU(), nn.Linear(d_out, d_out))

    def forward(self, h_lstm_syn, h_bert_sem):
        return self.mlp(torch.cat([h_lstm_syn, h_bert_sem], -1))
