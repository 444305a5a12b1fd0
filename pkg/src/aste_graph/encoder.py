"""Dual-channel sentence encoding: a backbone channel and a BiLSTM + self-attention channel."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence


class SequenceTooLong(ValueError):
    pass


@dataclass
class EncoderConfig:
    backbone: str = "toy"                  # "toy" | "pretrained"
    backbone_name: str = "bert-base-uncased"
    hidden_bert: int = 768
    hidden_lstm_half: int = 384
    dropout: float = 0.5
    self_attention_heads: int = 8
    word_pooling: str = "first"            # "first" | "mean"
    # toy backbone only
    toy_vocab_size: int = 4096
    toy_layers: int = 1
    toy_heads: int = 4
    toy_max_positions: int = 256
    toy_piece_length: int = 4

    def validate(self) -> None:
        if self.backbone not in ("toy", "pretrained"):
            raise ValueError(f"backbone must be 'toy' or 'pretrained', got {self.backbone!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if (2 * self.hidden_lstm_half) % self.self_attention_heads:
            raise ValueError("self_attention_heads must divide 2 * hidden_lstm_half")
        if self.word_pooling not in ("first", "mean"):
            raise ValueError("word_pooling must be 'first' or 'mean'")
        if self.backbone == "toy" and self.hidden_bert % self.toy_heads:
            raise ValueError("toy_heads must divide hidden_bert")

    @property
    def hidden_lstm(self) -> int:
        return 2 * self.hidden_lstm_half


class ToyTokenizer:
    """Deterministic subword tokenizer: lowercased words cut into fixed-length pieces, hashed into a vocab.

    Id 0 is padding and id 1 the sentence-start token.
    """

    pad_id = 0
    cls_id = 1

    def __init__(self, vocab_size: int = 4096, piece_length: int = 4, max_positions: int = 256):
        self.vocab_size = vocab_size
        self.piece_length = piece_length
        self.max_positions = max_positions

    def pieces(self, word: str) -> list[str]:
        w = word.lower()
        return [w[i:i + self.piece_length] for i in range(0, len(w), self.piece_length)] or [""]

    def piece_id(self, piece: str, first: bool) -> int:
        key = ("" if first else "##") + piece
        return 2 + zlib.crc32(key.encode("utf-8")) % (self.vocab_size - 2)

    def tokenize(self, words: Sequence[str]) -> tuple[list[int], list[tuple[int, int]]]:
        ids, spans = [self.cls_id], []
        for word in words:
            start = len(ids)
            for k, piece in enumerate(self.pieces(word)):
                ids.append(self.piece_id(piece, k == 0))
            spans.append((start, len(ids) - 1))
        if len(ids) > self.max_positions:
            raise SequenceTooLong(f"{len(ids)} subtokens exceed the backbone limit of {self.max_positions}")
        return ids, spans


class HFTokenizer:
    """Wraps a fast tokenizer from ``transformers`` with word alignment."""

    def __init__(self, name_or_path: str, max_positions: int):
        from transformers import AutoTokenizer

        self.tok = AutoTokenizer.from_pretrained(name_or_path, use_fast=True)
        self.pad_id = self.tok.pad_token_id or 0
        self.max_positions = max_positions

    def tokenize(self, words: Sequence[str]) -> tuple[list[int], list[tuple[int, int]]]:
        enc = self.tok(list(words), is_split_into_words=True, add_special_tokens=True)
        ids = enc["input_ids"]
        if len(ids) > self.max_positions:
            raise SequenceTooLong(f"{len(ids)} subtokens exceed the backbone limit of {self.max_positions}")
        spans: list[list[int]] = [[-1, -1] for _ in words]
        for pos, w in enumerate(enc.word_ids()):
            if w is None:
                continue
            if spans[w][0] < 0:
                spans[w][0] = pos
            spans[w][1] = pos
        for w, (first, _) in enumerate(spans):
            if first < 0:  # word the tokenizer dropped entirely; fall back to [CLS]
                spans[w] = [0, 0]
        return ids, [tuple(s) for s in spans]


class ToyBackbone(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.hidden_bert
        self.tok_emb = nn.Embedding(cfg.toy_vocab_size, d, padding_idx=0)
        self.pos_emb = nn.Embedding(cfg.toy_max_positions, d)
        layer = nn.TransformerEncoderLayer(d, cfg.toy_heads, dim_feedforward=2 * d, dropout=0.1, batch_first=True)
        self.layers = nn.TransformerEncoder(layer, cfg.toy_layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        pos = torch.arange(input_ids.size(1), device=input_ids.device)
        x = self.norm(self.tok_emb(input_ids) + self.pos_emb(pos)[None])
        return self.layers(x, src_key_padding_mask=~attention_mask.bool())


class PretrainedBackbone(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        from transformers import AutoModel

        self.model = AutoModel.from_pretrained(cfg.backbone_name)
        if self.model.config.hidden_size != cfg.hidden_bert:
            raise ValueError(f"backbone width {self.model.config.hidden_size} != hidden_bert {cfg.hidden_bert}")

    @property
    def max_positions(self) -> int:
        return self.model.config.max_position_embeddings

    def forward(self, input_ids, attention_mask):
        return self.model(input_ids=input_ids, attention_mask=attention_mask).last_hidden_state


def build_tokenizer(cfg: EncoderConfig, backbone: nn.Module | None = None):
    if cfg.backbone == "toy":
        return ToyTokenizer(cfg.toy_vocab_size, cfg.toy_piece_length, cfg.toy_max_positions)
    limit = backbone.max_positions if isinstance(backbone, PretrainedBackbone) else 512
    return HFTokenizer(cfg.backbone_name, limit)


class MaskedSelfAttention(nn.Module):
    """Single multi-head self-attention layer with a residual connection."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)

    def forward(self, x: torch.Tensor, mask: torch.Tensor, return_weights: bool = False):
        out, weights = self.attn(x, x, x, key_padding_mask=~mask, need_weights=return_weights,
                                 average_attn_weights=True)
        # padded query rows still attend to real keys; zero them
        out = (x + out) * mask.unsqueeze(-1)
        return (out, weights) if return_weights else out


class BiLSTMChannel(nn.Module):
    def __init__(self, in_dim: int, hidden_half: int, heads: int):
        super().__init__()
        self.lstm = nn.LSTM(in_dim, hidden_half, batch_first=True, bidirectional=True)
        self.self_attn = MaskedSelfAttention(2 * hidden_half, heads)

    def recurrent(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        lengths = mask.sum(-1).clamp(min=1).cpu()
        packed = pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.size(1))
        return out * mask.unsqueeze(-1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.self_attn(self.recurrent(x, mask), mask)


class DualEncoder(nn.Module):
    """Produces word-level ``H_bert`` and ``H_lstm`` plus the sentence-start vector."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.backbone = ToyBackbone(cfg) if cfg.backbone == "toy" else PretrainedBackbone(cfg)
        self.lstm_channel = BiLSTMChannel(cfg.hidden_bert, cfg.hidden_lstm_half, cfg.self_attention_heads)
        self.dropout = nn.Dropout(cfg.dropout)

    def encode_bert(self, batch) -> tuple[torch.Tensor, torch.Tensor]:
        sub = self.backbone(batch.input_ids, batch.attention_mask)
        pool = batch.pool_first if self.cfg.word_pooling == "first" else batch.pool_mean
        h_bert = torch.bmm(pool, sub)
        return h_bert, sub[:, 0]

    def encode_lstm_channel(self, h_words: torch.Tensor, batch) -> torch.Tensor:
        return self.lstm_channel(h_words, batch.word_mask)

    def forward(self, batch, with_lstm: bool = True):
        """Returns ``(H_bert, H_lstm, cls)``; ``H_lstm`` is None when ``with_lstm`` is off."""
        h_bert, cls = self.encode_bert(batch)
        mask = batch.word_mask.unsqueeze(-1)
        h_lstm = None
        if with_lstm:
            h_lstm = self.dropout(self.encode_lstm_channel(h_bert, batch)) * mask
        return self.dropout(h_bert) * mask, h_lstm, cls
