"""Full triplet extraction model: encoders, graphs, interaction, span filter and pair classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import nn

from .corpus import Sentence, Triplet
from .encoder import DualEncoder, EncoderConfig, build_tokenizer
from .graphs import SemanticAdjacency, build_syn_adjacency
from .hfim import Fusion, HfimConfig, Interaction
from .separation import separation_loss
from .spans import NONE, SpanScorer, enumerate_spans, filter_loss, gold_mention_labels, select_candidates
from .triplet import PairScorer, decode, distance_bucket, gold_relation_labels, pair_distance, triplet_loss

ABLATIONS = ("full", "wo_ss", "wo_syn", "wo_sem", "wo_hfim", "e1_only", "e2_only", "biaffine")


class UnknownAblation(ValueError):
    pass


@dataclass
class Batch:
    input_ids: torch.Tensor        # (B, T)
    attention_mask: torch.Tensor   # (B, T)
    pool_first: torch.Tensor       # (B, N, T) word <- first subtoken
    pool_mean: torch.Tensor        # (B, N, T) word <- mean of its subtokens
    word_mask: torch.Tensor        # (B, N) bool
    adj_syn: torch.Tensor          # (B, N, N)
    span_index: torch.Tensor       # (B, S, 2)
    span_mask: torch.Tensor        # (B, S) bool
    span_labels: torch.Tensor      # (B, S)
    spans: list[list[tuple[int, int]]]
    sentences: list[Sentence]

    def __len__(self) -> int:
        return len(self.sentences)


def collate(sentences: Sequence[Sentence], tokenizer, max_span_length: int = 8) -> Batch:
    encoded = [tokenizer.tokenize(s.words) for s in sentences]
    b = len(sentences)
    t = max(len(ids) for ids, _ in encoded)
    n = max(len(s) for s in sentences)
    span_lists = [enumerate_spans(len(s), max_span_length) for s in sentences]
    n_spans = max(len(sp) for sp in span_lists)

    input_ids = torch.full((b, t), tokenizer.pad_id, dtype=torch.long)
    attention_mask = torch.zeros(b, t, dtype=torch.long)
    pool_first = torch.zeros(b, n, t)
    pool_mean = torch.zeros(b, n, t)
    word_mask = torch.zeros(b, n, dtype=torch.bool)
    adj = torch.zeros(b, n, n)
    span_index = torch.zeros(b, n_spans, 2, dtype=torch.long)
    span_mask = torch.zeros(b, n_spans, dtype=torch.bool)
    span_labels = torch.full((b, n_spans), NONE, dtype=torch.long)
    for i, (sent, (ids, word_spans), spans) in enumerate(zip(sentences, encoded, span_lists)):
        input_ids[i, :len(ids)] = torch.tensor(ids)
        attention_mask[i, :len(ids)] = 1
        for w, (first, last) in enumerate(word_spans):
            pool_first[i, w, first] = 1.0
            pool_mean[i, w, first:last + 1] = 1.0 / (last - first + 1)
        word_mask[i, :len(sent)] = True
        adj[i, :len(sent), :len(sent)] = build_syn_adjacency(sent)
        span_index[i, :len(spans)] = torch.tensor(spans)
        span_mask[i, :len(spans)] = True
        span_labels[i, :len(spans)] = torch.tensor(gold_mention_labels(spans, sent.gold_triplets))
    return Batch(input_ids, attention_mask, pool_first, pool_mean, word_mask, adj,
                 span_index, span_mask, span_labels, span_lists, list(sentences))


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hfim: HfimConfig = field(default_factory=HfimConfig)
    fused_dim: int = 768
    width_dim: int = 25
    pair_width_dim: int = 25
    classifier_hidden: int = 150
    classifier_dropout: float = 0.1
    max_span_length: int = 8
    keep_ratio: float = 0.5
    epsilon: float = 1e-8
    ablation: str = "full"


@dataclass
class ModelOutput:
    loss_sp: torch.Tensor
    loss_tri: torch.Tensor
    loss_kl: torch.Tensor | None
    predictions: list[list[Triplet]]


class TripletExtractor(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.ablation == "biaffine":
            cfg.hfim.interaction_mode = "biaffine"
        enc = cfg.encoder
        self.encoder = DualEncoder(enc)
        self.tokenizer = build_tokenizer(enc, self.encoder.backbone)
        d_l, d_b = enc.hidden_lstm, enc.hidden_bert
        self.channel_proj = None
        if cfg.ablation == "e1_only":
            self.channel_proj = nn.Linear(d_b, d_l)
        elif cfg.ablation == "e2_only":
            self.channel_proj = nn.Linear(d_l, d_b)
        self.sem_adjacency = SemanticAdjacency(d_b, cfg.hfim.sem_heads, cfg.hfim.sem_combine)
        self.interaction = Interaction(d_l, d_b, cfg.hfim)
        self.fusion = Fusion(d_l, d_b, cfg.fused_dim)
        self.span_scorer = SpanScorer(cfg.fused_dim, d_b, cfg.width_dim, cfg.max_span_length,
                                      cfg.classifier_hidden, cfg.classifier_dropout)
        self.pair_scorer = PairScorer(self.span_scorer.out_dim, d_b, cfg.pair_width_dim,
                                      cfg.classifier_hidden, cfg.classifier_dropout)
        apply_ablation(cfg.ablation, self)

    def collate(self, sentences: Sequence[Sentence]) -> Batch:
        return collate(sentences, self.tokenizer, self.cfg.max_span_length)

    def channels(self, batch: Batch):
        h_bert, h_lstm, cls = self.encoder(batch, with_lstm=self.cfg.ablation != "e1_only")
        if self.cfg.ablation == "e1_only":
            h_lstm = self.channel_proj(h_bert)
        elif self.cfg.ablation == "e2_only":
            h_bert = self.channel_proj(h_lstm)
        return h_bert, h_lstm, cls

    def word_features(self, batch: Batch):
        mask = batch.word_mask
        h_bert, h_lstm, cls = self.channels(batch)
        a_sem = self.sem_adjacency(h_bert, mask)
        loss_kl = None
        if self.use_separation:
            loss_kl = separation_loss(batch.adj_syn, a_sem, mask, self.cfg.epsilon)
        syn_l, _, _, sem_b = self.interaction(h_lstm, h_bert, batch.adj_syn, a_sem, mask)
        if self.zero_syntactic:
            syn_l = torch.zeros_like(syn_l)
        if self.zero_semantic:
            sem_b = torch.zeros_like(sem_b)
        h_out = self.fusion(syn_l, sem_b) * mask.unsqueeze(-1)
        return h_out, cls, loss_kl

    def forward(self, batch: Batch, teacher_forcing: bool | None = None) -> ModelOutput:
        """Losses plus decoded triplets.

        With ``teacher_forcing`` (default: in training mode) the gold aspect and opinion
        spans are added to the kept candidates so the pair classifier always sees gold pairs.
        """
        if teacher_forcing is None:
            teacher_forcing = self.training
        h_out, cls, loss_kl = self.word_features(batch)
        reps, logits = self.span_scorer(h_out, batch.span_index, cls)
        loss_sp = filter_loss(logits, batch.span_labels, batch.span_mask)
        probs = torch.softmax(logits.detach(), -1)

        pair_reps_a, pair_reps_o, buckets, ctx, labels, owners, pair_lists = [], [], [], [], [], [], []
        for i, sent in enumerate(batch.sentences):
            spans = batch.spans[i]
            targets, opinions = select_candidates(probs[i, :len(spans)], spans, len(sent), self.cfg.keep_ratio)
            if teacher_forcing:
                index = {s: k for k, s in enumerate(spans)}
                for t in sent.gold_triplets:
                    if t.aspect in index and index[t.aspect] not in targets:
                        targets.append(index[t.aspect])
                    if t.opinion in index and index[t.opinion] not in opinions:
                        opinions.append(index[t.opinion])
            pairs = [(a, o) for a in targets for o in opinions]
            span_pairs = [(spans[a], spans[o]) for a, o in pairs]
            pair_lists.append(span_pairs)
            if not pairs:
                continue
            a_idx = torch.tensor([a for a, _ in pairs])
            o_idx = torch.tensor([o for _, o in pairs])
            pair_reps_a.append(reps[i, a_idx])
            pair_reps_o.append(reps[i, o_idx])
            buckets.append(torch.tensor([distance_bucket(pair_distance(a, o)) for a, o in span_pairs]))
            ctx.append(cls[i].expand(len(pairs), -1))
            labels.append(torch.tensor(gold_relation_labels(span_pairs, sent.gold_triplets)))
            owners.append(torch.full((len(pairs),), i))

        predictions: list[list[Triplet]] = [[] for _ in batch.sentences]
        if pair_reps_a:
            rel_logits = self.pair_scorer(torch.cat(pair_reps_a), torch.cat(pair_reps_o),
                                          torch.cat(buckets), torch.cat(ctx))
            loss_tri = triplet_loss(rel_logits, torch.cat(labels), len(batch))
            owner = torch.cat(owners)
            for i in range(len(batch)):
                sel = owner == i
                if sel.any():
                    predictions[i] = decode(pair_lists[i], rel_logits[sel].detach())
        else:
            loss_tri = h_out.sum() * 0.0
        return ModelOutput(loss_sp, loss_tri, loss_kl, predictions)

    @torch.no_grad()
    def predict(self, sentences: Sequence[Sentence]) -> list[list[Triplet]]:
        was_training = self.training
        self.eval()
        try:
            return self(self.collate(sentences), teacher_forcing=False).predictions
        finally:
            self.train(was_training)


def apply_ablation(name: str, model: TripletExtractor) -> TripletExtractor:
    """Configure the switches for one ablation row; the model is modified in place."""
    if name not in ABLATIONS:
        raise UnknownAblation(f"unknown ablation {name!r}; expected one of {', '.join(ABLATIONS)}")
    model.use_separation = name != "wo_ss"
    model.zero_syntactic = name == "wo_syn"
    model.zero_semantic = name == "wo_sem"
    model.interaction.skip_graph_encoders = name == "wo_ss"
    model.interaction.bypass_interaction = name == "wo_hfim"
    if name == "biaffine" and model.interaction.cfg.interaction_mode != "biaffine":
        raise ValueError("biaffine ablation requires a model built with interaction_mode='biaffine'")
    return model
