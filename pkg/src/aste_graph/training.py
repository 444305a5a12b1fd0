"""Loss composition, the optimization loop, evaluation passes and checkpoints."""

from __future__ import annotations

import copy
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import RunConfig, config_from_dict
from .corpus import Sentence, batch_indices
from .evaluation import EvalReport, score
from .model import TripletExtractor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NonFiniteLoss(RuntimeError):
    pass


class OutOfMemory(RuntimeError):
    pass


class CheckpointVersionMismatch(RuntimeError):
    pass


def total_loss(loss_sp, loss_tri, loss_kl, alpha: float):
    """L_sp + L_tri + alpha * L_kl; ``loss_kl=None`` drops the separation term entirely."""
    total = loss_sp + loss_tri
    if loss_kl is not None and alpha:
        total = total + alpha * loss_kl
    if not math.isfinite(total.item()):
        parts = {"sp": loss_sp.item(), "tri": loss_tri.item(), "kl": None if loss_kl is None else loss_kl.item()}
        raise NonFiniteLoss(f"non-finite loss {total.item()} (components {parts}, alpha={alpha})")
    return total


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def build_model(cfg: RunConfig) -> TripletExtractor:
    model_cfg = copy.deepcopy(cfg.model)
    model_cfg.ablation = cfg.ablation
    return TripletExtractor(model_cfg)


def warmup_linear(total_steps: int, warmup_ratio: float):
    warmup = int(total_steps * warmup_ratio)

    def factor(step: int) -> float:
        if warmup and step < warmup:
            return (step + 1) / warmup
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup))

    return factor


def make_optimizer(model: TripletExtractor, cfg: RunConfig) -> torch.optim.Optimizer:
    if cfg.head_learning_rate is None:
        groups = [{"params": [p for p in model.parameters() if p.requires_grad]}]
    else:
        backbone = {id(p) for p in model.encoder.backbone.parameters()}
        groups = [
            {"params": [p for p in model.parameters() if id(p) in backbone]},
            {"params": [p for p in model.parameters() if id(p) not in backbone], "lr": cfg.head_learning_rate},
        ]
    return torch.optim.AdamW(groups, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


@torch.no_grad()
def evaluate(model: TripletExtractor, sentences: Sequence[Sentence], batch_size: int = 16):
    model.eval()
    preds = []
    for idx in batch_indices(len(sentences), batch_size):
        preds.extend(model(model.collate([sentences[i] for i in idx]), teacher_forcing=False).predictions)
    report = score(preds, [s.gold_triplets for s in sentences])
    return report, preds


@dataclass
class TrainResult:
    best_dev_f1: float = -1.0
    best_epoch: int = -1
    step_losses: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    checkpoint: Path | None = None


def _step(model, optimizer, scheduler, cfg: RunConfig, sentences: list[Sentence]) -> float:
    out = model(model.collate(sentences))
    loss = total_loss(out.loss_sp, out.loss_tri, out.loss_kl, cfg.alpha)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    scheduler.step()
    return loss.item()


def train(cfg: RunConfig, train_set: Sequence[Sentence], dev_set: Sequence[Sentence] | None = None,
          out_dir: str | Path | None = None, max_steps: int | None = None,
          model: TripletExtractor | None = None) -> tuple[TripletExtractor, TrainResult]:
    """Train with AdamW and a warmup/linear-decay schedule, keeping the best dev-F1 weights.

    When ``out_dir`` is given, ``{out_dir}/{run_name}/`` receives ``best.ckpt``,
    ``metrics.jsonl`` and ``config.json`` (the resolved configuration).
    """
    cfg.validate()
    seed_everything(cfg.seed)
    model = model or build_model(cfg)
    dev_set = list(dev_set) if dev_set is not None else list(train_set)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    optimizer = make_optimizer(model, cfg)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, warmup_linear(total_steps, cfg.warmup_ratio))

    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / cfg.run_name
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(run_dir / "config.json")
        (run_dir / "metrics.jsonl").write_text("")

    result = TrainResult()
    best_state = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        if step >= total_steps:
            break
        model.train()
        epoch_losses = []
        for idx in batch_indices(len(train_set), cfg.batch_size, shuffle=True, seed=cfg.seed + epoch):
            if step >= total_steps:
                break
            try:
                loss = _step(model, optimizer, scheduler, cfg, [train_set[i] for i in idx])
            except torch.OutOfMemoryError as exc:
                raise OutOfMemory(f"out of memory at batch size {cfg.batch_size}; try a smaller batch_size") from exc
            step += 1
            epoch_losses.append(loss)
            result.step_losses.append(loss)
        report, _ = evaluate(model, dev_set, cfg.batch_size)
        record = {"epoch": epoch, "step": step, "train_loss": float(np.mean(epoch_losses)),
                  "dev_precision": report.precision, "dev_recall": report.recall, "dev_f1": report.f1}
        result.epochs.append(record)
        log.info("epoch %d loss %.4f dev f1 %.4f", epoch, record["train_loss"], report.f1)
        if run_dir is not None:
            with (run_dir / "metrics.jsonl").open("a") as fh:
                fh.write(json.dumps(record) + "\n")
        if report.f1 > result.best_dev_f1:
            result.best_dev_f1, result.best_epoch = report.f1, epoch
            best_state = copy.deepcopy(model.state_dict())
            if run_dir is not None:
                result.checkpoint = save_checkpoint(run_dir / "best.ckpt", model, cfg, epoch, report)
    if best_state is not None:
        model.load_state_dict(best_state)
    return model, result


def save_checkpoint(path: str | Path, model: TripletExtractor, cfg: RunConfig, epoch: int = 0,
                    report: EvalReport | None = None) -> Path:
    path = Path(path)
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "state_dict": model.state_dict(),
        "epoch": epoch,
        "dev_f1": None if report is None else report.f1,
    }, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[TripletExtractor, RunConfig]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionMismatch(f"checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}")
    cfg = config_from_dict(payload["config"])
    model = build_model(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, cfg
