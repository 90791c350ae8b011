"""Training and evaluation loops.

All randomness is derived from ``(seed, epoch)`` for batch order and
``(seed, epoch, batch)`` for dropout masks, so a run resumed from a
checkpoint replays exactly what an uninterrupted run would have done.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .ctc import best_path_decode, collapse, ctc_loss_tensor, min_frames
from .data import features_for
from .errors import DimensionMismatch, EmptyDataset, ImpossibleTarget, NonFiniteLoss
from .metrics import error_rate
from .model import ModelConfig, build_model, decays
from .optim import OptimizerState, lr_schedule_update, rmsprop_step

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    uids: list
    references: list
    hypotheses: list
    per: float
    substitutions: int
    insertions: int
    deletions: int
    loss: float
    parameters: int
    frame_accuracy: float | None = None
    epoch_losses: list = field(default_factory=list)

    def to_dict(self):
        return {
            "per": self.per,
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "reference_tokens": sum(len(r) for r in self.references),
            "loss": self.loss,
            "frame_accuracy": self.frame_accuracy,
            "parameters": self.parameters,
            "epoch_losses": self.epoch_losses,
            "utterances": [
                {"id": u, "reference": r, "hypothesis": h}
                for u, r, h in zip(self.uids, self.references, self.hypotheses)
            ],
        }

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def check_dataset(cfg: ModelConfig, utts, role="training"):
    if not utts:
        raise EmptyDataset(f"{role} set is empty")
    for u in utts:
        if u.energies.bands != cfg.input_bands:
            raise DimensionMismatch(f"{u.uid}: {u.energies.bands} bands, config expects {cfg.input_bands}")
        if any(not 0 <= s < cfg.classes for s in u.labels):
            raise DimensionMismatch(f"{u.uid}: label outside [0, {cfg.classes})")
        if cfg.head == "framewise" and len(u.labels) != u.frames:
            raise DimensionMismatch(f"{u.uid}: {len(u.labels)} frame labels for {u.frames} frames")
        if cfg.head == "ctc" and min_frames(u.labels) > u.frames:
            raise ImpossibleTarget(f"{u.uid}: target needs {min_frames(u.labels)} frames, has {u.frames}")


def make_batches(lengths, batch_size, rng):
    """Length-bucketed batches in a shuffled order."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [batches[k] for k in rng.permutation(len(batches))]


def _pad(feats, idx):
    width = feats[idx[0]].shape[1]
    longest = max(feats[i].shape[0] for i in idx)
    x = np.zeros((len(idx), longest, width))
    for row, i in enumerate(idx):
        x[row, :feats[i].shape[0]] = feats[i]
    return x


def batch_loss(model, feats, utts, idx, rng=None) -> T.Tensor:
    """Mean CTC loss per utterance, or mean cross-entropy per frame."""
    cfg = model.cfg
    logits = model(T.Tensor(_pad(feats, idx)), rng)
    if cfg.head == "ctc":
        parts = [ctc_loss_tensor(logits[row], utts[i].labels, frames=utts[i].frames) for row, i in enumerate(idx)]
        total = parts[0]
        for p in parts[1:]:
            total = total + p
        return total * (1.0 / len(idx))
    weights = np.zeros(logits.shape)
    frames = 0
    for row, i in enumerate(idx):
        n = utts[i].frames
        weights[row, np.arange(n), utts[i].labels] = 1.0
        frames += n
    return -(T.total(T.mul(T.log_softmax(logits), weights)) * (1.0 / frames))


def _score_one(model, x, utt):
    cfg = model.cfg
    logits = model(T.Tensor(x[None]))
    z = logits.data[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    if cfg.head == "ctc":
        loss = float(ctc_loss_tensor(T.Tensor(z), utt.labels).data)
        return loss, 1, best_path_decode(logp), utt.labels, 0
    best = np.argmax(logp, axis=1)
    loss = -float(logp[np.arange(len(best)), utt.labels].sum())
    correct = int(np.sum(best == np.asarray(utt.labels)))
    return loss, len(best), collapse(best, -1), collapse(utt.labels, -1), correct


def evaluate(model, utts, threads: int = 1, feats=None) -> EvalReport:
    """Decode every utterance and score it; results merge in utterance order."""
    cfg = model.cfg
    check_dataset(cfg, utts, "evaluation")
    feats = features_for(utts, cfg.normalize_features) if feats is None else feats
    was_training = model.training
    model.eval()
    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                scored = list(pool.map(_score_one, [model] * len(utts), feats, utts))
        else:
            scored = [_score_one(model, x, u) for x, u in zip(feats, utts)]
    finally:
        model.train(was_training)
    loss = sum(s[0] for s in scored) / sum(s[1] for s in scored)
    hyps = [s[2] for s in scored]
    refs = [s[3] for s in scored]
    per, counts = error_rate(refs, hyps)
    accuracy = None
    if cfg.head == "framewise":
        accuracy = sum(s[4] for s in scored) / sum(s[1] for s in scored)
    return EvalReport(
        uids=[u.uid for u in utts], references=refs, hypotheses=hyps, per=per,
        substitutions=counts.substitutions, insertions=counts.insertions, deletions=counts.deletions,
        loss=loss, parameters=model.num_parameters(), frame_accuracy=accuracy,
    )


@dataclass
class TrainResult:
    model: object
    records: list
    best_epoch: int


def _metric(record, name):
    return record["dev_loss"] if name == "dev_loss" else record["dev_per"]


def write_log(records, path):
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def train(cfg: ModelConfig, train_utts, dev_utts, out_dir=None, threads: int = 1, resume=None,
          epochs: int | None = None) -> TrainResult:
    """Run the epoch loop; with ``out_dir`` writes ``metrics.jsonl``, ``last.ckpt`` and ``best.ckpt``."""
    check_dataset(cfg, train_utts, "training")
    check_dataset(cfg, dev_utts, "development")
    schedule = cfg.train
    epochs = schedule.epochs if epochs is None else epochs
    if resume is not None:
        model, state, accumulators = load_checkpoint(resume)
        cfg = model.cfg
        records, best_epoch = state["records"], state["best_epoch"]
        opt = OptimizerState(state["learning_rate"], schedule.rho, schedule.epsilon, state["step"], accumulators)
    else:
        model = build_model(cfg)
        records, best_epoch = [], 0
        opt = OptimizerState(schedule.learning_rate, schedule.rho, schedule.epsilon)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_feats = features_for(train_utts, cfg.normalize_features)
    dev_feats = features_for(dev_utts, cfg.normalize_features)
    params = dict(model.named_parameters())
    lengths = [u.frames for u in train_utts]

    if not records:
        init_train = evaluate(model, train_utts, threads, train_feats)
        init_dev = evaluate(model, dev_utts, threads, dev_feats)
        records.append({"epoch": 0, "train_loss": init_train.loss, "dev_loss": init_dev.loss,
                        "dev_per": init_dev.per, "lr": opt.learning_rate})

    for epoch in range(len(records), epochs + 1):
        model.train()
        lr = opt.learning_rate
        batches = make_batches(lengths, schedule.batch_size, np.random.default_rng([cfg.seed, epoch]))
        running, seen = 0.0, 0
        for b, idx in enumerate(batches):
            loss = batch_loss(model, train_feats, train_utts, idx, np.random.default_rng([cfg.seed, epoch, b]))
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"non-finite loss {value} in epoch {epoch}, batch {b}", batch_index=b)
            grads = T.backward(loss, params.values())
            rmsprop_step(opt, params, {n: grads[p] for n, p in params.items()}, cfg.l2, decays)
            running += value * len(idx)
            seen += len(idx)
        dev = evaluate(model, dev_utts, threads, dev_feats)
        record = {"epoch": epoch, "train_loss": running / seen, "dev_loss": dev.loss, "dev_per": dev.per, "lr": lr}
        records.append(record)
        history = [_metric(r, schedule.schedule_metric) for r in records[1:]]
        opt.learning_rate = lr_schedule_update(schedule, history)
        improved = best_epoch == 0 or _metric(record, schedule.schedule_metric) < _metric(records[best_epoch], schedule.schedule_metric)
        if improved:
            best_epoch = epoch
        log.info("epoch %d train %.5f dev %.5f per %.2f lr %.2e", epoch, record["train_loss"], dev.loss, dev.per, lr)
        if out is not None:
            state = {"records": records, "best_epoch": best_epoch, "learning_rate": opt.learning_rate,
                     "step": opt.step}
            write_log(records, out / "metrics.jsonl")
            save_checkpoint(out / "last.ckpt", model, state, opt)
            if improved:
                save_checkpoint(out / "best.ckpt", model, state)
    return TrainResult(model, records, best_epoch)
