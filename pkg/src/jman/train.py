"""Run configuration, presets, mini-batch training and evaluation."""
from __future__ import annotations

import copy
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import checkpoint
from . import metrics
from . import tensor as tn
from .core import ModelConfig
from .data import PreparedTurn, Vocabulary, tokenize
from .errors import NumericError, ParameterError
from .model import JMAN

log = logging.getLogger(__name__)

PRESETS = {
    "desk": {
        "model": {"d_v": 64, "d_t": 32, "d_a": 32, "d_q": 32, "d_att": 64, "d_emb": 32, "d_dec": 64,
                  "steps": 5, "dropout": 0.2},
        "batch_size": 8,
        "lr": 0.001,
        "epochs": 30,
    },
    "paper": {
        "model": {"d_v": 2048, "d_t": 128, "d_a": 128, "d_q": 128, "d_att": 512, "d_emb": 300, "d_dec": 512,
                  "rgb_in": 2048, "flow_in": 2048, "aud_in": 128, "steps": 5, "dropout": 0.2},
        "batch_size": 32,
        "lr": 0.001,
        "epochs": 30,
    },
}


@dataclass
class RunConfig:
    model: ModelConfig
    preset: str = "desk"
    lr: float = 0.001
    batch_size: int = 8
    epochs: int = 30
    target_loss: Optional[float] = None  # stop once an epoch's mean loss reaches this

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "preset": self.preset, "lr": self.lr,
                "batch_size": self.batch_size, "epochs": self.epochs, "target_loss": self.target_loss}


def make_run_config(preset: str = "desk", overrides: Optional[dict] = None, **model_overrides) -> RunConfig:
    """Instantiate a preset, then apply a nested override dict and keyword model overrides."""
    if preset not in PRESETS:
        raise ParameterError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = copy.deepcopy(PRESETS[preset])
    overrides = copy.deepcopy(overrides or {})
    base["model"].update(overrides.pop("model", {}))
    base["model"].update({k: v for k, v in model_overrides.items() if v is not None})
    base.update(overrides)
    run_fields = {k: v for k, v in base.items() if k in ("lr", "batch_size", "epochs", "target_loss")}
    unknown = set(base) - {"model", "lr", "batch_size", "epochs", "target_loss", "preset"}
    if unknown:
        raise ParameterError(f"unknown run config keys {sorted(unknown)}")
    run = RunConfig(ModelConfig.from_dict(base["model"]), preset, **run_fields)
    if run.batch_size < 1 or run.epochs < 0 or run.lr <= 0:
        raise ParameterError("batch_size >= 1, epochs >= 0 and lr > 0 are required")
    return run


def infer_input_dims(data: Sequence[PreparedTurn]) -> dict:
    """Raw feature widths of the first example, keyed like ModelConfig fields."""
    dims = {}
    if data:
        for stream, key in (("rgb", "rgb_in"), ("flow", "flow_in"), ("aud", "aud_in")):
            arr = data[0].features.get(stream)
            if arr is not None:
                dims[key] = int(arr.shape[1])
    return dims


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = math.inf


def _best_path(path: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}.best{ext or '.jmck'}"


def train(
    model: JMAN,
    data: Sequence[PreparedTurn],
    run: RunConfig,
    vocab: Optional[Vocabulary] = None,
    log_path: Optional[str] = None,
    ckpt_path: Optional[str] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Mini-batch Adam on mean token cross-entropy.

    Examples are reshuffled every epoch; the final short batch is kept.
    Raises :class:`NumericError` on a non-finite loss.
    """
    seed = model.config.seed
    order_rng = np.random.default_rng([seed, 1])
    drop_rng = np.random.default_rng([seed, 2])
    params = list(model.parameters().values())
    opt = tn.Adam(params, lr=run.lr)
    result = TrainResult()
    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss\n")
    n = len(data)
    for epoch in range(1, run.epochs + 1):
        total = 0.0
        order = order_rng.permutation(n)
        for start in range(0, n, run.batch_size):
            batch = order[start : start + run.batch_size]
            opt.zero_grad()
            for i in batch:
                loss = model.loss(data[i], training=True, rng=drop_rng)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch} (example {data[i].key})")
                tn.backward(tn.scale(loss, 1.0 / len(batch)))
                total += value
            opt.step()
        mean = total / max(n, 1)
        result.losses.append(mean)
        log.info("epoch %d mean loss %.6f", epoch, mean)
        if log_path:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(f"{epoch},{mean!r}\n")
        if mean < result.best_loss:
            result.best_loss, result.best_epoch = mean, epoch
            if ckpt_path and vocab is not None:
                checkpoint.save(_best_path(ckpt_path), model, vocab, _meta(run, epoch, result))
        if on_epoch:
            on_epoch(epoch, mean)
        if run.target_loss is not None and mean <= run.target_loss:
            break
    if ckpt_path and vocab is not None:
        checkpoint.save(ckpt_path, model, vocab, _meta(run, len(result.losses), result))
    return result


def _meta(run: RunConfig, epoch: int, result: TrainResult) -> dict:
    return {
        "seed": run.model.seed,
        "epoch": epoch,
        "loss_history": list(result.losses[:epoch]),
        "run": {k: v for k, v in run.to_dict().items() if k != "model"},
    }


def evaluate(
    model: JMAN, data: Sequence[PreparedTurn], vocab: Vocabulary, mode: str = "greedy", beam_size: int = 1
) -> tuple[dict, list[dict]]:
    """Decode every turn and score it; returns ``(report, per-example rows)``."""
    hyps, refs, ids, rows = [], [], [], []
    for p in data:
        hyp, _ = model.generate(p, mode, beam_size)
        words = vocab.decode(hyp.content)
        gold = tokenize(p.turn.answer)
        hyps.append(words)
        refs.append([gold])
        ids.append(p.key)
        label = p.turn.label or {}
        rows.append({"id": p.key, "question": p.turn.question, "hypothesis": " ".join(words),
                     "reference": " ".join(gold), "exact": words == gold, "hop": label.get("hop")})
    return metrics.report(hyps, refs, ids), rows


def accuracy(rows: Sequence[dict], hop: Optional[int] = None) -> float:
    sel = [r for r in rows if hop is None or r.get("hop") == hop]
    return sum(r["exact"] for r in sel) / len(sel) if sel else 0.0
