"""Teacher-forced training: Adam with warmup schedule, batching, checkpoints.

The learning rate follows lr = d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
(peak at ``step == warmup``). Batches bucket utterances by length and pad
features and token sequences to the per-batch maximum, with key and loss
masks so padding never changes an utterance's loss.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, TrainingError
from .frontend import read_features, read_manifest
from .model import (
    BOS_ID,
    EOS_ID,
    ModelConfig,
    MultiChannelTransformer,
    NUM_SPECIAL_TOKENS,
    PAD_ID,
    ParameterStore,
    label_smoothed_loss,
)
from .util import substream

log = logging.getLogger("mcasr.training")


def data_to_model_ids(tokens) -> list[int]:
    """Map data-token ids to model vocabulary ids (shifted past PAD/BOS/EOS)."""
    return [int(t) + NUM_SPECIAL_TOKENS for t in tokens]


def model_to_data_ids(ids) -> list[int]:
    """Inverse of :func:`data_to_model_ids`; drops special tokens."""
    return [int(t) - NUM_SPECIAL_TOKENS for t in ids if int(t) >= NUM_SPECIAL_TOKENS]


def noam_lr(step: int, d_model: int, warmup_steps: int) -> float:
    """Warmup-then-decay schedule; linear ramp up to ``warmup_steps``."""
    if step < 1:
        raise ConfigError("schedule step must be >= 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


@dataclass
class TrainRunConfig:
    # the schedule peaks at step == warmup_steps; short warmups reach peak
    # learning rates that destabilize small models (see README), so the
    # defaults keep the ramp going for the whole run
    batch_size: int = 8
    max_steps: int = 5000
    warmup_steps: int = 5000
    seed: int = 0
    checkpoint_every: int = 500
    eval_every: int = 200
    grad_clip_norm: float | None = None
    eval_utterances: int = 64     # cap on validation utterances per eval
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9

    def __post_init__(self):
        for name in ("batch_size", "max_steps", "warmup_steps", "checkpoint_every", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be positive when set")


class AdamOptimizer:
    """Adam with bias correction and the warmup learning-rate schedule."""

    def __init__(self, store: ParameterStore, run_cfg: TrainRunConfig):
        self.store = store
        self.cfg = run_cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def current_lr(self, step: int | None = None) -> float:
        step = self.step_count if step is None else step
        return noam_lr(max(step, 1), self.store.cfg.d_model, self.cfg.warmup_steps)

    def step(self) -> float:
        """Apply one update from the gradients on the store; returns the lr used."""
        self.step_count += 1
        c = self.cfg
        lr = self.current_lr()
        grads = {}
        for name, t in self.store.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            grads[name] = g
        if c.grad_clip_norm is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > c.grad_clip_norm:
                factor = c.grad_clip_norm / total
                grads = {name: g * factor for name, g in grads.items()}
        t_step = self.step_count
        bc1 = 1.0 - c.beta1 ** t_step
        bc2 = 1.0 - c.beta2 ** t_step
        for name, t in self.store.items():
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            t.data -= lr * m_hat / (np.sqrt(v_hat) + c.adam_eps)
        return lr


# ---------------------------------------------------------------------------
# batching


@dataclass
class PaddedUtterance:
    utterance_id: str
    mags: list          # C arrays (T_pad, F_mag)
    phas: list          # C arrays (T_pad, F_pha)
    key_keep: np.ndarray  # (T_pad,) bool, False on PAD frames
    dec_input: np.ndarray  # (U_pad,) BOS + targets, PAD-padded
    loss_targets: np.ndarray  # (U_pad,) targets + EOS, PAD-padded

    @property
    def channel_features(self):
        return list(zip(self.mags, self.phas))


@dataclass
class Batch:
    items: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)


def load_utterance(data_dir, entry, cache: dict | None = None):
    """Read all channel feature files for one manifest entry.

    ``cache`` (path -> ChannelFeatures) avoids re-reading across epochs; the
    cached features are treated as read-only.
    """
    data_dir = Path(data_dir)
    channels = []
    for rel in entry["channel_paths"]:
        path = data_dir / rel
        if cache is not None and rel in cache:
            channels.append(cache[rel])
            continue
        if not path.exists():
            raise DataError(
                f"missing feature file {path} for utterance {entry['utterance_id']}"
            )
        feats = read_features(path)
        if cache is not None:
            cache[rel] = feats
        channels.append(feats)
    return channels


def pad_utterance(channels, tokens, t_pad: int, u_pad: int, utterance_id="") -> PaddedUtterance:
    """Pad features to ``t_pad`` frames and token sequences to ``u_pad``."""
    t = channels[0].mag.shape[0]
    mags, phas = [], []
    for ch in channels:
        mag = np.zeros((t_pad, ch.mag.shape[1]))
        pha = np.zeros((t_pad, ch.pha.shape[1]))
        mag[:t] = ch.mag
        pha[:t] = ch.pha
        mags.append(mag)
        phas.append(pha)
    key_keep = np.zeros(t_pad, dtype=bool)
    key_keep[:t] = True

    ids = data_to_model_ids(tokens)
    dec_input = np.full(u_pad, PAD_ID, dtype=np.int64)
    dec_input[0] = BOS_ID
    dec_input[1 : 1 + len(ids)] = ids
    loss_targets = np.full(u_pad, PAD_ID, dtype=np.int64)
    loss_targets[: len(ids)] = ids
    loss_targets[len(ids)] = EOS_ID
    return PaddedUtterance(utterance_id, mags, phas, key_keep, dec_input, loss_targets)


def make_batches(entries, batch_size: int, seed: int, data_dir, epoch: int = 0, cache=None):
    """Length-bucketed, padded batches in a seed-deterministic order."""
    order = sorted(range(len(entries)), key=lambda i: (entries[i]["num_frames"], i))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    rng = substream(seed, "batch", epoch)
    for pos in rng.permutation(len(chunks)):
        chunk = chunks[pos]
        batch = Batch()
        t_pad = max(entries[i]["num_frames"] for i in chunk)
        u_pad = max(len(entries[i]["transcript"]) for i in chunk) + 1  # +1 for EOS
        for i in chunk:
            entry = entries[i]
            channels = load_utterance(data_dir, entry, cache)
            batch.items.append(
                pad_utterance(
                    channels, entry["transcript"], t_pad, u_pad, entry["utterance_id"]
                )
            )
        yield batch


# ---------------------------------------------------------------------------
# training driver


def batch_loss(model: MultiChannelTransformer, batch: Batch):
    """Mean teacher-forced loss over the batch, as one autodiff graph."""
    from . import autodiff as ad

    losses = []
    for item in batch.items:
        feats = item.channel_features[: model.cfg.num_channels]
        logits = model.forward(feats, item.dec_input, key_keep=item.key_keep)
        losses.append(
            label_smoothed_loss(logits, item.loss_targets, model.cfg.label_smoothing)
        )
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(total, l)
    return ad.scale(total, 1.0 / len(losses))


def evaluate(model: MultiChannelTransformer, entries, data_dir, max_utterances=None, cache=None):
    """Validation loss and greedy WER over (a cap of) the given utterances."""
    from .decoding import greedy_decode, wer

    if max_utterances is not None:
        entries = entries[:max_utterances]
    model.eval_mode()
    losses, errors, ref_len = [], 0, 0
    for entry in entries:
        channels = load_utterance(data_dir, entry, cache)
        item = pad_utterance(
            channels,
            entry["transcript"],
            channels[0].mag.shape[0],
            len(entry["transcript"]) + 1,
            entry["utterance_id"],
        )
        feats = item.channel_features[: model.cfg.num_channels]
        logits = model.forward(feats, item.dec_input, key_keep=item.key_keep)
        losses.append(float(label_smoothed_loss(logits, item.loss_targets, model.cfg.label_smoothing).data))
        hyp = greedy_decode(model, feats, max_len=len(entry["transcript"]) + 3)
        s, d, i, _ = wer(entry["transcript"], model_to_data_ids(hyp))
        errors += s + d + i
        ref_len += len(entry["transcript"])
    return float(np.mean(losses)), errors / max(ref_len, 1)


def train_loop(model_cfg: ModelConfig, run_cfg: TrainRunConfig, data_dir, out_dir) -> dict:
    """Train on a persisted dataset; writes metrics JSONL and checkpoints.

    Returns a summary with the best validation WER and artifact paths.
    Aborts with :class:`TrainingError` on a non-finite loss, keeping the most
    recent good checkpoint on disk.
    """
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_entries = read_manifest(data_dir / "train.jsonl")
    valid_entries = read_manifest(data_dir / "valid.jsonl")
    if not train_entries:
        raise DataError(f"no training utterances in {data_dir}")

    store = ParameterStore.initialize(model_cfg, substream(run_cfg.seed, "init"))
    model = MultiChannelTransformer(model_cfg, store)
    opt = AdamOptimizer(store, run_cfg)

    metrics_path = out_dir / "metrics.jsonl"
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    metrics_f = open(metrics_path, "w", encoding="utf-8")
    best_wer = float("inf")
    start = time.monotonic()
    step = 0
    epoch = 0
    metrics = []
    cache: dict = {}
    try:
        while step < run_cfg.max_steps:
            for batch in make_batches(
                train_entries, run_cfg.batch_size, run_cfg.seed, data_dir,
                epoch=epoch, cache=cache,
            ):
                step += 1
                if model_cfg.dropout > 0:
                    model.train_mode(substream(run_cfg.seed, "dropout", step))
                store.zero_grad()
                loss = batch_loss(model, batch)
                loss_val = float(loss.data)
                if not np.isfinite(loss_val):
                    raise TrainingError(
                        f"non-finite training loss at step {step}; last checkpoint retained"
                    )
                loss.backward()
                lr = opt.step()

                if step % run_cfg.eval_every == 0 or step == run_cfg.max_steps:
                    valid_loss, valid_wer = evaluate(
                        model, valid_entries, data_dir, run_cfg.eval_utterances, cache=cache
                    )
                    record = {
                        "step": step,
                        "lr": lr,
                        "train_loss": loss_val,
                        "valid_loss": valid_loss,
                        "valid_wer": valid_wer,
                        "wall_ms": int((time.monotonic() - start) * 1000),
                    }
                    metrics.append(record)
                    metrics_f.write(json.dumps(record) + "\n")
                    metrics_f.flush()
                    log.info(
                        "step %d lr %.3g train %.4f valid %.4f wer %.3f",
                        step, lr, loss_val, valid_loss, valid_wer,
                    )
                    if valid_wer < best_wer:
                        best_wer = valid_wer
                        store.save(best_path)
                if step % run_cfg.checkpoint_every == 0:
                    store.save(last_path)
                if step >= run_cfg.max_steps:
                    break
            epoch += 1
        store.save(last_path)
        if not best_path.exists():
            store.save(best_path)
    finally:
        metrics_f.close()
    return {
        "steps": step,
        "best_valid_wer": best_wer,
        "metrics_path": str(metrics_path),
        "best_checkpoint": str(best_path),
        "last_checkpoint": str(last_path),
        "metrics": metrics,
    }
