"""Episodic training loop.

Episodes are synthesized on the fly from base-fold classes (or streamed
from a materialized dataset directory), channel drop is resampled per
level per episode, and the whole run is a pure function of the config —
same config, same loss trace, same weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pgma.config import RunConfig, config_hash, render_config
from pgma.core import backward
from pgma.core import tensor as T
from pgma.core.checkpoint import save_checkpoint
from pgma.core.optim import AdamW
from pgma.core.rng import substream
from pgma.episodes import TaskMode, load_episode
from pgma.losses import segmentation_loss
from pgma.model import Model, ModelConfig
from pgma.synth import sample_training_class, synth_episode


@dataclass
class TrainResult:
    model: Model
    optimizer: AdamW
    history: list[dict] = field(default_factory=list)  # step/total/dice/ce rows
    checkpoint_path: Path | None = None


def _episode_source(rc: RunConfig, data_dir):
    """Yield episodes deterministically: synthesized or from disk."""
    if data_dir is None:
        synth_cfg = rc.synth()

        def draw(i: int):
            j = i % rc.train_episodes if rc.train_episodes else i
            cid = sample_training_class(synth_cfg, j)
            return synth_episode(synth_cfg, cid, seed=j, shots=rc.shots)

        return draw
    paths = sorted(Path(data_dir).glob("*.pgme"))
    if not paths:
        raise FileNotFoundError(f"no .pgme episodes under {data_dir}")

    def draw_disk(i: int):
        return load_episode(paths[i % len(paths)])

    return draw_disk


def train(rc: RunConfig, out_dir, data_dir=None, progress=None) -> TrainResult:
    """Run the full loop; writes loss_curve.csv and checkpoint.pgme.

    progress: optional callable(step, total_loss) for CLI feedback.
    A non-finite gradient aborts the run but first persists the still-
    finite weights to checkpoint_abort.pgme for post-mortem work.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = Model(
        ModelConfig.from_synth(rc.synth(), use_high_order=rc.use_high_order),
        init_seed=rc.train_seed,
    )
    opt = AdamW(model.named_parameters(), lr=rc.lr, weight_decay=rc.weight_decay)
    draw = _episode_source(rc, data_dir)
    meta = {"config_hash": config_hash(rc), "config": render_config(rc)}
    history: list[dict] = []

    for step in range(rc.steps):
        opt.zero_grad()
        total = dice = ce = 0.0
        loss_acc = None
        for b in range(rc.batch):
            ep = draw(step * rc.batch + b)
            drop_rng = (
                substream(rc.train_seed, "drop", step, b) if rc.use_channel_drop else None
            )
            logits = model(ep, mode=TaskMode.FSS, drop_rng=drop_rng,
                           keep_prob=rc.keep_prob)
            loss, d, c = segmentation_loss(logits, ep.query_mask, lam=rc.lam)
            loss_acc = loss if loss_acc is None else T.add(loss_acc, loss)
            dice += d / rc.batch
            ce += c / rc.batch
        loss_acc = T.mul(loss_acc, 1.0 / rc.batch)
        total = loss_acc.item()
        backward(loss_acc)
        try:
            opt.step()
        except FloatingPointError:
            save_checkpoint(out_dir / "checkpoint_abort.pgme", model, opt, meta)
            raise
        history.append({"step": step, "total": total, "dice": dice, "ce": ce})
        if progress is not None and (step % rc.log_every == 0 or step == rc.steps - 1):
            progress(step, total)

    with open(out_dir / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "total", "dice", "ce"])
        writer.writeheader()
        writer.writerows(history)
    ckpt = out_dir / "checkpoint.pgme"
    save_checkpoint(ckpt, model, opt, meta)
    return TrainResult(model=model, optimizer=opt, history=history, checkpoint_path=ckpt)


def load_trained(rc: RunConfig, checkpoint_path) -> Model:
    """Rebuild the architecture from config and restore trained weights."""
    from pgma.core.checkpoint import load_checkpoint

    model = Model(
        ModelConfig.from_synth(rc.synth(), use_high_order=rc.use_high_order),
        init_seed=rc.train_seed,
    )
    load_checkpoint(checkpoint_path, model)
    return model


def loss_drop_fraction(history: list[dict], window: int = 20) -> float:
    """How far the smoothed loss fell: (first - last) / first over
    `window`-step head/tail means."""
    if len(history) < 2 * window:
        window = max(1, len(history) // 4)
    head = float(np.mean([h["total"] for h in history[:window]]))
    tail = float(np.mean([h["total"] for h in history[-window:]]))
    return (head - tail) / head if head else 0.0
