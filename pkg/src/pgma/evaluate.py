"""Novel-class evaluation across task modes, plus the prior-threshold
baseline the trained model has to beat."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from pgma.config import RunConfig, config_hash
from pgma.episodes import Episode, TaskMode
from pgma.metrics import IoUAccumulator
from pgma.model import Model, _resize_prior
from pgma.priors import textual_prior
from pgma.robust import apply_mode_transform
from pgma.synth import fold_split, synth_episode

_VAL_SEED_BASE = 10_000_000  # keeps validation draws clear of training seeds


@dataclass
class EvalReport:
    fold: int
    mode: str
    miou: float
    fbiou: float
    per_class: dict[int, float]
    seed: int
    config_hash: str
    episode_count: int

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["per_class"] = {str(k): v for k, v in d["per_class"].items()}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [
            f"fold {self.fold} | mode {self.mode} | {self.episode_count} episodes",
            f"  mIoU   {self.miou:.4f}",
            f"  FB-IoU {self.fbiou:.4f}",
        ]
        for cid, v in sorted(self.per_class.items()):
            lines.append(f"  class {cid:3d}  {v:.4f}")
        lines.append(f"  config {self.config_hash[:12]}")
        return "\n".join(lines) + "\n"


def baseline_textual_predict(ep: Episode, threshold: float = 0.5) -> np.ndarray:
    """Support-free reference: threshold the query's text-alignment map."""
    prior = textual_prior(ep.query.clip_visual, ep.text_embed)
    full = _resize_prior(prior, ep.query.image_size)
    return (full > threshold).astype(np.uint8)


def iter_eval_episodes(rc: RunConfig, mode: TaskMode, count: int | None = None):
    """Deterministic novel-fold episode stream: (clean episode, transformed)."""
    synth_cfg = rc.synth()
    _, novel = fold_split(synth_cfg)
    n = rc.eval_episodes if count is None else count
    for i in range(n):
        cid = novel[i % len(novel)]
        ep = synth_episode(
            synth_cfg, cid, seed=_VAL_SEED_BASE + rc.eval_seed * 1_000_000 + i,
            shots=rc.shots,
        )
        yield ep, apply_mode_transform(ep, mode, seed=i)


def evaluate(model: Model, rc: RunConfig, mode: TaskMode,
             count: int | None = None, progress=None) -> EvalReport:
    """Score the model on novel-class episodes under one task mode."""
    acc = IoUAccumulator()
    for i, (clean, ep) in enumerate(iter_eval_episodes(rc, mode, count)):
        pred = model.predict(ep, mode=mode)
        acc.add(pred, clean.query_mask, clean.class_id)
        if progress is not None and (i + 1) % 100 == 0:
            progress(i + 1)
    return EvalReport(
        fold=rc.fold,
        mode=mode.value,
        miou=acc.miou(),
        fbiou=acc.fb_iou(),
        per_class=acc.per_class(),
        seed=rc.eval_seed,
        config_hash=config_hash(rc),
        episode_count=acc.episodes,
    )


def evaluate_baseline(rc: RunConfig, mode: TaskMode, count: int | None = None) -> EvalReport:
    """Same protocol, but predictions come from the thresholded text prior."""
    acc = IoUAccumulator()
    for clean, ep in iter_eval_episodes(rc, mode, count):
        acc.add(baseline_textual_predict(ep), clean.query_mask, clean.class_id)
    return EvalReport(
        fold=rc.fold,
        mode=mode.value,
        miou=acc.miou(),
        fbiou=acc.fb_iou(),
        per_class=acc.per_class(),
        seed=rc.eval_seed,
        config_hash=config_hash(rc),
        episode_count=acc.episodes,
    )
