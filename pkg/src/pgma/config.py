"""Run configuration: one flat `key = value` text block.

Every tunable of a run lives here so that a single sha256 over the
canonical rendering identifies the experiment. Unknown keys are rejected
loudly — a typo must not silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from pgma.synth import SynthConfig


@dataclass(frozen=True)
class RunConfig:
    # data generation
    image_size: int = 32
    grids: tuple[int, ...] = (8, 16)
    layers_per_stage: tuple[int, ...] = (2, 2)
    feat_dim: int = 32
    text_dim: int = 16
    n_classes: int = 20
    n_folds: int = 4
    fold: int = 0
    noise: float = 0.3
    tex_jitter: float = 0.5
    dir_jitter: float = 0.5
    bg_pull: float = 0.45
    align_lo: float = 0.35
    align_hi: float = 0.85
    text_garble: float = 0.0
    data_seed: int = 0
    # optimization
    steps: int = 2000
    train_episodes: int = 640  # size of the training pool; 0 = fresh draw every step
    batch: int = 4
    lr: float = 1e-3
    weight_decay: float = 0.01
    lam: float = 0.5
    keep_prob: float = 0.55
    train_seed: int = 0
    shots: int = 1
    use_channel_drop: bool = True
    use_high_order: bool = True
    log_every: int = 50
    # evaluation
    eval_episodes: int = 500
    eval_seed: int = 0

    def synth(self) -> SynthConfig:
        return SynthConfig(
            grids=self.grids,
            layers_per_stage=self.layers_per_stage,
            image_size=self.image_size,
            feat_dim=self.feat_dim,
            text_dim=self.text_dim,
            n_classes=self.n_classes,
            n_folds=self.n_folds,
            fold=self.fold,
            noise=self.noise,
            tex_jitter=self.tex_jitter,
            dir_jitter=self.dir_jitter,
            bg_pull=self.bg_pull,
            align_lo=self.align_lo,
            align_hi=self.align_hi,
            text_garble=self.text_garble,
            seed=self.data_seed,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, text: str):
    f = _FIELDS[key]
    try:
        if f.type in ("bool", bool):
            if text not in ("true", "false"):
                raise ValueError
            return text == "true"
        if f.type in ("int", int):
            return int(text)
        if f.type in ("float", float):
            return float(text)
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse value {text!r}") from None


def render_config(rc: RunConfig) -> str:
    """Canonical text form: declaration order, `key = value`, one per line."""
    lines = [f"{f.name} = {_render_value(getattr(rc, f.name))}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse the flat format; # comments and blank lines are allowed."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            known = ", ".join(sorted(_FIELDS))
            raise ValueError(f"config line {lineno}: unknown key {key!r} (known: {known})")
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val.strip())
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_hash(rc: RunConfig) -> str:
    """sha256 of the canonical rendering — the experiment's identity."""
    return hashlib.sha256(render_config(rc).encode("utf-8")).hexdigest()
