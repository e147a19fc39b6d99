"""Synthetic episode generator: geometric shape classes with texture and
text signatures, rendered straight to feature space.

Classes are shape families crossed with per-class texture/text vectors, so
an episode carries exactly the cues the real pipeline would get from a
frozen backbone: localizable appearance (feature levels), a noisy text
alignment map (clip grid), and binary masks. Everything is a pure function
of (config, class_id, seed) via named RNG substreams.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pgma.core.rng import substream
from pgma.core.tensor import area_matrix, bilinear_matrix
from pgma.episodes import Episode, FeatureStack, Support

_APP_DIM = 12  # latent appearance-descriptor width, projected to feat_dim
_FAMILIES = 6  # disc, square, triangle, ring, cross, diamond


@dataclass(frozen=True)
class SynthConfig:
    """Generator identity. Hash-equal configs produce bit-equal datasets."""

    grids: tuple[int, ...] = (8, 16)  # square grid per stage, coarse -> fine
    layers_per_stage: tuple[int, ...] = (2, 2)
    image_size: int = 32
    feat_dim: int = 32
    text_dim: int = 16
    n_classes: int = 20
    n_folds: int = 4
    fold: int = 0  # which fold is held out as novel
    clip_grid: int = 0  # 0 = use the coarsest stage grid
    max_shapes: int = 3
    max_distractors: int = 2
    noise: float = 0.3
    tex_jitter: float = 0.5  # per-image drift of class/background textures
    dir_jitter: float = 0.5  # per-image drift of the class feature direction
    bg_pull: float = 0.45  # how far class textures lean toward the background pool
    align_lo: float = 0.45  # weakest per-class text-map alignment
    align_hi: float = 0.95
    text_garble: float = 0.0  # chance an image's text paint misses its classes entirely
    area_lo: float = 0.05
    area_hi: float = 0.60
    seed: int = 0

    def __post_init__(self):
        if len(self.grids) != len(self.layers_per_stage):
            raise ValueError("grids and layers_per_stage must align")
        if any(g2 < g1 for g1, g2 in zip(self.grids, self.grids[1:])):
            raise ValueError("grids must be ordered coarse to fine")
        if self.n_classes % self.n_folds != 0:
            raise ValueError(
                f"{self.n_classes} classes not divisible into {self.n_folds} folds"
            )
        if not 0 <= self.fold < self.n_folds:
            raise ValueError(f"fold {self.fold} out of range [0, {self.n_folds})")
        if not 0 < self.area_lo < self.area_hi <= 1:
            raise ValueError("need 0 < area_lo < area_hi <= 1")

    @property
    def clip_side(self) -> int:
        return self.clip_grid if self.clip_grid else self.grids[0]


def fold_split(cfg: SynthConfig, fold: int | None = None) -> tuple[list[int], list[int]]:
    """(base, novel) class ids; novel = the held-out fold's contiguous block."""
    f = cfg.fold if fold is None else fold
    if not 0 <= f < cfg.n_folds:
        raise ValueError(f"fold {f} out of range [0, {cfg.n_folds})")
    per = cfg.n_classes // cfg.n_folds
    novel = list(range(f * per, (f + 1) * per))
    base = [c for c in range(cfg.n_classes) if c not in novel]
    return base, novel


# ---------------------------------------------------------------------------
# class vocabulary (lazily derived, never stored)
# ---------------------------------------------------------------------------


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def class_texture(cfg: SynthConfig, cid: int) -> np.ndarray:
    """Canonical appearance of class `cid`, leaning toward one background
    prototype so some foregrounds genuinely resemble some backgrounds."""
    own = _unit(substream(cfg.seed, "class-tex", cid).standard_normal(_APP_DIM))
    proto = _unit(substream(cfg.seed, "bg-pool", cid % _BG_POOL).standard_normal(_APP_DIM))
    return _unit((1.0 - cfg.bg_pull) * own + cfg.bg_pull * proto)


def class_text_embed(cfg: SynthConfig, cid: int) -> np.ndarray:
    vec = substream(cfg.seed, "class-text", cid).standard_normal(cfg.text_dim)
    return _unit(vec).astype(np.float32)


def class_hardness(cfg: SynthConfig, cid: int) -> float:
    """Per-class texture-drift multiplier in [0.5, 1.5].

    Classes are not equally easy to match: some drift far from their
    canonical texture between images, some barely at all. A held-out fold
    therefore has a different reliability mix than the training average.
    """
    return 0.5 + substream(cfg.seed, "class-hard", cid).uniform()


def class_alignment(cfg: SynthConfig, cid: int) -> float:
    """How faithfully the text-space map marks this class, in [align_lo, align_hi]."""
    u = substream(cfg.seed, "class-align", cid).uniform()
    return cfg.align_lo + (cfg.align_hi - cfg.align_lo) * u


def _class_feat_dir(cfg: SynthConfig, cid: int, s: int, l: int) -> np.ndarray:
    return _unit(substream(cfg.seed, "class-feat", cid, s, l).standard_normal(cfg.feat_dim))


def _image_texture(cfg: SynthConfig, cid: int, rng: np.random.Generator) -> np.ndarray:
    """This image's rendition of the class texture, drifted off the canon."""
    jit = cfg.tex_jitter * class_hardness(cfg, cid)
    return _unit(class_texture(cfg, cid) + jit * rng.standard_normal(_APP_DIM))


_BG_POOL = 4


def _bg_texture(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Background drawn from a small shared pool, so backgrounds of distinct
    images genuinely resemble each other instead of being independent."""
    proto = _unit(
        substream(cfg.seed, "bg-pool", int(rng.integers(0, _BG_POOL))).standard_normal(_APP_DIM)
    )
    return _unit(proto + cfg.tex_jitter * rng.standard_normal(_APP_DIM))


def _projection(cfg: SynthConfig, s: int, l: int) -> np.ndarray:
    p = substream(cfg.seed, "proj", s, l).standard_normal((_APP_DIM, cfg.feat_dim))
    return p / np.sqrt(_APP_DIM)


# ---------------------------------------------------------------------------
# shape rendering
# ---------------------------------------------------------------------------


def _render_shape(side: int, family: int, cx, cy, r, rot) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    dx, dy = xx - cx * side, yy - cy * side
    c, s = np.cos(rot), np.sin(rot)
    u, v = c * dx - s * dy, s * dx + c * dy
    rr = r * side
    if family == 0:  # disc
        m = dx * dx + dy * dy < rr * rr
    elif family == 1:  # square
        m = np.maximum(np.abs(u), np.abs(v)) < rr * 0.9
    elif family == 2:  # triangle (downward half-planes)
        m = (v > -rr * 0.8) & (v + 2.2 * u < rr) & (v - 2.2 * u < rr)
    elif family == 3:  # ring
        d2 = dx * dx + dy * dy
        m = (d2 < rr * rr) & (d2 > (0.55 * rr) ** 2)
    elif family == 4:  # cross
        m = ((np.abs(u) < rr * 0.35) | (np.abs(v) < rr * 0.35)) & (
            np.maximum(np.abs(u), np.abs(v)) < rr
        )
    else:  # diamond
        m = np.abs(u) + np.abs(v) < rr * 1.2
    return m


def _sample_mask(side: int, family: int, rng: np.random.Generator, lo: float, hi: float,
                 max_shapes: int) -> np.ndarray:
    """Union of 1..max_shapes family shapes with area fraction in [lo, hi]."""
    for _ in range(24):
        n = int(rng.integers(1, max_shapes + 1))
        m = np.zeros((side, side), dtype=bool)
        for _ in range(n):
            cx, cy = rng.uniform(0.22, 0.78, size=2)
            r = rng.uniform(0.12, 0.30)
            rot = rng.uniform(0, 2 * np.pi)
            m |= _render_shape(side, family, cx, cy, r, rot)
        frac = m.mean()
        if lo <= frac <= hi:
            return m
    # fallback: a centered disc sized for ~sqrt(lo*hi) coverage, always valid
    target = np.sqrt(lo * hi)
    return _render_shape(side, 0, 0.5, 0.5, np.sqrt(target / np.pi), 0.0)


def _downsample(img: np.ndarray, side_out: int) -> np.ndarray:
    """Area-average (H, W) or (H, W, C) to (side_out, side_out[, C])."""
    h, w = img.shape[:2]
    rm = area_matrix(h, side_out, np.float64)
    cm = area_matrix(w, side_out, np.float64)
    return np.einsum("ih,hwc,jw->ijc", rm, img.reshape(h, w, -1), cm).reshape(
        (side_out, side_out) + img.shape[2:]
    )


def _smooth_field(rng: np.random.Generator, side: int, ch: int, coarse: int = 4) -> np.ndarray:
    """Low-frequency structured noise: coherent within regions, varied across."""
    base = rng.standard_normal((coarse, coarse, ch))
    up = bilinear_matrix(coarse, side, np.float64)
    return np.einsum("ih,hwc,jw->ijc", up, base, up)


# ---------------------------------------------------------------------------
# episode assembly
# ---------------------------------------------------------------------------


def _render_image(cfg: SynthConfig, cid: int, rng: np.random.Generator):
    """One image of class `cid`: (mask HxW u8, label appearance, text appearance)."""
    side = cfg.image_size
    family = cid % _FAMILIES
    mask = _sample_mask(side, family, rng, cfg.area_lo, cfg.area_hi, cfg.max_shapes)

    app = np.empty((side, side, _APP_DIM))
    txt = np.empty((side, side, cfg.text_dim))
    others = [c for c in range(cfg.n_classes) if c != cid]
    bg_txt = _unit(
        class_text_embed(cfg, int(rng.choice(others))).astype(np.float64)
        + class_text_embed(cfg, int(rng.choice(others))).astype(np.float64)
    )
    app[:] = _bg_texture(cfg, rng)
    txt[:] = bg_txt

    garbled = rng.uniform() < cfg.text_garble

    def text_patch(c: int) -> np.ndarray:
        """Text-space paint for class c: canon mixed with an image-specific
        stray direction, weighted by how well the text model knows c. A
        garbled image paints pure strays — the text model missed it."""
        a = 0.0 if garbled else class_alignment(cfg, c)
        stray = _unit(rng.standard_normal(cfg.text_dim))
        return _unit(a * class_text_embed(cfg, c).astype(np.float64) + (1.0 - a) * stray)

    n_dis = int(rng.integers(0, cfg.max_distractors + 1))
    for _ in range(n_dis):
        dc = int(rng.choice(others))
        dm = _render_shape(
            side,
            dc % _FAMILIES,
            rng.uniform(0.2, 0.8),
            rng.uniform(0.2, 0.8),
            rng.uniform(0.10, 0.22),
            rng.uniform(0, 2 * np.pi),
        )
        dm &= ~mask  # the labeled object stays on top
        app[dm] = _image_texture(cfg, dc, rng)
        txt[dm] = text_patch(dc)

    app[mask] = _image_texture(cfg, cid, rng)
    txt[mask] = text_patch(cid)

    # coherent texture variation plus per-pixel grain, appearance space only
    app += 0.25 * _smooth_field(rng, side, _APP_DIM)
    app += 0.10 * rng.standard_normal(app.shape)
    return mask.astype(np.uint8), app, txt


def _build_stack(cfg: SynthConfig, cid: int, app: np.ndarray, txt: np.ndarray,
                 mask: np.ndarray, rng: np.random.Generator) -> FeatureStack:
    stages: list[list[np.ndarray]] = []
    for s, (grid, n_layers) in enumerate(zip(cfg.grids, cfg.layers_per_stage)):
        app_g = _downsample(app, grid)
        fg_g = _downsample(mask.astype(np.float64), grid)[..., None]
        layers = []
        for l in range(n_layers):
            feat = app_g @ _projection(cfg, s, l)
            d = _class_feat_dir(cfg, cid, s, l)
            if cfg.dir_jitter:
                d = _unit(d + cfg.dir_jitter * rng.standard_normal(cfg.feat_dim))
            feat = feat + fg_g * d
            feat = feat + cfg.noise * rng.standard_normal(feat.shape)
            layers.append(feat.astype(np.float32))
        stages.append(layers)
    clip = _downsample(txt, cfg.clip_side)
    clip = clip + 0.6 * cfg.noise * rng.standard_normal(clip.shape)
    return FeatureStack(
        stages=stages,
        clip_visual=clip.astype(np.float32),
        image_size=(cfg.image_size, cfg.image_size),
    )


def synth_episode(cfg: SynthConfig, class_id: int, seed: int, shots: int = 1) -> Episode:
    """Deterministic episode: query plus `shots` supports of one class."""
    if not 0 <= class_id < cfg.n_classes:
        raise ValueError(f"class_id {class_id} outside [0, {cfg.n_classes})")
    q_rng = substream(cfg.seed, "episode", seed, 0)
    q_mask, q_app, q_txt = _render_image(cfg, class_id, q_rng)
    query = _build_stack(cfg, class_id, q_app, q_txt, q_mask, q_rng)
    supports = []
    for k in range(shots):
        s_rng = substream(cfg.seed, "episode", seed, k + 1)
        s_mask, s_app, s_txt = _render_image(cfg, class_id, s_rng)
        stack = _build_stack(cfg, class_id, s_app, s_txt, s_mask, s_rng)
        supports.append(Support(stack=stack, mask=s_mask))
    return Episode(
        query=query,
        supports=supports,
        text_embed=class_text_embed(cfg, class_id),
        class_id=class_id,
        query_mask=q_mask,
    )


def sample_training_class(cfg: SynthConfig, step_seed: int) -> int:
    """Base-fold class for one training draw; novel fold never appears."""
    base, _ = fold_split(cfg)
    rng = substream(cfg.seed, "sample", step_seed)
    return int(base[rng.integers(0, len(base))])


def write_dataset(cfg: SynthConfig, root, n_train: int, n_val: int, shots: int = 1) -> None:
    """Materialize dataset_root/{train,val}/episode_{i}.pgme.

    Train episodes draw base-fold classes; val episodes cycle novel classes.
    """
    from pgma.episodes import save_episode

    root = Path(root)
    base, novel = fold_split(cfg)
    (root / "train").mkdir(parents=True, exist_ok=True)
    (root / "val").mkdir(parents=True, exist_ok=True)
    for i in range(n_train):
        ep = synth_episode(cfg, sample_training_class(cfg, i), seed=i, shots=shots)
        save_episode(ep, root / "train" / f"episode_{i}.pgme")
    for i in range(n_val):
        cid = novel[i % len(novel)]
        ep = synth_episode(cfg, cid, seed=10_000_000 + i, shots=shots)
        save_episode(ep, root / "val" / f"episode_{i}.pgme")
