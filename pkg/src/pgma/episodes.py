"""Episode domain model and its mapping onto the record container.

An episode is one query image with K >= 0 support images of the same
class, all represented as multi-stage feature stacks (no raw pixels reach
the pipeline). Stage 0 is the coarsest grid; stages refine from there, and
the flat level order is stage-major — the order the decoder consumes.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np

from pgma import pgme


class TaskMode(enum.Enum):
    """Evaluation regime; selects prior availability and input transforms."""

    FSS = "fss"
    ZSS = "zss"
    BBOX = "bbox"
    COSEG = "coseg"
    CORRUPT_MASK_1 = "corrupt-mask:1"
    CORRUPT_MASK_2 = "corrupt-mask:2"
    CORRUPT_MASK_3 = "corrupt-mask:3"
    CORRUPT_IMAGE_1 = "corrupt-image:1"
    CORRUPT_IMAGE_2 = "corrupt-image:2"
    CORRUPT_IMAGE_3 = "corrupt-image:3"

    @property
    def family(self) -> str:
        return self.value.split(":")[0]

    @property
    def level(self) -> int:
        """Corruption severity; 0 for the clean modes."""
        return int(self.value.split(":")[1]) if ":" in self.value else 0

    @classmethod
    def parse(cls, text: str) -> "TaskMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"invalid mode {text!r}; expected one of: {valid}") from None


@dataclass
class FeatureStack:
    """Multi-stage features for one image.

    stages[s][l] is an (h, w, d) float32 map; grids shrink as s decreases
    (stage 0 coarsest). clip_visual is an (hc, wc, d_t) map living in the
    text-embedding space. image_size is the full-resolution (H, W).
    """

    stages: list[list[np.ndarray]]
    clip_visual: np.ndarray
    image_size: tuple[int, int]

    def flat_levels(self):
        """Yield (stage, layer, array) coarse-to-fine, stage-major."""
        for s, layers in enumerate(self.stages):
            for l, arr in enumerate(layers):
                yield s, l, arr

    @property
    def n_levels(self) -> int:
        return sum(len(layers) for layers in self.stages)

    @property
    def level_list(self) -> list[np.ndarray]:
        return [arr for _, _, arr in self.flat_levels()]

    def validate(self) -> None:
        if not self.stages or not all(self.stages):
            raise pgme.SchemaError("feature stack has an empty stage")
        for s, l, arr in self.flat_levels():
            if arr.ndim != 3:
                raise pgme.SchemaError(f"level S{s}.L{l}: expected (h, w, d), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise pgme.SchemaError(f"level S{s}.L{l}: non-finite values")
        if self.clip_visual.ndim != 3:
            raise pgme.SchemaError(f"clip map: expected (h, w, d_t), got {self.clip_visual.shape}")
        if not np.all(np.isfinite(self.clip_visual)):
            raise pgme.SchemaError("clip map: non-finite values")


@dataclass
class Support:
    stack: FeatureStack
    mask: np.ndarray  # (H, W) uint8 binary


@dataclass
class Episode:
    query: FeatureStack
    supports: list[Support]
    text_embed: np.ndarray  # (d_t,) unit vector
    class_id: int
    query_mask: np.ndarray | None = None  # absent at pure inference
    mode: TaskMode = TaskMode.FSS

    @property
    def k_shots(self) -> int:
        return len(self.supports)

    def validate(self) -> None:
        self.query.validate()
        d_t = self.text_embed.shape[-1]
        if self.text_embed.ndim != 1:
            raise pgme.SchemaError(f"text embedding must be rank 1, got {self.text_embed.shape}")
        if self.query.clip_visual.shape[-1] != d_t:
            raise pgme.SchemaError(
                f"clip map dim {self.query.clip_visual.shape[-1]} != text dim {d_t}"
            )
        if self.query_mask is not None:
            _check_mask("query.mask", self.query_mask, self.query.image_size)
        for k, sup in enumerate(self.supports):
            sup.stack.validate()
            if sup.stack.clip_visual.shape[-1] != d_t:
                raise pgme.SchemaError(f"support{k} clip dim != text dim {d_t}")
            _check_mask(f"support{k}.mask", sup.mask, sup.stack.image_size)
            if sup.mask.sum() == 0:
                raise pgme.SchemaError(f"support{k}.mask is empty")


def _check_mask(name: str, mask: np.ndarray, size: tuple[int, int]) -> None:
    if mask.ndim != 2:
        raise pgme.SchemaError(f"{name}: expected (H, W), got {mask.shape}")
    if tuple(mask.shape) != tuple(size):
        raise pgme.SchemaError(f"{name}: shape {mask.shape} != declared size {size}")
    if not np.isin(mask, (0, 1)).all():
        raise pgme.SchemaError(f"{name}: values outside {{0,1}}")


# ---------------------------------------------------------------------------
# record mapping
# ---------------------------------------------------------------------------

_FEAT_RE = re.compile(r"^(query|support(\d+))\.feat\.S(\d+)\.L(\d+)$")


def _stack_records(prefix: str, stack: FeatureStack) -> dict[str, np.ndarray]:
    recs = {}
    for s, l, arr in stack.flat_levels():
        recs[f"{prefix}.feat.S{s}.L{l}"] = np.asarray(arr, dtype=np.float32)
    recs[f"{prefix}.clip"] = np.asarray(stack.clip_visual, dtype=np.float32)
    return recs


def save_episode(ep: Episode, path) -> None:
    ep.validate()
    recs: dict[str, np.ndarray] = {}
    recs.update(_stack_records("query", ep.query))
    if ep.query_mask is not None:
        recs["query.mask"] = np.asarray(ep.query_mask, dtype=np.uint8)
    recs["text.embed"] = np.asarray(ep.text_embed, dtype=np.float32)
    for k, sup in enumerate(ep.supports):
        recs.update(_stack_records(f"support{k}", sup.stack))
        recs[f"support{k}.mask"] = np.asarray(sup.mask, dtype=np.uint8)
    recs["meta.class_id"] = np.array([ep.class_id], dtype=np.float32)
    recs["meta.image_size"] = np.array(ep.query.image_size, dtype=np.float32)
    pgme.write_records(path, recs)


def _collect_stack(records: dict[str, np.ndarray], prefix: str) -> FeatureStack:
    levels: dict[tuple[int, int], np.ndarray] = {}
    for name, arr in records.items():
        m = _FEAT_RE.match(name)
        if m and m.group(1) == prefix:
            levels[(int(m.group(3)), int(m.group(4)))] = arr
    if not levels:
        raise pgme.SchemaError(f"no feature records under {prefix!r}")
    n_stages = max(s for s, _ in levels) + 1
    stages: list[list[np.ndarray]] = []
    for s in range(n_stages):
        n_layers = max((l for ss, l in levels if ss == s), default=-1) + 1
        layers = []
        for l in range(n_layers):
            if (s, l) not in levels:
                raise pgme.SchemaError(f"{prefix}: missing level S{s}.L{l} (gap in layout)")
            layers.append(levels[(s, l)])
        if not layers:
            raise pgme.SchemaError(f"{prefix}: stage {s} has no layers")
        stages.append(layers)
    clip_name = f"{prefix}.clip"
    if clip_name not in records:
        raise pgme.SchemaError(f"missing record {clip_name}")
    size = records["meta.image_size"]
    return FeatureStack(
        stages=stages,
        clip_visual=records[clip_name],
        image_size=(int(size[0]), int(size[1])),
    )


def load_episode(path) -> Episode:
    records = pgme.read_records(path)
    for required in ("text.embed", "meta.class_id", "meta.image_size"):
        if required not in records:
            raise pgme.SchemaError(f"missing record {required}")
    query = _collect_stack(records, "query")
    supports = []
    k = 0
    while f"support{k}.clip" in records or f"support{k}.mask" in records:
        stack = _collect_stack(records, f"support{k}")
        mask_name = f"support{k}.mask"
        if mask_name not in records:
            raise pgme.SchemaError(f"missing record {mask_name}")
        supports.append(Support(stack=stack, mask=records[mask_name]))
        k += 1
    ep = Episode(
        query=query,
        supports=supports,
        text_embed=records["text.embed"].reshape(-1),
        class_id=int(records["meta.class_id"][0]),
        query_mask=records.get("query.mask"),
    )
    ep.validate()
    return ep
