"""Checkpoint persistence: model parameters plus optimizer state in the
same record-stream container the episodes use, under a different magic.

Record names: param.{dotted path}, optim.m.{path}, optim.v.{path},
optim.t, meta.{key} (utf-8 payload). Loading restores into an existing
model/optimizer of identical structure — structure itself is config-borne.
"""

from __future__ import annotations

import numpy as np

from pgma import pgme
from pgma.core.layers import Module
from pgma.core.optim import AdamW


def save_checkpoint(path, model: Module, optimizer: AdamW | None = None,
                    meta: dict[str, str] | None = None) -> None:
    recs: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        recs[f"param.{name}"] = p.data
    if optimizer is not None:
        state = optimizer.state_dict()
        recs["optim.t"] = np.array([state["t"]], dtype=np.float32)
        for n, arr in state["m"].items():
            recs[f"optim.m.{n}"] = arr
        for n, arr in state["v"].items():
            recs[f"optim.v.{n}"] = arr
    for key, val in (meta or {}).items():
        recs[f"meta.{key}"] = np.frombuffer(val.encode("utf-8"), dtype=np.uint8)
    pgme.write_records(path, recs, magic=pgme.CHECKPOINT_MAGIC)


def load_checkpoint(path, model: Module, optimizer: AdamW | None = None) -> dict[str, str]:
    """Restore parameters (and optimizer moments if asked); returns meta."""
    recs = pgme.read_records(path, magic=pgme.CHECKPOINT_MAGIC)
    params = {n[len("param."):]: a for n, a in recs.items() if n.startswith("param.")}
    model.load_state_dict(params)
    if optimizer is not None:
        if "optim.t" not in recs:
            raise pgme.SchemaError("checkpoint has no optimizer state")
        state = {
            "t": int(recs["optim.t"][0]),
            "m": {n[len("optim.m."):]: a for n, a in recs.items() if n.startswith("optim.m.")},
            "v": {n[len("optim.v."):]: a for n, a in recs.items() if n.startswith("optim.v.")},
        }
        optimizer.load_state_dict(state)
    return {
        n[len("meta."):]: a.tobytes().decode("utf-8")
        for n, a in recs.items()
        if n.startswith("meta.")
    }
