"""Aggregated result rendering: delimited tables plus figures.

Everything written here is deterministic for identical inputs — figure
metadata that would vary between runs (tool version stamps) is stripped,
so reruns can be compared byte for byte.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # headless; never touch a display
import matplotlib.pyplot as plt
import numpy as np

from pgma.evaluate import EvalReport

_SAVE_OPTS = dict(dpi=120, metadata={"Software": None})


def ablation_table(reports: list[EvalReport]) -> str:
    """CSV: one row per evaluated mode."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mode", "miou", "fbiou", "episodes", "fold", "config_hash"])
    for r in reports:
        writer.writerow(
            [r.mode, f"{r.miou:.6f}", f"{r.fbiou:.6f}", r.episode_count, r.fold,
             r.config_hash[:12]]
        )
    return buf.getvalue()


def _bar_figure(reports: list[EvalReport], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    modes = [r.mode for r in reports]
    vals = [r.miou for r in reports]
    ax.bar(range(len(modes)), vals, color="#4878b0")
    ax.set_xticks(range(len(modes)))
    ax.set_xticklabels(modes, rotation=30, ha="right")
    ax.set_ylabel("mIoU")
    ax.set_ylim(0, 1)
    ax.set_title("novel-class mIoU by task mode")
    for i, v in enumerate(vals):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def _robustness_figure(reports: list[EvalReport], path: Path) -> None:
    """Severity curves for the two corruption protocols, anchored at the
    clean few-shot score (severity 0)."""
    by_mode = {r.mode: r.miou for r in reports}
    if "fss" not in by_mode:
        return
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for family, marker in (("corrupt-mask", "o"), ("corrupt-image", "s")):
        xs, ys = [0], [by_mode["fss"]]
        for lvl in (1, 2, 3):
            key = f"{family}:{lvl}"
            if key in by_mode:
                xs.append(lvl)
                ys.append(by_mode[key])
        if len(xs) > 1:
            ax.plot(xs, ys, marker=marker, label=family)
    ax.set_xlabel("corruption severity")
    ax.set_ylabel("mIoU")
    ax.set_xticks([0, 1, 2, 3])
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("degradation under corrupted supports")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def _loss_figure(history: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    steps = [h["step"] for h in history]
    for key, style in (("total", "-"), ("dice", "--"), ("ce", ":")):
        ax.plot(steps, [h[key] for h in history], style, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def read_loss_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"step": int(r["step"]), "total": float(r["total"]),
             "dice": float(r["dice"]), "ce": float(r["ce"])}
            for r in csv.DictReader(fh)
        ]


def render_report(out_dir, reports: list[EvalReport],
                  loss_history: list[dict] | None = None) -> list[Path]:
    """Write ablation.csv and the figures; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    table = out_dir / "ablation.csv"
    table.write_text(ablation_table(reports))
    written.append(table)

    bars = out_dir / "modes_miou.png"
    _bar_figure(reports, bars)
    written.append(bars)

    if any(r.mode.startswith("corrupt") for r in reports):
        rob = out_dir / "robustness.png"
        _robustness_figure(reports, rob)
        if rob.exists():
            written.append(rob)

    if loss_history:
        loss = out_dir / "loss_curve.png"
        _loss_figure(loss_history, loss)
        written.append(loss)
    return written
