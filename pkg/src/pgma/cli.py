"""Command-line entry: synth / train / eval / infer / report.

Thread and seed environment handling happens before any numeric import:
--threads caps the BLAS pools (must be set before numpy loads), and
PGMA_SEED overrides the config's training/evaluation seeds for quick
sweeps without editing files.
"""

from __future__ import annotations

import argparse
import os
import sys


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pgma",
        description="prior-guided mask assembly: any-shot segmentation pipeline",
    )
    ap.add_argument("--threads", type=int, default=0,
                    help="cap BLAS thread pools (0 = library default)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="materialize a dataset of .pgme episodes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=200, dest="n_train")
    p.add_argument("--val", type=int, default=50, dest="n_val")

    p = sub.add_parser("train", help="train a model from the run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="episode dir (default: on-the-fly)")

    p = sub.add_parser("eval", help="score a checkpoint on novel classes")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="fss",
                   help="fss|zss|bbox|coseg|corrupt-mask:N|corrupt-image:N")
    p.add_argument("--episodes", type=int, default=0, help="0 = config value")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--baseline", action="store_true",
                   help="also score the prior-threshold baseline")

    p = sub.add_parser("infer", help="predict one episode's mask")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--out", required=True, help="mask output (.png or .pgm)")
    p.add_argument("--mode", default="fss")
    p.add_argument("--overlay", default=None,
                   help="optional side-by-side figure (prior, logits, mask)")

    p = sub.add_parser("report", help="evaluate across modes; table + figures")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=0, help="0 = config value")
    p.add_argument("--modes", default="fss,zss,bbox,coseg,"
                   "corrupt-mask:1,corrupt-mask:2,corrupt-mask:3,"
                   "corrupt-image:1,corrupt-image:2,corrupt-image:3")
    p.add_argument("--loss-curve", default=None,
                   help="loss_curve.csv to include (default: next to checkpoint)")
    return ap


def _load_rc(path):
    from pgma.config import load_config

    rc = load_config(path)
    seed_env = os.environ.get("PGMA_SEED")
    if seed_env is not None:
        import dataclasses

        seed = int(seed_env)
        rc = dataclasses.replace(rc, train_seed=seed, eval_seed=seed)
    return rc


def cmd_synth(args) -> int:
    from pgma.synth import write_dataset

    rc = _load_rc(args.config)
    write_dataset(rc.synth(), args.out, n_train=args.n_train, n_val=args.n_val,
                  shots=rc.shots)
    print(f"wrote {args.n_train} train + {args.n_val} val episodes to {args.out}")
    return 0


def cmd_train(args) -> int:
    from pgma.config import config_hash
    from pgma.train import train

    rc = _load_rc(args.config)
    print(f"config {config_hash(rc)[:12]}: {rc.steps} steps, batch {rc.batch}")

    def progress(step, loss):
        print(f"  step {step:5d}  loss {loss:.4f}", flush=True)

    result = train(rc, args.out, data_dir=args.data, progress=progress)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from pgma.episodes import TaskMode
    from pgma.evaluate import evaluate, evaluate_baseline
    from pgma.train import load_trained

    rc = _load_rc(args.config)
    mode = TaskMode.parse(args.mode)
    count = args.episodes or None
    model = load_trained(rc, args.checkpoint)
    rep = evaluate(model, rc, mode, count=count)
    sys.stdout.write(rep.to_text())
    if args.baseline:
        base = evaluate_baseline(rc, mode, count=count)
        print(f"  baseline mIoU {base.miou:.4f} (threshold on the text prior)")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
        print(f"report: {args.out}")
    return 0


def cmd_infer(args) -> int:
    import numpy as np
    from PIL import Image

    from pgma.episodes import TaskMode, load_episode
    from pgma.robust import apply_mode_transform
    from pgma.train import load_trained

    rc = _load_rc(args.config)
    mode = TaskMode.parse(args.mode)
    model = load_trained(rc, args.checkpoint)
    ep = apply_mode_transform(load_episode(args.episode), mode, seed=rc.eval_seed)
    pred = model.predict(ep, mode=mode)
    Image.fromarray((pred * 255).astype(np.uint8), mode="L").save(args.out)
    print(f"mask ({int(pred.sum())} foreground px): {args.out}")

    if args.overlay:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        from pgma.core import no_grad
        from pgma.evaluate import baseline_textual_predict
        from pgma.model import _resize_prior
        from pgma.priors import textual_prior

        with no_grad():
            logits = model(ep, mode=mode).data
        prior = _resize_prior(
            textual_prior(ep.query.clip_visual, ep.text_embed), ep.query.image_size
        )
        panels = [
            ("text prior", prior),
            ("prior > 0.5", baseline_textual_predict(ep)),
            ("logits", logits),
            ("prediction", pred),
        ]
        if ep.query_mask is not None:
            panels.append(("ground truth", ep.query_mask))
        fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6))
        for ax, (title, img) in zip(axes, panels):
            ax.imshow(img, cmap="viridis")
            ax.set_title(title, fontsize=8)
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(args.overlay, dpi=120, metadata={"Software": None})
        plt.close(fig)
        print(f"overlay: {args.overlay}")
    return 0


def cmd_report(args) -> int:
    from pathlib import Path

    from pgma.episodes import TaskMode
    from pgma.evaluate import evaluate
    from pgma.report import read_loss_curve, render_report
    from pgma.train import load_trained

    rc = _load_rc(args.config)
    count = args.episodes or None
    model = load_trained(rc, args.checkpoint)
    reports = []
    for spec in args.modes.split(","):
        mode = TaskMode.parse(spec)
        rep = evaluate(model, rc, mode, count=count)
        print(f"  {mode.value:16s} mIoU {rep.miou:.4f}  FB-IoU {rep.fbiou:.4f}")
        reports.append(rep)

    curve = args.loss_curve or str(Path(args.checkpoint).parent / "loss_curve.csv")
    history = read_loss_curve(curve) if Path(curve).exists() else None
    written = render_report(args.out, reports, history)
    for path in written:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads:
        _set_threads(args.threads)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
