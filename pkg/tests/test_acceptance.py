"""Shipping gate: every release criterion as one test with one PASS/FAIL line.

The fast half re-verifies the math against independent oracles under hard
runtime budgets; the slow half trains the three variants that matter (full,
parameter-free-affinity-only, no-channel-drop) at the default configuration
and scores them on the held-out fold exactly the way the CLI does.
"""

import time
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from pgma.affinity import cross_affinity, masked_flatten, self_affinity
from pgma.assemble import gau
from pgma.config import RunConfig
from pgma.core import tensor as T
from pgma.episodes import TaskMode, load_episode
from pgma.evaluate import evaluate, evaluate_baseline
from pgma.losses import segmentation_loss
from pgma.model import Model, ModelConfig
from pgma.priors import (
    minmax_norm,
    support_clip_prior,
    support_gt_prior,
    textual_prior,
    visual_prior,
)
from pgma.synth import SynthConfig, synth_episode
from pgma.train import train

from .oracles import affinity_double_loop, check_grad, gau_brute_force

REPO = Path(__file__).resolve().parent.parent


def _verdict(ok: bool, line: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {line}")
    assert ok, line


# ---------------------------------------------------------------------------
# fast criteria: oracle agreement and invariants, with runtime budgets
# ---------------------------------------------------------------------------


def _weighted(op):
    """Scalar loss with fixed random weights so no gradient entry can hide."""
    cache = {}

    def build(*ts):
        out = op(*ts)
        if "w" not in cache:
            cache["w"] = np.random.default_rng(0).uniform(0.5, 1.5, out.shape)
        return T.reduce_sum(T.mul(out, T.constant(cache["w"])))

    return build


def test_gradients_every_operator_and_end_to_end():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)

    def r(*shape):
        return rng.uniform(-2.0, 2.0, size=shape)

    def away(x, margin=0.15):
        return np.where(np.abs(x) < margin, np.sign(x) * margin + (x == 0) * margin, x)

    clampable = r(3, 3)
    clampable = np.where(np.abs(np.abs(clampable) - 1.0) < 0.2, clampable * 1.5, clampable)
    distinct = rng.permutation(30).reshape(5, 6) / 7.0

    cases = [
        ("add", T.add, [r(3, 4), r(3, 4)]),
        ("sub", T.sub, [r(4), r(4)]),
        ("mul", T.mul, [r(2, 5), r(2, 5)]),
        ("div", T.div, [r(3, 3), away(r(3, 3))]),
        ("neg", T.neg, [r(3, 3)]),
        ("power", lambda a: T.power(a, 3.0), [r(3, 3)]),
        ("matmul", T.matmul, [r(3, 4), r(4, 5)]),
        ("transpose", lambda a: T.transpose(a, (1, 0)), [r(3, 5)]),
        ("reshape", lambda a: T.reshape(a, (2, 6)), [r(3, 4)]),
        ("concat", lambda a, b: T.concat([a, b], axis=0), [r(2, 3), r(1, 3)]),
        ("narrow", lambda a: T.narrow(a, 1, 1, 2), [r(3, 4)]),
        ("softmax", lambda a: T.softmax(a, axis=-1), [r(4, 5)]),
        ("layer_norm", lambda x, g, b: T.layer_norm(x, g, b),
         [r(3, 4), rng.uniform(0.5, 1.5, 4), r(4)]),
        ("linear", lambda x, w, b: T.linear(x, w, b), [r(4, 3), r(3, 2), r(2)]),
        ("relu", T.relu, [away(r(4, 4))]),
        ("gelu", T.gelu, [r(4, 4)]),
        ("sigmoid", T.sigmoid, [r(3, 3)]),
        ("tanh", T.tanh, [r(3, 3)]),
        ("exp", T.exp, [r(3, 3)]),
        ("log", T.log, [rng.uniform(0.5, 2.0, (3, 3))]),
        ("sqrt", T.sqrt, [rng.uniform(0.5, 2.0, (3, 3))]),
        ("clamp", lambda a: T.clamp(a, -1.0, 1.0), [clampable]),
        ("reduce_sum", lambda a: T.reduce_sum(a, axis=0), [r(3, 4)]),
        ("reduce_mean", lambda a: T.reduce_mean(a, axis=(1,), keepdims=True), [r(3, 4)]),
        ("reduce_max", lambda a: T.reduce_max(a, axis=0), [distinct]),
        ("reduce_min", lambda a: T.reduce_min(a, axis=1), [distinct]),
        ("conv2d", lambda x, w, b: T.conv2d(x, w, b), [r(2, 5, 5), r(3, 2, 3, 3), r(3)]),
        ("resize_bilinear", lambda x: T.resize_bilinear(x, (6, 6)), [r(3, 3)]),
        ("resize_area", lambda x: T.resize_area(x, (2, 2)), [r(4, 4)]),
    ]
    failures = []
    for name, op, arrays in cases:
        try:
            check_grad(_weighted(op), arrays, tol=1e-4)
        except AssertionError as e:
            failures.append(f"{name}: {e}")

    # end-to-end: finite differences through the whole forward + loss
    cfg = SynthConfig(grids=(3, 6), layers_per_stage=(1, 1), image_size=6,
                      feat_dim=8, text_dim=8, noise=0.2)
    ep = synth_episode(cfg, class_id=1, seed=5, shots=1)
    worst_e2e = 0.0
    with T.use_dtype(np.float64):
        model = Model(
            ModelConfig.from_synth(cfg, d_model=16, heads=2, ffn_hidden=16, decoder_width=8),
            init_seed=0,
        )

        def loss_value() -> float:
            with T.no_grad():
                return segmentation_loss(model.forward(ep), ep.query_mask)[0].item()

        segmentation_loss(model.forward(ep), ep.query_mask)[0].backward()
        prng = np.random.default_rng(11)
        h = 1e-5
        for _, p in model.named_parameters():
            flat = p.data.reshape(-1)
            grad = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
            for i in prng.choice(flat.size, size=min(3, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + h
                up = loss_value()
                flat[i] = old - h
                dn = loss_value()
                flat[i] = old
                want = (up - dn) / (2 * h)
                rel = abs(grad[i] - want) / max(abs(grad[i]), abs(want), 1.0)
                worst_e2e = max(worst_e2e, rel)
    if worst_e2e >= 1e-3:
        failures.append(f"end-to-end: rel err {worst_e2e:.2e} >= 1e-3")

    elapsed = time.monotonic() - t0
    _verdict(
        not failures and elapsed < 120.0,
        f"gradients: {len(cases)} operators at 1e-4, end-to-end rel err "
        f"{worst_e2e:.2e} at 1e-3, {elapsed:.1f}s (< 120s)"
        + (f"; failures: {failures}" if failures else ""),
    )


def test_gau_matches_bruteforce_aggregation():
    t0 = time.monotonic()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(200):
        m = int(rng.integers(2, 37))
        n = int(rng.integers(2, 37))
        a = rng.standard_normal((m, n)) * rng.uniform(0.5, 3.0)
        p = rng.uniform(0.0, 1.0, n)
        worst = max(worst, float(np.max(np.abs(gau(a, p) - gau_brute_force(a, p)))))
    elapsed = time.monotonic() - t0
    _verdict(
        worst < 1e-6 and elapsed < 10.0,
        f"gau oracle: 200 instances, worst abs err {worst:.2e} (< 1e-6), "
        f"{elapsed:.1f}s (< 10s)",
    )


def test_affinity_tables_match_double_loop_cosines():
    rng = np.random.default_rng(5)
    worst = 0.0
    masked_seen = 0
    for i in range(100):
        hs, ws = (int(x) for x in rng.integers(2, 7, 2))
        hq, wq = (int(x) for x in rng.integers(2, 7, 2))
        d = int(rng.integers(3, 9))
        f_s = rng.standard_normal((hs, ws, d)).astype(np.float32)
        f_q = rng.standard_normal((hq, wq, d)).astype(np.float32)
        mask = None
        if i % 2:
            mask = (rng.uniform(size=(hs, ws)) > 0.4).astype(np.float32)
            mask.flat[0] = 1.0  # never fully empty
            masked_seen += 1
        fs_flat = masked_flatten(f_s, mask)
        fq_flat = masked_flatten(f_q)
        pairs = [
            (cross_affinity(fs_flat, fq_flat), affinity_double_loop(fs_flat, fq_flat)),
            (self_affinity(fq_flat), affinity_double_loop(fq_flat, fq_flat)),
        ]
        for got, want in pairs:
            worst = max(worst, float(np.max(np.abs(got.astype(np.float64) - want))))
    _verdict(
        worst < 1e-6 and masked_seen == 50,
        f"affinity oracle: 100 instances ({masked_seen} masked), "
        f"worst abs err {worst:.2e} (< 1e-6)",
    )


def test_prior_and_affinity_normalization_invariants():
    rng = np.random.default_rng(17)
    checks = 0
    ok = True
    for _ in range(50):
        h, w = (int(x) for x in rng.integers(2, 9, 2))
        d_t = int(rng.integers(3, 9))
        clip = rng.standard_normal((h, w, d_t)).astype(np.float32)
        if rng.uniform() < 0.2:
            clip[0, 0] = 0.0  # zero-norm pixel must stay in range
        text = rng.standard_normal(d_t).astype(np.float32)
        mask = (rng.uniform(size=(2 * h, 2 * w)) > 0.5).astype(np.uint8)
        a_sq = rng.standard_normal((h * w, h * w))
        maps = [
            textual_prior(clip, text),
            visual_prior(a_sq, (h, w)),
            support_gt_prior(mask, (h, w)),
            support_clip_prior(clip, text, (2 * h, 2 * w)),
        ]
        for m in maps:
            ok = ok and float(m.min()) >= 0.0 and float(m.max()) <= 1.0
            checks += 1

        # min-max is idempotent away from its epsilon guard
        raw = rng.standard_normal((h, w))
        if float(raw.max() - raw.min()) > 1e-3:
            once = minmax_norm(raw)
            ok = ok and float(np.max(np.abs(minmax_norm(once) - once))) < 1e-4
            checks += 1

        # gau ignores a constant shift of its affinity table
        p = rng.uniform(0, 1, h * w)
        shift = float(rng.uniform(-5, 5))
        ok = ok and float(np.max(np.abs(gau(a_sq + shift, p) - gau(a_sq, p)))) < 1e-6
        checks += 1

        # cosine tables ignore per-pixel feature scale
        f = rng.standard_normal((h, w, d_t)).astype(np.float32)
        scale = rng.uniform(0.2, 5.0, size=(h, w, 1)).astype(np.float32)
        a1 = cross_affinity(masked_flatten(f * scale), masked_flatten(f))
        a2 = cross_affinity(masked_flatten(f), masked_flatten(f))
        ok = ok and float(np.max(np.abs(a1 - a2))) < 1e-5
        checks += 1
    _verdict(ok, f"normalization invariants: {checks} checks over 50 random instances")


def test_bridge_exported_episodes_load_and_separate():
    fdir = REPO / "frontend" / "fixtures" / "episodes"
    files = sorted(fdir.glob("*.pgme"))
    gaps = {}
    for f in files:
        ep = load_episode(f)  # any schema violation raises here
        prior = textual_prior(ep.query.clip_visual, ep.text_embed, out_hw=ep.query.image_size)
        gaps[f.name] = float(prior[ep.query_mask == 1].mean() - prior[ep.query_mask == 0].mean())
    _verdict(
        len(files) >= 3 and all(g > 0.1 for g in gaps.values()),
        f"bridge fixtures: {len(files)} files load cleanly, "
        f"fg-bg prior gaps {', '.join(f'{k}={v:.2f}' for k, v in gaps.items())} (> 0.1)",
    )


# ---------------------------------------------------------------------------
# slow criteria: default-configuration training and held-out-fold scoring
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("gate")
    spec = {
        "full": RunConfig(),
        "pf": replace(RunConfig(), use_high_order=False),
        "nodrop": replace(RunConfig(), use_channel_drop=False),
    }
    models = {}
    minutes = {}
    for tag, rc in spec.items():
        t0 = time.monotonic()
        models[tag] = train(rc, root / tag).model
        minutes[tag] = (time.monotonic() - t0) / 60.0
    cache = {}

    def score(tag, mode):
        key = (tag, mode.value)
        if key not in cache:
            if tag == "baseline":
                cache[key] = evaluate_baseline(spec["full"], mode)
            else:
                cache[key] = evaluate(models[tag], spec[tag], mode)
        return cache[key]

    return SimpleNamespace(spec=spec, minutes=minutes, score=score)


@pytest.mark.slow
def test_novel_fold_margin_over_baselines(trained):
    base = trained.score("baseline", TaskMode.FSS)
    full = trained.score("full", TaskMode.FSS)
    pf = trained.score("pf", TaskMode.FSS)
    mins = trained.minutes["full"]
    ok = (
        full.episode_count >= 500
        and full.miou >= base.miou + 0.10
        and full.miou >= pf.miou + 0.01
        and mins < 30.0
    )
    _verdict(
        ok,
        f"novel-fold mIoU {full.miou:.4f} over {full.episode_count} episodes: "
        f"+{(full.miou - base.miou) * 100:.1f}pts vs text-prior baseline (needs >=10), "
        f"+{(full.miou - pf.miou) * 100:.1f}pts vs parameter-free variant (needs >=1), "
        f"trained in {mins:.1f} min (< 30)",
    )


@pytest.mark.slow
def test_single_checkpoint_serves_all_task_modes(trained):
    base = trained.score("baseline", TaskMode.FSS).miou
    fss = trained.score("full", TaskMode.FSS).miou
    zss = trained.score("full", TaskMode.ZSS)
    bbox = trained.score("full", TaskMode.BBOX)
    coseg = trained.score("full", TaskMode.COSEG)
    ok = (
        zss.miou >= base
        and bbox.miou >= fss - 0.05
        and np.isfinite(coseg.miou)
        and coseg.episode_count >= 500
    )
    _verdict(
        ok,
        f"one checkpoint, four modes: zss {zss.miou:.4f} >= baseline {base:.4f}, "
        f"bbox {bbox.miou:.4f} within 5pts of fss {fss:.4f}, "
        f"coseg {coseg.miou:.4f} over {coseg.episode_count} episodes",
    )


@pytest.mark.slow
def test_mask_corruption_degrades_gracefully(trained):
    fss = trained.score("full", TaskMode.FSS).miou
    curve = [
        trained.score("full", m).miou
        for m in (TaskMode.CORRUPT_MASK_1, TaskMode.CORRUPT_MASK_2, TaskMode.CORRUPT_MASK_3)
    ]
    ok = curve[0] >= curve[1] >= curve[2] and (fss - curve[2]) < 0.15
    _verdict(
        ok,
        f"corrupt-mask curve {[f'{v:.4f}' for v in curve]} non-increasing, "
        f"level-3 drop {(fss - curve[2]) * 100:.1f}pts (< 15)",
    )


@pytest.mark.slow
def test_training_without_channel_drop_hurts_novel_miou(trained):
    full = trained.score("full", TaskMode.FSS)
    nodrop = trained.score("nodrop", TaskMode.FSS)
    ok = full.episode_count >= 500 and full.miou > nodrop.miou
    _verdict(
        ok,
        f"channel-drop ablation: with-drop {full.miou:.4f} > without {nodrop.miou:.4f} "
        f"(gap {(full.miou - nodrop.miou) * 100:+.1f}pts over {full.episode_count} episodes)",
    )


@pytest.mark.slow
def test_fixed_seed_runs_are_bit_identical(tmp_path):
    rc = replace(RunConfig(), steps=60, log_every=10, eval_episodes=100)
    a = train(rc, tmp_path / "a")
    b = train(rc, tmp_path / "b")
    traces = a.history == b.history
    ckpts = (tmp_path / "a" / "checkpoint.pgme").read_bytes() == (
        tmp_path / "b" / "checkpoint.pgme"
    ).read_bytes()
    reports = evaluate(a.model, rc, TaskMode.FSS) == evaluate(b.model, rc, TaskMode.FSS)
    _verdict(
        traces and ckpts and reports,
        f"determinism: loss traces identical={traces}, checkpoints identical={ckpts}, "
        f"eval reports identical={reports}",
    )
