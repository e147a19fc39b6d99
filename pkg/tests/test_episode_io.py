"""Container format round-trips, structured failure modes, and generator
distribution properties."""

import struct

import numpy as np
import pytest

from pgma import pgme
from pgma.episodes import Episode, TaskMode, load_episode, save_episode
from pgma.synth import SynthConfig, fold_split, sample_training_class, synth_episode

CFG = SynthConfig()


def _episodes_equal(a: Episode, b: Episode) -> None:
    assert a.class_id == b.class_id
    assert a.k_shots == b.k_shots
    np.testing.assert_array_equal(a.text_embed, b.text_embed)
    np.testing.assert_array_equal(a.query_mask, b.query_mask)
    assert a.query.image_size == b.query.image_size
    for (s1, l1, x), (s2, l2, y) in zip(a.query.flat_levels(), b.query.flat_levels()):
        assert (s1, l1) == (s2, l2)
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(a.query.clip_visual, b.query.clip_visual)
    for sa, sb in zip(a.supports, b.supports):
        np.testing.assert_array_equal(sa.mask, sb.mask)
        np.testing.assert_array_equal(sa.stack.clip_visual, sb.stack.clip_visual)
        for (_, _, x), (_, _, y) in zip(sa.stack.flat_levels(), sb.stack.flat_levels()):
            np.testing.assert_array_equal(x, y)


def test_save_load_roundtrip_bit_exact(tmp_path):
    ep = synth_episode(CFG, class_id=7, seed=42, shots=2)
    path = tmp_path / "ep.pgme"
    save_episode(ep, path)
    _episodes_equal(ep, load_episode(path))


def test_zero_shot_episode_roundtrips_with_empty_supports(tmp_path):
    ep = synth_episode(CFG, class_id=3, seed=5, shots=0)
    path = tmp_path / "zs.pgme"
    save_episode(ep, path)
    loaded = load_episode(path)
    assert loaded.supports == []
    assert loaded.query_mask is not None


def test_wrong_magic_rejected(tmp_path):
    p = tmp_path / "bad.pgme"
    p.write_bytes(b"NOPE" + struct.pack("<I", 1))
    with pytest.raises(pgme.MagicMismatch):
        load_episode(p)


def test_wrong_version_rejected(tmp_path):
    p = tmp_path / "bad.pgme"
    p.write_bytes(b"PGME" + struct.pack("<I", 99))
    with pytest.raises(pgme.VersionMismatch):
        load_episode(p)


def test_truncated_record_rejected(tmp_path):
    ep = synth_episode(CFG, class_id=0, seed=1, shots=0)
    p = tmp_path / "full.pgme"
    save_episode(ep, p)
    clipped = p.read_bytes()[:-7]
    (tmp_path / "cut.pgme").write_bytes(clipped)
    with pytest.raises(pgme.TruncatedRecord):
        load_episode(tmp_path / "cut.pgme")


def test_unknown_dtype_code_rejected(tmp_path):
    name = b"x"
    rec = struct.pack("<H", 1) + name + bytes([9, 1]) + struct.pack("<I", 1) + b"\x00\x00\x00\x00"
    p = tmp_path / "odd.pgme"
    p.write_bytes(b"PGME" + struct.pack("<I", 1) + rec)
    with pytest.raises(pgme.UnknownDtype):
        load_episode(p)


def test_missing_required_record_is_schema_error(tmp_path):
    ep = synth_episode(CFG, class_id=2, seed=9, shots=1)
    p = tmp_path / "ep.pgme"
    save_episode(ep, p)
    recs = pgme.read_records(p)
    recs.pop("support0.mask")
    pgme.write_records(p, recs)
    with pytest.raises(pgme.SchemaError, match="support0.mask"):
        load_episode(p)
    # gaps in the level layout are also structural errors
    recs = pgme.read_records(p)
    recs.pop("query.feat.S1.L0")
    pgme.write_records(p, recs)
    with pytest.raises(pgme.SchemaError, match="S1.L0"):
        load_episode(p)


def test_nonbinary_mask_is_schema_error(tmp_path):
    ep = synth_episode(CFG, class_id=2, seed=9, shots=0)
    p = tmp_path / "ep.pgme"
    save_episode(ep, p)
    recs = pgme.read_records(p)
    recs["query.mask"] = recs["query.mask"] * 3
    pgme.write_records(p, recs)
    with pytest.raises(pgme.SchemaError, match="query.mask"):
        load_episode(p)


def test_same_inputs_same_episode():
    a = synth_episode(CFG, class_id=11, seed=77, shots=1)
    b = synth_episode(CFG, class_id=11, seed=77, shots=1)
    _episodes_equal(a, b)
    c = synth_episode(CFG, class_id=11, seed=78, shots=1)
    assert not np.array_equal(a.query.clip_visual, c.query.clip_visual)


def _interior_clip_cosines(cfg, seed):
    """Cosine to the text embedding for fully-interior foreground clip cells."""
    from pgma.synth import _downsample

    ep = synth_episode(cfg, class_id=4, seed=seed, shots=0)
    frac = _downsample(ep.query_mask.astype(np.float64), cfg.clip_side)
    full = frac > 0.999
    if not full.any():
        return None
    clip = ep.query.clip_visual[full].astype(np.float64)
    return clip @ ep.text_embed.astype(np.float64) / np.linalg.norm(clip, axis=1)


def test_zero_noise_clip_alignment_tracks_class_knowledge():
    # a fully-known class paints the canonical embedding exactly
    known = SynthConfig(noise=0.0, align_lo=1.0, align_hi=1.0, text_garble=0.0)
    hits = 0
    for seed in range(6):
        cos = _interior_clip_cosines(known, seed)
        if cos is None:
            continue
        np.testing.assert_allclose(cos, 1.0, atol=1e-5)
        hits += 1
    assert hits >= 3  # enough episodes had fully-interior clip cells

    # a half-known class paints one diluted direction per image
    half = SynthConfig(noise=0.0, align_lo=0.5, align_hi=0.5, text_garble=0.0)
    hits = 0
    for seed in range(6):
        cos = _interior_clip_cosines(half, seed)
        if cos is None:
            continue
        assert np.all(cos < 0.999)
        assert np.ptp(cos) < 1e-5  # all interior cells share the paint
        hits += 1
    assert hits >= 3


def test_mask_area_fraction_within_bounds_over_1000_episodes():
    rng_classes = np.random.default_rng(0)
    for i in range(1000):
        cid = int(rng_classes.integers(0, CFG.n_classes))
        ep = synth_episode(CFG, class_id=cid, seed=20_000 + i, shots=0)
        frac = ep.query_mask.mean()
        assert CFG.area_lo <= frac <= CFG.area_hi, f"episode {i}: area {frac:.3f}"


def test_fold_split_even_disjoint_exhaustive():
    for fold in range(4):
        base, novel = fold_split(CFG, fold)
        assert len(novel) == 5 and len(base) == 15
        assert set(base) | set(novel) == set(range(20))
        assert set(base) & set(novel) == set()
    with pytest.raises(ValueError):
        fold_split(CFG, 4)
    with pytest.raises(ValueError):
        SynthConfig(n_classes=10, n_folds=4)


def test_training_stream_never_emits_novel_classes():
    cfg = SynthConfig(fold=2)
    _, novel = fold_split(cfg)
    seen = {sample_training_class(cfg, i) for i in range(10_000)}
    assert seen.isdisjoint(novel)
    assert seen == set(range(20)) - set(novel)  # and every base class shows up


def test_loaded_payloads_finite_and_masks_binary(tmp_path):
    ep = synth_episode(CFG, class_id=19, seed=1234, shots=1)
    p = tmp_path / "ep.pgme"
    save_episode(ep, p)
    loaded = load_episode(p)  # validate() runs inside
    for _, _, arr in loaded.query.flat_levels():
        assert np.all(np.isfinite(arr))
    assert set(np.unique(loaded.query_mask)) <= {0, 1}


def test_mode_parse_accepts_cli_spellings():
    assert TaskMode.parse("fss") is TaskMode.FSS
    assert TaskMode.parse("corrupt-mask:2") is TaskMode.CORRUPT_MASK_2
    assert TaskMode.parse("corrupt-image:3").level == 3
    assert TaskMode.CORRUPT_IMAGE_1.family == "corrupt-image"
    with pytest.raises(ValueError, match="invalid mode"):
        TaskMode.parse("bbox:2")
