"""Data pipeline tests: loading, pairing, splitting, augmentation, fixtures."""

import os

import numpy as np
import pytest

from calligan.data import (
    GlyphImage,
    ImagePair,
    augment_pair,
    count_valid,
    default_jitter,
    load_glyph,
    make_pairs,
    parse_codepoint,
    read_manifest,
    save_glyph_png,
    split_dataset,
    write_manifest,
)
from calligan.errors import ConfigError, DataError, DomainError
from calligan.synthetic import dilate, stroke_glyph, write_fixture_corpus


def glyph(arr, cp=100, font="source"):
    return GlyphImage.from_array(np.asarray(arr, dtype=np.float32), cp, font)


def make_pair(arr, cp=100):
    return ImagePair(glyph(arr, cp, "source"), glyph(arr, cp, "target"))


# -- loading and binarization -----------------------------------------------


def test_load_glyph_binarizes_checkerboard(tmp_path):
    board = np.indices((16, 16)).sum(axis=0) % 2  # 1 = ink cell
    save_glyph_png(board.astype(np.float32), str(tmp_path / "65.png"))
    g = load_glyph(str(tmp_path / "65.png"), 16, binarize_threshold=0.5)
    assert count_valid(g) == 128  # exactly half
    assert g.codepoint == 65
    assert not g.zero_ink


def test_load_glyph_all_white_flagged(tmp_path):
    save_glyph_png(np.zeros((8, 8)), str(tmp_path / "66.png"))
    g = load_glyph(str(tmp_path / "66.png"), 8)
    assert count_valid(g) == 0
    assert g.zero_ink


def test_load_glyph_all_black(tmp_path):
    save_glyph_png(np.ones((16, 16)), str(tmp_path / "67.png"))
    g = load_glyph(str(tmp_path / "67.png"), 16)
    assert count_valid(g) == 256


def test_load_glyph_pads_non_square_with_background(tmp_path):
    from PIL import Image

    img = Image.new("L", (8, 16), 0)  # tall all-black strip
    img.save(tmp_path / "68.png")
    g = load_glyph(str(tmp_path / "68.png"), 16)
    assert g.pixels.shape == (16, 16)
    # black strip occupies the center half; padding is white background
    assert count_valid(g) == 128
    assert g.pixels[:, 0].sum() == 0 and g.pixels[:, -1].sum() == 0


def test_load_glyph_unreadable_file(tmp_path):
    bad = tmp_path / "69.png"
    bad.write_bytes(b"this is not an image")
    with pytest.raises(DataError):
        load_glyph(str(bad), 16)


def test_load_glyph_output_is_binary(tmp_path):
    rng = np.random.default_rng(0)
    from PIL import Image

    Image.fromarray(rng.integers(0, 256, (37, 23), dtype=np.uint8).astype(np.uint8),
                    mode="L").save(tmp_path / "70.png")
    g = load_glyph(str(tmp_path / "70.png"), 16)
    assert np.isin(g.pixels, (0.0, 1.0)).all()


def test_parse_codepoint_forms():
    assert parse_codepoint("U+4E2D.png") == 0x4E2D
    assert parse_codepoint("0x4e2d.png") == 0x4E2D
    assert parse_codepoint("20013.png") == 20013
    assert parse_codepoint("A.png") == 65
    with pytest.raises(DataError):
        parse_codepoint("glyph_one.png")


def test_count_valid_rejects_non_binary():
    g = GlyphImage(np.full((4, 4), 0.5, dtype=np.float32), 1, "source")
    with pytest.raises(DomainError):
        count_valid(g)


# -- pairing -------------------------------------------------------------------


def test_make_pairs_intersection_and_report(tmp_path):
    src = tmp_path / "src"
    tgt = tmp_path / "tgt"
    src.mkdir()
    tgt.mkdir()
    ink = np.eye(8, dtype=np.float32)
    for cp in (65, 66, 67):
        save_glyph_png(ink, str(src / f"{cp}.png"))
    for cp in (66, 67, 68):
        save_glyph_png(ink, str(tgt / f"{cp}.png"))
    report = make_pairs(str(src), str(tgt), 8)
    assert [p.codepoint for p in report.pairs] == [66, 67]
    assert report.unmatched_source == [65]
    assert report.unmatched_target == [68]


def test_make_pairs_empty_intersection_fails(tmp_path):
    src = tmp_path / "src"
    tgt = tmp_path / "tgt"
    src.mkdir()
    tgt.mkdir()
    save_glyph_png(np.eye(8), str(src / "65.png"))
    save_glyph_png(np.eye(8), str(tgt / "66.png"))
    with pytest.raises(DataError):
        make_pairs(str(src), str(tgt), 8)


def test_make_pairs_identical_dirs(tmp_path):
    d = tmp_path / "both"
    d.mkdir()
    for cp in range(65, 75):
        save_glyph_png(np.eye(8), str(d / f"{cp}.png"))
    report = make_pairs(str(d), str(d), 8)
    assert len(report.pairs) == 10
    assert not report.unmatched_source and not report.unmatched_target


def test_make_pairs_missing_dir(tmp_path):
    with pytest.raises(DataError):
        make_pairs(str(tmp_path / "nope"), str(tmp_path / "nope2"), 8)


# -- splitting ------------------------------------------------------------------


def some_pairs(n):
    return [make_pair(np.eye(8), cp=1000 + i) for i in range(n)]


def test_split_deterministic_and_disjoint():
    pairs = some_pairs(30)
    a = split_dataset(pairs, train_size=20, test_size=5, seed=7)
    b = split_dataset(pairs, train_size=20, test_size=5, seed=7)
    assert a.train_codepoints == b.train_codepoints
    assert a.test_codepoints == b.test_codepoints
    assert not set(a.train_codepoints) & set(a.test_codepoints)
    assert len(a.training) == 20 and len(a.testing) == 5


def test_split_sizes_share_test_set_and_nest():
    pairs = some_pairs(40)
    tests = []
    trains = []
    for size in (5, 10, 20):
        s = split_dataset(pairs, train_size=size, test_size=8, seed=3)
        tests.append(tuple(s.test_codepoints))
        trains.append(s.train_codepoints)
    assert len(set(tests)) == 1  # one shared test set
    assert trains[0] == trains[1][:5] and trains[1] == trains[2][:10]


def test_split_insufficient_pairs():
    with pytest.raises(DataError) as exc:
        split_dataset(some_pairs(10), train_size=9, test_size=5, seed=0)
    assert "short by 4" in str(exc.value)


def test_split_with_manifest():
    pairs = some_pairs(12)
    want = [1003, 1007, 1011]
    s = split_dataset(pairs, train_size=5, test_size=0, seed=1, test_manifest=want)
    assert s.test_codepoints == want
    assert not set(s.train_codepoints) & set(want)
    with pytest.raises(DataError):
        split_dataset(pairs, 5, 0, 1, test_manifest=[9999])


def test_manifest_round_trip(tmp_path):
    pairs = some_pairs(15)
    s = split_dataset(pairs, train_size=10, test_size=4, seed=11)
    path = str(tmp_path / "manifest.txt")
    write_manifest(s, path)
    loaded = read_manifest(path)
    assert loaded["test"] == s.test_codepoints
    assert loaded["train"] == s.train_codepoints
    # rebuilding from the manifest pins the identical test set
    s2 = split_dataset(pairs, train_size=10, test_size=0, seed=99,
                       test_manifest=loaded["test"])
    assert s2.test_codepoints == s.test_codepoints


def test_manifest_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("[test]\nnot-a-number\n")
    with pytest.raises(DataError):
        read_manifest(str(p))


# -- augmentation ------------------------------------------------------------------


def test_default_jitter_values():
    assert default_jitter(256) == 307
    assert default_jitter(64) == 77


def test_augment_preserves_alignment_and_binarity():
    rng = np.random.default_rng(5)
    base = stroke_glyph(32, np.random.default_rng(1))
    pair = make_pair(base, cp=500)
    for _ in range(20):
        out = augment_pair(pair, default_jitter(32), rng)
        assert out.source.pixels.shape == (32, 32)
        # source == target in, so identical crops must come out
        assert np.array_equal(out.source.pixels, out.target.pixels)
        assert np.isin(out.source.pixels, (0.0, 1.0)).all()


def test_augment_minimal_jitter_offsets():
    seen = set()
    pair = make_pair(np.eye(8), cp=501)
    rng = np.random.default_rng(6)
    for _ in range(200):
        out = augment_pair(pair, 9, rng)
        # offset recoverable: the upscaled identity matrix shifts the diagonal
        seen.add(out.source.pixels.tobytes())
    assert 1 < len(seen) <= 4  # offsets in {0,1}^2


def test_augment_rejects_non_expanding_jitter():
    pair = make_pair(np.eye(8))
    with pytest.raises(ConfigError):
        augment_pair(pair, 8, np.random.default_rng(0))


def test_augment_same_seed_same_crop():
    pair = make_pair(stroke_glyph(16, np.random.default_rng(2)), cp=502)
    a = augment_pair(pair, 19, np.random.default_rng(42))
    b = augment_pair(pair, 19, np.random.default_rng(42))
    assert np.array_equal(a.source.pixels, b.source.pixels)


# -- synthetic fixtures ---------------------------------------------------------------


def test_stroke_glyph_nonempty_and_binary():
    for i in range(10):
        g = stroke_glyph(32, np.random.default_rng(i))
        assert g.any()
        assert np.isin(g, (0.0, 1.0)).all()


def test_dilate_superset_and_growth():
    g = np.zeros((9, 9), dtype=np.float32)
    g[4, 4] = 1.0
    d = dilate(g)
    assert d.sum() == 9  # 3x3 block
    assert (d >= g).all()


def test_fixture_corpus_loads_and_pairs(tmp_path):
    src, tgt = write_fixture_corpus(str(tmp_path), n_glyphs=12, image_size=16, seed=3)
    report = make_pairs(src, tgt, 16)
    assert len(report.pairs) == 12
    for p in report.pairs:
        # target strictly contains the source strokes (dilation), never less ink
        assert count_valid(p.target) >= count_valid(p.source)
        assert count_valid(p.source) > 0
    # deterministic regeneration
    src2, tgt2 = write_fixture_corpus(str(tmp_path / "again"), 12, 16, seed=3)
    r2 = make_pairs(src2, tgt2, 16)
    for a, b in zip(report.pairs, r2.pairs):
        assert np.array_equal(a.source.pixels, b.source.pixels)
        assert np.array_equal(a.target.pixels, b.target.pixels)
