"""Procedural glyph fixtures for tests and the --synthetic-fixtures CLI path.

Each fixture pair puts a few straight strokes on the source image; the target
is the same figure dilated once, i.e. a deterministic "heavier brush" style.
That mapping is simple enough for a small model to learn in a short smoke
run, yet non-trivial (it is not the identity).
"""

from __future__ import annotations

import os

import numpy as np

from .data import save_glyph_png
from .errors import ConfigError

__all__ = ["stroke_glyph", "dilate", "write_fixture_corpus", "FIXTURE_BASE_CODEPOINT"]

FIXTURE_BASE_CODEPOINT = 0x4E00


def dilate(ink: np.ndarray) -> np.ndarray:
    """3x3 binary dilation via shifted maxima (no padding growth)."""
    out = ink.copy()
    h, w = ink.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(dy, 0), h + min(dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            yt = slice(max(-dy, 0), h + min(-dy, 0))
            xt = slice(max(-dx, 0), w + min(-dx, 0))
            np.maximum(out[yt, xt], ink[ys, xs], out=out[yt, xt])
    return out


def _draw_stroke(ink: np.ndarray, rng: np.random.Generator) -> None:
    s = ink.shape[0]
    margin = max(s // 8, 1)
    thick = max(s // 16, 1)
    lo, hi = margin, s - margin
    kind = rng.integers(0, 3)
    pos = int(rng.integers(lo, hi))
    if kind == 0:      # horizontal bar
        ink[pos:pos + thick, lo:hi] = 1.0
    elif kind == 1:    # vertical bar
        ink[lo:hi, pos:pos + thick] = 1.0
    else:              # diagonal
        sign = 1 if rng.integers(0, 2) else -1
        for t in range(lo, hi):
            y = t
            x = t if sign > 0 else s - 1 - t
            ink[y:y + thick, max(x - thick // 2, 0):x + thick // 2 + 1] = 1.0


def stroke_glyph(size: int, rng: np.random.Generator) -> np.ndarray:
    """A {0,1} glyph of 2-4 random strokes, guaranteed non-empty."""
    if size < 8:
        raise ConfigError(f"fixture glyphs need size >= 8, got {size}")
    ink = np.zeros((size, size), dtype=np.float32)
    for _ in range(int(rng.integers(2, 5))):
        _draw_stroke(ink, rng)
    return ink


def write_fixture_corpus(root: str, n_glyphs: int = 48, image_size: int = 32,
                         seed: int = 0) -> tuple[str, str]:
    """Write a paired source/target corpus under root; returns the two dirs.

    Filenames are decimal codepoints starting at a CJK base, so the normal
    loading path (codepoint-from-filename) applies unchanged.
    """
    if n_glyphs < 1:
        raise ConfigError(f"n_glyphs must be >= 1, got {n_glyphs}")
    source_dir = os.path.join(root, "source")
    target_dir = os.path.join(root, "target")
    os.makedirs(source_dir, exist_ok=True)
    os.makedirs(target_dir, exist_ok=True)
    for i in range(n_glyphs):
        rng = np.random.default_rng((seed, i))
        ink = stroke_glyph(image_size, rng)
        cp = FIXTURE_BASE_CODEPOINT + i
        save_glyph_png(ink, os.path.join(source_dir, f"{cp}.png"))
        save_glyph_png(dilate(ink), os.path.join(target_dir, f"{cp}.png"))
    return source_dir, target_dir
