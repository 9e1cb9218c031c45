"""Human discrimination test: sheet generation, answer keys, response scoring.

A sheet mixes n_each generated glyphs with n_each ground-truth glyphs, every
cell a different character, shuffled by seed and laid out row-major on one
composite raster.  Participants mark the positions they believe are machine
generated; a response is correct on a cell when (marked and generated) or
(unmarked and truth).  The key never appears on the sheet itself: labels only
reach the separately written answer-key file.

Response capture is deliberately file-based (one participant per line:
``id: 3, 17, 22``) since the original protocol used printed sheets.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import ConfigError, DataError, UsageError

__all__ = [
    "LABEL_GENERATED",
    "LABEL_TRUTH",
    "SheetCell",
    "TuringSheet",
    "ScoreReport",
    "make_sheet",
    "render_sheet",
    "write_answer_key",
    "read_answer_key",
    "parse_responses",
    "score_marks",
    "score_responses",
]

LABEL_GENERATED = "generated"
LABEL_TRUTH = "truth"

_BORDER = 1          # px frame around each glyph
_CAPTION_H = 12      # strip under the glyph for the position index
_CELL_GAP = 2        # white gap between cells


@dataclass(frozen=True)
class SheetCell:
    position: int       # 0-based row-major index
    codepoint: int
    label: str          # LABEL_GENERATED or LABEL_TRUTH
    pixels: np.ndarray  # binary glyph


@dataclass
class TuringSheet:
    cells: list[SheetCell]
    rows: int
    cols: int
    seed: int

    @property
    def answer_key(self) -> list[int]:
        return [c.position for c in self.cells if c.label == LABEL_GENERATED]

    @property
    def n_cells(self) -> int:
        return len(self.cells)


@dataclass
class ScoreReport:
    per_participant: list[tuple[str, float]]
    mean_accuracy: float

    def to_csv(self, path: str) -> None:
        lines = ["participant,accuracy"]
        lines += [f"{pid},{acc!r}" for pid, acc in self.per_participant]
        lines.append(f"mean,{self.mean_accuracy!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def make_sheet(generated: dict[int, np.ndarray], truth: dict[int, np.ndarray],
               n_each: int, rows: int, cols: int, seed: int) -> TuringSheet:
    """Sample and shuffle a balanced sheet.

    Each character appears at most once on the sheet: the generated subset is
    drawn first, and the truth subset is drawn from the remaining codepoints.
    """
    if n_each < 1:
        raise ConfigError(f"n_each must be >= 1, got {n_each}")
    if rows < 1 or cols < 1 or rows * cols < 2 * n_each:
        raise ConfigError(
            f"layout {rows}x{cols} cannot hold {2 * n_each} cells")
    if len(generated) < n_each:
        raise DataError(
            f"generated pool has {len(generated)} glyphs, need {n_each}")
    rng = np.random.default_rng(seed)
    gen_cps = sorted(generated)
    picked_gen = [gen_cps[i] for i in rng.choice(len(gen_cps), n_each, replace=False)]
    remaining = sorted(set(truth) - set(picked_gen))
    if len(remaining) < n_each:
        raise DataError(
            f"truth pool has only {len(remaining)} codepoints left after removing "
            f"the generated picks, need {n_each}")
    picked_tru = [remaining[i] for i in rng.choice(len(remaining), n_each, replace=False)]

    entries = ([(cp, LABEL_GENERATED, generated[cp]) for cp in picked_gen]
               + [(cp, LABEL_TRUTH, truth[cp]) for cp in picked_tru])
    order = rng.permutation(len(entries))
    cells = []
    for pos, idx in enumerate(order):
        cp, label, pixels = entries[idx]
        cells.append(SheetCell(pos, cp, label, np.asarray(pixels, dtype=np.float32)))
    return TuringSheet(cells, rows, cols, seed)


def render_sheet(sheet: TuringSheet) -> Image.Image:
    """Composite raster: bordered glyphs with position indices beneath.

    Depends only on cell images and layout; labels never touch the pixels.
    """
    sizes = {c.pixels.shape for c in sheet.cells}
    if len(sizes) != 1:
        raise DataError(f"sheet glyphs must share one size, got {sorted(sizes)}")
    (gh, gw) = next(iter(sizes))
    cell_w = gw + 2 * _BORDER
    cell_h = gh + 2 * _BORDER + _CAPTION_H
    width = sheet.cols * (cell_w + _CELL_GAP) + _CELL_GAP
    height = sheet.rows * (cell_h + _CELL_GAP) + _CELL_GAP
    canvas = Image.new("L", (width, height), 255)
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for cell in sheet.cells:
        r, c = divmod(cell.position, sheet.cols)
        x0 = _CELL_GAP + c * (cell_w + _CELL_GAP)
        y0 = _CELL_GAP + r * (cell_h + _CELL_GAP)
        draw.rectangle([x0, y0, x0 + cell_w - 1, y0 + gh + 2 * _BORDER - 1], outline=0)
        lum = ((1.0 - cell.pixels) * 255.0).astype(np.uint8)
        canvas.paste(Image.fromarray(lum, mode="L"), (x0 + _BORDER, y0 + _BORDER))
        draw.text((x0 + _BORDER, y0 + gh + 2 * _BORDER), str(cell.position),
                  fill=0, font=font)
    return canvas


def write_answer_key(sheet: TuringSheet, path: str) -> None:
    """One generated-cell position per line, with a cell-count header."""
    lines = [f"# cells={sheet.n_cells}"]
    lines += [str(p) for p in sheet.answer_key]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_answer_key(path: str) -> tuple[list[int], int]:
    """Returns (generated positions, total cell count)."""
    positions = []
    total = None
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if "cells=" in line:
                        total = int(line.split("cells=", 1)[1])
                    continue
                if not line.isdigit():
                    raise UsageError(f"{path}:{lineno}: malformed position '{line}'")
                positions.append(int(line))
    except OSError as exc:
        raise DataError(f"cannot read answer key '{path}': {exc}") from exc
    if total is None:
        raise UsageError(f"answer key '{path}' is missing its '# cells=N' header")
    return positions, total


def parse_responses(path: str) -> list[tuple[str, list[int]]]:
    """Response file: one participant per line, ``id: p1, p2, ...``.

    An id with no positions (``id:``) is a participant who marked nothing.
    """
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if ":" not in line:
                    raise UsageError(
                        f"{path}:{lineno}: expected 'participant: positions', got '{line}'")
                pid, _, rest = line.partition(":")
                pid = pid.strip()
                if not pid:
                    raise UsageError(f"{path}:{lineno}: empty participant id")
                marks = []
                for tok in rest.split(","):
                    tok = tok.strip()
                    if not tok:
                        continue
                    if not tok.isdigit():
                        raise UsageError(
                            f"{path}:{lineno}: malformed position '{tok}'")
                    marks.append(int(tok))
                out.append((pid, marks))
    except OSError as exc:
        raise DataError(f"cannot read responses '{path}': {exc}") from exc
    return out


def score_marks(generated_positions: set[int], total_cells: int,
                marks: list[int]) -> float:
    """Accuracy of one participant's marks against the answer key."""
    if len(set(marks)) != len(marks):
        dupes = sorted({m for m in marks if marks.count(m) > 1})
        raise UsageError(f"duplicate marked positions: {dupes}")
    for m in marks:
        if not 0 <= m < total_cells:
            raise UsageError(f"marked position {m} outside the sheet (0..{total_cells - 1})")
    marked = set(marks)
    correct = 0
    for pos in range(total_cells):
        is_gen = pos in generated_positions
        if (pos in marked) == is_gen:
            correct += 1
    return correct / total_cells


def score_responses(generated_positions: list[int], total_cells: int,
                    responses: list[tuple[str, list[int]]],
                    require_marks: int | None = None) -> ScoreReport:
    """Score every participant; optionally enforce an exactly-k-marks protocol."""
    if not responses:
        raise DataError("no responses to score")
    gen_set = set(generated_positions)
    for p in gen_set:
        if not 0 <= p < total_cells:
            raise UsageError(f"answer-key position {p} outside the sheet")
    per = []
    for pid, marks in responses:
        if require_marks is not None and len(marks) != require_marks:
            raise UsageError(
                f"participant '{pid}' marked {len(marks)} cells; protocol requires "
                f"exactly {require_marks}")
        per.append((pid, score_marks(gen_set, total_cells, marks)))
    mean = float(np.mean([acc for _, acc in per]))
    return ScoreReport(per, mean)
