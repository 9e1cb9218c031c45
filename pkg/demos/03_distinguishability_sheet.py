"""Build a balanced tell-them-apart sheet and score some strategies.

The sheet mixes generated glyphs with ground-truth glyphs half and half in a
shuffled grid.  A participant circles the ones they believe are machine-made;
accuracy near 0.5 means they cannot tell.  This demo fakes the "generated"
pool with eroded truths so the sheet is buildable without a trained model.

    python3 demos/03_distinguishability_sheet.py
"""

import os

import numpy as np

from calligan.synthetic import stroke_glyph
from calligan.turing import make_sheet, render_sheet, score_marks, write_answer_key

OUT = os.path.join(os.path.dirname(__file__), "out", "sheet")


def main():
    os.makedirs(OUT, exist_ok=True)
    truth = {cp: (stroke_glyph(32, np.random.default_rng(cp)) > 0.5).astype(float)
             for cp in range(0x4E00, 0x4E00 + 24)}
    # stand-in renders: drop a few ink pixels so "generated" is subtly off
    fake = {}
    for cp, g in truth.items():
        rng = np.random.default_rng(cp + 1)
        mask = rng.random(g.shape) > 0.06
        fake[cp] = g * mask

    sheet = make_sheet(fake, truth, n_each=8, rows=4, cols=4, seed=21)
    render_sheet(sheet).save(os.path.join(OUT, "sheet.png"))
    write_answer_key(sheet, os.path.join(OUT, "key.txt"))
    print(f"sheet.png and key.txt -> {OUT}")

    key = set(sheet.answer_key)
    n = sheet.n_cells
    rng = np.random.default_rng(99)
    strategies = {
        "oracle (reads the key)": sorted(key),
        "marks every cell": list(range(n)),
        "marks nothing": [],
        "coin flip per cell": [p for p in range(n) if rng.random() < 0.5],
    }
    print(f"\n{'strategy':28s}accuracy")
    for name, marks in strategies.items():
        print(f"{name:28s}{score_marks(key, n, marks):.3f}")
    print("\n0.5 is chance level: the generated and truth cells are balanced,")
    print("so any key-blind strategy lands there in expectation.")


if __name__ == "__main__":
    main()
