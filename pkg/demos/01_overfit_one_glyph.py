"""Overfit the generator on a single glyph pair.

The fastest sanity check the toolkit offers: if the network and its
gradients are right, one source/target pair is memorized in a few hundred
steps and the reconstruction error collapses.  Run from the repo root:

    python3 demos/01_overfit_one_glyph.py
"""

import os
import time

import numpy as np

from calligan.data import GlyphImage, ImagePair, save_glyph_png
from calligan.losses import LossWeights
from calligan.model import ArchConfig
from calligan.optim import TrainConfig
from calligan import trainer
from calligan.synthetic import dilate, stroke_glyph

OUT = os.path.join(os.path.dirname(__file__), "out", "overfit")


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(7)
    src = stroke_glyph(32, rng)
    tgt = dilate(src)  # the "calligraphic" twin: same skeleton, thicker ink
    pair = ImagePair(GlyphImage.from_array(src, 0x4E00, "source"),
                     GlyphImage.from_array(tgt, 0x4E00, "target"))

    arch = ArchConfig(image_size=32, base_channels=16, max_channels=64,
                      filter_size=5, relu_slope=0.2)
    tcfg = TrainConfig(epochs=1, seed=7)
    state = trainer.new_state(arch, tcfg, LossWeights(alpha=100.0))

    print("step    l1        adv       total")
    t0 = time.time()
    for step in range(1, 401):
        row = trainer.train_step(state, [pair], tcfg.lr_g, tcfg.lr_d)
        if step % 50 == 0 or step == 1:
            print(f"{step:4d}    {row['loss_g_l1']:.4f}    "
                  f"{row['loss_g_adv']:.4f}    {row['loss_g_total']:.4f}")
        if row["loss_g_l1"] < 0.02:
            print(f"{step:4d}    {row['loss_g_l1']:.4f}    memorized, stopping")
            break
    print(f"({time.time() - t0:.1f}s)")

    fake = trainer.generate_array(state, src[None, :, :])[0]
    save_glyph_png(src, os.path.join(OUT, "source.png"))
    save_glyph_png(tgt, os.path.join(OUT, "target.png"))
    save_glyph_png((fake > 0.5).astype(np.float32), os.path.join(OUT, "generated.png"))
    print(f"wrote source/target/generated renders to {OUT}")


if __name__ == "__main__":
    main()
