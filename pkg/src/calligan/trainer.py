"""Training orchestration: adversarial loop, checkpoints, inference, sweep.

Each step runs the discriminator update first (real pair vs generated pair
with the generator detached), then one generator update on the same generated
batch.  Optimizer state never crosses the two networks.  A single master RNG
drives epoch shuffling and augmentation crops; its state rides along in every
checkpoint, so a resumed run replays the exact step sequence an uninterrupted
run would have taken.

Checkpoints are a dependency-free binary format: magic, format version, a
JSON metadata blob (architecture, training config, loss weights, counters,
RNG state), then a length-prefixed table of named float32 tensors covering
both networks' parameters, their batchnorm running buffers, and both Adam
moment sets.
"""

from __future__ import annotations

import json
import os
import struct
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .data import (
    DatasetSplit,
    ImagePair,
    augment_pair,
    count_valid,
    default_jitter,
    load_glyph,
    save_glyph_png,
    split_dataset,
    _scan_glyph_dir,
)
from .errors import DataError, DimensionError, NumericsError
from .losses import LossWeights, discriminator_loss, generator_total_loss
from .metrics import (
    MetricsReport,
    QualityThresholds,
    SsimParams,
    apply_threshold,
    evaluate_set,
    global_threshold,
    per_image_threshold,
)
from .model import (
    ArchConfig,
    NetParams,
    build_discriminator,
    build_generator,
    discriminator_forward,
    discriminator_shapes,
    generator_buffer_shapes,
    discriminator_buffer_shapes,
    generator_forward,
    generator_shapes,
)
from .optim import Adam, TrainConfig, lr_at_epoch
from .tensor import Tensor

__all__ = [
    "TrainState",
    "new_state",
    "train_step",
    "train",
    "generate",
    "sweep",
    "save_checkpoint",
    "load_checkpoint",
    "write_trainlog",
    "TRAINLOG_HEADER",
]

CHECKPOINT_MAGIC = b"CALLIGAN"
CHECKPOINT_VERSION = 1

TRAINLOG_HEADER = ("step,epoch,loss_d,loss_g_adv,loss_g_l1,loss_g_tv,"
                   "loss_g_total,lr_g,lr_d,wall_time")


@dataclass
class TrainState:
    arch: ArchConfig
    tcfg: TrainConfig
    weights: LossWeights
    gen: NetParams
    disc: NetParams
    opt_g: Adam
    opt_d: Adam
    rng: np.random.Generator
    epoch: int = 0
    global_step: int = 0


def new_state(arch: ArchConfig, tcfg: TrainConfig, weights: LossWeights) -> TrainState:
    """Fresh networks and optimizers; sub-seeds are derived from tcfg.seed."""
    gen = build_generator(arch, rng_seed=tcfg.seed, init_std=tcfg.init_std)
    disc = build_discriminator(arch, rng_seed=tcfg.seed + 1, init_std=tcfg.init_std)
    opt_g = Adam(beta1=tcfg.beta_g, beta2=tcfg.adam_beta2, grad_clip=tcfg.grad_clip)
    opt_d = Adam(beta1=tcfg.beta_d, beta2=tcfg.adam_beta2, grad_clip=tcfg.grad_clip)
    rng = np.random.default_rng(tcfg.seed + 2)
    return TrainState(arch, tcfg, weights, gen, disc, opt_g, opt_d, rng)


def _zero_grads(net: NetParams) -> None:
    for t in net.params.values():
        t.zero_grad()


def _batch_tensors(pairs: list[ImagePair]) -> tuple[Tensor, Tensor]:
    x = np.stack([p.source.pixels for p in pairs])[:, None, :, :].astype(np.float32)
    y = np.stack([p.target.pixels for p in pairs])[:, None, :, :].astype(np.float32)
    return Tensor(x), Tensor(y)


def train_step(state: TrainState, batch: list[ImagePair],
               lr_g: float, lr_d: float) -> dict:
    """One D update then one G update on the same generated batch."""
    x, y = _batch_tensors(batch)
    arch = state.arch

    fake = generator_forward(arch, state.gen, x, training=True)

    # discriminator: real pair up, generated pair down; generator held fixed
    _zero_grads(state.disc)
    d_real = discriminator_forward(arch, state.disc, x, y, training=True)
    d_fake = discriminator_forward(arch, state.disc, x, fake.detach(), training=True)
    loss_d = discriminator_loss(d_real, d_fake, state.weights.eps_log)
    loss_d.backward()
    state.opt_d.step(state.disc.params, lr_d)

    # generator: fool the (just updated) discriminator + reconstruct + smooth
    _zero_grads(state.gen)
    _zero_grads(state.disc)  # gradients flow through D here but are discarded
    d_fake_live = discriminator_forward(arch, state.disc, x, fake, training=True)
    loss_g, parts = generator_total_loss(d_fake_live, fake, y, state.weights)
    loss_g.backward()
    state.opt_g.step(state.gen.params, lr_g)

    state.global_step += 1
    return {
        "step": state.global_step,
        "epoch": state.epoch,
        "loss_d": float(loss_d.data),
        "loss_g_adv": parts["adversarial"],
        "loss_g_l1": parts["l1"],
        "loss_g_tv": parts["tv"],
        "loss_g_total": parts["total"],
        "lr_g": lr_g,
        "lr_d": lr_d,
        "wall_time": time.time(),
    }


def write_trainlog(rows: list[dict], path: str) -> None:
    lines = [TRAINLOG_HEADER]
    for r in rows:
        lines.append(
            f"{r['step']},{r['epoch']},{r['loss_d']!r},{r['loss_g_adv']!r},"
            f"{r['loss_g_l1']!r},{r['loss_g_tv']!r},{r['loss_g_total']!r},"
            f"{r['lr_g']!r},{r['lr_d']!r},{r['wall_time']!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def train(split: DatasetSplit, arch: ArchConfig, tcfg: TrainConfig,
          weights: LossWeights, out_dir: str, checkpoint_every: int = 0,
          resume_from: str | None = None, augment: bool = True,
          progress: bool = True) -> tuple[str, list[dict]]:
    """Full training loop; returns (final checkpoint path, log rows).

    checkpoint_every = k writes checkpoint_epoch<N>.ckpt every k epochs in
    addition to the final checkpoint.ckpt (0 disables the intermediates).
    """
    if not split.training:
        raise DataError("training set is empty")
    os.makedirs(out_dir, exist_ok=True)
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.arch != arch:
            raise DataError(
                "checkpoint architecture differs from the requested one; "
                "drop the conflicting flags or resume with matching settings")
        # the caller's schedule governs the continued run, so a finished
        # checkpoint can be extended by asking for more epochs
        state.tcfg = tcfg
        state.weights = weights
    else:
        state = new_state(arch, tcfg, weights)
    size = arch.image_size
    jitter = default_jitter(size)
    rows: list[dict] = []
    n = len(split.training)
    for epoch in range(state.epoch, state.tcfg.epochs):
        state.epoch = epoch
        lr_g = lr_at_epoch(state.tcfg.lr_g, state.tcfg.decay, epoch)
        lr_d = lr_at_epoch(state.tcfg.lr_d, state.tcfg.decay, epoch)
        order = state.rng.permutation(n)
        b = state.tcfg.batch_size
        for start in range(0, n, b):
            chunk = [split.training[i] for i in order[start:start + b]]
            if augment:
                chunk = [augment_pair(p, jitter, state.rng) for p in chunk]
            rows.append(train_step(state, chunk, lr_g, lr_d))
        state.epoch = epoch + 1
        if progress:
            last = rows[-1]
            print(f"epoch {epoch + 1}/{state.tcfg.epochs}  "
                  f"loss_d={last['loss_d']:.4f}  loss_g={last['loss_g_total']:.4f}",
                  file=sys.stderr)
        if checkpoint_every and (epoch + 1) % checkpoint_every == 0 \
                and epoch + 1 < state.tcfg.epochs:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_epoch{epoch + 1}.ckpt"),
                            state)
    final_path = os.path.join(out_dir, "checkpoint.ckpt")
    save_checkpoint(final_path, state)
    write_trainlog(rows, os.path.join(out_dir, "trainlog.csv"))
    return final_path, rows


# -- inference -------------------------------------------------------------------


def generate_array(state: TrainState, sources: np.ndarray,
                   use_batch_stats: bool = False) -> np.ndarray:
    """Probability maps for a [N, S, S] stack of source glyphs."""
    s = state.arch.image_size
    if sources.ndim != 3 or sources.shape[1:] != (s, s):
        raise DimensionError(
            f"source stack must be [N, {s}, {s}] to match the checkpoint; "
            f"got {sources.shape} (resize the inputs to {s}x{s})")
    x = Tensor(sources[:, None, :, :].astype(np.float32))
    out = generator_forward(state.arch, state.gen, x, training=use_batch_stats)
    return out.data[:, 0]


def calibrated_threshold(prob: np.ndarray, target: int) -> float:
    """Per-image cut with a guard for saturated probability maps.

    Long training drives sigmoid outputs into float32 saturation, tying the
    whole ink region at one value; the midpoint rule then lands on the tie
    itself and a strict cut would erase every pixel.  Stepping just below
    the maximum keeps the tied block.
    """
    th = per_image_threshold(prob, target)
    top = float(prob.max())
    if th >= top:
        th = float(np.nextafter(top, 0.0))
    return th


def generate(state: TrainState, source_dir: str, out_dir: str,
             truth_dir: str | None = None, binarize_threshold: float = 0.5,
             fallback_threshold: float = 0.5) -> dict:
    """Run inference over a glyph directory; write probability and binary maps.

    With ground truths supplied, each image gets its own calibrated threshold
    (target ink count = its truth's) and the global threshold (their mean) is
    recorded; without truths the fallback threshold applies everywhere.
    """
    size = state.arch.image_size
    src_files = _scan_glyph_dir(source_dir)
    if not src_files:
        raise DataError(f"no glyph images found in '{source_dir}'")
    tru_files = _scan_glyph_dir(truth_dir) if truth_dir else {}
    prob_dir = os.path.join(out_dir, "prob")
    bin_dir = os.path.join(out_dir, "binary")
    os.makedirs(prob_dir, exist_ok=True)
    os.makedirs(bin_dir, exist_ok=True)
    cps = sorted(src_files)
    per_image: list[tuple[int, float]] = []
    for cp in cps:
        glyph = load_glyph(src_files[cp], size, binarize_threshold, codepoint=cp)
        prob = generate_array(state, glyph.pixels[None])[0]
        save_glyph_png(prob, os.path.join(prob_dir, f"{cp}.png"))
        threshold = fallback_threshold
        if cp in tru_files:
            truth = load_glyph(tru_files[cp], size, binarize_threshold, codepoint=cp)
            target = count_valid(truth)
            if target > 0:
                threshold = calibrated_threshold(prob, target)
                per_image.append((cp, threshold))
        save_glyph_png(apply_threshold(prob, threshold),
                       os.path.join(bin_dir, f"{cp}.png"))
    result = {"count": len(cps), "prob_dir": prob_dir, "binary_dir": bin_dir}
    if per_image:
        g = global_threshold([t for _, t in per_image])
        result["global_threshold"] = g
        lines = ["codepoint,threshold"]
        lines += [f"{cp},{t!r}" for cp, t in per_image]
        lines.append(f"global,{g!r}")
        with open(os.path.join(out_dir, "thresholds.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return result


# -- sweep ------------------------------------------------------------------------


def sweep(pairs: list[ImagePair], sizes: list[int], test_size: int,
          arch: ArchConfig, tcfg: TrainConfig, weights: LossWeights,
          out_dir: str, window: int, test_manifest: list[int] | None = None,
          ssim_params: SsimParams = SsimParams(),
          thresholds: QualityThresholds = QualityThresholds(),
          augment: bool = True, progress: bool = True) -> list[dict]:
    """Train one model per training-set size against one shared test set.

    Emits sweep.csv rows (size, mean_cr, mean_ssim, tier counts); per-size
    artifacts land in out_dir/size_<n>/.
    """
    if sizes != sorted(sizes):
        raise DataError(f"sweep sizes must be ascending, got {sizes}")
    os.makedirs(out_dir, exist_ok=True)
    results = []
    for size in sizes:
        sub = os.path.join(out_dir, f"size_{size}")
        os.makedirs(sub, exist_ok=True)
        split = split_dataset(pairs, train_size=size, test_size=test_size,
                              seed=tcfg.seed, test_manifest=test_manifest)
        ckpt_path, _ = train(split, arch, tcfg, weights, sub,
                             augment=augment, progress=progress)
        state = load_checkpoint(ckpt_path)
        test_src = os.path.join(sub, "test_source")
        test_tru = os.path.join(sub, "test_truth")
        os.makedirs(test_src, exist_ok=True)
        os.makedirs(test_tru, exist_ok=True)
        for p in split.testing:
            save_glyph_png(p.source.pixels, os.path.join(test_src, f"{p.codepoint}.png"))
            save_glyph_png(p.target.pixels, os.path.join(test_tru, f"{p.codepoint}.png"))
        gen_out = generate(state, test_src, sub, truth_dir=test_tru)
        report = evaluate_set(gen_out["binary_dir"], test_tru, window,
                              ssim_params, thresholds)
        report.to_csv(os.path.join(sub, "report.csv"))
        results.append({
            "train_size": size,
            "mean_cr": report.mean_cr,
            "mean_ssim": report.mean_ssim,
            "high": report.tier_counts["High"],
            "medium": report.tier_counts["Medium"],
            "low": report.tier_counts["Low"],
        })
    lines = ["train_size,mean_cr,mean_ssim,high,medium,low"]
    for r in results:
        lines.append(f"{r['train_size']},{r['mean_cr']!r},{r['mean_ssim']!r},"
                     f"{r['high']},{r['medium']},{r['low']}")
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return results


# -- checkpoint format ---------------------------------------------------------------


def _pack_tensors(state: TrainState) -> dict[str, np.ndarray]:
    table: dict[str, np.ndarray] = {}
    for name, t in state.gen.params.items():
        table["g." + name] = t.data
    for name, t in state.disc.params.items():
        table["d." + name] = t.data
    for name, arr in state.gen.buffers.items():
        table["gbuf." + name] = arr
    for name, arr in state.disc.buffers.items():
        table["dbuf." + name] = arr
    for name, arr in state.opt_g.state_arrays().items():
        table["adamg." + name] = arr
    for name, arr in state.opt_d.state_arrays().items():
        table["adamd." + name] = arr
    return table


def save_checkpoint(path: str, state: TrainState) -> None:
    meta = {
        "arch": state.arch.to_dict(),
        "train": {
            "lr_g": state.tcfg.lr_g, "lr_d": state.tcfg.lr_d,
            "beta_g": state.tcfg.beta_g, "beta_d": state.tcfg.beta_d,
            "adam_beta2": state.tcfg.adam_beta2, "decay": state.tcfg.decay,
            "epochs": state.tcfg.epochs, "batch_size": state.tcfg.batch_size,
            "init_std": state.tcfg.init_std, "seed": state.tcfg.seed,
            "grad_clip": state.tcfg.grad_clip,
        },
        "weights": {"alpha": state.weights.alpha, "beta": state.weights.beta,
                    "eps_log": state.weights.eps_log},
        "epoch": state.epoch,
        "global_step": state.global_step,
        "adam_g_t": state.opt_g.t,
        "adam_d_t": state.opt_d.t,
        "rng_state": state.rng.bit_generator.state,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    table = _pack_tensors(state)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(table)))
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path: str) -> TrainState:
    """Rebuild a TrainState; shapes are validated against the embedded
    ArchConfig before any value is accepted."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot open checkpoint '{path}': {exc}") from exc
    with fh:
        if _read_exact(fh, len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
            raise DataError(f"'{path}' is not a checkpoint (bad magic)")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        meta_len = struct.unpack("<I", _read_exact(fh, 4, "meta length"))[0]
        meta = json.loads(_read_exact(fh, meta_len, "metadata"))
        count = struct.unpack("<Q", _read_exact(fh, 8, "tensor count"))[0]
        table: dict[str, np.ndarray] = {}
        for _ in range(count):
            name_len = struct.unpack("<I", _read_exact(fh, 4, "name length"))[0]
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            ndim = struct.unpack("<I", _read_exact(fh, 4, "ndim"))[0]
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "shape"))
            n_items = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(fh, 4 * n_items, f"tensor '{name}'")
            table[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    arch = ArchConfig.from_dict(meta["arch"])
    tcfg = TrainConfig(**meta["train"])
    weights = LossWeights(**meta["weights"])

    def take(prefix: str, expected: dict[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
        got = {}
        for name, shape in expected.items():
            key = prefix + name
            if key not in table:
                raise DataError(f"checkpoint is missing tensor '{key}'")
            if table[key].shape != shape:
                raise DataError(
                    f"checkpoint tensor '{key}' has shape {table[key].shape}, but the "
                    f"embedded architecture requires {shape}")
            got[name] = table[key]
        return got

    gen_p = take("g.", generator_shapes(arch))
    disc_p = take("d.", discriminator_shapes(arch))
    gen_b = take("gbuf.", generator_buffer_shapes(arch))
    disc_b = take("dbuf.", discriminator_buffer_shapes(arch))

    gen = NetParams({k: Tensor(v, requires_grad=True) for k, v in gen_p.items()}, gen_b)
    disc = NetParams({k: Tensor(v, requires_grad=True) for k, v in disc_p.items()}, disc_b)
    opt_g = Adam(beta1=tcfg.beta_g, beta2=tcfg.adam_beta2, grad_clip=tcfg.grad_clip)
    opt_d = Adam(beta1=tcfg.beta_d, beta2=tcfg.adam_beta2, grad_clip=tcfg.grad_clip)
    opt_g.load_state_arrays(
        {k[len("adamg."):]: v for k, v in table.items() if k.startswith("adamg.")},
        meta["adam_g_t"])
    opt_d.load_state_arrays(
        {k[len("adamd."):]: v for k, v in table.items() if k.startswith("adamd.")},
        meta["adam_d_t"])

    bit_gen = np.random.PCG64()
    bit_gen.state = meta["rng_state"]
    rng = np.random.Generator(bit_gen)

    return TrainState(arch, tcfg, weights, gen, disc, opt_g, opt_d, rng,
                      epoch=meta["epoch"], global_step=meta["global_step"])
