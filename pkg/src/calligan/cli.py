"""Command-line pipeline.

Subcommands cover the whole workflow: prepare (pair, binarize, split),
train, generate, evaluate, sweep (quality vs training-set size), turing-gen /
turing-score (human discrimination protocol), and gradcheck (finite
difference audit of the autodiff engine).

Configuration is layered: built-in defaults, then an INI-style key=value
file given with --config, then explicit flags.  Whatever the layers resolve
to is written next to the outputs as resolved_config.ini, so every run
leaves a diff-able record of exactly what it did.

Exit codes: 0 success, 2 usage or configuration problem, 3 data problem,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np
from PIL import Image

from . import __version__
from .data import (
    DatasetSplit,
    load_glyph,
    make_pairs,
    read_manifest,
    save_glyph_png,
    split_dataset,
    write_manifest,
    _scan_glyph_dir,
)
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    NumericsError,
    UsageError,
)
from .losses import (
    LossWeights,
    discriminator_loss,
    generator_adv_loss,
    generator_total_loss,
    l1_loss,
    tv_loss,
)
from .metrics import (
    MODE_WHITE_PADDED,
    QualityThresholds,
    SsimParams,
    evaluate_set,
)
from .model import (
    ArchConfig,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
)
from .optim import TrainConfig
from .synthetic import write_fixture_corpus
from .tensor import (
    Tensor,
    batchnorm,
    concat_channels,
    conv2d,
    conv_transpose2d,
    finite_diff_check,
    fully_connected,
    leaky_relu,
    relu,
    sigmoid,
)
from . import trainer
from .turing import (
    make_sheet,
    parse_responses,
    read_answer_key,
    render_sheet,
    score_responses,
    write_answer_key,
)

__all__ = ["main", "gradcheck_report"]

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


def _parse_config_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in _TRUE_WORDS:
        return True
    if low in _FALSE_WORDS:
        return False
    raise ValueError(raw)


class RunConfig:
    """Layered option resolution with a written record of the outcome."""

    def __init__(self, config_path: str | None):
        self._file = configparser.ConfigParser()
        if config_path is not None:
            if not os.path.isfile(config_path):
                raise UsageError(f"config file '{config_path}' does not exist")
            try:
                self._file.read(config_path)
            except configparser.Error as exc:
                raise ConfigError(f"malformed config file '{config_path}': {exc}")
        self.resolved: dict[str, dict[str, str]] = {}

    def get(self, section: str, key: str, flag_value, default, cast):
        if flag_value is not None:
            value = flag_value
        elif self._file.has_option(section, key):
            raw = self._file.get(section, key)
            try:
                value = _parse_config_bool(raw) if cast is bool else cast(raw)
            except ValueError:
                raise ConfigError(
                    f"config [{section}] {key}: cannot parse '{raw}' as {cast.__name__}")
        else:
            value = default
        self.record(section, key, value)
        return value

    def has(self, section: str, key: str) -> bool:
        return self._file.has_option(section, key)

    def record(self, section: str, key: str, value) -> None:
        self.resolved.setdefault(section, {})[key] = str(value)

    def write(self, path: str) -> None:
        out = configparser.ConfigParser()
        for section in sorted(self.resolved):
            out[section] = dict(sorted(self.resolved[section].items()))
        with open(path, "w", encoding="utf-8") as fh:
            out.write(fh)


def _require_dir(path: str | None, what: str) -> str:
    if path is None:
        raise UsageError(f"--{what} is required")
    if not os.path.isdir(path):
        raise UsageError(f"{what} directory '{path}' does not exist")
    return path


def _require_file(path: str | None, what: str) -> str:
    if path is None:
        raise UsageError(f"--{what} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{what} file '{path}' does not exist")
    return path


def _parse_sizes(raw: str) -> list[int]:
    try:
        sizes = [int(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse size list '{raw}' (want e.g. '8,16,32')")
    if not sizes:
        raise ConfigError("size list is empty")
    return sizes


def _run_section(rc: RunConfig, args) -> int:
    """Record the shared run settings; returns the seed."""
    seed = rc.get("run", "seed", args.seed, 0, int)
    rc.get("run", "deterministic", getattr(args, "deterministic", None), True, bool)
    rc.get("run", "threads", getattr(args, "threads", None), 1, int)
    return seed


def _arch_from(rc: RunConfig, args) -> ArchConfig:
    arch = ArchConfig(
        image_size=rc.get("arch", "image_size", args.image_size, 256, int),
        base_channels=rc.get("arch", "base_channels", args.base_channels, 64, int),
        max_channels=rc.get("arch", "max_channels", args.max_channels, 512, int),
        filter_size=rc.get("arch", "filter_size", args.filter_size, 5, int),
        disc_blocks=rc.get("arch", "disc_blocks", args.disc_blocks, 4, int),
        relu_slope=rc.get("arch", "relu_slope", args.relu_slope, 0.0, float),
        patch_output=rc.get("arch", "patch_output", args.patch_output, False, bool),
    )
    rc.record("arch", "stride", arch.stride)
    return arch


def _train_from(rc: RunConfig, args) -> TrainConfig:
    return TrainConfig(
        lr_g=rc.get("train", "lr_g", args.lr_g, 0.001, float),
        lr_d=rc.get("train", "lr_d", args.lr_d, 0.001, float),
        beta_g=rc.get("train", "beta_g", args.beta_g, 0.5, float),
        beta_d=rc.get("train", "beta_d", args.beta_d, 0.5, float),
        adam_beta2=rc.get("train", "adam_beta2", args.adam_beta2, 0.999, float),
        decay=rc.get("train", "decay", args.decay, 0.9, float),
        epochs=rc.get("train", "epochs", args.epochs, 100, int),
        batch_size=rc.get("train", "batch_size", args.batch_size, 1, int),
        init_std=rc.get("train", "init_std", args.init_std, 0.02, float),
        seed=rc.get("train", "seed", args.seed, 0, int),
        grad_clip=rc.get("train", "grad_clip", args.grad_clip, 0.0, float),
    )


def _weights_from(rc: RunConfig, args) -> LossWeights:
    return LossWeights(
        alpha=rc.get("losses", "alpha", args.alpha, 100.0, float),
        beta=rc.get("losses", "beta", args.beta, 1e-4, float),
        eps_log=rc.get("losses", "eps_log", None, 1e-7, float),
    )


def _tiers_from(rc: RunConfig, args) -> QualityThresholds:
    return QualityThresholds(
        cr_high=rc.get("metrics", "cr_high", args.cr_high, 0.3025, float),
        ssim_high=rc.get("metrics", "ssim_high", args.ssim_high, 0.7591, float),
        cr_low=rc.get("metrics", "cr_low", args.cr_low, 0.0, float),
        ssim_low=rc.get("metrics", "ssim_low", args.ssim_low, 0.68, float),
    )


def _data_dirs(rc: RunConfig, args) -> tuple[str, str, str | None]:
    """Resolve (source_dir, target_dir, manifest_path) for train/sweep."""
    manifest = args.manifest
    if args.data is not None:
        data = _require_dir(args.data, "data")
        src = os.path.join(data, "images", "source")
        tgt = os.path.join(data, "images", "target")
        if not (os.path.isdir(src) and os.path.isdir(tgt)):
            raise UsageError(
                f"'{data}' is not a prepared dataset (expected images/source and "
                f"images/target; run the prepare subcommand first)")
        if manifest is None:
            candidate = os.path.join(data, "manifest.txt")
            manifest = candidate if os.path.isfile(candidate) else None
    else:
        src = _require_dir(args.source, "source")
        tgt = _require_dir(args.target, "target")
    if manifest is not None:
        _require_file(manifest, "manifest")
    rc.record("data", "source", src)
    rc.record("data", "target", tgt)
    rc.record("data", "manifest", manifest or "")
    return src, tgt, manifest


def _split_from_manifest(pairs, manifest_path: str, seed: int) -> DatasetSplit:
    sections = read_manifest(manifest_path)
    by_cp = {p.codepoint: p for p in pairs}
    missing = sorted((set(sections["test"]) | set(sections["train"])) - set(by_cp))
    if missing:
        raise DataError(
            f"manifest '{manifest_path}' lists codepoints absent from the "
            f"dataset: {missing[:8]}{'...' if len(missing) > 8 else ''}")
    return DatasetSplit(
        training=[by_cp[cp] for cp in sections["train"]],
        testing=[by_cp[cp] for cp in sections["test"]],
        seed=seed)


def _native_glyph_size(directory: str) -> int:
    files = _scan_glyph_dir(directory)
    if not files:
        raise DataError(f"no glyph images found in '{directory}'")
    first = files[sorted(files)[0]]
    try:
        with Image.open(first) as img:
            return max(img.size)
    except OSError as exc:
        raise DataError(f"cannot read '{first}': {exc}") from exc


# -- subcommands ------------------------------------------------------------------


def cmd_prepare(args) -> int:
    rc = RunConfig(args.config)
    seed = _run_section(rc, args)
    size = rc.get("arch", "image_size", args.image_size, 256, int)
    thr = rc.get("data", "binarize_threshold", args.binarize_threshold, 0.5, float)
    test_size = rc.get("data", "test_size", args.test_size, 10, int)
    out = args.out
    os.makedirs(out, exist_ok=True)

    if args.synthetic_fixtures:
        n = rc.get("data", "fixture_count", args.fixture_count, 48, int)
        src_dir, tgt_dir = write_fixture_corpus(
            os.path.join(out, "fixtures"), n_glyphs=n, image_size=size, seed=seed)
    else:
        src_dir = _require_dir(args.source, "source")
        tgt_dir = _require_dir(args.target, "target")
    rc.record("data", "source", src_dir)
    rc.record("data", "target", tgt_dir)

    report = make_pairs(src_dir, tgt_dir, size, thr)
    img_src = os.path.join(out, "images", "source")
    img_tgt = os.path.join(out, "images", "target")
    os.makedirs(img_src, exist_ok=True)
    os.makedirs(img_tgt, exist_ok=True)
    for p in report.pairs:
        save_glyph_png(p.source.pixels, os.path.join(img_src, f"{p.codepoint}.png"))
        save_glyph_png(p.target.pixels, os.path.join(img_tgt, f"{p.codepoint}.png"))
    if report.unmatched_source or report.unmatched_target:
        print(f"warning: {len(report.unmatched_source)} source-only and "
              f"{len(report.unmatched_target)} target-only glyphs were skipped",
              file=sys.stderr)

    pinned = None
    if args.manifest is not None:
        pinned = read_manifest(_require_file(args.manifest, "manifest"))["test"]
    sizes_raw = rc.get("data", "train_sizes", args.train_sizes, "", str)
    manifests = []
    if sizes_raw:
        for n_train in _parse_sizes(sizes_raw):
            split = split_dataset(report.pairs, n_train, test_size, seed,
                                  test_manifest=pinned)
            path = os.path.join(out, f"manifest_train{n_train}.txt")
            write_manifest(split, path)
            manifests.append(path)
    else:
        n_train = len(report.pairs) - test_size
        if n_train < 1:
            raise DataError(
                f"only {len(report.pairs)} pairs; cannot reserve {test_size} for "
                f"testing and still train")
        split = split_dataset(report.pairs, n_train, test_size, seed,
                              test_manifest=pinned)
        path = os.path.join(out, "manifest.txt")
        write_manifest(split, path)
        manifests.append(path)

    rc.write(os.path.join(out, "resolved_config.ini"))
    print(f"paired {len(report.pairs)} glyphs at {size}x{size} -> {out}")
    for path in manifests:
        print(f"manifest: {path}")
    return 0


def cmd_train(args) -> int:
    rc = RunConfig(args.config)
    _run_section(rc, args)
    arch = _arch_from(rc, args)
    tcfg = _train_from(rc, args)
    weights = _weights_from(rc, args)
    thr = rc.get("data", "binarize_threshold", args.binarize_threshold, 0.5, float)
    augment = rc.get("train", "augment", args.augment, True, bool)
    ckpt_every = rc.get("train", "checkpoint_every", args.checkpoint_every, 0, int)
    src_dir, tgt_dir, manifest = _data_dirs(rc, args)

    pairs = make_pairs(src_dir, tgt_dir, arch.image_size, thr).pairs
    if manifest is not None:
        split = _split_from_manifest(pairs, manifest, tcfg.seed)
    else:
        test_size = rc.get("data", "test_size", args.test_size, 0, int)
        train_size = rc.get("data", "train_size", args.train_size,
                            len(pairs) - test_size, int)
        split = split_dataset(pairs, train_size, test_size, tcfg.seed)
    rc.record("data", "n_train", len(split.training))
    rc.record("data", "n_test", len(split.testing))

    out = args.out
    os.makedirs(out, exist_ok=True)
    rc.write(os.path.join(out, "resolved_config.ini"))
    path, rows = trainer.train(split, arch, tcfg, weights, out,
                               checkpoint_every=ckpt_every,
                               resume_from=args.resume, augment=augment,
                               progress=not args.quiet)
    print(f"checkpoint: {path}")
    if rows:
        last = rows[-1]
        print(f"final step {last['step']}: loss_d={last['loss_d']:.4f} "
              f"loss_g={last['loss_g_total']:.4f} l1={last['loss_g_l1']:.4f}")
    return 0


def cmd_generate(args) -> int:
    rc = RunConfig(args.config)
    _run_section(rc, args)
    ckpt = _require_file(args.checkpoint, "checkpoint")
    src = _require_dir(args.source, "source")
    truth = _require_dir(args.truth, "truth") if args.truth is not None else None
    thr = rc.get("data", "binarize_threshold", args.binarize_threshold, 0.5, float)
    fallback = rc.get("metrics", "fallback_threshold", args.threshold, 0.5, float)

    state = trainer.load_checkpoint(ckpt)
    for key, value in state.arch.to_dict().items():
        rc.record("arch", key, value)
    rc.record("run", "checkpoint", ckpt)
    rc.record("data", "source", src)
    rc.record("data", "truth", truth or "")

    out = args.out
    os.makedirs(out, exist_ok=True)
    result = trainer.generate(state, src, out, truth_dir=truth,
                              binarize_threshold=thr, fallback_threshold=fallback)
    rc.write(os.path.join(out, "resolved_config.ini"))
    print(f"generated {result['count']} glyphs -> {result['binary_dir']}")
    if "global_threshold" in result:
        print(f"global threshold: {result['global_threshold']!r}")
    return 0


def cmd_evaluate(args) -> int:
    rc = RunConfig(args.config)
    _run_section(rc, args)
    gen_dir = _require_dir(args.generated, "generated")
    tru_dir = _require_dir(args.truth, "truth")
    window_flag = args.window
    if window_flag is None and not rc.has("metrics", "window"):
        # offset search radius scales with the native glyph size
        window_flag = max(1, round(_native_glyph_size(tru_dir) / 16))
    window = rc.get("metrics", "window", window_flag, 1, int)
    mode = rc.get("metrics", "mode", args.mode, MODE_WHITE_PADDED, str)
    thr = rc.get("data", "binarize_threshold", args.binarize_threshold, 0.5, float)
    ssim_params = SsimParams(
        c1=rc.get("metrics", "ssim_c1", args.ssim_c1, 1e-4, float),
        c2=rc.get("metrics", "ssim_c2", args.ssim_c2, 9e-4, float))
    tiers = _tiers_from(rc, args)

    report = evaluate_set(gen_dir, tru_dir, window, ssim_params, tiers, mode, thr)
    out = args.out
    os.makedirs(out, exist_ok=True)
    report.to_csv(os.path.join(out, "report.csv"))
    summary = report.summary_lines()
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary) + "\n")
    rc.write(os.path.join(out, "resolved_config.ini"))
    for line in summary:
        print(line)
    return 0


def cmd_sweep(args) -> int:
    rc = RunConfig(args.config)
    _run_section(rc, args)
    arch = _arch_from(rc, args)
    tcfg = _train_from(rc, args)
    weights = _weights_from(rc, args)
    thr = rc.get("data", "binarize_threshold", args.binarize_threshold, 0.5, float)
    augment = rc.get("train", "augment", args.augment, True, bool)
    test_size = rc.get("data", "test_size", args.test_size, 10, int)
    sizes_raw = rc.get("data", "train_sizes", args.sizes, None, str)
    if sizes_raw is None:
        raise UsageError("--sizes is required (e.g. --sizes 8,16,32)")
    sizes = _parse_sizes(sizes_raw)
    window = rc.get("metrics", "window", args.window,
                    max(1, arch.image_size // 16), int)
    tiers = _tiers_from(rc, args)
    src_dir, tgt_dir, manifest = _data_dirs(rc, args)
    pinned = read_manifest(manifest)["test"] if manifest is not None else None

    pairs = make_pairs(src_dir, tgt_dir, arch.image_size, thr).pairs
    out = args.out
    os.makedirs(out, exist_ok=True)
    rc.write(os.path.join(out, "resolved_config.ini"))
    rows = trainer.sweep(pairs, sizes, test_size, arch, tcfg, weights, out,
                         window, test_manifest=pinned, thresholds=tiers,
                         augment=augment, progress=not args.quiet)
    print("train_size  mean_cr      mean_ssim    tiers (H/M/L)")
    for r in rows:
        print(f"{r['train_size']:>10}  {r['mean_cr']:<11.4f}  "
              f"{r['mean_ssim']:<11.4f}  {r['high']}/{r['medium']}/{r['low']}")
    print(f"sweep table: {os.path.join(out, 'sweep.csv')}")
    return 0


def cmd_turing_gen(args) -> int:
    rc = RunConfig(args.config)
    seed = _run_section(rc, args)
    gen_dir = _require_dir(args.generated, "generated")
    tru_dir = _require_dir(args.truth, "truth")
    size = rc.get("arch", "image_size", args.image_size, 256, int)
    thr = rc.get("data", "binarize_threshold", args.binarize_threshold, 0.5, float)
    n_each = rc.get("turing", "n_each", args.n_each, 10, int)
    rows = rc.get("turing", "rows", args.rows, 4, int)
    cols = rc.get("turing", "cols", args.cols, 5, int)

    gen_map = {cp: load_glyph(path, size, thr, codepoint=cp).pixels
               for cp, path in _scan_glyph_dir(gen_dir).items()}
    tru_map = {cp: load_glyph(path, size, thr, codepoint=cp).pixels
               for cp, path in _scan_glyph_dir(tru_dir).items()}
    if not gen_map or not tru_map:
        raise DataError("both --generated and --truth must contain glyph images")
    sheet = make_sheet(gen_map, tru_map, n_each, rows, cols, seed)

    out = args.out
    os.makedirs(out, exist_ok=True)
    render_sheet(sheet).save(os.path.join(out, "sheet.png"))
    write_answer_key(sheet, os.path.join(out, "key.txt"))
    rc.write(os.path.join(out, "resolved_config.ini"))
    print(f"sheet: {rows}x{cols} grid, {sheet.n_cells} cells "
          f"({n_each} generated, {n_each} truth) -> sheet.png")
    print("answer key: key.txt (keep it away from participants)")
    return 0


def cmd_turing_score(args) -> int:
    rc = RunConfig(args.config)
    _run_section(rc, args)
    key_path = _require_file(args.key, "key")
    resp_path = _require_file(args.responses, "responses")
    positions, total = read_answer_key(key_path)
    responses = parse_responses(resp_path)
    require_marks = rc.get("turing", "require_marks", args.require_marks, 0, int)
    report = score_responses(positions, total, responses,
                             require_marks if require_marks > 0 else None)
    for pid, acc in report.per_participant:
        print(f"{pid}: {acc!r}")
    print(f"mean accuracy: {report.mean_accuracy!r}")
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        report.to_csv(os.path.join(args.out, "scores.csv"))
        rc.write(os.path.join(args.out, "resolved_config.ini"))
    return 0


# -- gradient audit ---------------------------------------------------------------


def gradcheck_report(image_size: int = 16, step: float = 2e-6,
                     seed: int = 0) -> list[tuple[str, float]]:
    """Finite-difference audit of every differentiable op plus the composite
    generator objective.  Returns (name, max relative error) rows.

    Probes are float64 and keep values away from kinks (abs/relu/clamp
    corners), where one-sided curvature makes central differences lie.
    """
    rng = np.random.default_rng(seed)

    def t(shape, lo=-1.0, hi=1.0, avoid=()):
        a = rng.uniform(lo, hi, shape)
        for kink in avoid:
            a[np.abs(a - kink) < 0.05] += 0.12
        return Tensor(a, requires_grad=True)

    def const(shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, shape))

    rows: list[tuple[str, float]] = []

    def check(name, f, pts):
        rows.append((name, finite_diff_check(f, pts, step)))

    check("add", lambda a, b: (a + b).mean(), [t((3, 4)), t((3, 4))])
    check("sub", lambda a, b: ((a - b) * (a - b)).sum(), [t((3, 4)), t((3, 4))])
    check("mul", lambda a, b: (a * b).mean(), [t((3, 4)), t((3, 4))])
    check("abs", lambda a: a.abs().sum(), [t((3, 4), avoid=(0.0,))])
    check("log", lambda a: a.log().sum(), [t((3, 4), 0.5, 2.0)])
    check("sqrt", lambda a: a.sqrt().sum(), [t((3, 4), 0.5, 2.0)])
    check("clamp", lambda a: (a.clamp(-0.5, 0.5) * a.clamp(-0.5, 0.5)).sum(),
          [t((3, 4), avoid=(-0.5, 0.5))])
    check("getitem", lambda a: (a[1:, :2] * a[1:, :2]).sum(), [t((3, 4))])
    check("reshape", lambda a: (a.reshape(12) * a.reshape(12)).sum(),
          [t((3, 4))])
    check("relu", lambda a: (relu(a) * a).sum(), [t((3, 4), avoid=(0.0,))])
    check("leaky_relu", lambda a: (leaky_relu(a, 0.2) * a).sum(),
          [t((3, 4), avoid=(0.0,))])
    check("sigmoid", lambda a: (sigmoid(a) * a).mean(), [t((3, 4), -3.0, 3.0)])
    check("fully_connected",
          lambda x, w, b: (fully_connected(x, w, b)
                           * fully_connected(x, w, b)).mean(),
          [t((2, 6)), t((6, 3), -0.5, 0.5), t((3,), -0.5, 0.5)])
    check("conv2d",
          lambda x, k, b: (conv2d(x, k, b, stride=2, padding=1)
                           * conv2d(x, k, b, stride=2, padding=1)).mean(),
          [t((2, 2, 6, 6)), t((3, 2, 3, 3), -0.5, 0.5), t((3,), -0.5, 0.5)])
    check("conv_transpose2d",
          lambda x, k, b: (conv_transpose2d(x, k, b, stride=2, padding=1,
                                            output_padding=1)
                           * conv_transpose2d(x, k, b, stride=2, padding=1,
                                              output_padding=1)).mean(),
          [t((2, 3, 3, 3)), t((3, 2, 3, 3), -0.5, 0.5), t((2,), -0.5, 0.5)])
    bn_w = const((2, 3, 4, 4))
    check("batchnorm",
          lambda x, g, b: ((batchnorm(x, g, b) * batchnorm(x, g, b)) * bn_w
                           + batchnorm(x, g, b) * bn_w).sum(),
          [t((2, 3, 4, 4)), t((3,), 0.5, 1.5), t((3,), -0.5, 0.5)])
    cc_w = const((2, 3, 3, 3))
    check("concat_channels",
          lambda a, b: (concat_channels(a, b) * cc_w).sum(),
          [t((2, 2, 3, 3)), t((2, 1, 3, 3))])

    l1_target = const((2, 1, 4, 4), 0.0, 0.4)
    check("l1_loss", lambda p: l1_loss(p, l1_target), [t((2, 1, 4, 4), 0.5, 0.9)])
    check("tv_loss", lambda z: tv_loss(z), [t((2, 1, 4, 4), 0.0, 1.0)])
    check("discriminator_loss", lambda dr, df: discriminator_loss(dr, df),
          [t((3, 1), 0.2, 0.8), t((3, 1), 0.2, 0.8)])
    check("generator_adv_loss", lambda df: generator_adv_loss(df),
          [t((3, 1), 0.2, 0.8)])

    rows.extend(_composite_gradcheck(image_size, step, seed))
    return rows


def _bn_shadowed(name: str) -> bool:
    # conv bias immediately followed by batchnorm: the mean subtraction
    # cancels any constant channel shift, so the true gradient is zero
    return name.endswith(".conv.b") and not name.startswith("out.")


def _composite_gradcheck(image_size: int, step: float,
                         seed: int) -> list[tuple[str, float]]:
    """FD sweep over the parameters of a small generator + discriminator
    through the full generator objective.

    Three rows come back.  Generator parameters are probed against the whole
    objective.  Discriminator parameters only enter through the adversarial
    term, so they are probed against it alone; that is the same derivative
    with the (constant for these parameters) reconstruction bulk removed
    from the FD arithmetic.  Conv biases that feed batchnorm have
    identically-zero gradients, where FD measures nothing but rounding noise;
    they are reported as the max magnitude of their analytic gradients,
    which must come out ~0.
    """
    blocks = min(4, int(np.log2(image_size)))
    arch = ArchConfig(image_size=image_size, base_channels=2, max_channels=4,
                      filter_size=3, relu_slope=0.2, disc_blocks=blocks)
    gen = build_generator(arch, rng_seed=seed, init_std=0.05, dtype=np.float64)
    disc = build_discriminator(arch, rng_seed=seed + 1, init_std=0.05,
                               dtype=np.float64)
    rng = np.random.default_rng(seed + 2)
    x = Tensor(rng.uniform(0.0, 1.0, (4, 1, image_size, image_size)))
    y = Tensor(rng.uniform(0.0, 1.0, (4, 1, image_size, image_size)))
    weights = LossWeights()

    def full(*_points):
        fake = generator_forward(arch, gen, x, training=True)
        judged = discriminator_forward(arch, disc, x, fake, training=True)
        total, _ = generator_total_loss(judged, fake, y, weights)
        return total

    def adv(*_points):
        fake = generator_forward(arch, gen, x, training=True)
        judged = discriminator_forward(arch, disc, x, fake, training=True)
        return generator_adv_loss(judged, weights.eps_log)

    gen_points = [t for n, t in gen.params.items() if not _bn_shadowed(n)]
    disc_points = [t for n, t in disc.params.items() if not _bn_shadowed(n)]
    e_gen = finite_diff_check(full, gen_points, step)
    e_disc = finite_diff_check(adv, disc_points, step)

    everything = list(gen.params.items()) + list(disc.params.items())
    for _, t in everything:
        t.zero_grad()
    full().backward()
    inert = max(float(np.abs(t.grad).max())
                for n, t in everything if _bn_shadowed(n))
    return [
        ("composite_vs_gen_params", e_gen),
        ("composite_vs_disc_params", e_disc),
        ("composite_inert_biases", inert),
    ]


def cmd_gradcheck(args) -> int:
    rc = RunConfig(args.config)
    seed = _run_section(rc, args)
    size = rc.get("gradcheck", "image_size", args.image_size, 16, int)
    step = rc.get("gradcheck", "step", args.step, 2e-6, float)
    tol = rc.get("gradcheck", "tolerance", args.tolerance, 1e-4, float)

    rows = gradcheck_report(size, step, seed)
    lines = [f"{'op':<26} {'max_rel_err':>12}  status"]
    worst_name, worst = "", 0.0
    for name, err in rows:
        ok = err < tol
        lines.append(f"{name:<26} {err:>12.3e}  {'ok' if ok else 'FAIL'}")
        if err > worst:
            worst_name, worst = name, err
    lines.append(f"worst: {worst_name} at {worst:.3e} (tolerance {tol:.1e})")
    for line in lines:
        print(line)
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        rc.write(os.path.join(args.out, "resolved_config.ini"))
    if worst >= tol:
        raise NumericsError(
            f"gradient check failed: {worst_name} at {worst:.3e} >= {tol:.1e}")
    return 0


# -- parser ------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   help="record single-ordered execution mode (always on)")
    p.add_argument("--threads", type=int,
                   help="worker-pool bound; linear algebra stays single-threaded")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-epoch progress on stderr")


def _add_arch(p: argparse.ArgumentParser) -> None:
    p.add_argument("--image-size", type=int, help="square glyph size, power of two")
    p.add_argument("--base-channels", type=int)
    p.add_argument("--max-channels", type=int)
    p.add_argument("--filter-size", type=int)
    p.add_argument("--disc-blocks", type=int)
    p.add_argument("--relu-slope", type=float)
    p.add_argument("--patch-output", action=argparse.BooleanOptionalAction)


def _add_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-g", type=float)
    p.add_argument("--lr-d", type=float)
    p.add_argument("--beta-g", type=float)
    p.add_argument("--beta-d", type=float)
    p.add_argument("--adam-beta2", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--init-std", type=float)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--alpha", type=float, help="reconstruction weight")
    p.add_argument("--beta", type=float, help="smoothness weight")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   help="random-crop jitter augmentation (default on)")
    p.add_argument("--binarize-threshold", type=float)


def _add_tiers(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cr-high", type=float)
    p.add_argument("--ssim-high", type=float)
    p.add_argument("--cr-low", type=float)
    p.add_argument("--ssim-low", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calligan",
        description="Glyph style transfer: train, generate, and evaluate.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="pair, binarize, and split a glyph corpus")
    _add_common(p)
    p.add_argument("--source", help="source-font glyph directory")
    p.add_argument("--target", help="target-style glyph directory")
    p.add_argument("--synthetic-fixtures", action="store_true",
                   help="generate the deterministic toy corpus instead")
    p.add_argument("--fixture-count", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int)
    p.add_argument("--binarize-threshold", type=float)
    p.add_argument("--test-size", type=int)
    p.add_argument("--train-sizes", help="comma list; one manifest per size")
    p.add_argument("--manifest", help="existing manifest pinning the test set")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the adversarial pair")
    _add_common(p)
    p.add_argument("--data", help="prepared dataset directory")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--manifest")
    p.add_argument("--train-size", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_arch(p)
    _add_train(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="run a checkpoint over source glyphs")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--truth", help="ground-truth directory for threshold calibration")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float,
                   help="fallback cutoff when no truth is given")
    p.add_argument("--binarize-threshold", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated glyphs against truth")
    _add_common(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, help="offset search radius")
    p.add_argument("--mode", help="white-padded or overlap-only")
    p.add_argument("--binarize-threshold", type=float)
    p.add_argument("--ssim-c1", type=float)
    p.add_argument("--ssim-c2", type=float)
    _add_tiers(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train once per training-set size")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--manifest")
    p.add_argument("--sizes", help="comma list of training-set sizes")
    p.add_argument("--test-size", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int)
    _add_arch(p)
    _add_train(p)
    _add_tiers(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("turing-gen", help="build a blind discrimination sheet")
    _add_common(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int)
    p.add_argument("--binarize-threshold", type=float)
    p.add_argument("--n-each", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.set_defaults(func=cmd_turing_gen)

    p = sub.add_parser("turing-score", help="score participant responses")
    _add_common(p)
    p.add_argument("--key", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--require-marks", type=int,
                   help="enforce exactly this many marks per participant")
    p.add_argument("--out")
    p.set_defaults(func=cmd_turing_score)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the autodiff ops")
    _add_common(p)
    p.add_argument("--image-size", type=int, help="composite-check glyph size")
    p.add_argument("--step", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DimensionError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
