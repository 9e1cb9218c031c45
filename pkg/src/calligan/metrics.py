"""Coverage Rate, global SSIM, threshold calibration, and quality tiers.

Coverage Rate scores a generated glyph against ground truth by sliding the
generated image over the truth and, at the best alignment, charging every
excess ink pixel (n_over) and every missed ink pixel (n_less) against the
truth's ink count:

    cr = (n_valid - n_over - n_less) / n_valid

cr is 1 only for a perfect match and goes negative when the generated image
sprays more bad ink than the truth has ink.  Two counting modes exist:
"white-padded" (default) treats everything outside the overlap window as
white background, so ink shifted off the edge still counts against the score;
"overlap-only" counts strictly inside the intersection, which is the literal
reading of the defining text but lets large offsets hide mistakes.

SSIM here is the global single-window form: means, variances (population
convention), and covariance are taken over the whole image at once.

Threshold calibration turns a probability map into a binary glyph with
approximately as many ink pixels as its ground truth, and the global
threshold is the mean of the per-image ones.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .data import load_glyph, _scan_glyph_dir
from .errors import ConfigError, DataError, DimensionError, DomainError

__all__ = [
    "MODE_WHITE_PADDED",
    "MODE_OVERLAP_ONLY",
    "TIER_HIGH",
    "TIER_MEDIUM",
    "TIER_LOW",
    "CoverageBreakdown",
    "SsimParams",
    "QualityThresholds",
    "ThresholdCalibration",
    "MetricRow",
    "MetricsReport",
    "coverage_at_offset",
    "coverage_rate_max",
    "ssim",
    "per_image_threshold",
    "global_threshold",
    "apply_threshold",
    "quality_tier",
    "evaluate_set",
]

MODE_WHITE_PADDED = "white-padded"
MODE_OVERLAP_ONLY = "overlap-only"

TIER_HIGH = "High"
TIER_MEDIUM = "Medium"
TIER_LOW = "Low"


@dataclass(frozen=True)
class CoverageBreakdown:
    n_valid: int
    n_over: int
    n_less: int
    best_offset: tuple[int, int]
    cr: float


@dataclass(frozen=True)
class SsimParams:
    """Stabilizing constants; defaults follow c = (k * L)^2 with k1 = 0.01,
    k2 = 0.03 over the unit dynamic range."""

    c1: float = 1e-4
    c2: float = 9e-4

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError(f"SSIM constants must be > 0, got c1={self.c1}, c2={self.c2}")

    @classmethod
    def from_k(cls, k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0
               ) -> "SsimParams":
        return cls((k1 * dynamic_range) ** 2, (k2 * dynamic_range) ** 2)


@dataclass(frozen=True)
class QualityThresholds:
    """Tier cutoffs; the defaults match the full-scale reference run."""

    cr_high: float = 0.3025
    ssim_high: float = 0.7591
    cr_low: float = 0.0
    ssim_low: float = 0.68

    def __post_init__(self):
        if self.cr_low >= self.cr_high:
            raise ConfigError(f"need cr_low < cr_high, got {self.cr_low}/{self.cr_high}")
        if self.ssim_low >= self.ssim_high:
            raise ConfigError(f"need ssim_low < ssim_high, got {self.ssim_low}/{self.ssim_high}")


@dataclass
class ThresholdCalibration:
    per_image: list[tuple[int, float]]
    global_threshold: float


def _as_binary(arr: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d image, got shape {a.shape}")
    if not np.isin(a, (0, 1)).all():
        raise DomainError(f"{name} must be binary (0/1)")
    return a.astype(bool)


def _validate_mode(mode: str) -> None:
    if mode not in (MODE_WHITE_PADDED, MODE_OVERLAP_ONLY):
        raise ConfigError(
            f"mode must be '{MODE_WHITE_PADDED}' or '{MODE_OVERLAP_ONLY}', got '{mode}'")


def _counts_at_offset(gen: np.ndarray, truth: np.ndarray, dy: int, dx: int,
                      white_padded: bool) -> tuple[int, int]:
    """(n_over, n_less) with generated pixel (i,j) placed at truth (i+dy, j+dx)."""
    h, w = truth.shape
    r0, r1 = max(0, dy), min(h, h + dy)
    c0, c1 = max(0, dx), min(w, w + dx)
    if r0 < r1 and c0 < c1:
        t_win = truth[r0:r1, c0:c1]
        g_win = gen[r0 - dy:r1 - dy, c0 - dx:c1 - dx]
        over_in = int(np.count_nonzero(g_win & ~t_win))
        less_in = int(np.count_nonzero(t_win & ~g_win))
        gen_in = int(np.count_nonzero(g_win))
        truth_in = int(np.count_nonzero(t_win))
    else:
        over_in = less_in = gen_in = truth_in = 0
    if not white_padded:
        return over_in, less_in
    over_out = int(np.count_nonzero(gen)) - gen_in
    less_out = int(np.count_nonzero(truth)) - truth_in
    return over_in + over_out, less_in + less_out


def coverage_at_offset(generated: np.ndarray, truth: np.ndarray, dy: int, dx: int,
                       mode: str = MODE_WHITE_PADDED) -> CoverageBreakdown:
    """Coverage Rate at one fixed placement of the generated image."""
    _validate_mode(mode)
    gen = _as_binary(generated, "generated")
    tru = _as_binary(truth, "truth")
    if gen.shape != tru.shape:
        raise DimensionError(f"image shapes differ: {gen.shape} vs {tru.shape}")
    n_valid = int(np.count_nonzero(tru))
    if n_valid == 0:
        raise DomainError("coverage rate is undefined: ground truth has no ink")
    n_over, n_less = _counts_at_offset(gen, tru, dy, dx, mode == MODE_WHITE_PADDED)
    cr = (n_valid - n_over - n_less) / n_valid
    return CoverageBreakdown(n_valid, n_over, n_less, (dy, dx), cr)


def coverage_rate_max(generated: np.ndarray, truth: np.ndarray, window: int,
                      mode: str = MODE_WHITE_PADDED) -> CoverageBreakdown:
    """Best Coverage Rate over all offsets in [-window, window]^2.

    Ties on cr are broken toward the smallest |dy| + |dx| and then by
    row-major scan order (dy outer, dx inner, most negative first).
    """
    if window < 0:
        raise ConfigError(f"window must be >= 0, got {window}")
    _validate_mode(mode)
    gen = _as_binary(generated, "generated")
    tru = _as_binary(truth, "truth")
    if gen.shape != tru.shape:
        raise DimensionError(f"image shapes differ: {gen.shape} vs {tru.shape}")
    n_valid = int(np.count_nonzero(tru))
    if n_valid == 0:
        raise DomainError("coverage rate is undefined: ground truth has no ink")
    white_padded = mode == MODE_WHITE_PADDED
    best: tuple[int, int, int, int] | None = None  # (numerator, -(|dy|+|dx|), ...) key
    best_counts = (0, 0)
    best_offset = (0, 0)
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            n_over, n_less = _counts_at_offset(gen, tru, dy, dx, white_padded)
            numerator = n_valid - n_over - n_less  # exact integer, no float ties
            key = (numerator, -(abs(dy) + abs(dx)))
            if best is None or key > best:
                best = key
                best_counts = (n_over, n_less)
                best_offset = (dy, dx)
    n_over, n_less = best_counts
    cr = (n_valid - n_over - n_less) / n_valid
    return CoverageBreakdown(n_valid, n_over, n_less, best_offset, cr)


def ssim(x: np.ndarray, y: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Global structural similarity over the whole image, in [-1, 1].

    Variance and covariance share one expression (population convention), so
    ssim(x, x) is exactly 1 by construction.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise DimensionError(f"ssim needs at least 2 pixels, got {a.size}")
    mu_x = a.mean()
    mu_y = b.mean()
    dx = a - mu_x
    dy = b - mu_y
    var_x = (dx * dx).mean()
    var_y = (dy * dy).mean()
    cov = (dx * dy).mean()
    num = (2.0 * mu_x * mu_y + params.c1) * (2.0 * cov + params.c2)
    den = (mu_x * mu_x + mu_y * mu_y + params.c1) * (var_x + var_y + params.c2)
    return float(num / den)


def per_image_threshold(probabilities: np.ndarray, n_valid_target: int) -> float:
    """Threshold putting ~n_valid_target pixels above it.

    With p(k) the k-th largest probability, the threshold is the midpoint
    (p(k) + p(k+1)) / 2, so for distinct values exactly k pixels exceed it.
    Tied values make the count deviate by the multiplicity.  When the target
    is the whole image the threshold drops to p(count) / 2.
    """
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise DimensionError("probability map is empty")
    if not ((p > 0.0) & (p < 1.0)).all():
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    if not 0 < n_valid_target <= p.size:
        raise DomainError(
            f"n_valid_target must be in [1, {p.size}], got {n_valid_target}")
    ordered = np.sort(p)[::-1]
    if n_valid_target == p.size:
        return float(ordered[-1] / 2.0)
    return float((ordered[n_valid_target - 1] + ordered[n_valid_target]) / 2.0)


def global_threshold(per_image: list[float]) -> float:
    """Arithmetic mean of the per-image thresholds."""
    if not per_image:
        raise DataError("cannot average an empty threshold list")
    return float(np.mean(np.asarray(per_image, dtype=np.float64)))


def apply_threshold(probabilities: np.ndarray, threshold: float) -> np.ndarray:
    """Binarize: pixel = 1 exactly when its probability exceeds the threshold.

    The comparison runs in float64: calibrated thresholds are midpoints that
    often have no float32 representation, and a float32 compare would snap
    them back onto the tied values they were meant to separate.
    """
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must be in (0, 1), got {threshold}")
    p = np.asarray(probabilities, dtype=np.float64)
    return (p > threshold).astype(np.float32)


def quality_tier(cr: float, ssim_value: float,
                 thresholds: QualityThresholds = QualityThresholds()) -> str:
    """High needs both scores strictly above the high cutoffs; Low needs both
    strictly below the low cutoffs; everything else (boundaries included) is
    Medium."""
    if cr > thresholds.cr_high and ssim_value > thresholds.ssim_high:
        return TIER_HIGH
    if cr < thresholds.cr_low and ssim_value < thresholds.ssim_low:
        return TIER_LOW
    return TIER_MEDIUM


# -- set evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    codepoint: int
    cr: float
    dy: int
    dx: int
    n_valid: int
    n_over: int
    n_less: int
    ssim: float
    tier: str


@dataclass
class MetricsReport:
    rows: list[MetricRow]
    mean_cr: float
    mean_ssim: float
    tier_counts: dict[str, int]
    window: int
    mode: str
    unmatched_generated: list[int] = field(default_factory=list)
    unmatched_truth: list[int] = field(default_factory=list)
    skipped_zero_ink: list[int] = field(default_factory=list)

    CSV_HEADER = "codepoint,cr,dy,dx,n_valid,n_over,n_less,ssim,tier"

    def to_csv(self, path: str) -> None:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.codepoint},{r.cr!r},{r.dy},{r.dx},{r.n_valid},"
                         f"{r.n_over},{r.n_less},{r.ssim!r},{r.tier}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary_lines(self) -> list[str]:
        return [
            f"images:    {len(self.rows)}",
            f"mean_cr:   {self.mean_cr!r}",
            f"mean_ssim: {self.mean_ssim!r}",
            f"tiers:     High={self.tier_counts[TIER_HIGH]} "
            f"Medium={self.tier_counts[TIER_MEDIUM]} Low={self.tier_counts[TIER_LOW]}",
            f"window:    {self.window}",
            f"mode:      {self.mode}",
        ]


def evaluate_set(generated_dir: str, truth_dir: str, window: int,
                 ssim_params: SsimParams = SsimParams(),
                 thresholds: QualityThresholds = QualityThresholds(),
                 mode: str = MODE_WHITE_PADDED,
                 binarize_threshold: float = 0.5) -> MetricsReport:
    """Score every generated glyph against its same-codepoint ground truth.

    Files pair up by codepoint; codepoints present on only one side are
    reported in the result, not fatal.  Aggregates reduce in codepoint order
    so the report is deterministic.
    """
    _validate_mode(mode)
    gen_files = _scan_glyph_dir(generated_dir)
    tru_files = _scan_glyph_dir(truth_dir)
    shared = sorted(set(gen_files) & set(tru_files))
    if not shared:
        raise DataError(f"no shared codepoints between '{generated_dir}' and '{truth_dir}'")
    rows = []
    skipped = []
    tier_counts = {TIER_HIGH: 0, TIER_MEDIUM: 0, TIER_LOW: 0}
    for cp in shared:
        size_probe = load_glyph(tru_files[cp], image_size=_native_size(tru_files[cp]),
                                binarize_threshold=binarize_threshold, codepoint=cp)
        truth = size_probe.pixels
        if size_probe.zero_ink:
            skipped.append(cp)  # CR is undefined against an inkless truth
            continue
        gen = load_glyph(gen_files[cp], image_size=truth.shape[0],
                         binarize_threshold=binarize_threshold, codepoint=cp).pixels
        cov = coverage_rate_max(gen, truth, window, mode)
        s = ssim(gen, truth, ssim_params)
        tier = quality_tier(cov.cr, s, thresholds)
        tier_counts[tier] += 1
        rows.append(MetricRow(cp, cov.cr, cov.best_offset[0], cov.best_offset[1],
                              cov.n_valid, cov.n_over, cov.n_less, s, tier))
    if not rows:
        raise DataError("every shared glyph had an inkless ground truth; nothing to score")
    mean_cr = float(np.mean([r.cr for r in rows]))
    mean_ssim = float(np.mean([r.ssim for r in rows]))
    return MetricsReport(rows, mean_cr, mean_ssim, tier_counts, window, mode,
                         unmatched_generated=sorted(set(gen_files) - set(tru_files)),
                         unmatched_truth=sorted(set(tru_files) - set(gen_files)),
                         skipped_zero_ink=skipped)


def _native_size(path: str) -> int:
    from PIL import Image

    with Image.open(path) as img:
        w, h = img.size
    return max(w, h)
