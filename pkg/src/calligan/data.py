"""Dataset ingestion: loading, binarization, pairing, splitting, augmentation.

Glyph rasters arrive as image files named by codepoint.  Loading converts to
luminance, pads to square with white, resizes, and binarizes with dark pixels
becoming 1 ("valid ink") and light ones 0 (background).  Pairs join a source
font's glyph with the target font's glyph for the same codepoint.  Splits are
reproducible: a seed fully determines membership, and the emitted manifest
file lets a later run rebuild the exact same test set.

Augmentation follows the resize-then-random-crop recipe: both images of a
pair are upscaled (nearest-neighbor, so binarity survives) and cropped at one
shared random offset, keeping source and target pixel-aligned.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, DomainError

__all__ = [
    "GlyphImage",
    "ImagePair",
    "DatasetSplit",
    "PairingReport",
    "load_glyph",
    "make_pairs",
    "split_dataset",
    "augment_pair",
    "count_valid",
    "parse_codepoint",
    "default_jitter",
    "write_manifest",
    "read_manifest",
    "save_glyph_png",
]

SOURCE_FONT = "source"
TARGET_FONT = "target"

IMAGE_EXTENSIONS = (".png", ".bmp", ".gif", ".tif", ".tiff")


@dataclass
class GlyphImage:
    """One binarized glyph: pixels in {0,1}, 1 = ink, 0 = background."""

    pixels: np.ndarray
    codepoint: int
    font_id: str
    zero_ink: bool = False  # loader saw no ink; kept but flagged

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_array(cls, pixels: np.ndarray, codepoint: int, font_id: str) -> "GlyphImage":
        arr = np.asarray(pixels, dtype=np.float32)
        if not np.isin(arr, (0.0, 1.0)).all():
            raise DomainError("glyph pixels must be binary {0, 1}")
        return cls(arr, codepoint, font_id, zero_ink=not arr.any())


@dataclass
class ImagePair:
    source: GlyphImage
    target: GlyphImage

    def __post_init__(self):
        if self.source.codepoint != self.target.codepoint:
            raise DataError(
                f"pair codepoint mismatch: {self.source.codepoint} vs {self.target.codepoint}")
        if self.source.pixels.shape != self.target.pixels.shape:
            raise DataError(
                f"pair shape mismatch: {self.source.pixels.shape} vs {self.target.pixels.shape}")

    @property
    def codepoint(self) -> int:
        return self.source.codepoint


@dataclass
class DatasetSplit:
    training: list[ImagePair]
    testing: list[ImagePair]
    seed: int

    @property
    def train_codepoints(self) -> list[int]:
        return [p.codepoint for p in self.training]

    @property
    def test_codepoints(self) -> list[int]:
        return [p.codepoint for p in self.testing]


@dataclass
class PairingReport:
    pairs: list[ImagePair]
    unmatched_source: list[int] = field(default_factory=list)
    unmatched_target: list[int] = field(default_factory=list)


_CODEPOINT_PATTERNS = (
    re.compile(r"^[Uu]\+([0-9a-fA-F]{2,6})$"),
    re.compile(r"^0[xX]([0-9a-fA-F]{2,6})$"),
    re.compile(r"^([0-9]{1,7})$"),
)


def parse_codepoint(name: str) -> int:
    """Codepoint from a file basename: U+hex, 0xhex, decimal, or the char itself."""
    stem = os.path.splitext(os.path.basename(name))[0]
    for pat in _CODEPOINT_PATTERNS:
        m = pat.match(stem)
        if m:
            text = m.group(1)
            return int(text, 10) if pat is _CODEPOINT_PATTERNS[2] else int(text, 16)
    if len(stem) == 1:
        return ord(stem)
    raise DataError(f"cannot parse a codepoint from filename '{name}'")


def default_jitter(image_size: int) -> int:
    """Upscale size for augmentation, preserving the 256 -> 307 ratio."""
    return int(round(image_size * 307 / 256))


def _pad_to_square(img: Image.Image) -> Image.Image:
    w, h = img.size
    if w == h:
        return img
    side = max(w, h)
    canvas = Image.new("L", (side, side), 255)
    canvas.paste(img, ((side - w) // 2, (side - h) // 2))
    return canvas


def load_glyph(path: str, image_size: int, binarize_threshold: float = 0.5,
               font_id: str = SOURCE_FONT, codepoint: int | None = None) -> GlyphImage:
    """Load, pad to square, resize, and binarize one glyph raster.

    A pixel becomes ink (1) when its luminance is below
    binarize_threshold * 255.  An image with no ink at all is returned with
    ``zero_ink`` set rather than rejected, so callers can warn and continue.
    """
    if image_size < 1:
        raise ConfigError(f"image_size must be >= 1, got {image_size}")
    if not 0.0 < binarize_threshold <= 1.0:
        raise ConfigError(f"binarize_threshold must be in (0, 1], got {binarize_threshold}")
    try:
        with Image.open(path) as img:
            gray = _pad_to_square(img.convert("L"))
            if gray.size != (image_size, image_size):
                gray = gray.resize((image_size, image_size), Image.Resampling.BILINEAR)
            lum = np.asarray(gray, dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read glyph image '{path}': {exc}") from exc
    ink = (lum < binarize_threshold * 255.0).astype(np.float32)
    cp = codepoint if codepoint is not None else parse_codepoint(path)
    return GlyphImage(ink, cp, font_id, zero_ink=not ink.any())


def _scan_glyph_dir(directory: str) -> dict[int, str]:
    if not os.path.isdir(directory):
        raise DataError(f"glyph directory '{directory}' does not exist")
    found: dict[int, str] = {}
    for name in sorted(os.listdir(directory)):
        if not name.lower().endswith(IMAGE_EXTENSIONS):
            continue
        cp = parse_codepoint(name)
        if cp in found:
            raise DataError(f"duplicate codepoint {cp} in '{directory}' ({name})")
        found[cp] = os.path.join(directory, name)
    return found


def make_pairs(source_dir: str, target_dir: str, image_size: int,
               binarize_threshold: float = 0.5) -> PairingReport:
    """Pair up the two fonts' glyphs by codepoint intersection.

    Codepoints present in only one directory are listed in the report rather
    than silently dropped; an empty intersection is a hard error.
    """
    src = _scan_glyph_dir(source_dir)
    tgt = _scan_glyph_dir(target_dir)
    shared = sorted(set(src) & set(tgt))
    if not shared:
        raise DataError(
            f"no shared codepoints between '{source_dir}' ({len(src)} glyphs) "
            f"and '{target_dir}' ({len(tgt)} glyphs)")
    pairs = []
    for cp in shared:
        pairs.append(ImagePair(
            load_glyph(src[cp], image_size, binarize_threshold, SOURCE_FONT, cp),
            load_glyph(tgt[cp], image_size, binarize_threshold, TARGET_FONT, cp)))
    return PairingReport(
        pairs=pairs,
        unmatched_source=sorted(set(src) - set(tgt)),
        unmatched_target=sorted(set(tgt) - set(src)))


def split_dataset(pairs: list[ImagePair], train_size: int, test_size: int, seed: int,
                  test_manifest: list[int] | None = None) -> DatasetSplit:
    """Carve reproducible train/test sets out of the pair list.

    The same seed always yields the same test set regardless of train_size,
    and growing train_size only extends the training set, so a series of
    training sizes can share one test set.  A manifest pins the test set to
    an explicit codepoint list instead.
    """
    if train_size < 1 or test_size < 0:
        raise ConfigError(f"need train_size >= 1 and test_size >= 0, "
                          f"got {train_size}/{test_size}")
    by_cp = {p.codepoint: p for p in pairs}
    order = sorted(by_cp)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)
    if test_manifest is not None:
        missing = sorted(set(test_manifest) - set(by_cp))
        if missing:
            raise DataError(f"manifest codepoints absent from the dataset: {missing}")
        test_cps = list(test_manifest)
    else:
        if test_size > len(order):
            raise DataError(f"test_size {test_size} exceeds {len(order)} available pairs")
        test_cps = order[:test_size]
    test_set = set(test_cps)
    remainder = [cp for cp in order if cp not in test_set]
    if train_size > len(remainder):
        raise DataError(
            f"cannot draw {train_size} training pairs: only {len(remainder)} remain "
            f"after reserving {len(test_cps)} test pairs (short by "
            f"{train_size - len(remainder)})")
    train_cps = remainder[:train_size]
    return DatasetSplit(
        training=[by_cp[cp] for cp in train_cps],
        testing=[by_cp[cp] for cp in test_cps],
        seed=seed)


def augment_pair(pair: ImagePair, jitter_size: int, rng: np.random.Generator) -> ImagePair:
    """Upscale both glyphs and crop them back at one shared random offset."""
    size = pair.source.height
    if jitter_size <= size:
        raise ConfigError(f"jitter_size must exceed image size {size}, got {jitter_size}")
    # nearest-neighbor index map keeps pixels binary
    idx = (np.arange(jitter_size) * size // jitter_size).astype(np.intp)
    span = jitter_size - size + 1
    dy = int(rng.integers(0, span))
    dx = int(rng.integers(0, span))

    def crop(img: GlyphImage) -> GlyphImage:
        big = img.pixels[np.ix_(idx, idx)]
        out = np.ascontiguousarray(big[dy:dy + size, dx:dx + size])
        return GlyphImage(out, img.codepoint, img.font_id, zero_ink=not out.any())

    return ImagePair(crop(pair.source), crop(pair.target))


def count_valid(image: GlyphImage) -> int:
    """Number of ink pixels; input must be binary."""
    arr = image.pixels
    if not np.isin(arr, (0.0, 1.0)).all():
        raise DomainError("count_valid requires a binarized image")
    return int(arr.sum())


# -- manifest I/O ------------------------------------------------------------


def write_manifest(split: DatasetSplit, path: str) -> None:
    """Text manifest: [test]/[train] sections, one decimal codepoint per line."""
    lines = [f"# split manifest, seed={split.seed}", "[test]"]
    lines += [str(cp) for cp in split.test_codepoints]
    lines.append("[train]")
    lines += [str(cp) for cp in split.train_codepoints]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> dict[str, list[int]]:
    sections: dict[str, list[int]] = {"test": [], "train": []}
    current: str | None = None
    try:
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if line.startswith("[") and line.endswith("]"):
                    current = line[1:-1]
                    if current not in sections:
                        raise DataError(f"unknown manifest section '[{current}]' in {path}")
                    continue
                if current is None:
                    raise DataError(f"manifest line outside any section in {path}: '{line}'")
                if not line.isdigit():
                    raise DataError(f"malformed codepoint '{line}' in {path}")
                sections[current].append(int(line))
    except OSError as exc:
        raise DataError(f"cannot read manifest '{path}': {exc}") from exc
    return sections


def save_glyph_png(pixels: np.ndarray, path: str) -> None:
    """Write a {0,1} ink array (or [0,1] probability map) as a grayscale PNG."""
    arr = np.asarray(pixels, dtype=np.float32)
    lum = np.round((1.0 - np.clip(arr, 0.0, 1.0)) * 255.0).astype(np.uint8)
    Image.fromarray(lum, mode="L").save(path)
