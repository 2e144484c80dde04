"""Manifest ingestion, preprocessing and the stochastic augmentation pipeline.

Preprocessed images are float64 [H, W, 3] arrays in [0, 1]. Augmentation
and center cropping return channel-major network tensors.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ManifestError
from .imaging import hsv_to_rgb, hwc_to_chw, load_rgb8, resize_bilinear, rgb_to_hsv

log = logging.getLogger(__name__)

PREPROCESS_SIZE = 300
CROP_SIZE = 224
LUMA = np.array([0.299, 0.587, 0.114])

# purpose tags keep the shuffle and per-sample RNG streams disjoint
_STREAM_AUGMENT = 0
_STREAM_SHUFFLE = 1


@dataclass(frozen=True)
class SampleRecord:
    image_path: Path
    label: int


def load_manifest(path) -> list[SampleRecord]:
    """Parse a ``path,label`` manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"{path}: manifest file not found")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "label"]:
            raise ManifestError(f"{path}: line 1: expected header 'path,label', got {header!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ManifestError(f"{path}: line {line}: expected 2 fields, got {len(row)}")
            img, label = row[0].strip(), row[1].strip()
            if not img:
                raise ManifestError(f"{path}: line {line}: empty image path")
            if label not in ("0", "1"):
                raise ManifestError(f"{path}: line {line}: label must be 0 or 1, got {label!r}")
            img_path = Path(img)
            if not img_path.is_absolute():
                img_path = path.parent / img_path
            records.append(SampleRecord(img_path, int(label)))
    counts = class_counts(records)
    log.info("%s: %d records (%d benign, %d malignant)", path, len(records), counts[0], counts[1])
    return records


def class_counts(records) -> dict[int, int]:
    c = Counter(r.label for r in records)
    return {0: c.get(0, 0), 1: c.get(1, 0)}


def preprocess(raw: np.ndarray, size: int = PREPROCESS_SIZE) -> np.ndarray:
    """uint8 [H, W, 3] -> float [size, size, 3] in [0, 1] via corner-aligned bilinear resize."""
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[2] != 3 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise InvalidArgumentError(f"expected an [H, W, 3] image, got shape {raw.shape}")
    scale = 255.0 if raw.dtype == np.uint8 else 1.0
    img = raw.astype(np.float64) / scale
    if img.shape[:2] == (size, size):
        return img
    return resize_bilinear(img, size, size)


def load_image(path, size: int = PREPROCESS_SIZE) -> np.ndarray:
    return preprocess(load_rgb8(path), size)


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int = CROP_SIZE
    image_size: int = PREPROCESS_SIZE
    rotation_range: tuple[float, float] = (0.0, 2.0 * math.pi)
    horizontal_flip: float = 0.5
    vertical_flip: float = 0.5
    brightness_range: tuple[float, float] = (-0.5, 0.5)
    contrast_range: tuple[float, float] = (-0.7, 0.7)
    hue_range: tuple[float, float] = (-0.02, 0.02)
    saturation_range: tuple[float, float] = (0.7, 1.5)

    def __post_init__(self):
        if not 1 <= self.crop_size <= self.image_size:
            raise InvalidArgumentError(
                f"crop_size {self.crop_size} must be between 1 and image_size {self.image_size}"
            )
        for name in ("rotation_range", "brightness_range", "contrast_range", "hue_range", "saturation_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidArgumentError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        for name in ("horizontal_flip", "vertical_flip"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgumentError(f"{name} probability must lie in [0, 1]")

    @classmethod
    def for_input(cls, input_size: int) -> "AugmentConfig":
        """Default ranges, with the preprocess size scaled by the same 300/224 ratio."""
        if input_size == CROP_SIZE:
            return cls()
        return cls(crop_size=input_size, image_size=round(input_size * PREPROCESS_SIZE / CROP_SIZE))


@dataclass(frozen=True)
class AugmentParams:
    """One fully-resolved draw of the augmentation pipeline."""

    top: int
    left: int
    angle: float
    hflip: bool
    vflip: bool
    brightness: float
    contrast: float
    hue: float
    saturation: float

    @classmethod
    def identity(cls, top: int = 0, left: int = 0) -> "AugmentParams":
        return cls(top, left, 0.0, False, False, 0.0, 0.0, 0.0, 1.0)


def sample_stream(seed: int, epoch: int, index: int) -> np.random.Generator:
    """RNG for one sample in one epoch, independent of worker scheduling."""
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAM_AUGMENT, epoch, index]))


def shuffle_stream(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAM_SHUFFLE, epoch]))


def sample_augment_params(rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> AugmentParams:
    span = config.image_size - config.crop_size
    top = int(rng.integers(0, span + 1))
    left = int(rng.integers(0, span + 1))
    return AugmentParams(
        top=top,
        left=left,
        angle=float(rng.uniform(*config.rotation_range)),
        hflip=bool(rng.random() < config.horizontal_flip),
        vflip=bool(rng.random() < config.vertical_flip),
        brightness=float(rng.uniform(*config.brightness_range)),
        contrast=float(rng.uniform(*config.contrast_range)),
        hue=float(rng.uniform(*config.hue_range)),
        saturation=float(rng.uniform(*config.saturation_range)),
    )


def _reflect(coord: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(coord)
    period = 2.0 * (n - 1)
    u = np.mod(coord, period)
    return np.where(u > n - 1, period - u, u)


def rotate(img: np.ndarray, angle: float) -> np.ndarray:
    """Rotate [H, W, C] about its center; out-of-bounds samples reflect back inside."""
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cos, sin = math.cos(angle), math.sin(angle)
    dx, dy = xx - cx, yy - cy
    sx = _reflect(cx + cos * dx + sin * dy, w)
    sy = _reflect(cy - sin * dx + cos * dy, h)

    x0 = np.minimum(np.floor(sx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(sy).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (sx - x0)[..., None]
    ty = (sy - y0)[..., None]
    top = img[y0, x0] + (img[y0, x1] - img[y0, x0]) * tx
    bottom = img[y1, x0] + (img[y1, x1] - img[y1, x0]) * tx
    return np.clip(top + (bottom - top) * ty, 0.0, 1.0)


def adjust_brightness(img: np.ndarray, f: float) -> np.ndarray:
    return np.clip(img + f, 0.0, 1.0)


def adjust_contrast(img: np.ndarray, f: float) -> np.ndarray:
    """Scale deviations from the image's mean luminance by ``1 + f``."""
    mu = float(np.mean(img @ LUMA))
    return np.clip(mu + (1.0 + f) * (img - mu), 0.0, 1.0)


def adjust_hue_saturation(img: np.ndarray, hue: float, saturation: float) -> np.ndarray:
    """Shift hue by ``hue`` turns and scale saturation by ``saturation`` in HSV space."""
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * saturation, 0.0, 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def _check_image_size(img: np.ndarray, size: int) -> None:
    if img.ndim != 3 or img.shape != (size, size, 3):
        raise InvalidArgumentError(f"expected a preprocessed {size}x{size}x3 image, got {img.shape}")


def apply_augment(
    img: np.ndarray, params: AugmentParams, config: AugmentConfig = AugmentConfig(), dtype=np.float32
) -> np.ndarray:
    """Apply one resolved draw: crop, rotate, flips, brightness, contrast, hue, saturation.

    Stages whose parameters are the identity are skipped, so an identity draw
    reproduces the plain crop exactly.
    """
    _check_image_size(img, config.image_size)
    c = config.crop_size
    out = img[params.top : params.top + c, params.left : params.left + c]
    if out.shape[:2] != (c, c):
        raise InvalidArgumentError(f"crop at ({params.top}, {params.left}) leaves the image")
    if params.angle != 0.0:
        out = rotate(out, params.angle)
    if params.hflip:
        out = out[:, ::-1]
    if params.vflip:
        out = out[::-1]
    if params.brightness != 0.0:
        out = adjust_brightness(out, params.brightness)
    if params.contrast != 0.0:
        out = adjust_contrast(out, params.contrast)
    if params.hue != 0.0 or params.saturation != 1.0:
        out = adjust_hue_saturation(out, params.hue, params.saturation)
    return hwc_to_chw(out).astype(dtype)


def augment(
    img: np.ndarray, rng: np.random.Generator, config: AugmentConfig = AugmentConfig(), dtype=np.float32
) -> np.ndarray:
    return apply_augment(img, sample_augment_params(rng, config), config, dtype)


def center_crop(img: np.ndarray, crop_size: int = CROP_SIZE, dtype=np.float32) -> np.ndarray:
    """Centered crop of a preprocessed image; the image must be strictly larger than the crop."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgumentError(f"expected an [H, W, 3] image, got {img.shape}")
    h, w = img.shape[:2]
    if h <= crop_size or w <= crop_size:
        raise InvalidArgumentError(
            f"center crop of {crop_size} needs an image larger than the crop, got {h}x{w}"
        )
    top, left = (h - crop_size) // 2, (w - crop_size) // 2
    return hwc_to_chw(img[top : top + crop_size, left : left + crop_size]).astype(dtype)
