"""Feature-map overlays, grid overviews, gradient saliency and occlusion maps.

A feature map is addressed by ``FeatureMapId(layer, filter)`` with conv
layers numbered 0..7 in forward order. Maps are upscaled bilinearly to the
input size, min-max normalised, and blended towards dark green so that
stronger activation reads as a darker green tint.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import network
from .errors import InvalidArgumentError
from .imaging import chw_to_hwc, resize_bilinear, save_png
from .network import Model, NetworkConfig

OVERLAY_GREEN = np.array([0.0, 100.0 / 255.0, 0.0])
DEFAULT_ALPHA_MAX = 0.7
GUTTER = 2


@dataclass(frozen=True)
class FeatureMapId:
    layer: int
    filter: int

    def validate(self, config: NetworkConfig) -> "FeatureMapId":
        n = config.num_conv_layers
        if not 0 <= self.layer < n:
            raise InvalidArgumentError(f"layer {self.layer} out of range: valid layers are 0..{n - 1}")
        channels = config.conv_channels[self.layer]
        if not 0 <= self.filter < channels:
            raise InvalidArgumentError(
                f"filter {self.filter} out of range: layer {self.layer} has {channels} filters (0..{channels - 1})"
            )
        return self

    @classmethod
    def parse(cls, text: str) -> "FeatureMapId":
        """Parse ``"layer:filter"``."""
        layer, sep, filt = text.strip().partition(":")
        try:
            if not sep:
                raise ValueError
            return cls(int(layer), int(filt))
        except ValueError:
            raise InvalidArgumentError(f"feature map id must look like 'layer:filter', got {text!r}") from None

    def __str__(self):
        return f"{self.layer}:{self.filter}"


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray  # 2-D float64
    kind: str  # "feature-map" | "saliency" | "occlusion"
    source: FeatureMapId | None = None
    norm: tuple[float, float] | None = None  # (min, max) used by normalize()

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def extract_feature_map(model: Model, x: np.ndarray, fid: FeatureMapId) -> Heatmap:
    fid.validate(model.config)
    trace = network.forward(model, x, capture={fid.layer})
    return _plane(trace.captured[fid.layer], fid)


def _plane(activation: np.ndarray, fid: FeatureMapId) -> Heatmap:
    return Heatmap(activation[fid.filter].astype(np.float64), "feature-map", fid)


def upscale(hm: Heatmap, height: int = 224, width: int = 224) -> Heatmap:
    return replace(hm, values=resize_bilinear(hm.values, height, width))


def normalize(hm: Heatmap) -> Heatmap:
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    v = hm.values
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        out = (v - lo) / (hi - lo)
    else:
        out = np.zeros_like(v)
    return replace(hm, values=out, norm=(lo, hi))


def render_overlay(image: np.ndarray, hm: Heatmap, alpha_max: float = DEFAULT_ALPHA_MAX) -> np.ndarray:
    """Blend a [3, H, W] image towards dark green by the normalised map.

    Returns an [H, W, 3] image in the input's dtype. Pixels where the
    normalised activation is zero are copied unchanged.
    """
    if not 0.0 <= alpha_max <= 1.0:
        raise InvalidArgumentError(f"alpha_max must lie in [0, 1], got {alpha_max}")
    if image.ndim != 3 or image.shape[0] != 3:
        raise InvalidArgumentError(f"image must be [3, H, W], got {image.shape}")
    if hm.shape != image.shape[1:]:
        raise InvalidArgumentError(f"heatmap {hm.shape} does not match image {image.shape[1:]}; upscale first")
    pixels = chw_to_hwc(image).astype(np.float64)
    alpha = (alpha_max * normalize(hm).values)[..., None]
    out = (1.0 - alpha) * pixels + alpha * OVERLAY_GREEN
    return out.astype(image.dtype)


def feature_overlay(
    model: Model, x: np.ndarray, fid: FeatureMapId, alpha_max: float = DEFAULT_ALPHA_MAX
) -> tuple[np.ndarray, Heatmap]:
    """Extract, upscale and render one feature map; returns (overlay, raw heatmap)."""
    hm = extract_feature_map(model, x, fid)
    _, h, w = x.shape
    return render_overlay(x, upscale(hm, h, w), alpha_max), hm


def render_grid(
    model: Model,
    images: Sequence[np.ndarray],
    ids: Sequence[FeatureMapId],
    path=None,
    alpha_max: float = DEFAULT_ALPHA_MAX,
) -> np.ndarray:
    """One row per image: the raw image, then one overlay per feature-map id.

    Cells are separated by a white gutter of ``GUTTER`` pixels. Written as a
    PNG when ``path`` is given.
    """
    if not images or not ids:
        raise InvalidArgumentError("grid needs at least one image and one feature map id")
    for fid in ids:
        fid.validate(model.config)
    _, h, w = model.config.input_shape
    rows, cols = len(images), len(ids) + 1
    grid = np.ones((rows * h + (rows - 1) * GUTTER, cols * w + (cols - 1) * GUTTER, 3))
    layers = {fid.layer for fid in ids}
    for r, x in enumerate(images):
        trace = network.forward(model, x, capture=layers)
        top = r * (h + GUTTER)
        grid[top : top + h, 0:w] = chw_to_hwc(x)
        for c, fid in enumerate(ids, start=1):
            hm = upscale(_plane(trace.captured[fid.layer], fid), h, w)
            left = c * (w + GUTTER)
            grid[top : top + h, left : left + w] = render_overlay(x, hm, alpha_max)
    if path is not None:
        save_png(grid, path)
    return grid


def saliency(model: Model, x: np.ndarray) -> Heatmap:
    """Per-pixel max over channels of |d logit / d input|."""
    _, grad = network.input_gradient(model, x)
    return Heatmap(np.abs(grad).max(axis=0).astype(np.float64), "saliency")


def occlusion_geometry(size: int, patch: int, stride: int) -> int:
    if stride < 1:
        raise InvalidArgumentError(f"stride must be >= 1, got {stride}")
    if not 1 <= patch <= size:
        raise InvalidArgumentError(f"patch must lie in 1..{size}, got {patch}")
    return (size - patch) // stride + 1


def occlusion_map(
    model: Model,
    x: np.ndarray,
    patch: int = 32,
    stride: int = 8,
    fill: float = 0.5,
    threads: int = 1,
) -> Heatmap:
    """Drop in malignant probability when a ``fill``-valued square hides each region.

    Entry (i, j) covers rows ``i*stride : i*stride+patch`` and the matching
    columns. Positive values mark regions that support the malignant score.
    """
    _, h, w = x.shape
    rows = occlusion_geometry(h, patch, stride)
    cols = occlusion_geometry(w, patch, stride)
    baseline = network.predict_proba(model, x)

    def score(pos):
        i, j = divmod(pos, cols)
        occluded = np.array(x, copy=True)
        occluded[:, i * stride : i * stride + patch, j * stride : j * stride + patch] = fill
        return network.predict_proba(model, occluded)

    positions = range(rows * cols)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            scores = list(pool.map(score, positions))
    else:
        scores = [score(p) for p in positions]
    values = baseline - np.array(scores, dtype=np.float64).reshape(rows, cols)
    return Heatmap(values, "occlusion")


def heatmap_overlay(image: np.ndarray, hm: Heatmap, alpha_max: float = DEFAULT_ALPHA_MAX) -> np.ndarray:
    _, h, w = image.shape
    return render_overlay(image, upscale(hm, h, w), alpha_max)


def write_heatmap_text(hm: Heatmap, path) -> Path:
    """Plain-text export: one row per line, values space-separated."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(" ".join(repr(float(v)) for v in row) + "\n" for row in hm.values))
    return path


def read_heatmap_text(path) -> np.ndarray:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in row] for row in rows])
