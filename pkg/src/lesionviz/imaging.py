"""Image primitives shared by the data pipeline and the renderers.

Images are float arrays laid out [H, W, 3] with values in [0, 1]; network
tensors are [3, H, W]. Pillow is used only for file decoding and PNG encoding.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError

ACCEPTED_FORMATS = {"PNG", "JPEG"}


def _axis_coords(n_in: int, n_out: int):
    """Corner-aligned source coordinates: lower index, upper index, weight."""
    if n_in == 1:
        zeros = np.zeros(n_out, dtype=np.int64)
        return zeros, zeros, np.zeros(n_out)
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        # i * (n_in-1) / (n_out-1) keeps integer positions exact
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    return lo, lo + 1, pos - lo


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with corner alignment of a [H, W] or [H, W, C] array.

    Output corners coincide with input corners. Results are clipped to the
    source range, so resizing never overshoots the input min/max.
    """
    src = np.asarray(img, dtype=np.float64)
    y0, y1, ty = _axis_coords(src.shape[0], height)
    x0, x1, tx = _axis_coords(src.shape[1], width)
    extra = (None,) * (src.ndim - 2)
    ty = ty[(slice(None), None) + extra]
    tx = tx[(None, slice(None)) + extra]

    top = src[y0][:, x0]
    top = top + (src[y0][:, x1] - top) * tx
    bottom = src[y1][:, x0]
    bottom = bottom + (src[y1][:, x1] - bottom) * tx
    out = top + (bottom - top) * ty
    return np.clip(out, src.min(), src.max())


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """[..., 3] RGB in [0, 1] -> [..., 3] HSV with hue as a fraction of a full turn."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0)
    safe = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r,
        ((g - b) / safe) % 6.0,
        np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(c > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    sector = np.floor(h6)
    f = h6 - sector
    sector = sector.astype(np.int64) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(sector, [v, q, p, p, t, v])
    g = np.choose(sector, [t, v, v, q, p, p])
    b = np.choose(sector, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def load_rgb8(path) -> np.ndarray:
    """Decode a PNG or JPEG file into a uint8 [H, W, 3] array."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in ACCEPTED_FORMATS:
                raise DecodeError(f"{path}: unsupported image format {im.format} (PNG or JPEG expected)")
            if im.mode not in ("RGB", "RGBA", "L", "P"):
                raise DecodeError(f"{path}: unsupported pixel mode {im.mode} (8-bit RGB expected)")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except DecodeError:
        raise
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DecodeError(f"{path}: empty image")
    return arr


def quantize(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8, rounding half away from zero."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(x + 0.5).astype(np.uint8)


def save_png(img: np.ndarray, path) -> Path:
    """Write an [H, W, 3] float image in [0, 1] as an 8-bit RGB PNG."""
    path = Path(path)
    try:
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(quantize(img)).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"{path}: cannot write PNG ({exc})") from exc
    return path


def chw_to_hwc(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(t, (1, 2, 0)))


def hwc_to_chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(img, (2, 0, 1)))
