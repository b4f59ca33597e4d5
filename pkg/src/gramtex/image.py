"""Image substrate: validation, 8-bit/float conversion, PNG/PNM I/O, grayscale, cropping.

Images are plain numpy arrays, shaped ``(H, W)`` for gray or ``(H, W, 3)`` for
RGB, with dtype ``uint8`` or floating point in ``[0, 1]``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}


class ImageError(ValueError):
    """Raised for malformed images or unreadable image files."""


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ImageError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError(f"empty image of shape {img.shape}")
    if img.dtype == np.uint8:
        return img
    if not np.issubdtype(img.dtype, np.floating):
        raise ImageError(f"unsupported pixel dtype {img.dtype}")
    if not np.all(np.isfinite(img)):
        raise ImageError("image contains non-finite pixels")
    return img


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def to_float(img: np.ndarray) -> np.ndarray:
    """Return a float64 copy in [0, 1] (``u8 / 255``); floats pass through as float64."""
    img = check_image(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64, copy=True)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize to 8 bits: ``round_half_up(clamp(x, 0, 1) * 255)``."""
    img = check_image(img)
    if img.dtype == np.uint8:
        return img.copy()
    scaled = np.clip(img.astype(np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode an 8-bit PNG or binary PGM/PPM file into a uint8 array.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    ImageError
        For unsupported formats, bit depths, or truncated streams.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    if path.suffix.lower() not in _SUFFIXES:
        raise ImageError(f"unsupported image format: {path.suffix}")
    try:
        with PILImage.open(path) as im:
            im.load()
            # alpha is dropped; palettes are expanded
            target = {"L": "L", "1": "L", "LA": "L", "RGB": "RGB", "P": "RGB", "RGBA": "RGB"}
            if im.mode not in target:
                raise ImageError(f"unsupported bit depth / mode {im.mode!r} in {path}")
            if im.mode != target[im.mode]:
                im = im.convert(target[im.mode])
            data = np.asarray(im, dtype=np.uint8).copy()
    except ImageError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageError(f"cannot decode {path}: {exc}") from exc
    return data


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write ``img`` as PNG or PGM/PPM, chosen by suffix.

    Float images are clamped to [0, 1] and quantized with round-half-up.
    ``.pgm`` requires a gray image and ``.ppm`` an RGB one.
    """
    img = to_uint8(img)
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in _SUFFIXES:
        raise ImageError(f"unsupported image format: {suffix}")
    if suffix == ".pgm" and img.ndim != 2:
        raise ImageError("PGM output needs a single-channel image")
    if suffix == ".ppm" and img.ndim != 3:
        raise ImageError("PPM output needs an RGB image")
    mode = "L" if img.ndim == 2 else "RGB"
    fmt = "PNG" if suffix == ".png" else "PPM"
    PILImage.fromarray(img, mode=mode).save(path, format=fmt)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma. Gray input is returned unchanged; 8-bit input is rounded to nearest."""
    img = check_image(img)
    if img.ndim == 2:
        return img
    luma = img.astype(np.float64) @ np.asarray(LUMA_WEIGHTS)
    if img.dtype == np.uint8:
        return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)
    return luma.astype(img.dtype)


def to_rgb(img: np.ndarray) -> np.ndarray:
    img = check_image(img)
    if img.ndim == 3:
        return img
    return np.repeat(img[:, :, None], 3, axis=2)


def center_crop(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Crop a ``w x h`` window whose origin is ``((W - w) // 2, (H - h) // 2)``."""
    img = check_image(img)
    height, width = img.shape[:2]
    if w < 1 or h < 1 or w > width or h > height:
        raise ImageError(f"cannot crop {w}x{h} from {width}x{height} image")
    x0 = (width - w) // 2
    y0 = (height - h) // 2
    return img[y0 : y0 + h, x0 : x0 + w].copy()
