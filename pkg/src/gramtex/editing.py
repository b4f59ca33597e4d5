"""Deterministic image edits used for augmentation and robustness evaluation.

All edits return an image of the input's dtype kind: uint8 in, uint8 out
(rounded half-up); float in, float out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.fft import dctn, fft2, idctn, ifft2
from scipy.ndimage import correlate1d

from .image import check_image, to_float, to_uint8

DEFAULT_JPEG_QUALITY = 75
DEFAULT_BLUR_KERNEL = 25
DEFAULT_NOISE_STD = 5.0
DEFAULT_L0_LAMBDA = 0.02


class EditError(ValueError):
    pass


def _like(result: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Cast a float [0, 1] result back to the dtype kind of ``template``."""
    if template.dtype == np.uint8:
        return to_uint8(result)
    return result.astype(template.dtype, copy=False)


# --------------------------------------------------------------------------- #
# resize
# --------------------------------------------------------------------------- #

def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_array(arr: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resize of the two leading axes, half-pixel centers, float64 output."""
    arr = np.asarray(arr, dtype=np.float64)
    if w < 1 or h < 1:
        raise EditError(f"target size must be positive, got {w}x{h}")
    in_h, in_w = arr.shape[:2]
    if (in_h, in_w) == (h, w):
        return arr.copy()
    y0, y1, fy = _axis_weights(in_h, h)
    x0, x1, fx = _axis_weights(in_w, w)
    extra = (None,) * (arr.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    rows = arr[y0] * (1.0 - fy) + arr[y1] * fy
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def bilinear_resize(img: np.ndarray, w: int, h: int) -> np.ndarray:
    img = check_image(img)
    return _like(resize_array(to_float(img), w, h), img)


# --------------------------------------------------------------------------- #
# blur / noise
# --------------------------------------------------------------------------- #

def blur_sigma(kernel_size: int) -> float:
    return 0.3 * ((kernel_size - 1) / 2 - 1) + 0.8


def gaussian_kernel(kernel_size: int) -> np.ndarray:
    """1-D Gaussian taps, truncated to ``kernel_size`` and normalized to sum 1."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise EditError(f"kernel size must be odd and >= 1, got {kernel_size}")
    if kernel_size == 1:
        return np.ones(1)
    sigma = blur_sigma(kernel_size)
    x = np.arange(kernel_size) - (kernel_size - 1) / 2
    taps = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return taps / taps.sum()


def gaussian_blur(img: np.ndarray, kernel_size: int = DEFAULT_BLUR_KERNEL) -> np.ndarray:
    """Separable Gaussian blur with reflect-101 borders (``dcb|abcd|cba``)."""
    img = check_image(img)
    taps = gaussian_kernel(kernel_size)
    if kernel_size == 1:
        return img.copy()
    out = to_float(img)
    out = correlate1d(out, taps, axis=0, mode="mirror")
    out = correlate1d(out, taps, axis=1, mode="mirror")
    return _like(out, img)


def add_gaussian_noise(img: np.ndarray, std: float = DEFAULT_NOISE_STD, seed: int = 0) -> np.ndarray:
    """Add i.i.d. N(0, std^2) noise in 8-bit intensity units, then clamp.

    Float images receive ``std / 255`` so the noise level is unit-independent.
    """
    img = check_image(img)
    if std < 0:
        raise EditError(f"noise std must be >= 0, got {std}")
    if std == 0:
        return img.copy()
    noise = np.random.default_rng(seed).normal(0.0, std, size=img.shape)
    if img.dtype == np.uint8:
        noisy = np.clip(img.astype(np.float64) + noise, 0.0, 255.0)
        return np.floor(noisy + 0.5).astype(np.uint8)
    return np.clip(img + noise / 255.0, 0.0, 1.0).astype(img.dtype, copy=False)


# --------------------------------------------------------------------------- #
# JPEG simulation
# --------------------------------------------------------------------------- #

LUMA_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_QTABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)

_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC_TO_RGB = np.array([
    [1.0, 0.0, 1.402],
    [1.0, -0.344136, -0.714136],
    [1.0, 1.772, 0.0],
])


def scaled_qtable(base: np.ndarray, quality: int) -> np.ndarray:
    """IJG quality scaling: ``clamp(round(base * scale / 100), 1, 255)``."""
    if not 1 <= quality <= 100:
        raise EditError(f"JPEG quality must be in [1, 100], got {quality}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor(base * scale / 100 + 0.5), 1, 255)


def _blockwise(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    H, W = padded.shape
    blocks = padded.reshape(H // 8, 8, W // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coeffs = dctn(blocks, type=2, axes=(2, 3), norm="ortho")
    coeffs = np.round(coeffs / table) * table
    blocks = idctn(coeffs, type=2, axes=(2, 3), norm="ortho") + 128.0
    return blocks.transpose(0, 2, 1, 3).reshape(H, W)[:h, :w]


def jpeg_codec(img: np.ndarray, quality: int = DEFAULT_JPEG_QUALITY) -> np.ndarray:
    """Simulate baseline JPEG compression in memory (no chroma subsampling)."""
    img = check_image(img)
    luma_q = scaled_qtable(LUMA_QTABLE, quality)
    chroma_q = scaled_qtable(CHROMA_QTABLE, quality)
    pixels = to_uint8(img).astype(np.float64)
    if pixels.ndim == 2:
        out = _blockwise(pixels, luma_q)
    else:
        ycc = pixels @ _RGB_TO_YCC.T
        ycc[..., 1:] += 128.0
        planes = [_blockwise(ycc[..., 0], luma_q),
                  _blockwise(ycc[..., 1], chroma_q),
                  _blockwise(ycc[..., 2], chroma_q)]
        ycc = np.stack(planes, axis=-1)
        ycc[..., 1:] -= 128.0
        out = ycc @ _YCC_TO_RGB.T
    out = np.floor(np.clip(out, 0.0, 255.0) + 0.5).astype(np.uint8)
    if img.dtype == np.uint8:
        return out
    return (out / 255.0).astype(img.dtype)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the 8-bit scale."""
    a = to_uint8(a).astype(np.float64)
    b = to_uint8(b).astype(np.float64)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10 * np.log10(255.0 ** 2 / mse))


# --------------------------------------------------------------------------- #
# L0 gradient minimization
# --------------------------------------------------------------------------- #

def _diff_spectrum(shape: tuple[int, int]) -> np.ndarray:
    """``|F(Dx)|^2 + |F(Dy)|^2`` for periodic forward differences."""
    kx = np.zeros(shape)
    kx[0, 0], kx[0, -1] = -1.0, 1.0
    ky = np.zeros(shape)
    ky[0, 0], ky[-1, 0] = -1.0, 1.0
    return np.abs(fft2(kx)) ** 2 + np.abs(fft2(ky)) ** 2


def _grad(s: np.ndarray):
    """Periodic forward differences along the last two axes (x, y)."""
    return np.roll(s, -1, axis=-1) - s, np.roll(s, -1, axis=-2) - s


def l0_smooth(img: np.ndarray, lam: float = DEFAULT_L0_LAMBDA, kappa: float = 2.0,
              beta_max: float = 1e5) -> np.ndarray:
    """L0 gradient minimization by half-quadratic splitting.

    Minimizes ``sum (S - I)^2 + lam * #{p : |dx S_p| + |dy S_p| != 0}`` with
    periodic boundaries. Each round hard-thresholds the auxiliary gradient
    field, then solves the quadratic S-step exactly with FFTs; ``beta``
    starts at ``2 * lam`` and grows by ``kappa`` until it exceeds ``beta_max``.
    """
    img = check_image(img)
    if lam < 0:
        raise EditError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return img.copy()
    I = to_float(img)
    color = I.ndim == 3
    planes = np.moveaxis(I, -1, 0) if color else I[None]
    denom_grad = _diff_spectrum(planes.shape[1:])
    F_I = fft2(planes, axes=(1, 2))
    S = planes.copy()
    beta = 2.0 * lam
    while beta <= beta_max:
        h, v = _grad(S)
        small = np.sum(h ** 2 + v ** 2, axis=0) <= lam / beta
        h[:, small] = 0.0
        v[:, small] = 0.0
        # D^T applied to (h, v): backward differences
        div = (np.roll(h, 1, axis=-1) - h) + (np.roll(v, 1, axis=-2) - v)
        numer = F_I + beta * fft2(div, axes=(1, 2))
        S = np.real(ifft2(numer / (1.0 + beta * denom_grad), axes=(1, 2)))
        beta *= kappa
    out = np.moveaxis(S, 0, -1) if color else S[0]
    return _like(out, img)


def nonzero_gradient_count(img: np.ndarray, tol: float = 1e-6) -> int:
    """Pixels where ``|dx| + |dy| > tol`` (periodic forward differences, float units)."""
    f = to_float(img)
    if f.ndim == 3:
        gx = np.abs(np.roll(f, -1, axis=1) - f).sum(axis=2)
        gy = np.abs(np.roll(f, -1, axis=0) - f).sum(axis=2)
    else:
        gx, gy = (np.abs(g) for g in _grad(f))
    return int(np.count_nonzero(gx + gy > tol))


# --------------------------------------------------------------------------- #
# edit specs
# --------------------------------------------------------------------------- #

_KINDS = ("identity", "resize", "jpeg", "blur", "noise", "l0")


@dataclass(frozen=True)
class EditSpec:
    """A serializable edit: ``kind`` plus its parameters.

    resize takes ``width``/``height`` or a downsampling ``factor``; with
    ``restore=True`` the result is resized back to the input size.
    """

    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise EditError(f"unknown edit kind {self.kind!r}")
        if (self.kind == "noise") != (self.seed is not None):
            raise EditError("a seed is required for noise edits and only for them")
        p = self.params
        if self.kind == "resize" and not ("factor" in p or ("width" in p and "height" in p)):
            raise EditError("resize needs width and height, or factor")
        if self.kind == "jpeg" and not 1 <= p.get("quality", DEFAULT_JPEG_QUALITY) <= 100:
            raise EditError("JPEG quality out of range")
        if self.kind == "blur" and p.get("kernel_size", DEFAULT_BLUR_KERNEL) % 2 == 0:
            raise EditError("blur kernel size must be odd")
        if self.kind == "noise" and p.get("std", DEFAULT_NOISE_STD) < 0:
            raise EditError("noise std must be >= 0")
        if self.kind == "l0" and p.get("lam", DEFAULT_L0_LAMBDA) < 0:
            raise EditError("l0 lambda must be >= 0")

    def __call__(self, img: np.ndarray) -> np.ndarray:
        return apply_edit(img, self)

    def to_dict(self) -> dict[str, Any]:
        out = {"kind": self.kind, **self.params}
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EditSpec":
        data = dict(data)
        kind = data.pop("kind")
        seed = data.pop("seed", None)
        return cls(kind, data, seed)

    @classmethod
    def from_json(cls, text: str) -> "EditSpec":
        return cls.from_dict(json.loads(text))


IDENTITY = EditSpec("identity")


def apply_edit(img: np.ndarray, spec: EditSpec) -> np.ndarray:
    img = check_image(img)
    p = spec.params
    if spec.kind == "identity":
        return img
    if spec.kind == "resize":
        h, w = img.shape[:2]
        if "factor" in p:
            tw, th = max(1, round(w / p["factor"])), max(1, round(h / p["factor"]))
        else:
            tw, th = int(p["width"]), int(p["height"])
        out = bilinear_resize(img, tw, th)
        if p.get("restore", False):
            out = bilinear_resize(out, w, h)
        return out
    if spec.kind == "jpeg":
        return jpeg_codec(img, int(p.get("quality", DEFAULT_JPEG_QUALITY)))
    if spec.kind == "blur":
        return gaussian_blur(img, int(p.get("kernel_size", DEFAULT_BLUR_KERNEL)))
    if spec.kind == "noise":
        return add_gaussian_noise(img, float(p.get("std", DEFAULT_NOISE_STD)), int(spec.seed))
    return l0_smooth(img, float(p.get("lam", DEFAULT_L0_LAMBDA)))


def apply_edits(img: np.ndarray, specs) -> np.ndarray:
    for spec in specs:
        img = apply_edit(img, spec)
    return img
