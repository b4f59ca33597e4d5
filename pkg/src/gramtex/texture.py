"""Gray-level co-occurrence matrices and the contrast statistic built on them."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .image import check_image, to_grayscale, to_uint8

LEVELS = 256
DEFAULT_DISTANCES = (1, 2, 5, 10, 15, 20)

# (dy, dx) unit offsets for right, down, left, up
ANGLES = {
    "right": (0, 1),
    "down": (1, 0),
    "left": (0, -1),
    "up": (-1, 0),
}
_RADIANS = {0.0: "right", 0.5: "down", 1.0: "left", 1.5: "up"}

_SQUARED_DIFF = np.subtract.outer(np.arange(LEVELS), np.arange(LEVELS)).astype(np.float64) ** 2


class TextureError(ValueError):
    pass


def angle_name(theta) -> str:
    """Map ``theta`` (a name or a multiple of pi/2 in radians) to its offset name."""
    if isinstance(theta, str):
        if theta not in ANGLES:
            raise TextureError(f"unknown angle {theta!r}")
        return theta
    key = round(float(theta) / math.pi, 6) % 2.0
    if key not in _RADIANS:
        raise TextureError(f"angle must be one of 0, pi/2, pi, 3pi/2; got {theta}")
    return _RADIANS[key]


@dataclass
class GlcmMatrix:
    counts: np.ndarray
    d: int
    theta: str
    total_pairs: int

    @property
    def is_empty(self) -> bool:
        """True when the offset leaves the image for every pixel."""
        return self.total_pairs == 0

    def normalized(self) -> np.ndarray:
        if self.is_empty:
            raise TextureError(f"GLCM for d={self.d}, theta={self.theta} has no valid pairs")
        return self.counts / self.total_pairs

    def __add__(self, other: "GlcmMatrix") -> "GlcmMatrix":
        if (self.d, self.theta) != (other.d, other.theta):
            raise TextureError("cannot merge GLCMs with different offsets")
        return GlcmMatrix(self.counts + other.counts, self.d, self.theta,
                          self.total_pairs + other.total_pairs)


@dataclass
class ContrastProfile:
    distances: list[int]
    contrast: list[float]

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.distances, self.contrast))

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class CorrelationTable:
    distances: list[int]
    r: list[float]
    original: list[list[float]] = field(default_factory=list)
    edited: list[list[float]] = field(default_factory=list)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.distances, self.r))

    def to_json(self) -> str:
        return json.dumps({"distances": self.distances, "r": self.r})


def _gray_u8(img: np.ndarray) -> np.ndarray:
    return to_uint8(to_grayscale(check_image(img)))


def compute_glcm(img: np.ndarray, d: int, theta) -> GlcmMatrix:
    """Count co-occurring intensity pairs at offset ``(d, theta)``.

    ``counts[i, j]`` is the number of pixels with value ``i`` whose neighbour
    ``d`` pixels away in direction ``theta`` is inside the image and has value
    ``j``. Offsets reaching outside the image for every pixel give an empty
    matrix (``total_pairs == 0``) rather than an error.
    """
    img = check_image(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise TextureError("compute_glcm needs a single-channel uint8 image")
    if d < 1:
        raise TextureError(f"distance must be >= 1, got {d}")
    name = angle_name(theta)
    dy, dx = ANGLES[name]
    dy, dx = dy * d, dx * d
    h, w = img.shape
    counts = np.zeros((LEVELS, LEVELS), dtype=np.int64)
    if abs(dy) >= h or abs(dx) >= w:
        return GlcmMatrix(counts, d, name, 0)
    src = img[max(0, -dy): h - max(0, dy), max(0, -dx): w - max(0, dx)]
    dst = img[max(0, dy): h - max(0, -dy), max(0, dx): w - max(0, -dx)]
    flat = src.astype(np.int64).ravel() * LEVELS + dst.astype(np.int64).ravel()
    counts = np.bincount(flat, minlength=LEVELS * LEVELS).reshape(LEVELS, LEVELS)
    return GlcmMatrix(counts, d, name, int(flat.size))


def glcm_set(img: np.ndarray, d: int) -> list[GlcmMatrix]:
    """GLCMs for all four directions at distance ``d``."""
    gray = _gray_u8(img)
    return [compute_glcm(gray, d, name) for name in ANGLES]


def contrast_from_glcm(glcms: Sequence[GlcmMatrix]) -> float:
    """Mean over non-empty directions of ``sum |i - j|^2 P(i, j)``.

    Each matrix is normalized to a probability distribution first, which makes
    the value independent of image size.
    """
    glcms = list(glcms)
    if not glcms:
        raise TextureError("no GLCMs given")
    if len({g.d for g in glcms}) != 1:
        raise TextureError("all GLCMs must share the same distance")
    values = [float(np.sum(_SQUARED_DIFF * g.normalized())) for g in glcms if not g.is_empty]
    if not values:
        raise TextureError(f"no direction has valid pairs at d={glcms[0].d}")
    return float(np.mean(values))


def image_contrast(img: np.ndarray, distances: Iterable[int] = DEFAULT_DISTANCES) -> ContrastProfile:
    gray = _gray_u8(img)
    distances = [int(d) for d in distances]
    return ContrastProfile(distances, [contrast_from_glcm(glcm_set(gray, d)) for d in distances])


def pooled_glcms(images: Iterable[np.ndarray], distances: Sequence[int]) -> dict[int, list[GlcmMatrix]]:
    """Sum co-occurrence counts over ``images`` for each distance and direction."""
    pooled: dict[int, list[GlcmMatrix]] = {}
    n = 0
    for img in images:
        gray = _gray_u8(img)
        for d in distances:
            current = glcm_set(gray, d)
            pooled[d] = current if d not in pooled else [a + b for a, b in zip(pooled[d], current)]
        n += 1
    if n == 0:
        raise TextureError("dataset_contrast needs at least one image")
    return pooled


def dataset_contrast(images: Iterable[np.ndarray],
                     distances: Iterable[int] = DEFAULT_DISTANCES) -> ContrastProfile:
    """Contrast of the whole dataset: counts are pooled across images, then normalized."""
    distances = [int(d) for d in distances]
    pooled = pooled_glcms(images, distances)
    return ContrastProfile(distances, [contrast_from_glcm(pooled[d]) for d in distances])


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation. Raises ``TextureError`` if either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise TextureError("pearson needs two 1-D sequences of equal length")
    if x.size < 2:
        raise TextureError("pearson needs at least two samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise TextureError("correlation undefined for zero-variance input")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def contrast_correlation_analysis(images: Sequence[np.ndarray],
                                  edit: Callable[[np.ndarray], np.ndarray],
                                  distances: Iterable[int] = DEFAULT_DISTANCES) -> CorrelationTable:
    """Per-distance Pearson r between per-image contrast before and after ``edit``."""
    images = list(images)
    if len(images) < 2:
        raise TextureError("correlation analysis needs at least two images")
    distances = [int(d) for d in distances]
    original = [image_contrast(img, distances).contrast for img in images]
    edited = [image_contrast(edit(img), distances).contrast for img in images]
    orig = np.asarray(original)
    ed = np.asarray(edited)
    r = [pearson(orig[:, k], ed[:, k]) for k in range(len(distances))]
    return CorrelationTable(distances, r, original, edited)


def write_contrast_csv(rows: Iterable[tuple[str, int, float]], path) -> None:
    """One row per (image, distance) with its contrast."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "d", "contrast"])
        for name, d, value in rows:
            writer.writerow([name, d, repr(float(value))])
