"""Two-class synthetic texture datasets with a controlled contrast gap.

Each image is a Gaussian random field with a power-law amplitude spectrum
``1 / f**alpha``. A smaller exponent keeps more high-frequency energy and so
gives higher GLCM contrast. Images are standardized to a common mean and
standard deviation so that first-order statistics cannot separate classes.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .image import load_image, save_image, to_uint8

TARGET_MEAN = 0.5
TARGET_STD = 0.15

REAL, FAKE = 0, 1
CLASS_NAMES = {REAL: "real", FAKE: "fake"}

# offset between the two classes' base seeds used by default_specs
CLASS_SEED_OFFSET = 1_000_000


class SynthError(ValueError):
    pass


@dataclass
class TextureSpec:
    size: int = 64
    spectral_exponent: float = 1.0
    count: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.size < 32 or self.size & (self.size - 1):
            raise SynthError(f"size must be a power of two >= 32, got {self.size}")
        if self.spectral_exponent <= 0:
            raise SynthError("spectral exponent must be positive")
        if self.count < 1:
            raise SynthError("count must be positive")


def default_specs(seed: int = 0, count: int = 200, size: int = 64,
                  sharp_alpha: float = 1.0, smooth_alpha: float = 1.6) -> tuple[TextureSpec, TextureSpec]:
    return (TextureSpec(size, sharp_alpha, count, seed),
            TextureSpec(size, smooth_alpha, count, seed + CLASS_SEED_OFFSET))


def normalize_image_stats(img: np.ndarray, mean: float = TARGET_MEAN, std: float = TARGET_STD,
                          rounds: int = 8) -> np.ndarray:
    """Affine map to the target mean/std, then clamp to [0, 1].

    The affine map is refined for a few rounds so that the moments hold after
    clamping too; otherwise clamp loss differs between smooth and rough
    fields and the per-image std alone would separate the classes.
    """
    img = np.asarray(img, dtype=np.float64)
    mu, s = img.mean(), img.std()
    if not np.isfinite(s) or s <= 1e-12 * max(1.0, abs(mu)):
        raise SynthError("cannot normalize a constant image")
    z = (img - mu) / s
    scale, shift = std, mean
    for _ in range(rounds):
        out = np.clip(z * scale + shift, 0.0, 1.0)
        got = out.std()
        if got == 0:
            break
        scale *= std / got
        shift += mean - out.mean()
    return np.clip(z * scale + shift, 0.0, 1.0)


def power_law_field(size: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal((size, size))
    f = np.fft.fftfreq(size)
    radius = np.hypot(f[:, None], f[None, :])
    radius[0, 0] = 1.0
    amplitude = radius ** -alpha
    amplitude[0, 0] = 0.0
    return np.real(np.fft.ifft2(np.fft.fft2(noise) * amplitude))


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Per-image generator keyed on ``(seed, index)``, independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def texture_image(spec: TextureSpec, index: int) -> np.ndarray:
    """The ``index``-th 8-bit image of ``spec``."""
    rng = image_rng(spec.seed, index)
    field = power_law_field(spec.size, spec.spectral_exponent, rng)
    return to_uint8(normalize_image_stats(field))


def generate_textures(spec: TextureSpec) -> list[np.ndarray]:
    return [texture_image(spec, i) for i in range(spec.count)]


def varied_texture_set(count: int, size: int = 128, seed: int = 0,
                       structure_std=(0.04, 0.2), grain_std=(0.0, 0.04),
                       alpha=(1.6, 2.4)) -> list[np.ndarray]:
    """Textures whose coarse structure and fine grain vary independently.

    Each image is a smooth power-law field with a random exponent and random
    amplitude, plus white grain of an independent random amplitude. Unlike
    the two-class datasets, per-image contrast here varies at every scale,
    which is what a correlation analysis across images needs.
    """
    images = []
    for i in range(count):
        rng = image_rng(seed, i)
        s = rng.uniform(*structure_std)
        g = rng.uniform(*grain_std)
        a = rng.uniform(*alpha)
        field = power_law_field(size, a, rng)
        field = (field - field.mean()) / field.std()
        img = 0.5 + s * field + g * rng.standard_normal((size, size))
        images.append(to_uint8(np.clip(img, 0.0, 1.0)))
    return images


def generate_texture_dataset(sharp: TextureSpec, smooth: TextureSpec, out: str | os.PathLike) -> list[dict]:
    """Write both classes as gray PNGs under ``out`` plus ``manifest.json``.

    The sharp class is labelled real (0), the smooth class fake (1). Returns
    the manifest entries ``{path, label, seed, index}``; paths are relative to
    ``out``.
    """
    if sharp.spectral_exponent >= smooth.spectral_exponent:
        raise SynthError("the sharp class needs a smaller spectral exponent than the smooth class")
    out = Path(out)
    manifest = []
    for label, spec in ((REAL, sharp), (FAKE, smooth)):
        folder = out / CLASS_NAMES[label]
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(spec.count):
            rel = f"{CLASS_NAMES[label]}/{i:05d}.png"
            save_image(texture_image(spec, i), out / rel)
            manifest.append({"path": rel, "label": label, "seed": spec.seed, "index": i})
    meta = {"sharp": asdict(sharp), "smooth": asdict(smooth), "images": manifest}
    (out / "manifest.json").write_text(json.dumps(meta, indent=1))
    return manifest


def load_manifest(path: str | os.PathLike) -> list[tuple[Path, int]]:
    """Read a manifest (file or dataset directory) into ``(absolute path, label)`` pairs.

    Accepts the dict form written by :func:`generate_texture_dataset` or a bare
    JSON list of ``{path, label}`` entries.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    data = json.loads(path.read_text())
    entries = data["images"] if isinstance(data, dict) else data
    root = path.parent
    return [(root / e["path"], int(e["label"])) for e in entries]


def folder_manifest(real_dir: str | os.PathLike, fake_dir: str | os.PathLike) -> list[tuple[Path, int]]:
    """Build ``(path, label)`` pairs from two folders of PNG/PGM/PPM images."""
    pairs = []
    for folder, label in ((Path(real_dir), REAL), (Path(fake_dir), FAKE)):
        files = sorted(p for p in folder.iterdir() if p.suffix.lower() in {".png", ".pgm", ".ppm", ".pnm"})
        pairs.extend((p, label) for p in files)
    return pairs


def load_dataset(entries) -> tuple[list[np.ndarray], np.ndarray]:
    images = [load_image(p) for p, _ in entries]
    labels = np.array([label for _, label in entries], dtype=np.int64)
    return images, labels
