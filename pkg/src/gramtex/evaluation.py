"""Accuracy under image edits and the model x condition robustness report."""

from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import jsonschema
import numpy as np
import torch

from .checkpoint import Checkpoint
from .editing import (DEFAULT_BLUR_KERNEL, DEFAULT_JPEG_QUALITY, DEFAULT_NOISE_STD, EditSpec,
                      apply_edit)
from .training import predict

CONDITIONS = ("original", "down8", "jpeg", "jpeg-down8", "blur", "noise")


def _as_model(model) -> torch.nn.Module:
    return model.build() if isinstance(model, Checkpoint) else model


def _image_seed(spec: EditSpec, img: np.ndarray) -> EditSpec:
    """Re-key a noise edit on the image content so results do not depend on order."""
    if spec.kind != "noise":
        return spec
    digest = zlib.crc32(np.ascontiguousarray(img).tobytes())
    seed = int(np.random.SeedSequence((spec.seed, digest)).generate_state(1)[0])
    return EditSpec("noise", spec.params, seed)


def edit_image(img: np.ndarray, edits: Sequence[EditSpec]) -> np.ndarray:
    for spec in edits:
        img = apply_edit(img, _image_seed(spec, img))
    return img


@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return int(self.labels.size)


def evaluate(model, images, labels, edits: Sequence[EditSpec] = ()) -> EvalResult:
    """Accuracy of ``model`` (eval mode) after applying ``edits`` to every image.

    Labels follow the real=0 / fake=1 convention.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("cannot evaluate on an empty set")
    if len(images) != labels.size:
        raise ValueError("one label per image is required")
    if isinstance(edits, EditSpec):
        edits = [edits]
    edited = [edit_image(img, edits) for img in images]
    preds = predict(_as_model(model), edited)
    return EvalResult(float(np.mean(preds == labels)), preds, labels)


def condition_edits(name: str, original_size: int | None = None,
                    jpeg_quality: int = DEFAULT_JPEG_QUALITY, blur_kernel: int = DEFAULT_BLUR_KERNEL,
                    noise_std: float = DEFAULT_NOISE_STD, noise_seed: int = 0) -> list[EditSpec]:
    """Edit chain for a named condition.

    ``original_size`` resizes every image to a square baseline first (the
    protocol uses 512); ``None`` keeps native sizes. ``down8`` shrinks the
    baseline by 8 (512 -> 64).
    """
    if original_size is None:
        base: list[EditSpec] = []
        down = EditSpec("resize", {"factor": 8})
    else:
        base = [EditSpec("resize", {"width": original_size, "height": original_size})]
        down = EditSpec("resize", {"width": original_size // 8, "height": original_size // 8})
    jpeg = EditSpec("jpeg", {"quality": jpeg_quality})
    chains = {
        "original": base,
        "down8": base + [down],
        "jpeg": base + [jpeg],
        "jpeg-down8": base + [jpeg, down],
        "blur": base + [EditSpec("blur", {"kernel_size": blur_kernel})],
        "noise": base + [EditSpec("noise", {"std": noise_std}, seed=noise_seed)],
    }
    if name not in chains:
        raise ValueError(f"unknown condition {name!r}; expected one of {CONDITIONS}")
    return chains[name]


REPORT_SCHEMA = {
    "type": "object",
    "required": ["conditions", "models", "accuracy", "counts", "settings", "labels", "predictions"],
    "properties": {
        "conditions": {"type": "array", "items": {"enum": list(CONDITIONS)}},
        "models": {"type": "array", "items": {"type": "string"}},
        "accuracy": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}}},
        "counts": {"type": "object", "required": ["n", "real", "fake"],
                   "additionalProperties": {"type": "integer", "minimum": 0}},
        "settings": {"type": "object"},
        "labels": {"type": "array", "items": {"enum": [0, 1]}},
        "predictions": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": {"type": "array", "items": {"type": "integer"}}}},
    },
}


@dataclass
class EvalReport:
    conditions: list[str]
    models: list[str]
    accuracy: dict[str, dict[str, float]]
    counts: dict[str, int]
    settings: dict
    labels: list[int]
    predictions: dict[str, dict[str, list[int]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        jsonschema.validate(data, REPORT_SCHEMA)
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def recomputed_accuracy(self, model: str, condition: str) -> float:
        preds = np.asarray(self.predictions[model][condition])
        return float(np.mean(preds == np.asarray(self.labels)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["model", *self.conditions, "avg"])
        for m in self.models:
            row = [self.accuracy[m][c] for c in self.conditions]
            writer.writerow([m, *row, float(np.mean(row))])
        return buf.getvalue()

    def format_table(self) -> str:
        """Human-readable accuracy table in percent, one row per model."""
        headers = ["Method", *self.conditions, "Avg."]
        rows = []
        for m in self.models:
            accs = [100 * self.accuracy[m][c] for c in self.conditions]
            rows.append([m, *(f"{a:.2f}" for a in accs), f"{np.mean(accs):.2f}"])
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
        return "\n".join(lines)


def robustness_matrix(models: Mapping[str, object], images, labels,
                      conditions: Sequence[str] = CONDITIONS, original_size: int | None = None,
                      jpeg_quality: int = DEFAULT_JPEG_QUALITY, blur_kernel: int = DEFAULT_BLUR_KERNEL,
                      noise_std: float = DEFAULT_NOISE_STD, noise_seed: int = 0) -> EvalReport:
    """Evaluate every model under every condition on one labelled test set."""
    labels = np.asarray(labels, dtype=np.int64)
    if not models:
        raise ValueError("no models to evaluate")
    if len(images) == 0:
        raise ValueError("empty test set")
    settings = {"original_size": original_size, "jpeg_quality": jpeg_quality,
                "blur_kernel": blur_kernel, "noise_std": noise_std, "noise_seed": noise_seed}
    built = {name: _as_model(m) for name, m in models.items()}
    accuracy: dict[str, dict[str, float]] = {name: {} for name in built}
    predictions: dict[str, dict[str, list[int]]] = {name: {} for name in built}
    for cond in conditions:
        edits = condition_edits(cond, original_size, jpeg_quality, blur_kernel, noise_std, noise_seed)
        edited = [edit_image(img, edits) for img in images]
        for name, model in built.items():
            preds = predict(model, edited)
            accuracy[name][cond] = float(np.mean(preds == labels))
            predictions[name][cond] = preds.astype(int).tolist()
    counts = {"n": int(labels.size), "real": int(np.sum(labels == 0)), "fake": int(np.sum(labels == 1))}
    return EvalReport(list(conditions), list(built), accuracy, counts, settings,
                      labels.astype(int).tolist(), predictions)
