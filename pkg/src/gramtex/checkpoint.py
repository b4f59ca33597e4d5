"""Versioned checkpoint files.

Layout::

    b"GRAMNET1" | manifest length (uint64, little-endian) | manifest JSON | tensor blob

The manifest records the model kind, its config, training metadata, and for
each tensor its name, shape and byte offset into the blob. The blob holds all
tensors back to back as little-endian float32.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .gram import GramNetConfig, build_model

MAGIC = b"GRAMNET1"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: GramNetConfig
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, kind: str, model: torch.nn.Module, metadata: dict | None = None) -> "Checkpoint":
        tensors = {name: t.detach().cpu().numpy().astype("<f4", copy=True)
                   for name, t in model.state_dict().items() if t.is_floating_point()}
        return cls(kind, model.cfg, tensors, dict(metadata or {}))

    def build(self) -> torch.nn.Module:
        """Instantiate the model and load the stored tensors (eval mode)."""
        model = build_model(self.kind, self.config)
        expected = {k: v for k, v in model.state_dict().items() if v.is_floating_point()}
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise CheckpointError(f"tensor names do not match config (missing {missing[:3]}, unexpected {extra[:3]})")
        for name, ref in expected.items():
            if tuple(ref.shape) != self.tensors[name].shape:
                raise CheckpointError(f"{name}: stored shape {self.tensors[name].shape} != expected {tuple(ref.shape)}")
        state = {k: torch.from_numpy(np.array(v, dtype=np.float32)) for k, v in self.tensors.items()}
        model.load_state_dict(state, strict=False)
        return model.eval()

    def to_bytes(self) -> bytes:
        entries, chunks, offset = [], [], 0
        for name in sorted(self.tensors):
            data = np.ascontiguousarray(self.tensors[name], dtype="<f4").tobytes()
            entries.append({"name": name, "shape": list(self.tensors[name].shape),
                            "offset": offset, "nbytes": len(data)})
            chunks.append(data)
            offset += len(data)
        manifest = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "metadata": self.metadata,
            "tensors": entries,
            "blob_bytes": offset,
        }
        header = json.dumps(manifest, sort_keys=True).encode()
        return MAGIC + _LEN.pack(len(header)) + header + b"".join(chunks)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:8] != MAGIC:
            raise CheckpointError("not a GRAMNET1 checkpoint")
        if len(raw) < 16:
            raise CheckpointError("truncated header")
        (n,) = _LEN.unpack_from(raw, 8)
        if 16 + n > len(raw):
            raise CheckpointError("truncated manifest")
        try:
            manifest = json.loads(raw[16:16 + n])
        except ValueError as exc:
            raise CheckpointError(f"corrupt manifest: {exc}") from exc
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unknown format version {manifest.get('format_version')!r}")
        blob = raw[16 + n:]
        if len(blob) != manifest["blob_bytes"]:
            raise CheckpointError(f"blob is {len(blob)} bytes, manifest says {manifest['blob_bytes']}")
        tensors = {}
        for e in manifest["tensors"]:
            count = int(np.prod(e["shape"], dtype=np.int64))
            if e["nbytes"] != 4 * count or e["offset"] + e["nbytes"] > len(blob):
                raise CheckpointError(f"tensor {e['name']} does not fit its declared shape")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=e["offset"])
            tensors[e["name"]] = arr.reshape(e["shape"]).copy()
        ckpt = cls(manifest["kind"], GramNetConfig.from_dict(manifest["config"]), tensors, manifest["metadata"])
        ckpt.build()  # validates names and shapes against the config
        return ckpt


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())
