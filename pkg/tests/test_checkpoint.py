import json
import struct

import numpy as np
import pytest
import torch

from gramtex.checkpoint import MAGIC, Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from gramtex.gram import GramBlockConfig, GramNetConfig, build_model

SMALL = GramNetConfig(stage_widths=[4, 8], blocks_per_stage=1, gram=GramBlockConfig(4, 4))


def trained_like(kind="gramnet", cfg=SMALL):
    model = build_model(kind, cfg, seed=1)
    gen = torch.Generator().manual_seed(0)
    with torch.no_grad():
        for name, t in model.state_dict().items():
            if t.is_floating_point():
                t.copy_(torch.rand(t.shape, generator=gen) + 0.1 if "var" in name else torch.randn(t.shape, generator=gen))
    return model.eval()


def split(raw):
    (n,) = struct.unpack_from("<Q", raw, 8)
    return json.loads(raw[16:16 + n]), raw[16 + n:]


def join(manifest, blob):
    header = json.dumps(manifest).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + blob


@pytest.mark.parametrize("kind", ["gramnet", "baseline"])
def test_round_trip_is_bit_exact(tmp_path, kind):
    model = trained_like(kind)
    ckpt = Checkpoint.from_model(kind, model, {"epoch": 3, "val_accuracy": 0.9, "seed": 1})
    save_checkpoint(ckpt, tmp_path / "m.ckpt")
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.metadata["epoch"] == 3 and loaded.config == SMALL and loaded.kind == kind
    rebuilt = loaded.build()
    for i in range(10):
        x = torch.randn(2, 3, 16 + 4 * i, 16, generator=torch.Generator().manual_seed(i))
        with torch.no_grad():
            assert torch.equal(model(x), rebuilt(x))
    assert (tmp_path / "m.ckpt").read_bytes() == loaded.to_bytes()


def test_layout():
    raw = Checkpoint.from_model("gramnet", trained_like()).to_bytes()
    assert raw[:8] == b"GRAMNET1"
    manifest, blob = split(raw)
    assert manifest["format_version"] == 1
    names = [e["name"] for e in manifest["tensors"]]
    assert names == sorted(names)
    assert sum(e["nbytes"] for e in manifest["tensors"]) == len(blob) == manifest["blob_bytes"]
    first = manifest["tensors"][0]
    arr = np.frombuffer(blob[:first["nbytes"]], dtype="<f4").reshape(first["shape"])
    state = trained_like().state_dict()
    np.testing.assert_array_equal(arr, state[first["name"]].numpy())
    assert any("running_var" in n for n in names)


def test_corruption_is_rejected():
    raw = Checkpoint.from_model("gramnet", trained_like()).to_bytes()
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw[:-4])
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw[:20])
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"NOTACKPT" + raw[8:])
    manifest, blob = split(raw)
    bad = dict(manifest, format_version=2)
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.from_bytes(join(bad, blob))
    wrong_shape = json.loads(json.dumps(manifest))
    entry = next(e for e in wrong_shape["tensors"] if e["name"] == "head.weight")
    entry["shape"] = [entry["shape"][1], entry["shape"][0]]
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(join(wrong_shape, blob))
    other_cfg = json.loads(json.dumps(manifest))
    other_cfg["config"]["stage_widths"] = [4, 16]
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(join(other_cfg, blob))
