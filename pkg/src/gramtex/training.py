"""Training loop: random-resize augmentation, Adam, validation-based model selection."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .checkpoint import Checkpoint
from .editing import resize_array
from .gram import GramNetConfig, build_model
from .image import to_float
from .nn import softmax_cross_entropy

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    epochs: int = 10
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    augment_resize_range: tuple[int, int] = (64, 256)
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        lo, hi = self.augment_resize_range
        if not 32 <= lo <= hi <= 512:
            raise ValueError("augment resize range must lie within [32, 512]")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")


def images_to_tensor(images, size: int | None = None) -> torch.Tensor:
    """Stack images into a float32 ``(B, 3, H, W)`` tensor scaled to [-1, 1].

    Gray images are replicated across the three channels. With ``size`` every
    image is first bilinearly resized to ``size x size``.
    """
    batch = []
    for img in images:
        f = to_float(img)
        if size is not None and f.shape[:2] != (size, size):
            f = resize_array(f, size, size)
        if f.ndim == 2:
            f = np.repeat(f[None], 3, axis=0)
        else:
            f = f.transpose(2, 0, 1)
        batch.append(f)
    arr = np.stack(batch).astype(np.float32)
    return torch.from_numpy(arr * 2.0 - 1.0)


def split_indices(labels: np.ndarray, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified, seed-determined train/val split."""
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_val = max(1, int(round(val_fraction * idx.size)))
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return np.sort(np.array(train)), np.sort(np.array(val))


@torch.no_grad()
def predict(model: torch.nn.Module, images, batch_size: int = 32) -> np.ndarray:
    """Class predictions in eval mode; images are used at their native size."""
    model.eval()
    preds = []
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        shapes = {im.shape[:2] for im in chunk}
        if len(shapes) == 1:
            preds.append(model(images_to_tensor(chunk)).argmax(1).numpy())
        else:
            preds.append(np.concatenate([model(images_to_tensor([im])).argmax(1).numpy() for im in chunk]))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def train(kind: str, images, labels, cfg: TrainConfig | None = None,
          model_cfg: GramNetConfig | None = None) -> Checkpoint:
    """Train a ``gramnet`` or ``baseline`` model and return the best-on-validation checkpoint.

    Each step resizes the whole batch to one random square side drawn from
    ``cfg.augment_resize_range``. Everything (split, order, sizes, init)
    derives from ``cfg.seed``, so reruns produce identical checkpoints.
    """
    cfg = cfg or TrainConfig()
    model_cfg = model_cfg or GramNetConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != labels.size:
        raise TrainingError("one label per image is required")
    counts = np.bincount(labels, minlength=model_cfg.num_classes)
    if np.any(counts < 2):
        raise TrainingError(f"every class needs at least two images, got counts {counts.tolist()}")

    train_idx, val_idx = split_indices(labels, cfg.val_fraction, cfg.seed)
    floats = [to_float(img) for img in images]
    val_images = [images[i] for i in val_idx]
    rng = np.random.default_rng(cfg.seed + 1)

    torch.manual_seed(cfg.seed)
    model = build_model(kind, model_cfg, seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.adam_eps)
    lo, hi = cfg.augment_resize_range

    best_state, best_acc, best_epoch = None, -1.0, -1
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = train_idx[rng.permutation(train_idx.size)]
        losses = []
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            if batch.size < 2:
                continue  # batch norm needs more than one sample
            side = int(rng.integers(lo, hi + 1))
            x = images_to_tensor([floats[i] for i in batch], size=side)
            y = torch.from_numpy(labels[batch])
            loss, _ = softmax_cross_entropy(model(x), y)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"loss diverged at epoch {epoch}, step {start // cfg.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_acc = float(np.mean(predict(model, val_images) == labels[val_idx]))
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": val_acc})
        log.info("%s epoch %d: loss %.4f, val acc %.4f", kind, epoch, history[-1]["loss"], val_acc)
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_state = copy.deepcopy(model.state_dict())

    train_images = [images[i] for i in train_idx]
    final_train_acc = float(np.mean(predict(model, train_images) == labels[train_idx]))
    model.load_state_dict(best_state)
    meta = {
        "epoch": best_epoch,
        "val_accuracy": best_acc,
        "seed": cfg.seed,
        "train_config": asdict(cfg),
        "history": history,
        "final_val_accuracy": history[-1]["val_accuracy"],
        "final_train_accuracy": final_train_acc,
    }
    return Checkpoint.from_model(kind, model, meta)
