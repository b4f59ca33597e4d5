"""Differentiable layer primitives and a finite-difference gradient checker.

The layers are thin, shape-checked wrappers over ``torch.nn.functional``;
gradients come from torch's reverse-mode autograd. The finite-difference
checker is independent of autograd and is the oracle used to validate every
differentiable piece of the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch.overrides import TorchFunctionMode

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class ShapeError(ValueError):
    pass


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
           stride: int = 1, padding: int = 0) -> torch.Tensor:
    """Cross-correlation of an NCHW batch with an ``(out, in, kh, kw)`` kernel."""
    if x.dim() != 4 or weight.dim() != 4:
        raise ShapeError(f"conv2d needs 4-D input and weight, got {tuple(x.shape)} and {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {tuple(bias.shape)} does not match {weight.shape[0]} filters")
    out_h = (x.shape[2] + 2 * padding - weight.shape[2]) // stride + 1
    out_w = (x.shape[3] + 2 * padding - weight.shape[3]) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"input {tuple(x.shape[2:])} too small for kernel {tuple(weight.shape[2:])}")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def batch_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
               running_mean: torch.Tensor, running_var: torch.Tensor, training: bool,
               momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> torch.Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics normalize ``x`` and the running
    buffers are updated in place with ``momentum``; in eval mode the running
    buffers are used (fresh buffers hold mean 0, variance 1).
    """
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("gamma/beta length must equal the channel count")
    return F.batch_norm(x, running_mean, running_var, gamma, beta, training, momentum, eps)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def global_avg_pool(x: torch.Tensor) -> torch.Tensor:
    """Spatial mean per channel; output is ``(B, C, 1, 1)``."""
    return x.mean(dim=(2, 3), keepdim=True)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    if x.dim() != 2 or weight.dim() != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {tuple(x.shape)} incompatible with weight {tuple(weight.shape)}")
    return F.linear(x, weight, bias)


def concat_features(parts: Sequence[torch.Tensor]) -> torch.Tensor:
    """Concatenate ``(B, d_i)`` feature blocks along the feature axis, in order."""
    parts = [p.flatten(1) for p in parts]
    if not parts:
        raise ShapeError("nothing to concatenate")
    if len({p.shape[0] for p in parts}) != 1:
        raise ShapeError("all parts must share the batch dimension")
    return torch.cat(parts, dim=1)


def split_features(x: torch.Tensor, sizes: Sequence[int]) -> list[torch.Tensor]:
    return list(torch.split(x, list(sizes), dim=1))


def softmax_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``.

    The gradient is ``(softmax - one_hot) / batch``; the returned loss is
    itself differentiable.
    """
    if logits.dim() != 2 or logits.shape[1] < 2:
        raise ShapeError("logits must be (batch, classes) with at least two classes")
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.shape != (logits.shape[0],):
        raise ShapeError("one label per sample is required")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"label out of range for {logits.shape[1]} classes")
    log_probs = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    loss = -log_probs.gather(1, labels[:, None]).mean()
    one_hot = F.one_hot(labels, logits.shape[1]).to(logits.dtype)
    grad = (log_probs.detach().exp() - one_hot) / logits.shape[0]
    return loss, grad


# --------------------------------------------------------------------------- #
# finite differences
# --------------------------------------------------------------------------- #

@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    tolerance: float
    worst: tuple[int, int] | None = None  # (input index, flat element index)
    errors: list[np.ndarray] = field(default_factory=list, repr=False)  # per input, flattened

    def __bool__(self):
        return self.passed


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def finite_difference_check(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor],
                            tolerance: float = 1e-6, step: float = 1e-3,
                            analytic_dtype: torch.dtype = torch.float64, seed: int = 0,
                            analytic: Sequence[torch.Tensor] | None = None,
                            exclude: Sequence[np.ndarray] | None = None) -> GradCheckResult:
    """Compare gradients of ``fn`` against central differences.

    ``fn(*inputs)`` may return any tensor; it is reduced to a scalar by a dot
    product with a fixed random projection so every output element matters.
    Central differences are always taken in float64. The analytic gradients
    come from autograd at ``analytic_dtype`` unless ``analytic`` supplies them
    directly, which lets a deliberately wrong gradient be checked. ``exclude``
    holds per-input boolean masks of elements left out of the verdict (see
    :func:`relu_kinks`); their errors are still reported.
    """
    probes = [t.detach().to(torch.float64).clone() for t in inputs]
    with torch.no_grad():
        out_shape = fn(*probes).shape
    gen = torch.Generator().manual_seed(seed)
    projection = torch.randn(out_shape, generator=gen, dtype=torch.float64)

    def objective(*args):
        out = fn(*args)
        return (out.to(torch.float64) * projection).sum()

    if analytic is None:
        leaves = [p.to(analytic_dtype).requires_grad_(True) for p in probes]
        grads = torch.autograd.grad(objective(*leaves), leaves, allow_unused=True)
        analytic = [torch.zeros_like(l) if g is None else g for g, l in zip(grads, leaves)]

    worst_err, worst_at = 0.0, None
    errors = []
    with torch.no_grad():
        for k, probe in enumerate(probes):
            flat = probe.view(-1)
            numeric = np.empty(flat.numel())
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = objective(*probes).item()
                flat[i] = orig - step
                down = objective(*probes).item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * step)
            err = relative_error(analytic[k].detach().to(torch.float64).reshape(-1).numpy(), numeric)
            errors.append(err)
            judged = np.where(exclude[k].reshape(-1), 0.0, err) if exclude is not None else err
            if not np.all(np.isfinite(judged)):
                return GradCheckResult(False, math.nan, tolerance, (k, int(np.argmin(np.isfinite(judged)))), errors)
            if judged.size and judged.max() > worst_err:
                worst_err, worst_at = float(judged.max()), (k, int(judged.argmax()))
    return GradCheckResult(worst_err < tolerance, worst_err, tolerance, worst_at, errors)


class _ReluSignRecorder(TorchFunctionMode):
    def __init__(self):
        super().__init__()
        self.signs: list[torch.Tensor] = []

    def __torch_function__(self, func, types, args=(), kwargs=None):
        if func in (torch.relu, F.relu):
            self.signs.append(args[0] > 0)
        return func(*args, **(kwargs or {}))


def relu_kinks(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor], step: float = 1e-3) -> list[np.ndarray]:
    """Per input element: does moving it by ``+-step`` switch any ReLU on or off?

    Central differences are meaningless across such a kink, so these elements
    are the ones to leave out of a finite-difference comparison.
    """
    probes = [t.detach().to(torch.float64).clone() for t in inputs]
    masks = []
    with torch.no_grad():
        for probe in probes:
            flat = probe.view(-1)
            mask = np.zeros(flat.numel(), dtype=bool)
            for i in range(flat.numel()):
                orig = flat[i].item()
                patterns = []
                for value in (orig + step, orig - step):
                    flat[i] = value
                    with _ReluSignRecorder() as rec:
                        fn(*probes)
                    patterns.append(rec.signs)
                flat[i] = orig
                mask[i] = any(not torch.equal(a, b) for a, b in zip(*patterns))
            masks.append(mask)
    return masks
