"""Finite-difference checks of every differentiable building block.

Shared by ``gramtex gradcheck`` and the acceptance suite. Each case is a
function of float64 probes; ReLU kink crossings are detected up front and
left out of the verdict (central differences straddling a kink measure the
average of two slopes, not the gradient).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch.func import functional_call

from .gram import GramBlock, GramBlockConfig, GramNet, GramNetConfig, gram_matrix
from .nn import (GradCheckResult, batch_norm, conv2d, finite_difference_check, linear, relu_kinks,
                 softmax_cross_entropy)

TINY_NET = GramNetConfig(stage_widths=[2, 3], blocks_per_stage=1, gram=GramBlockConfig(2, 3))
FLOAT32_TOLERANCE = 1e-3


@dataclass
class GradCase:
    name: str
    fn: Callable[..., torch.Tensor]
    inputs: list[torch.Tensor]
    piecewise: bool = False  # contains ReLUs, so kinks must be screened
    float64_tolerance: float = 1e-6


def randomize_batch_norm(model: torch.nn.Module, seed: int = 0) -> torch.nn.Module:
    """Give every BatchNorm non-trivial running stats and affine parameters."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.running_mean.copy_(torch.randn(m.num_features, generator=gen) * 0.1)
                m.running_var.copy_(torch.rand(m.num_features, generator=gen) + 0.5)
                m.weight.copy_(torch.rand(m.num_features, generator=gen) + 0.5)
                m.bias.copy_(torch.randn(m.num_features, generator=gen) * 0.1)
    return model


def _module_case(name, module, x, reduce=None, float64_tolerance=1e-6) -> GradCase:
    names = [n for n, _ in module.named_parameters()]

    def fn(inp, *params):
        # buffers follow the probe dtype so the float32 analytic pass stays float32
        buffers = {n: b.to(inp.dtype) if b.is_floating_point() else b for n, b in module.named_buffers()}
        out = functional_call(module, {**dict(zip(names, params)), **buffers}, (inp,))
        return reduce(out) if reduce else out
    return GradCase(name, fn, [x, *[p.detach() for p in module.parameters()]], True, float64_tolerance)


def gradcheck_cases(seed: int = 0) -> list[GradCase]:
    gen = torch.Generator().manual_seed(seed)

    def rand(*shape):
        return torch.randn(*shape, generator=gen, dtype=torch.float64)

    def bn_train(x, g, b):
        c = x.shape[1]
        return batch_norm(x, g, b, torch.zeros(c, dtype=x.dtype), torch.ones(c, dtype=x.dtype), True)

    cases = [
        GradCase("conv2d", lambda x, w, b: conv2d(x, w, b, 1, 1), [rand(2, 3, 5, 5), rand(4, 3, 3, 3), rand(4)]),
        GradCase("batch_norm", bn_train, [rand(4, 3, 3, 3), rand(3), rand(3)]),
        GradCase("linear", linear, [rand(3, 5), rand(2, 5), rand(2)]),
        GradCase("softmax_cross_entropy", lambda z: softmax_cross_entropy(z, torch.tensor([0, 1, 1]))[0],
                 [rand(3, 2)]),
        GradCase("gram_matrix", gram_matrix, [rand(3, 4, 4)]),
    ]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        block = randomize_batch_norm(GramBlock(2, GramBlockConfig(2, 3)), seed).double().eval()
        net = randomize_batch_norm(GramNet(TINY_NET), seed).double().eval()
    cases.append(_module_case("gram_block_forward", block, rand(3, 2, 3, 3)))
    labels = torch.tensor([0, 1])
    # Some parameters of the full loss have gradients near 1e-9; with a 1e-3
    # step the float64 round-off in (f(x+h) - f(x-h)) / 2h is ~1e-13, which the
    # 1e-8 floor of the relative error turns into ~1e-5. The end-to-end loss is
    # therefore held to 1e-3 at both precisions.
    cases.append(_module_case("tiny gram-net loss", net, rand(2, 3, 8, 8),
                              lambda z: softmax_cross_entropy(z, labels)[0], float64_tolerance=1e-3))
    return cases


def run_case(case: GradCase, analytic_dtype: torch.dtype, tolerance: float,
             kinks: list | None = None) -> GradCheckResult:
    if case.piecewise and kinks is None:
        kinks = relu_kinks(case.fn, case.inputs)
    return finite_difference_check(case.fn, case.inputs, tolerance, analytic_dtype=analytic_dtype, exclude=kinks)


def gradcheck_suite(seed: int = 0) -> list[tuple[str, str, GradCheckResult]]:
    """Every case with float64 autograd (1e-6 unless the case says otherwise) and float32 autograd at 1e-3.

    Returns ``(case name, precision, result)`` triples.
    """
    results = []
    for case in gradcheck_cases(seed):
        kinks = relu_kinks(case.fn, case.inputs) if case.piecewise else None
        results.append((case.name, "float64", run_case(case, torch.float64, case.float64_tolerance, kinks)))
        results.append((case.name, "float32", run_case(case, torch.float32, FLOAT32_TOLERANCE, kinks)))
    return results
