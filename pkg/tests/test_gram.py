import numpy as np
import pytest
import torch
from torch.func import functional_call

from gramtex.gram import (BaselineNet, GramBlock, GramBlockConfig, GramNet, GramNetConfig, build_model,
                          count_parameters, covariance_matrix, gram_matrix)
from gramtex.nn import (ShapeError, batch_norm, conv2d, finite_difference_check, global_avg_pool, relu, relu_kinks,
                        softmax_cross_entropy)

TINY = GramNetConfig(stage_widths=[2, 3], blocks_per_stage=1, gram=GramBlockConfig(2, 3))


def randn(*shape, seed=0, dtype=torch.float32):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)


def brute_gram(f):
    c = f.shape[0]
    flat = f.reshape(c, -1).double().numpy()
    return np.array([[sum(flat[i, k] * flat[j, k] for k in range(flat.shape[1])) for j in range(c)]
                     for i in range(c)])


def randomize_bn(model, seed=0):
    gen = torch.Generator().manual_seed(seed)
    for m in model.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.running_mean.copy_(torch.randn(m.num_features, generator=gen) * 0.1)
            m.running_var.copy_(torch.rand(m.num_features, generator=gen) + 0.5)
            m.weight.data.copy_(torch.rand(m.num_features, generator=gen) + 0.5)
            m.bias.data.copy_(torch.randn(m.num_features, generator=gen) * 0.1)
    return model


def test_gram_small_examples():
    f = torch.tensor([[[1.0, 2.0]]])
    assert gram_matrix(f, normalize=False).item() == 5.0
    assert gram_matrix(f).item() == 2.5
    eye = gram_matrix(torch.tensor([[[1.0, 0.0]], [[0.0, 1.0]]]), normalize=False)
    assert torch.equal(eye, torch.eye(2))


def test_gram_matches_double_loop():
    f = randn(3, 4, 4, dtype=torch.float64)
    np.testing.assert_allclose(gram_matrix(f, normalize=False).numpy(), brute_gram(f), rtol=1e-12)
    np.testing.assert_allclose(gram_matrix(f).numpy(), brute_gram(f) / 16, rtol=1e-12)
    batch = randn(2, 3, 5, 2, seed=1)
    assert gram_matrix(batch).shape == (2, 3, 3)
    with pytest.raises(ShapeError):
        gram_matrix(torch.zeros(3, 3))


def test_gram_symmetric_psd_permutation_replication():
    for case in range(100):
        g = torch.Generator().manual_seed(case)
        c, h, w = (int(v) for v in torch.randint(1, 9, (3,), generator=g))
        f = torch.randn(c, h, w, generator=g)
        gm = gram_matrix(f)
        assert torch.equal(gm, gm.T)
        eig = torch.linalg.eigvalsh(gm.double())
        assert eig.min() >= -1e-6 * gm.trace().double()
        perm = torch.randperm(h * w, generator=g)
        shuffled = f.reshape(c, -1)[:, perm].reshape(c, h, w)
        assert torch.equal(gram_matrix(shuffled), gm)
        up = f.repeat_interleave(2, dim=1).repeat_interleave(2, dim=2)
        assert torch.allclose(gram_matrix(up), gm, rtol=1e-5, atol=1e-7)


def test_covariance():
    f = randn(4, 5, 6, dtype=torch.float64)
    flat = f.reshape(4, -1).numpy()
    np.testing.assert_allclose(covariance_matrix(f).numpy(), np.cov(flat), rtol=1e-12)
    centered = f - f.mean(dim=(1, 2), keepdim=True)
    torch.testing.assert_close(covariance_matrix(centered) * 29, gram_matrix(centered, normalize=False))
    const = torch.ones(3, 4, 4) * torch.tensor([1.0, -2.0, 5.0])[:, None, None]
    assert torch.count_nonzero(covariance_matrix(const)) == 0
    with pytest.raises(ShapeError):
        covariance_matrix(torch.ones(2, 1, 1))


def test_config_arithmetic():
    cfg = GramNetConfig()
    assert cfg.num_taps == 6
    assert cfg.tap_channels == [3, 16, 16, 32, 64, 128]
    assert GramNet(cfg).feature_dim == 320
    assert GramNetConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        GramNetConfig(stage_widths=[32, 16])


def reference_block(block, x):
    """Eval-mode Gram Block forward written against the nn-core primitives."""
    z = conv2d(x, block.align.weight, block.align.bias)
    flat = z.flatten(2).double()
    g = (flat @ flat.transpose(1, 2) / flat.shape[-1]).to(x.dtype).unsqueeze(1)
    for layer in block.refine:
        conv, bn = layer[0], layer[1]
        g = conv2d(g, conv.weight, None, 1, 1)
        g = relu(batch_norm(g, bn.weight, bn.bias, bn.running_mean.clone(), bn.running_var.clone(), training=False))
    return global_avg_pool(g).flatten(1)


def test_gram_block_shape_and_reference_trace():
    torch.manual_seed(0)
    block = randomize_bn(GramBlock(5)).eval()
    for h, w in [(1, 1), (7, 3), (16, 16)]:
        x = randn(2, 5, h, w)
        out = block(x)
        assert out.shape == (2, 32)
        torch.testing.assert_close(out, reference_block(block, x), rtol=1e-5, atol=1e-6)
    x = randn(2, 5, 8, 8, seed=4)
    doubled = block(2 * x)
    assert not torch.allclose(doubled, block(x))
    torch.testing.assert_close(doubled, reference_block(block, 2 * x), rtol=1e-5, atol=1e-6)


def test_gram_block_spatial_permutation_is_bit_exact():
    torch.manual_seed(1)
    block = randomize_bn(GramBlock(4)).eval()
    for case in range(100):
        g = torch.Generator().manual_seed(case)
        h, w = (int(v) for v in torch.randint(1, 12, (2,), generator=g))
        x = torch.randn(2, 4, h, w, generator=g)
        perm = torch.randperm(h * w, generator=g)
        shuffled = x.flatten(2)[:, :, perm].reshape(x.shape)
        with torch.no_grad():
            assert torch.equal(block(shuffled), block(x))


def test_variable_input_sizes_and_minimum():
    model = build_model("gramnet", seed=0).eval()
    with torch.no_grad():
        assert model(randn(2, 3, 64, 64)).shape == (2, 2)
        assert model(randn(1, 3, 256, 256)).shape == (1, 2)
        assert model(randn(1, 3, 16, 40)).shape == (1, 2)
    with pytest.raises(ShapeError):
        model(randn(1, 3, 8, 64))
    with pytest.raises(ShapeError):
        model(randn(1, 1, 64, 64))


def test_containment_and_zeroed_gram_head():
    cfg = GramNetConfig()
    gram = randomize_bn(build_model("gramnet", cfg, seed=3)).eval()
    base = build_model("baseline", cfg, seed=4).eval()
    base.backbone.load_state_dict(gram.backbone.state_dict())
    x = randn(3, 3, 32, 32, seed=7)
    with torch.no_grad():
        pooled, grams = gram.features(x)
        assert torch.equal(pooled, base.backbone(x))
        assert len(grams) == 6 and all(g.shape == (3, 32) for g in grams)
        # head restricted to the backbone columns
        base.head.weight.copy_(gram.head.weight[:, :128])
        base.head.bias.copy_(gram.head.bias)
        zeros = [torch.zeros_like(g) for g in grams]
        contained = gram.head(torch.cat([pooled, *zeros], dim=1))
        torch.testing.assert_close(contained, base(x), rtol=0, atol=1e-6)
        gram.head.weight[:, 128:] = 0
        torch.testing.assert_close(gram(x), base(x), rtol=0, atol=1e-6)


def test_parameter_counts_and_determinism():
    assert count_parameters(build_model("baseline")) < count_parameters(build_model("gramnet"))
    a, b = build_model("gramnet", seed=5).eval(), build_model("gramnet", seed=5).eval()
    x = randn(2, 3, 48, 48)
    with torch.no_grad():
        assert torch.equal(a(x), b(x))
        assert torch.all(torch.isfinite(build_model("baseline", seed=1).eval()(x)))
    assert not torch.equal(build_model("gramnet", seed=6).head.weight, a.head.weight)
    state = torch.get_rng_state()
    build_model("gramnet", seed=9)
    assert torch.equal(state, torch.get_rng_state())
    with pytest.raises(ValueError):
        build_model("resnet18")


def test_gradcheck_gram_matrix():
    for shape in [(2, 3, 3), (3, 2, 4), (1, 4, 4)]:
        assert finite_difference_check(gram_matrix, [randn(*shape, dtype=torch.float64)]).passed


def test_gradcheck_gram_block():
    torch.manual_seed(2)
    block = GramBlock(2, GramBlockConfig(2, 3)).double().train()
    names = [n for n, _ in block.named_parameters()]

    def fn(x, *params):
        return functional_call(block, dict(zip(names, params)), (x,))

    res = finite_difference_check(fn, [randn(3, 2, 3, 3, dtype=torch.float64, seed=5),
                                       *[p.detach() for p in block.parameters()]], tolerance=1e-3)
    assert res.passed, res


def tiny_loss_check(analytic_dtype, training=False, step=1e-3):
    torch.manual_seed(0)
    model = randomize_bn(GramNet(TINY)).double().train(training)
    names = [n for n, _ in model.named_parameters()]
    labels = torch.tensor([0, 1])

    def fn(x, *params):
        # buffers follow the probe precision so the float32 analytic path runs a float32 model
        state = {n: b.to(x.dtype) if b.is_floating_point() else b for n, b in model.named_buffers()}
        state.update(zip(names, params))
        return softmax_cross_entropy(functional_call(model, state, (x,)), labels)[0]

    probes = [randn(2, 3, 8, 8, dtype=torch.float64, seed=11)] + [p.detach().clone() for p in model.parameters()]
    kinks = relu_kinks(fn, probes, step)
    res = finite_difference_check(fn, probes, tolerance=1e-3, step=step, analytic_dtype=analytic_dtype, exclude=kinks)
    return res, np.concatenate(kinks)


@pytest.mark.parametrize("dtype,training", [(torch.float64, False), (torch.float32, False), (torch.float64, True)])
def test_gradcheck_tiny_gram_net_end_to_end(dtype, training):
    # ReLU is not differentiable where the stencil straddles a kink; those elements are excluded
    res, kinks = tiny_loss_check(dtype, training)
    assert kinks.size == count_parameters(GramNet(TINY)) + 2 * 3 * 8 * 8
    assert 0 < kinks.mean() < 0.1
    assert res.passed, res
    assert np.concatenate(res.errors)[~kinks].max() == res.max_rel_error


def test_relu_kinks_finds_the_crossing():
    x = torch.tensor([0.0005, 0.5, -0.0002, -1.0], dtype=torch.float64)
    assert relu_kinks(torch.relu, [x])[0].tolist() == [True, False, True, False]
    assert relu_kinks(lambda t: torch.nn.functional.relu(t - 0.5), [x])[0].tolist() == [False, True, False, False]
