import math

import numpy as np
import pytest

from hazevae import autodiff as ad
from hazevae.autodiff import Tensor
from hazevae.nets import (CLEAR_TO_HAZY, D_CLAMP, HAZY_TO_CLEAR, Architecture, HazeModel, ModelShape, NetParams,
                          SIGMOID, TANH01, clamp_probability, discriminator_forward, encoder_forward,
                          generator_forward, init_params, reparameterize, translate)
from hazevae.trainer import TrainConfig, train, load_checkpoint

SMALL = ModelShape(image_size=8, latent_dim=4, enc_hidden=(16, 8), gen_hidden=(8, 16), dis_hidden=(12, 6))


def zero_params(arch):
    p = init_params(np.random.default_rng(0), arch)
    for t in p.tensors():
        t.data[...] = 0.0
    return p


def fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def test_init_deterministic_and_bounded():
    arch = SMALL.encoder()
    a = init_params(np.random.default_rng(3), arch)
    b = init_params(np.random.default_rng(3), arch)
    for x, y in zip(a.tensors(), b.tensors()):
        assert np.array_equal(x.data, y.data)
    for W, bias, (fi, fo) in zip(a.weights, a.biases, zip(arch.widths[:-1], arch.widths[1:])):
        assert np.all(bias.data == 0)
        assert np.abs(W.data).max() <= math.sqrt(6 / (fi + fo))


def test_bad_architecture_rejected():
    with pytest.raises(ValueError):
        Architecture((10,))
    with pytest.raises(ValueError):
        Architecture((10, 0, 3))
    arch = Architecture((3, 2))
    with pytest.raises(ValueError):
        NetParams(arch, [Tensor(np.zeros((2, 3)))], [Tensor(np.zeros(2))])


def test_encoder_shape_zero_and_width_check():
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(8, 8, 3))
    assert encoder_forward(init_params(rng, SMALL.encoder()), img).shape == (1, 4)
    assert np.all(encoder_forward(zero_params(SMALL.encoder()), img).data == 0)
    with pytest.raises(ValueError):
        encoder_forward(init_params(rng, SMALL.encoder()), rng.uniform(size=(4, 4, 3)))


def test_encoder_input_gradient():
    rng = np.random.default_rng(1)
    p = init_params(rng, SMALL.encoder())
    x = Tensor(rng.uniform(size=(1, 192)), requires_grad=True)
    ad.mean(encoder_forward(p, x)).backward()
    num = fd(lambda: ad.mean(encoder_forward(p, x)).item(), x.data)
    np.testing.assert_allclose(x.grad, num, rtol=1e-4, atol=1e-9)


def test_generator_range_constant_and_gradient():
    rng = np.random.default_rng(2)
    p = init_params(rng, SMALL.generator())
    out = generator_forward(p, rng.normal(scale=30, size=(1, 4))).data
    assert out.min() >= 0 and out.max() <= 1
    z0 = zero_params(SMALL.generator())
    np.testing.assert_array_equal(generator_forward(z0, rng.normal(size=4)).data, 0.5)
    z = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(1, 192)))
    f = lambda: ad.tsum(ad.mul(generator_forward(p, z), w)).item()  # noqa: E731
    ad.tsum(ad.mul(generator_forward(p, z), w)).backward()
    np.testing.assert_allclose(z.grad, fd(f, z.data), rtol=1e-4, atol=1e-9)
    with pytest.raises(ValueError):
        generator_forward(p, np.zeros(5))


def test_discriminator_range_and_clamp():
    rng = np.random.default_rng(3)
    assert discriminator_forward(zero_params(SMALL.discriminator()), rng.uniform(size=(8, 8, 3))).item() == 0.5
    p = init_params(rng, SMALL.discriminator())
    for _ in range(20):
        v = discriminator_forward(p, rng.uniform(size=(8, 8, 3))).item()
        assert 0 < v < 1
    edge = clamp_probability(Tensor(np.array([0.0, 1.0])))
    assert edge.data[0] == D_CLAMP and edge.data[1] == 1 - D_CLAMP
    assert np.all(np.isfinite(ad.log(edge).data)) and np.all(np.isfinite(ad.log(ad.shift(ad.neg(edge), 1.0)).data))


def test_reparameterize():
    mean = Tensor(np.array([[0.5, -1.0, 2.0]]))
    code = reparameterize(mean, None)
    assert np.array_equal(code.z.data, mean.data)
    code = reparameterize(mean, np.random.default_rng(0))
    assert np.array_equal(code.z.data, mean.data + code.noise)
    np.testing.assert_allclose(code.z.data - mean.data, code.noise, rtol=0, atol=1e-15)
    draws = np.array([reparameterize(mean, r).z.data[0] for r in
                      (np.random.default_rng(s) for s in range(10_000))])
    assert np.all(np.abs(draws.var(axis=0, ddof=1) - 1.0) < 0.05)


def test_reparameterize_gradient_through_mean_only():
    mean = Tensor(np.array([[0.1, 0.2]]), requires_grad=True)
    code = reparameterize(mean, np.random.default_rng(1))
    ad.tsum(ad.square(code.z)).backward()
    np.testing.assert_allclose(mean.grad, 2 * code.z.data)


def test_end_to_end_chain_matches_fd():
    rng = np.random.default_rng(4)
    model = HazeModel.create(SMALL, rng)
    img = rng.uniform(size=(8, 8, 3))
    eta = rng.standard_normal((1, 4))

    def f():
        z = ad.add(encoder_forward(model.enc_i, img), Tensor(eta))
        return ad.log(clamp_probability(discriminator_forward(model.dis_j, generator_forward(model.gen_j, z))))

    leaves = model.enc_i.tensors()[:2]
    gs = ad.grad(ad.reshape(f(), ()), leaves)
    for leaf, g in zip(leaves, gs):
        sub = [(i, j) for i in range(0, leaf.shape[0], 37) for j in range(leaf.shape[-1])] if leaf.ndim == 2 \
            else [(j,) for j in range(leaf.shape[0])]
        for idx in sub:
            num = ad.numeric_grad(lambda: f().item(), leaf.data, idx)
            assert ad.relative_error(g[idx], num) <= 1e-4


def test_shared_latent_dimension():
    m = HazeModel.create(SMALL, np.random.default_rng(0))
    assert m.enc_i.arch.n_out == m.enc_j.arch.n_out == m.gen_i.arch.n_in == m.gen_j.arch.n_in == 4
    assert m.gen_i.arch.output == TANH01 and m.dis_i.arch.output == SIGMOID


def test_translate_deterministic_and_range():
    rng = np.random.default_rng(5)
    model = HazeModel.create(SMALL, rng)
    img = rng.uniform(size=(8, 8, 3))
    a = translate(model, img, HAZY_TO_CLEAR)
    assert np.array_equal(a, translate(model, img, HAZY_TO_CLEAR))
    assert a.shape == img.shape and a.min() >= 0 and a.max() <= 1
    with pytest.raises(ValueError):
        translate(model, img, "sideways")
    with pytest.raises(ValueError):
        translate(None, img, CLEAR_TO_HAZY)


def test_cycle_error_drops_after_toy_training(tiny_dataset, tmp_path):
    cfg = TrainConfig(data=str(tiny_dataset.root), out=str(tmp_path), iterations=300, ckpt_every=300, buffer=8,
                      latent_dim=4, enc_hidden=(32, 16), gen_hidden=(16, 32), dis_hidden=(16, 8), lr=1e-3)
    train(cfg)
    from hazevae.scenes import load_dataset
    pairs = list(load_dataset(tiny_dataset, "train"))

    def cycle_mae(path):
        model = load_checkpoint(path)[0].model
        errs = []
        for p in pairs:
            back = translate(model, translate(model, p.hazy, HAZY_TO_CLEAR), CLEAR_TO_HAZY)
            errs.append(np.mean(np.abs(back - p.hazy)))
        return float(np.mean(errs))

    assert cycle_mae(tmp_path / "final.hzck") < cycle_mae(tmp_path / "ckpt_000000.hzck")
