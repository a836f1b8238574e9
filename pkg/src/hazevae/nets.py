"""Dense encoders, generators and discriminators for the two image domains.

Images travel through the networks as 1 x (H*W*3) rows in HWC order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

D_CLAMP = 1e-7

HAZY_TO_CLEAR = "hazy2clear"
CLEAR_TO_HAZY = "clear2hazy"
DIRECTIONS = (HAZY_TO_CLEAR, CLEAR_TO_HAZY)

# output heads
LINEAR = "linear"
TANH01 = "tanh01"
SIGMOID = "sigmoid"


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]
    output: str = LINEAR

    def __post_init__(self):
        w = tuple(int(x) for x in self.widths)
        if len(w) < 2 or any(x <= 0 for x in w):
            raise ValueError(f"architecture needs >= 2 positive layer widths, got {self.widths}")
        if self.output not in (LINEAR, TANH01, SIGMOID):
            raise ValueError(f"unknown output head {self.output!r}")
        object.__setattr__(self, "widths", w)

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]


@dataclass
class NetParams:
    arch: Architecture
    weights: list[Tensor]
    biases: list[Tensor]

    def __post_init__(self):
        w = self.arch.widths
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise ValueError(f"{len(self.weights)} weight / {len(self.biases)} bias blocks for {len(w) - 1} layers")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[k], w[k + 1]) or b.shape != (w[k + 1],):
                raise ValueError(f"layer {k}: got W{W.shape}, b{b.shape}, expected W{(w[k], w[k + 1])}, b{(w[k + 1],)}")

    def tensors(self) -> list[Tensor]:
        """Parameters in declared order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors())


def init_params(rng: np.random.Generator, arch: Architecture) -> NetParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-s, s, size=(fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return NetParams(arch, weights, biases)


def mlp_forward(params: NetParams, x) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != params.arch.n_in:
        raise ValueError(f"network expects input width {params.arch.n_in}, got shape {x.shape}")
    h = x
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add_row(ad.matmul(h, W), b)
        if k < last:
            h = ad.leaky_relu(h)
    head = params.arch.output
    if head == TANH01:
        h = ad.shift(ad.scale(ad.tanh(h), 0.5), 0.5)
    elif head == SIGMOID:
        h = ad.sigmoid(h)
    return h


def flatten_image(img) -> Tensor:
    if isinstance(img, Tensor):
        return img if img.ndim == 2 else ad.reshape(img, (1, img.size))
    arr = np.asarray(img, dtype=np.float64)
    return Tensor(arr.reshape(1, -1))


def encoder_forward(params: NetParams, image) -> Tensor:
    """Latent mean, shape 1 x L."""
    return mlp_forward(params, flatten_image(image))


def generator_forward(params: NetParams, z) -> Tensor:
    """Image row in [0, 1], shape 1 x (H*W*3)."""
    z = ad.as_tensor(z)
    if z.ndim == 1:
        z = ad.reshape(z, (1, z.shape[0]))
    if z.shape[-1] != params.arch.n_in:
        raise ValueError(f"generator expects latent dimension {params.arch.n_in}, got shape {z.shape}")
    return mlp_forward(params, z)


def discriminator_forward(params: NetParams, image) -> Tensor:
    """Probability that ``image`` is real, shape 1 x 1, strictly inside (0, 1)."""
    return mlp_forward(params, flatten_image(image))


def clamp_probability(p: Tensor) -> Tensor:
    return ad.clip(p, D_CLAMP, 1.0 - D_CLAMP)


@dataclass
class LatentCode:
    mean: Tensor
    noise: np.ndarray
    z: Tensor


def reparameterize(mean: Tensor, rng: np.random.Generator | None) -> LatentCode:
    """``z = mean + eta``, eta ~ N(0, I) held constant; ``rng=None`` means eta = 0."""
    mean = ad.as_tensor(mean)
    eta = np.zeros(mean.shape) if rng is None else rng.standard_normal(mean.shape)
    return LatentCode(mean, eta, ad.add(mean, Tensor(eta)))


@dataclass(frozen=True)
class ModelShape:
    image_size: int = 32
    latent_dim: int = 8
    enc_hidden: tuple[int, ...] = (512, 128)
    gen_hidden: tuple[int, ...] = (128, 512)
    dis_hidden: tuple[int, ...] = (256, 64)

    @property
    def pixels(self) -> int:
        return self.image_size * self.image_size * 3

    def encoder(self) -> Architecture:
        return Architecture((self.pixels, *self.enc_hidden, self.latent_dim), LINEAR)

    def generator(self) -> Architecture:
        return Architecture((self.latent_dim, *self.gen_hidden, self.pixels), TANH01)

    def discriminator(self) -> Architecture:
        return Architecture((self.pixels, *self.dis_hidden, 1), SIGMOID)


NET_NAMES = ("enc_i", "enc_j", "gen_i", "gen_j", "dis_i", "dis_j")


@dataclass
class HazeModel:
    """Six subnetworks; suffix ``_i`` is the hazy domain, ``_j`` the clear domain."""

    shape: ModelShape
    enc_i: NetParams
    enc_j: NetParams
    gen_i: NetParams
    gen_j: NetParams
    dis_i: NetParams
    dis_j: NetParams

    @classmethod
    def create(cls, shape: ModelShape, rng: np.random.Generator) -> "HazeModel":
        archs = {"enc": shape.encoder(), "gen": shape.generator(), "dis": shape.discriminator()}
        nets = {name: init_params(rng, archs[name[:3]]) for name in NET_NAMES}
        return cls(shape, **nets)

    def nets(self) -> dict[str, NetParams]:
        return {name: getattr(self, name) for name in NET_NAMES}

    def generator_side(self) -> list[Tensor]:
        return [t for name in ("enc_i", "enc_j", "gen_i", "gen_j") for t in getattr(self, name)]

    def discriminator_side(self) -> list[Tensor]:
        return [t for name in ("dis_i", "dis_j") for t in getattr(self, name)]

    def all_tensors(self) -> list[Tensor]:
        return [t for name in NET_NAMES for t in getattr(self, name)]


def translate(model: HazeModel | None, image, direction: str,
              rng: np.random.Generator | None = None) -> np.ndarray:
    """Map an H x W x 3 image across domains; ``rng=None`` is deterministic mode."""
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")
    if model is None:
        raise ValueError("translate needs an initialized model")
    img = np.asarray(image, dtype=np.float64)
    enc, gen = (model.enc_i, model.gen_j) if direction == HAZY_TO_CLEAR else (model.enc_j, model.gen_i)
    code = reparameterize(encoder_forward(enc, img), rng)
    return generator_forward(gen, code.z).data.reshape(img.shape)


__all__ = [
    "Architecture", "CLEAR_TO_HAZY", "D_CLAMP", "DIRECTIONS", "HAZY_TO_CLEAR", "HazeModel",
    "LatentCode", "ModelShape", "NET_NAMES", "NetParams", "clamp_probability", "discriminator_forward",
    "encoder_forward", "flatten_image", "generator_forward", "init_params", "mlp_forward",
    "reparameterize", "translate",
]

