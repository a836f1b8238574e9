"""Loss terms of the joint synthesis/dehazing objective.

Reconstruction log-likelihoods are realized as mean squared error (fixed
variance Gaussian decoder, constants dropped). MMD terms run on latent sample
sets, because a single latent per step cannot feed the estimator.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mmd import KernelSpec, mmd_to_prior
from .nets import NetParams, clamp_probability, discriminator_forward, flatten_image

TERM_NAMES = ("vae_i", "vae_j", "gan_i", "gan_j", "cc_i", "cc_j")


@dataclass(frozen=True)
class LossWeights:
    lambda_m: float = 0.01
    lambda_adv: float = 1.0
    lambda_recon: float = 10.0

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not (val >= 0 and math.isfinite(val)):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {val}")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value):
        super().__init__(f"loss term {term!r} is not finite ({value!r})")
        self.term = term


def _as_row(x) -> Tensor:
    return flatten_image(x)


def reconstruction_error(original, reconstruction) -> Tensor:
    """Mean squared error over all pixels."""
    x, xh = _as_row(original), _as_row(reconstruction)
    if x.shape != xh.shape:
        raise ValueError(f"reconstruction: shape mismatch {x.shape} vs {xh.shape}")
    return ad.mean(ad.square(ad.sub(x, xh)))


def _mmd_term(latents: Tensor | None, weights: LossWeights, spec: KernelSpec, rng) -> Tensor | None:
    if latents is None:
        return None
    if latents.shape[0] < 2:
        raise ValueError(f"latent buffer holds {latents.shape[0]} entries; the MMD term needs at least 2")
    return ad.scale(mmd_to_prior(latents, rng, spec), weights.lambda_m)


def vae_loss(latents: Tensor | None, reconstruction, original, weights: LossWeights,
             spec: KernelSpec, rng: np.random.Generator) -> Tensor:
    """``lambda_m MMD(latents || N(0, I)) + lambda_recon MSE(original, reconstruction)``.

    ``latents=None`` drops the MMD part (buffer warm-up).
    """
    recon = ad.scale(reconstruction_error(original, reconstruction), weights.lambda_recon)
    mmd = _mmd_term(latents, weights, spec, rng)
    return recon if mmd is None else ad.add(mmd, recon)


def cycle_loss(source, twice_translated, first_hop: Tensor | None, second_hop: Tensor | None,
               weights: LossWeights, spec: KernelSpec, rng: np.random.Generator) -> Tensor:
    """MMD on both hops' latents plus reconstruction of the source from the round trip."""
    total = ad.scale(reconstruction_error(source, twice_translated), weights.lambda_recon)
    for latents in (first_hop, second_hop):
        term = _mmd_term(latents, weights, spec, rng)
        if term is not None:
            total = ad.add(term, total)
    return total


def _log_d(d_params: NetParams, image) -> Tensor:
    return ad.log(clamp_probability(discriminator_forward(d_params, image)))


def _log_one_minus_d(d_params: NetParams, image) -> Tensor:
    return ad.log(ad.shift(ad.neg(clamp_probability(discriminator_forward(d_params, image))), 1.0))


def gan_loss_discriminator(d_params: NetParams, real, fake, weights: LossWeights,
                           detach_fake: bool = True) -> Tensor:
    """``lambda_adv [log D(real) + log(1 - D(fake))]``, the value D ascends.

    The fake image is cut from the graph unless ``detach_fake`` is False (used
    when differentiating the full objective w.r.t. every network).
    """
    fake = _as_row(fake)
    if detach_fake:
        fake = fake.detach()
    value = ad.add(_log_d(d_params, real), _log_one_minus_d(d_params, fake))
    return ad.scale(ad.reshape(value, ()), weights.lambda_adv)


def gan_loss_generator(d_params: NetParams, fake, weights: LossWeights) -> Tensor:
    """Non-saturating generator loss ``-lambda_adv log D(fake)``."""
    return ad.scale(ad.reshape(_log_d(d_params, fake), ()), -weights.lambda_adv)


@dataclass(frozen=True)
class LossReport:
    iteration: int
    vae_i: float
    vae_j: float
    gan_i: float
    gan_j: float
    cc_i: float
    cc_j: float
    total: float

    def terms(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in TERM_NAMES}

    def row(self) -> list[float]:
        return [getattr(self, name) for name in TERM_NAMES] + [self.total]


def total_loss(terms: dict[str, float], iteration: int = 0) -> LossReport:
    """Collect the six named term values; total is their correctly rounded sum."""
    missing = set(TERM_NAMES) - set(terms)
    if missing:
        raise ValueError(f"missing loss terms: {sorted(missing)}")
    values = {}
    for name in TERM_NAMES:
        v = terms[name]
        v = v.item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)
        values[name] = v
    return LossReport(iteration, **values, total=math.fsum(values.values()))
