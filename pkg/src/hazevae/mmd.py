"""Gaussian-kernel maximum mean discrepancy.

The estimators are written with autodiff primitives so the same code serves
as a training loss (Tensor in, Tensor out) and as a plain statistic (arrays
in, float out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel widths, stored as ``2 sigma^2``; several widths are averaged.

    Build with :meth:`single` / :meth:`mixture` from bandwidths sigma, or pass
    the ``2 sigma^2`` values directly.
    """

    two_sigma_sq: tuple[float, ...]

    def __post_init__(self):
        den = tuple(float(d) for d in np.atleast_1d(self.two_sigma_sq))
        if not den or not all(d > 0 and math.isfinite(d) for d in den):
            raise ValueError(f"kernel bandwidths must be positive and finite, got {self.two_sigma_sq}")
        object.__setattr__(self, "two_sigma_sq", den)

    @property
    def bandwidths(self) -> tuple[float, ...]:
        return tuple(math.sqrt(d / 2.0) for d in self.two_sigma_sq)

    @classmethod
    def single(cls, sigma: float) -> "KernelSpec":
        return cls.mixture((sigma,))

    @classmethod
    def mixture(cls, sigmas) -> "KernelSpec":
        sigmas = tuple(float(s) for s in sigmas)
        if not sigmas or not all(s > 0 for s in sigmas):
            raise ValueError(f"kernel bandwidths must be positive, got {sigmas}")
        return cls(tuple(2.0 * s * s for s in sigmas))

    @classmethod
    def for_training(cls, latent_dim: int) -> "KernelSpec":
        root = math.sqrt(latent_dim)
        return cls.mixture((0.5 * root, root, 2.0 * root))


def _rows(x) -> tuple[Tensor, bool]:
    is_tensor = isinstance(x, Tensor)
    t = x if is_tensor else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 1:
        t = ad.reshape(t, (t.shape[0], 1))
    if t.ndim != 2:
        raise ValueError(f"sample set must be m x L, got shape {t.shape}")
    if not np.all(np.isfinite(t.data)):
        raise ValueError("sample set contains non-finite entries")
    return t, is_tensor


def kernel_matrix(x: Tensor, y: Tensor, spec: KernelSpec) -> Tensor:
    d2 = ad.pairwise_sqdist(x, y)
    total = None
    for den in spec.two_sigma_sq:
        k = ad.exp(ad.scale(d2, -1.0 / den))
        total = k if total is None else ad.add(total, k)
    n = len(spec.two_sigma_sq)
    return total if n == 1 else ad.scale(total, 1.0 / n)


def gaussian_kernel(x, y, spec: KernelSpec) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError(f"gaussian_kernel: dimension mismatch {x.shape} vs {y.shape}")
    d2 = float(np.sum((x - y) ** 2))
    return float(np.mean([math.exp(-d2 / den) for den in spec.two_sigma_sq]))


def _off_diagonal_sum(k: Tensor) -> Tensor:
    m = k.shape[0]
    mask = Tensor(1.0 - np.eye(m))
    return ad.tsum(ad.mul(k, mask))


def mmd2_empirical(X, Y, spec: KernelSpec):
    """Squared MMD with unbiased within-sample sums and a full cross-sample sum.

    Returns a Tensor when either input is a Tensor, otherwise a float.
    """
    x, xt = _rows(X)
    y, yt = _rows(Y)
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ValueError(f"mmd2_empirical needs at least 2 samples per set, got m={m}, n={n}")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"mmd2_empirical: dimension mismatch {x.shape} vs {y.shape}")
    kxx = _off_diagonal_sum(kernel_matrix(x, x, spec))
    kyy = _off_diagonal_sum(kernel_matrix(y, y, spec))
    kxy = ad.tsum(kernel_matrix(x, y, spec))
    out = ad.add(ad.add(ad.scale(kxx, 1.0 / (m * (m - 1))), ad.scale(kyy, 1.0 / (n * (n - 1)))),
                 ad.scale(kxy, -2.0 / (m * n)))
    return out if (xt or yt) else out.item()


def _np_rows(X) -> np.ndarray:
    x = np.asarray(X, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def mmd2_biased(X, Y, spec: KernelSpec) -> float:
    """Squared distance between kernel mean embeddings (V-statistic, never negative)."""
    x, y = _np_rows(X), _np_rows(Y)
    if x.shape[0] < 1 or y.shape[0] < 1:
        raise ValueError("mmd2_biased needs non-empty sample sets")
    if x.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"mmd2_biased: dimension mismatch {x.shape} vs {y.shape}")

    def mean_k(a, b):
        # fsum is order independent, so permuted multisets give identical sums
        return math.fsum(kernel_matrix(Tensor(a), Tensor(b), spec).data.ravel()) / (len(a) * len(b))

    value = mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y)
    return max(0.0, value)


def median_heuristic(points: np.ndarray) -> KernelSpec:
    pts = _np_rows(points)
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)[np.triu_indices(len(pts), k=1)]
    med = float(np.median(d2)) if d2.size else 0.0
    if med <= 0.0:
        return KernelSpec.single(1.0)
    # sigma^2 = med / 2, i.e. 2 sigma^2 = med
    return KernelSpec((med,))


def sample_prior(rng: np.random.Generator, m: int, dim: int) -> np.ndarray:
    return rng.standard_normal((m, dim))


def mmd_to_prior(latents, rng: np.random.Generator, spec: KernelSpec):
    """MMD^2 between ``latents`` (m x L) and m fresh standard-normal draws."""
    x, _ = _rows(latents)
    if x.shape[0] < 2:
        raise ValueError(f"mmd_to_prior needs at least 2 latents, got {x.shape[0]}")
    prior = sample_prior(rng, x.shape[0], x.shape[1])
    return mmd2_empirical(latents if isinstance(latents, Tensor) else x.data, prior, spec)


def brute_force_mmd2(X: Sequence, Y: Sequence, spec: KernelSpec) -> float:
    """Naive double-loop evaluation of the same estimator; an independent reference."""
    X = [np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in X]
    Y = [np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in Y]
    m, n = len(X), len(Y)
    sxx = sum(gaussian_kernel(X[i], X[j], spec) for i in range(m) for j in range(m) if i != j)
    syy = sum(gaussian_kernel(Y[i], Y[j], spec) for i in range(n) for j in range(n) if i != j)
    sxy = sum(gaussian_kernel(X[i], Y[j], spec) for i in range(m) for j in range(n))
    return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * sxy / (m * n)
