"""Self-check suites behind the ``mmd-check`` and ``grad-check`` commands.

Each check returns a :class:`CheckResult`; the suites never raise on a
failed comparison, they report it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, numeric_grad, relative_error
from .mmd import KernelSpec, brute_force_mmd2, mmd2_biased, mmd2_empirical
from .nets import HazeModel
from .trainer import TrainConfig, forward_terms

FD_STEP = 1e-5
GRAD_RTOL = 1e-4
MMD_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    coordinates: int = 0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# MMD


def run_mmd_checks(n_random: int = 200, seed: int = 0) -> list[CheckResult]:
    results = []
    one = KernelSpec((1.0,))  # 2 sigma^2 = 1

    v = mmd2_empirical([[0.3, -1.2], [0.3, -1.2]], [[0.3, -1.2], [0.3, -1.2]], one)
    results.append(CheckResult("identical constant sets", v == 0.0, f"value {v!r}, expected 0"))

    v = mmd2_empirical([0.0, 1.0], [0.0, 1.0], one)
    want = math.exp(-1.0) - 1.0
    results.append(CheckResult("X={0,1}, Y={0,1}, 2s^2=1", v == want, f"value {v!r}, expected e^-1 - 1 = {want!r}"))

    v = mmd2_biased([0.0], [1.0], one)
    want = 2.0 - 2.0 * math.exp(-1.0)
    results.append(CheckResult("biased X={0}, Y={1}", abs(v - want) <= MMD_TOL, f"value {v!r}, expected {want!r}"))

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_random):
        m, n, dim = int(rng.integers(2, 9)), int(rng.integers(2, 9)), int(rng.integers(1, 5))
        X = rng.normal(size=(m, dim))
        Y = rng.normal(loc=rng.uniform(-1, 1), size=(n, dim))
        spec = KernelSpec.mixture(rng.uniform(0.3, 3.0, size=int(rng.integers(1, 4))))
        worst = max(worst, abs(mmd2_empirical(X, Y, spec) - brute_force_mmd2(X, Y, spec)))
    results.append(CheckResult(f"vectorized vs double-loop, {n_random} random sets (m, n <= 8)",
                               worst <= MMD_TOL, f"max |diff| {worst:.3e} (tol {MMD_TOL:g})"))
    return results


# ---------------------------------------------------------------------------
# gradients


def _check_function(name: str, build: Callable[[], Tensor], leaves: list[Tensor], rng: np.random.Generator,
                    max_coords: int | None = None) -> CheckResult:
    """Compare backward() against central differences on (a sample of) every leaf coordinate."""
    for t in leaves:
        t.grad = None
    build().backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]

    coords = [(k, idx) for k, t in enumerate(leaves) for idx in np.ndindex(t.shape)]
    if max_coords is not None and len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    for k, idx in coords:
        num = numeric_grad(lambda: build().item(), leaves[k].data, idx, FD_STEP)
        worst = max(worst, relative_error(analytic[k][idx], num))
    return CheckResult(name, worst <= GRAD_RTOL, f"{len(coords)} coords, max rel err {worst:.2e}", len(coords))


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.tsum(ad.mul(out, Tensor(weights)))


def _away_from(x: np.ndarray, kinks, margin: float = 1e-2) -> np.ndarray:
    """Nudge entries off non-differentiable points so central differences do not straddle them."""
    x = np.array(x, dtype=np.float64)
    for kink in kinks:
        close = np.abs(x - kink) < margin
        x[close] = kink + np.where(x[close] >= kink, 2 * margin, -2 * margin)
    return x


def primitive_checks(rng: np.random.Generator, max_dim: int = 16) -> list[CheckResult]:
    def shape2():
        return int(rng.integers(1, max_dim + 1)), int(rng.integers(1, max_dim + 1))

    out = []

    def unary(name, op, make=lambda s: rng.normal(size=s)):
        s = shape2()
        x = Tensor(make(s), requires_grad=True)
        w = rng.normal(size=s)
        out.append(_check_function(name, lambda: _weighted_sum(op(x), w), [x], rng))

    def binary(name, op):
        s = shape2()
        a, b = Tensor(rng.normal(size=s), True), Tensor(rng.normal(size=s), True)
        w = rng.normal(size=s)
        out.append(_check_function(name, lambda: _weighted_sum(op(a, b), w), [a, b], rng))

    binary("add", ad.add)
    binary("subtract", ad.sub)
    binary("multiply", ad.mul)
    unary("negate", ad.neg)
    unary("exp", ad.exp)
    unary("log", ad.log, lambda s: rng.uniform(0.2, 3.0, size=s))
    unary("square", ad.square)
    unary("leaky-rectifier", ad.leaky_relu, lambda s: _away_from(rng.normal(size=s), [0.0]))
    unary("tanh", ad.tanh)
    unary("sigmoid", ad.sigmoid, lambda s: rng.normal(scale=3.0, size=s))
    unary("scale", lambda x: ad.scale(x, -1.7))
    unary("shift", lambda x: ad.shift(x, 0.3))
    unary("clip", lambda x: ad.clip(x, -0.5, 0.5),
          lambda s: _away_from(rng.uniform(-1.0, 1.0, size=s), [-0.5, 0.5]))

    s = shape2()
    x = Tensor(rng.normal(size=s), True)
    out.append(_check_function("sum", lambda: ad.scale(ad.tsum(x), 1.3), [x], rng))
    out.append(_check_function("mean", lambda: ad.scale(ad.mean(x), 1.3), [x], rng))

    m, k = shape2()
    n = int(rng.integers(1, max_dim + 1))
    a, b = Tensor(rng.normal(size=(m, k)), True), Tensor(rng.normal(size=(k, n)), True)
    w = rng.normal(size=(m, n))
    out.append(_check_function("matrix-multiply", lambda: _weighted_sum(ad.matmul(a, b), w), [a, b], rng))

    m, n = shape2()
    xb, bb = Tensor(rng.normal(size=(m, n)), True), Tensor(rng.normal(size=n), True)
    w = rng.normal(size=(m, n))
    out.append(_check_function("broadcast-add", lambda: _weighted_sum(ad.add_row(xb, bb), w), [xb, bb], rng))

    m, n = shape2()
    dim = int(rng.integers(1, max_dim + 1))
    px, py = Tensor(rng.normal(size=(m, dim)), True), Tensor(rng.normal(size=(n, dim)), True)
    w = rng.normal(size=(m, n))
    out.append(_check_function("pairwise-squared-distance",
                               lambda: _weighted_sum(ad.pairwise_sqdist(px, py), w), [px, py], rng))

    m1, n = shape2()
    m2 = int(rng.integers(1, max_dim + 1))
    c1, c2 = Tensor(rng.normal(size=(m1, n)), True), Tensor(rng.normal(size=(m2, n)), True)
    w = rng.normal(size=(m1 + m2, n))
    out.append(_check_function("concat-rows", lambda: _weighted_sum(ad.concat_rows([c1, c2]), w), [c1, c2], rng))

    m, n = shape2()
    r = Tensor(rng.normal(size=(m, n)), True)
    w = rng.normal(size=(n, m))
    out.append(_check_function("reshape", lambda: _weighted_sum(ad.reshape(r, (n, m)), w), [r], rng))

    # composite matmul -> tanh -> mean
    m, k = shape2()
    n = int(rng.integers(1, max_dim + 1))
    a2, b2 = Tensor(rng.normal(size=(m, k)), True), Tensor(rng.normal(size=(k, n)) / math.sqrt(k), True)
    out.append(_check_function("composite matmul-tanh-mean", lambda: ad.mean(ad.tanh(ad.matmul(a2, b2))),
                               [a2, b2], rng))
    return out


def objective_check(seed: int = 0, n_coords: int = 600, image_size: int = 8, latent_dim: int = 4
                    ) -> CheckResult:
    """Full six-term objective (every network, fakes not detached) vs central differences."""
    rng = np.random.default_rng(seed)
    config = TrainConfig(image_size=image_size, latent_dim=latent_dim, buffer=8,
                         enc_hidden=(16, 8), gen_hidden=(8, 16), dis_hidden=(12, 6), iterations=1)
    model = HazeModel.create(config.model_shape, rng)
    hazy = rng.uniform(size=(image_size, image_size, 3))
    clear = rng.uniform(size=(image_size, image_size, 3))
    older_i = list(rng.normal(size=(5, latent_dim)))
    older_j = list(rng.normal(size=(5, latent_dim)))
    stream = int(rng.integers(2**31))

    def build():
        terms = forward_terms(model, hazy, clear, older_i, older_j, config, np.random.default_rng(stream),
                              detach_fake=False)
        return terms.objective()

    return _check_function(f"full objective ({image_size}x{image_size} images, L={latent_dim})",
                           build, model.all_tensors(), rng, max_coords=n_coords)


def run_grad_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return primitive_checks(rng) + [objective_check(seed)]
