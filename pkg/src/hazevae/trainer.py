"""Alternating min-max training of the six subnetworks.

One step sees one hazy and one clear image, drawn independently (unpaired).
The discriminators take one Adam ascent step on their adversarial terms with
the fakes held fixed; the encoders and generators then take one Adam descent
step on the VAE, generator-side adversarial and cycle terms with the
discriminators frozen. The generator-side adversarial terms are re-evaluated
with the freshly updated discriminators; everything else comes from the
step's single forward pass.

Latent means of the real images are kept in per-domain FIFO buffers; an MMD
term is evaluated on the live latent stacked with the buffered ones, and is
skipped (reported as 0) while the stack has fewer than 2 rows.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import os
import struct
import zlib
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .losses import (TERM_NAMES, LossReport, LossWeights, NonFiniteLossError, cycle_loss,
                     gan_loss_discriminator, gan_loss_generator, total_loss, vae_loss)
from .mmd import KernelSpec
from .nets import (NET_NAMES, HazeModel, ModelShape, encoder_forward, flatten_image,
                   generator_forward, reparameterize)
from .scenes import load_dataset, read_manifest

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"HZCK"
CKPT_VERSION = 1
METRICS_HEADER = ["iter", *TERM_NAMES, "total"]


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    data: str = ""
    out: str = "run"
    iterations: int = 2000
    ckpt_every: int = 500
    log_every: int = 50
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_m: float = 0.01
    lambda_adv: float = 1.0
    lambda_recon: float = 10.0
    buffer: int = 64
    kernel: tuple[float, ...] | None = None  # 2 sigma^2 values; None -> widths {0.5, 1, 2} * sqrt(L)
    seed: int = 0
    image_size: int = 32
    latent_dim: int = 8
    deterministic_eta: bool = False
    enc_hidden: tuple[int, ...] = (512, 128)
    gen_hidden: tuple[int, ...] = (128, 512)
    dis_hidden: tuple[int, ...] = (256, 64)

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if self.buffer < 2:
            raise ValueError(f"latent buffer capacity must be >= 2, got {self.buffer}")
        if self.ckpt_every <= 0 or self.log_every <= 0:
            raise ValueError("checkpoint and logging intervals must be positive")
        if self.ckpt_every % self.log_every:
            raise ValueError(f"checkpoint interval {self.ckpt_every} must be a multiple of the logging "
                             f"interval {self.log_every}")
        self.enc_hidden = tuple(int(w) for w in self.enc_hidden)
        self.gen_hidden = tuple(int(w) for w in self.gen_hidden)
        self.dis_hidden = tuple(int(w) for w in self.dis_hidden)
        if self.kernel is not None:
            self.kernel = tuple(float(k) for k in self.kernel)
        LossWeights(self.lambda_m, self.lambda_adv, self.lambda_recon)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_m, self.lambda_adv, self.lambda_recon)

    @property
    def kernel_spec(self) -> KernelSpec:
        if self.kernel is None:
            return KernelSpec.for_training(self.latent_dim)
        return KernelSpec(self.kernel)

    @property
    def model_shape(self) -> ModelShape:
        return ModelShape(self.image_size, self.latent_dim, self.enc_hidden, self.gen_hidden, self.dis_hidden)

    def echo(self) -> dict:
        """Everything but filesystem locations, so reruns elsewhere stay byte-identical."""
        d = asdict(self)
        del d["data"], d["out"]
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_echo(cls, d: dict, **paths) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
        kw.update(paths)
        return cls(**kw)


@dataclass
class TrainState:
    model: HazeModel
    adam: dict[str, AdamState]
    buffers: dict[str, deque]
    rng: np.random.Generator
    iteration: int = 0
    history: list[LossReport] = field(default_factory=list)


def init_state(config: TrainConfig) -> TrainState:
    init_ss, stream_ss = np.random.SeedSequence(config.seed).spawn(2)
    model = HazeModel.create(config.model_shape, np.random.default_rng(init_ss))
    hyper = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    adam = {name: AdamState.for_params(net.tensors(), **hyper) for name, net in model.nets().items()}
    buffers = {"i": deque(maxlen=config.buffer), "j": deque(maxlen=config.buffer)}
    return TrainState(model, adam, buffers, np.random.default_rng(stream_ss))


@contextlib.contextmanager
def frozen(tensors: Iterable[Tensor]):
    """Temporarily stop recording gradients for ``tensors``."""
    tensors = list(tensors)
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, s in zip(tensors, saved):
            t.requires_grad = s


def _latent_set(live: Tensor, older: list[np.ndarray]) -> Tensor | None:
    if not older:
        return None
    return ad.concat_rows([live, Tensor(np.stack(older))])


def _older(buf: deque, capacity: int) -> list[np.ndarray]:
    items = list(buf)
    return items[max(0, len(items) - (capacity - 1)):]


@dataclass
class StepTerms:
    """Loss tensors of one forward pass plus the real-image latent means."""

    vae_i: Tensor
    vae_j: Tensor
    gan_i: Tensor
    gan_j: Tensor
    cc_i: Tensor
    cc_j: Tensor
    adversarial: Tensor  # non-saturating generator-side terms
    mu_i: Tensor
    mu_j: Tensor
    fake_i: Tensor  # x_{j->i}, a translated hazy image
    fake_j: Tensor  # x_{i->j}, a translated clear image

    def objective(self) -> Tensor:
        """The weighted six-term objective as one scalar."""
        out = self.vae_i
        for t in (self.vae_j, self.gan_i, self.gan_j, self.cc_i, self.cc_j):
            out = ad.add(out, t)
        return out


def forward_terms(model: HazeModel, hazy, clear, older_i: list[np.ndarray], older_j: list[np.ndarray],
                  config: TrainConfig, rng: np.random.Generator, detach_fake: bool = True) -> StepTerms:
    """Run every stream (reconstruction, translation, cycle) and build all loss terms.

    ``older_*`` are buffered latent means stacked under the live latent for
    the MMD terms. With ``detach_fake`` the discriminator terms see the fakes
    as constants and the generator-side terms are built with the
    discriminators frozen, which is how a training step differentiates them.
    """
    weights, spec = config.weights, config.kernel_spec
    noise = None if config.deterministic_eta else rng
    x_i, x_j = flatten_image(hazy), flatten_image(clear)

    mu_i = encoder_forward(model.enc_i, x_i)
    mu_j = encoder_forward(model.enc_j, x_j)
    z_i = reparameterize(mu_i, noise).z
    z_j = reparameterize(mu_j, noise).z
    x_ii = generator_forward(model.gen_i, z_i)
    x_jj = generator_forward(model.gen_j, z_j)
    x_ij = generator_forward(model.gen_j, z_i)
    x_ji = generator_forward(model.gen_i, z_j)
    mu_ij = encoder_forward(model.enc_j, x_ij)
    mu_ji = encoder_forward(model.enc_i, x_ji)
    x_iji = generator_forward(model.gen_i, reparameterize(mu_ij, noise).z)
    x_jij = generator_forward(model.gen_j, reparameterize(mu_ji, noise).z)

    vae_i = vae_loss(_latent_set(mu_i, older_i), x_ii, x_i, weights, spec, rng)
    vae_j = vae_loss(_latent_set(mu_j, older_j), x_jj, x_j, weights, spec, rng)
    cc_i = cycle_loss(x_i, x_iji, _latent_set(mu_i, older_i), _latent_set(mu_ij, older_j), weights, spec, rng)
    cc_j = cycle_loss(x_j, x_jij, _latent_set(mu_j, older_j), _latent_set(mu_ji, older_i), weights, spec, rng)

    gan_i = gan_loss_discriminator(model.dis_i, x_i, x_ji, weights, detach_fake)
    gan_j = gan_loss_discriminator(model.dis_j, x_j, x_ij, weights, detach_fake)
    if detach_fake:
        adv = adversarial_terms(model, x_ji, x_ij, weights)
    else:
        adv = ad.add(gan_loss_generator(model.dis_i, x_ji, weights),
                     gan_loss_generator(model.dis_j, x_ij, weights))
    return StepTerms(vae_i, vae_j, gan_i, gan_j, cc_i, cc_j, adv, mu_i, mu_j, x_ji, x_ij)


def adversarial_terms(model: HazeModel, fake_i: Tensor, fake_j: Tensor, weights: LossWeights) -> Tensor:
    """Generator-side terms ``-log D_I(fake_i) - log D_J(fake_j)``, discriminators frozen."""
    with frozen(model.discriminator_side()):
        return ad.add(gan_loss_generator(model.dis_i, fake_i, weights),
                      gan_loss_generator(model.dis_j, fake_j, weights))


def _check_grads(grads: list[np.ndarray], offset: int = 0) -> None:
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise ad.NonFiniteGradientError(f"non-finite gradient in parameter block {offset + k}")


def _snapshot(groups: dict[str, list[Tensor]], adam: dict[str, AdamState]):
    return ({n: [t.data.copy() for t in ts] for n, ts in groups.items()},
            {n: ([m.copy() for m in adam[n].m], [v.copy() for v in adam[n].v], adam[n].t) for n in groups})


def _restore(groups: dict[str, list[Tensor]], adam: dict[str, AdamState], snap) -> None:
    params, moments = snap
    for n, ts in groups.items():
        for t, saved in zip(ts, params[n]):
            t.data[...] = saved
        adam[n].m, adam[n].v, adam[n].t = moments[n]


def train_step(state: TrainState, hazy: np.ndarray, clear: np.ndarray, config: TrainConfig,
               hook: Callable[[str, TrainState], None] | None = None) -> LossReport:
    """One alternating update; ``hook(phase, state)`` runs after each phase.

    On a non-finite loss or gradient nothing is changed (random stream
    included) and the error propagates.
    """
    model, rng = state.model, state.rng
    rng_snapshot = rng.bit_generator.state
    d_params = {n: getattr(model, n).tensors() for n in ("dis_i", "dis_j")}
    g_params = {n: getattr(model, n).tensors() for n in ("enc_i", "enc_j", "gen_i", "gen_j")}
    d_flat = [t for ts in d_params.values() for t in ts]
    g_flat = [t for ts in g_params.values() for t in ts]
    try:
        older_i = _older(state.buffers["i"], config.buffer)
        older_j = _older(state.buffers["j"], config.buffer)
        terms = forward_terms(model, hazy, clear, older_i, older_j, config, rng)
        report = total_loss({name: getattr(terms, name).item() for name in TERM_NAMES}, state.iteration + 1)
        d_grads = ad.grad(ad.neg(ad.add(terms.gan_i, terms.gan_j)), d_flat)
        _check_grads(d_grads)
    except Exception:
        rng.bit_generator.state = rng_snapshot
        raise

    d_saved = _snapshot(d_params, state.adam)
    _apply(d_params, d_grads, state.adam)
    try:
        if hook:
            hook("discriminator", state)
        # the generator side answers the discriminators as they stand after their step
        adv = adversarial_terms(model, terms.fake_i, terms.fake_j, config.weights)
        if not np.isfinite(adv.item()):
            raise NonFiniteLossError("generator_adversarial", adv.item())
        g_objective = ad.add(ad.add(ad.add(terms.vae_i, terms.vae_j), ad.add(terms.cc_i, terms.cc_j)), adv)
        g_grads = ad.grad(g_objective, g_flat)
        _check_grads(g_grads, len(d_flat))
    except Exception:
        _restore(d_params, state.adam, d_saved)
        rng.bit_generator.state = rng_snapshot
        raise
    _apply(g_params, g_grads, state.adam)
    if hook:
        hook("generator", state)

    state.buffers["i"].append(terms.mu_i.data[0].copy())
    state.buffers["j"].append(terms.mu_j.data[0].copy())
    state.iteration += 1
    state.history.append(report)
    for t in model.all_tensors():
        t.grad = None
    return report


def _apply(groups: dict[str, list[Tensor]], grads: list[np.ndarray], adam: dict[str, AdamState]) -> None:
    k = 0
    for name, tensors in groups.items():
        adam_step(tensors, grads[k:k + len(tensors)], adam[name])
        k += len(tensors)


# ---------------------------------------------------------------------------
# checkpoints


def _blocks(state: TrainState, latent_dim: int) -> list[tuple[str, np.ndarray]]:
    out = []
    for name, net in state.model.nets().items():
        for k, t in enumerate(net.tensors()):
            out.append((f"{name}/p{k}", t.data))
    for name, st in state.adam.items():
        for k, (m, v) in enumerate(zip(st.m, st.v)):
            out.append((f"adam/{name}/m{k}", m))
            out.append((f"adam/{name}/v{k}", v))
    for dom in ("i", "j"):
        buf = state.buffers[dom]
        arr = np.stack(list(buf)) if buf else np.zeros((0, latent_dim))
        out.append((f"buffer/{dom}", arr))
    hist = np.array([r.row() for r in state.history], dtype=np.float64).reshape(-1, len(TERM_NAMES) + 1)
    out.append(("history", hist))
    return out


def checkpoint_bytes(state: TrainState, config: TrainConfig) -> bytes:
    blocks = _blocks(state, config.latent_dim)
    payloads = [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in blocks]
    header = {
        "config": config.echo(),
        "iteration": state.iteration,
        "rng": state.rng.bit_generator.state,
        "adam_t": {name: st.t for name, st in state.adam.items()},
        "blocks": [{"name": n, "shape": list(a.shape), "crc32": zlib.crc32(p)}
                   for (n, a), p in zip(blocks, payloads)],
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hdr)) + hdr + b"".join(payloads)
    return body + hashlib.sha256(body).digest()


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            tmp.unlink()
        raise


def save_checkpoint(state: TrainState, config: TrainConfig, path) -> Path:
    path = Path(path)
    _atomic_write(path, checkpoint_bytes(state, config))
    return path


def load_checkpoint(path, **paths) -> tuple[TrainState, TrainConfig]:
    """Read an HZCK file; ``paths`` (data=, out=) fill the config fields the file does not store."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 + 32 or raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not an HZCK checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, this build reads version {CKPT_VERSION}")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated file)")
    header = json.loads(body[12:12 + hlen])
    config = TrainConfig.from_echo(header["config"], **paths)
    state = init_state(config)

    arrays = {}
    offset = 12 + hlen
    for blk in header["blocks"]:
        n = int(np.prod(blk["shape"])) * 8
        chunk = body[offset:offset + n]
        if len(chunk) != n or zlib.crc32(chunk) != blk["crc32"]:
            raise CheckpointError(f"{path}: block {blk['name']} is damaged")
        arrays[blk["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(blk["shape"]).astype(np.float64)
        offset += n
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes after the last block")

    expected = [name for name, _ in _blocks(state, config.latent_dim)]
    if [b["name"] for b in header["blocks"]] != expected:
        raise CheckpointError(f"{path}: block layout does not match the configured architecture")
    for name, net in state.model.nets().items():
        for k, t in enumerate(net.tensors()):
            src = arrays[f"{name}/p{k}"]
            if src.shape != t.shape:
                raise CheckpointError(f"{path}: {name}/p{k} has shape {src.shape}, expected {t.shape}")
            t.data = src.copy()
    for name, st in state.adam.items():
        st.m = [arrays[f"adam/{name}/m{k}"].copy() for k in range(len(st.m))]
        st.v = [arrays[f"adam/{name}/v{k}"].copy() for k in range(len(st.v))]
        st.t = int(header["adam_t"][name])
    for dom in ("i", "j"):
        state.buffers[dom].extend(row.copy() for row in arrays[f"buffer/{dom}"])
    hist = arrays["history"]
    state.history = [LossReport(k + 1, *row[:-1], total=row[-1]) for k, row in enumerate(hist.tolist())]
    state.iteration = int(header["iteration"])
    if state.iteration != len(state.history):
        raise CheckpointError(f"{path}: iteration {state.iteration} but {len(state.history)} history rows")
    state.rng.bit_generator.state = header["rng"]
    return state, config


def write_metrics(history: list[LossReport], path) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in history:
        w.writerow([r.iteration, *(repr(v) for v in r.row())])
    _atomic_write(Path(path), buf.getvalue().encode())
    return Path(path)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: (int(v) if k == "iter" else float(v)) for k, v in row.items()} for row in csv.DictReader(f)]


# ---------------------------------------------------------------------------
# training loop


def load_training_images(data) -> tuple[np.ndarray, np.ndarray]:
    """Hazy and clear images of the train split, each N x H x W x 3."""
    pairs = list(load_dataset(read_manifest(data), "train"))
    if not pairs:
        raise ValueError(f"{data}: empty training split")
    return np.stack([p.hazy for p in pairs]), np.stack([p.clear for p in pairs])


def epoch_indices(seed: int, iteration: int, n: int) -> tuple[int, int]:
    """Hazy and clear sample indices for a 0-based iteration; each domain has its own per-epoch permutation."""
    epoch, pos = divmod(iteration, n)
    hazy = np.random.default_rng([seed, epoch, 0]).permutation(n)[pos]
    clear = np.random.default_rng([seed, epoch, 1]).permutation(n)[pos]
    return int(hazy), int(clear)


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:06d}.hzck"


def train(config: TrainConfig, resume=None, progress: Callable[[str], None] | None = None) -> Path:
    """Run (or resume) training; returns the final checkpoint path.

    Writes ``ckpt_NNNNNN.hzck`` at iteration 0 (fresh runs), every
    ``ckpt_every`` iterations, ``final.hzck`` at the end, and ``metrics.csv``
    alongside each checkpoint.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    hazy, clear = load_training_images(config.data)
    if hazy.shape[1] != config.image_size:
        config = replace(config, image_size=int(hazy.shape[1]))

    if resume is not None:
        state, saved = load_checkpoint(resume)
        if saved.model_shape != config.model_shape:
            raise CheckpointError(f"{resume}: architecture {saved.model_shape} differs from requested {config.model_shape}")
        for st in state.adam.values():
            st.lr, st.beta1, st.beta2 = config.lr, config.beta1, config.beta2
    else:
        state = init_state(config)
        save_checkpoint(state, config, out / checkpoint_name(0))

    n = len(hazy)
    while state.iteration < config.iterations:
        hi, ci = epoch_indices(config.seed, state.iteration, n)
        report = train_step(state, hazy[hi], clear[ci], config)
        it = state.iteration
        if progress and it % config.log_every == 0:
            progress(f"iter {it:6d}  total {report.total:.6f}")
        if it % config.ckpt_every == 0:
            save_checkpoint(state, config, out / checkpoint_name(it))
            write_metrics(state.history, out / "metrics.csv")
    final = save_checkpoint(state, config, out / "final.hzck")
    write_metrics(state.history, out / "metrics.csv")
    return final
