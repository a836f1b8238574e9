"""Command-line front end: ``hazevae <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Concurrent
invocations must not share an output directory; nothing is locked.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checks import run_grad_checks, run_mmd_checks
from .metrics import DEHAZING, SYNTHESIS, evaluate
from .nets import CLEAR_TO_HAZY, HAZY_TO_CLEAR, translate
from .scenes import DEFAULT_SIZE, build_dataset, read_png, write_png
from .trainer import TrainConfig, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

_DEFAULTS = TrainConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route it through exit code 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sub(subs, name: str, help: str) -> argparse.ArgumentParser:
    return subs.add_parser(name, help=help, description=help,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hazevae", description="Joint haze synthesis and dehazing with coupled VAE-GANs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    subs.required = True

    g = _sub(subs, "gen-data", "render a procedural clear/depth/hazy dataset with a 3:1 train/test split")
    g.add_argument("--count", type=int, default=80, help="number of scenes (>= 8)")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--size", type=int, default=DEFAULT_SIZE, help="image side length in pixels")
    g.add_argument("--out", required=True, help="dataset directory")

    t = _sub(subs, "train", "train both VAE-GANs on a generated dataset")
    t.add_argument("--data", required=True, help="dataset directory (holds manifest.json)")
    t.add_argument("--out", required=True, help="run directory for checkpoints and metrics.csv")
    t.add_argument("--iters", type=int, default=_DEFAULTS.iterations, help="total iterations (batch size 1)")
    t.add_argument("--seed", type=int, default=_DEFAULTS.seed, help="seed for initialization and sampling")
    t.add_argument("--lr", type=float, default=_DEFAULTS.lr, help="Adam learning rate")
    t.add_argument("--beta1", type=float, default=_DEFAULTS.beta1, help="Adam first-moment decay")
    t.add_argument("--beta2", type=float, default=_DEFAULTS.beta2, help="Adam second-moment decay")
    t.add_argument("--lambda-m", type=float, default=_DEFAULTS.lambda_m, help="MMD weight")
    t.add_argument("--lambda-adv", type=float, default=_DEFAULTS.lambda_adv, help="adversarial weight")
    t.add_argument("--lambda-recon", type=float, default=_DEFAULTS.lambda_recon, help="reconstruction weight")
    t.add_argument("--buffer", type=int, default=_DEFAULTS.buffer, help="latent buffer capacity per domain")
    t.add_argument("--latent-dim", type=int, default=_DEFAULTS.latent_dim, help="latent dimension L")
    t.add_argument("--ckpt-every", type=int, default=_DEFAULTS.ckpt_every, help="checkpoint interval")
    t.add_argument("--log-every", type=int, default=_DEFAULTS.log_every, help="progress line interval")
    t.add_argument("--deterministic-eta", action="store_true", help="train with eta = 0 (no latent noise)")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")

    for name, what in (("hazify", "add haze to clear images (clear -> hazy)"),
                       ("dehaze", "remove haze from hazy images (hazy -> clear)")):
        s = _sub(subs, name, what)
        s.add_argument("--ckpt", required=True, help="HZCK checkpoint")
        s.add_argument("--in", dest="inp", required=True, help="PNG file or directory of PNGs")
        s.add_argument("--out", required=True, help="output PNG file, or directory when --in is a directory")
        if name == "hazify":
            s.add_argument("--deterministic", action="store_true", help="use eta = 0 instead of sampling")
            s.add_argument("--seed", type=int, default=0, help="seed for the latent noise")

    e = _sub(subs, "eval", "score a checkpoint on the test split")
    e.add_argument("--ckpt", required=True, help="HZCK checkpoint")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--direction", choices=(SYNTHESIS, DEHAZING), required=True, help="translation to score")
    e.add_argument("--report", required=True, help="CSV report path")
    e.add_argument("--triptychs", default=None, help="optional directory for input|output|target strips")

    _sub(subs, "mmd-check", "compare the MMD estimator against a double-loop oracle")
    _sub(subs, "grad-check", "compare analytic gradients against central finite differences")
    return p


def _cmd_gen_data(a) -> int:
    m = build_dataset(a.count, a.seed, a.size, a.out)
    print(f"wrote {len(m.train)} train / {len(m.test)} test scenes to {m.path}")
    return EXIT_OK


def _cmd_train(a) -> int:
    config = TrainConfig(data=a.data, out=a.out, iterations=a.iters, seed=a.seed, lr=a.lr, beta1=a.beta1,
                         beta2=a.beta2, lambda_m=a.lambda_m, lambda_adv=a.lambda_adv,
                         lambda_recon=a.lambda_recon, buffer=a.buffer, latent_dim=a.latent_dim,
                         ckpt_every=a.ckpt_every, log_every=a.log_every, deterministic_eta=a.deterministic_eta)
    final = train(config, resume=a.resume, progress=lambda line: print(line, flush=True))
    print(f"final checkpoint {final}")
    return EXIT_OK


def _io_pairs(inp: Path, out: Path) -> list[tuple[Path, Path]]:
    if inp.is_dir():
        files = sorted(inp.glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG files in {inp}")
        out.mkdir(parents=True, exist_ok=True)
        return [(f, out / f.name) for f in files]
    if not inp.exists():
        raise FileNotFoundError(f"input {inp} does not exist")
    if out.is_dir():
        return [(inp, out / inp.name)]
    out.parent.mkdir(parents=True, exist_ok=True)
    return [(inp, out)]


def _cmd_translate(a, direction: str) -> int:
    state, _ = load_checkpoint(a.ckpt)
    model = state.model
    size = model.shape.image_size
    deterministic = direction == HAZY_TO_CLEAR or a.deterministic
    rng = None if deterministic else np.random.default_rng(a.seed)
    pairs = _io_pairs(Path(a.inp), Path(a.out))
    for src, dst in pairs:
        img = read_png(src)
        if img.shape != (size, size, 3):
            raise ValueError(f"{src}: image is {img.shape[1]}x{img.shape[0]}, checkpoint expects {size}x{size}")
        write_png(dst, translate(model, img, direction, rng))
    print(f"wrote {len(pairs)} image(s) to {a.out}")
    return EXIT_OK


def _cmd_eval(a) -> int:
    state, _ = load_checkpoint(a.ckpt)
    report = evaluate(state.model, a.data, a.direction, checkpoint=a.ckpt, triptych_dir=a.triptychs)
    report.write_csv(a.report)
    print(report.summary())
    return EXIT_OK


def _report(results) -> int:
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    coords = sum(r.coordinates for r in results)
    tail = f", {coords} gradient coordinates" if coords else ""
    print(f"{passed}/{len(results)} checks passed{tail}")
    return EXIT_OK if passed == len(results) else EXIT_RUNTIME


def run(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        if a.command == "gen-data":
            return _cmd_gen_data(a)
        if a.command == "train":
            return _cmd_train(a)
        if a.command == "hazify":
            return _cmd_translate(a, CLEAR_TO_HAZY)
        if a.command == "dehaze":
            return _cmd_translate(a, HAZY_TO_CLEAR)
        if a.command == "eval":
            return _cmd_eval(a)
        if a.command == "mmd-check":
            return _report(run_mmd_checks())
        if a.command == "grad-check":
            return _report(run_grad_checks())
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"hazevae {a.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    raise AssertionError(a.command)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
