"""PSNR / SSIM and batch evaluation of a checkpoint over a test split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .nets import CLEAR_TO_HAZY, HAZY_TO_CLEAR, HazeModel, translate
from .scenes import DatasetManifest, load_dataset, read_manifest, write_png

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# CLI/report names for the two evaluation directions
SYNTHESIS = "synthesis"
DEHAZING = "dehazing"
_TRANSLATION = {SYNTHESIS: CLEAR_TO_HAZY, DEHAZING: HAZY_TO_CLEAR}


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if not peak > 0:
        raise ValueError(f"psnr: peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all 8x8 windows (stride 1) of the channel-mean images, dynamic range 1.

    Window statistics use population (1/N) moments.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    ga, gb = _gray(a), _gray(b)
    if min(ga.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {ga.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    wa = sliding_window_view(ga, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(gb, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-2, -1))
    var_b = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    direction: str
    checkpoint: str
    files: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return math.fsum(self.psnr) / len(self.psnr)

    @property
    def mean_ssim(self) -> float:
        return math.fsum(self.ssim) / len(self.ssim)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["file", "psnr", "ssim"])
            for name, p, s in zip(self.files, self.psnr, self.ssim):
                w.writerow([name, repr(p), repr(s)])
            f.write(f"# mean direction={self.direction} checkpoint={self.checkpoint} "
                    f"n={len(self.files)} psnr={self.mean_psnr!r} ssim={self.mean_ssim!r}\n")
        return path

    def summary(self) -> str:
        return (f"{self.direction}: n={len(self.files)} mean PSNR {self.mean_psnr:.4f} dB, "
                f"mean SSIM {self.mean_ssim:.4f}")


Translator = Callable[[np.ndarray], np.ndarray]


def evaluate(model: HazeModel | None, manifest, direction: str, checkpoint: str = "",
             translator: Translator | None = None, split: str = "test",
             triptych_dir=None) -> MetricReport:
    """Score translations of a split against the ground truth of the other domain.

    ``synthesis`` hazes each clear image and compares with the stored hazy one;
    ``dehazing`` does the reverse. Always deterministic (eta = 0). Passing
    ``translator`` replaces the model, e.g. with an identity for baselines.
    """
    if direction not in _TRANSLATION:
        raise ValueError(f"unknown direction {direction!r}; expected {SYNTHESIS!r} or {DEHAZING!r}")
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    if translator is None:
        if model is None:
            raise ValueError("evaluate needs a model or a translator")
        tdir = _TRANSLATION[direction]
        translator = lambda img: translate(model, img, tdir)  # noqa: E731
    if triptych_dir is not None:
        triptych_dir = Path(triptych_dir)
        triptych_dir.mkdir(parents=True, exist_ok=True)

    report = MetricReport(direction, str(checkpoint))
    for pair in load_dataset(manifest, split):
        src, target = (pair.clear, pair.hazy) if direction == SYNTHESIS else (pair.hazy, pair.clear)
        out = np.clip(translator(src), 0.0, 1.0)
        report.files.append(pair.name)
        report.psnr.append(psnr(out, target))
        report.ssim.append(ssim(out, target))
        if triptych_dir is not None:
            write_png(triptych_dir / f"{pair.name}_{direction}.png", np.concatenate([src, out, target], axis=1))
    if not report.files:
        raise ValueError(f"split {split!r} of {manifest.path} is empty")
    return report


def identity(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64)


__all__ = ["DEHAZING", "MetricReport", "PSNR_CAP", "SYNTHESIS", "evaluate", "identity", "psnr", "ssim"]

