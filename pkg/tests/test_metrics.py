import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hazevae.metrics import DEHAZING, PSNR_CAP, SYNTHESIS, evaluate, identity, psnr, ssim
from hazevae.nets import HazeModel, ModelShape

C1, C2 = 0.01 ** 2, 0.03 ** 2


def ssim_loops(a, b, win=8):
    """Window-by-window reference with explicit loops."""
    ga, gb = a.mean(axis=2), b.mean(axis=2)
    vals = []
    for r in range(ga.shape[0] - win + 1):
        for c in range(ga.shape[1] - win + 1):
            x = ga[r:r + win, c:c + win].ravel()
            y = gb[r:r + win, c:c + win].ravel()
            mx, my = x.mean(), y.mean()
            vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
            cxy = ((x - mx) * (y - my)).mean()
            vals.append((2 * mx * my + C1) * (2 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2)))
    return float(np.mean(vals))


def test_psnr_examples():
    a = np.random.default_rng(0).uniform(0, 0.9, size=(8, 8, 3))
    assert psnr(a, a) == PSNR_CAP
    assert abs(psnr(a, a + 0.1) - 20.0) <= 1e-9
    b = np.random.default_rng(1).uniform(size=(8, 8, 3))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, a[:4])
    with pytest.raises(ValueError):
        psnr(a, b, peak=0)


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(16, 16, 3))
    noise = rng.normal(size=img.shape)
    vals = [psnr(img, img + amp * noise) for amp in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_examples():
    a = np.random.default_rng(3).uniform(size=(16, 16, 3))
    assert abs(ssim(a, a) - 1.0) <= 1e-12
    v = ssim(np.zeros((8, 8, 3)), np.ones((8, 8, 3)))
    assert math.isclose(v, C1 / (1 + C1), rel_tol=1e-12)
    with pytest.raises(ValueError):
        ssim(np.zeros((7, 9, 3)), np.zeros((7, 9, 3)))
    with pytest.raises(ValueError):
        ssim(a, a[:8])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 14), st.integers(8, 14))
def test_ssim_matches_loops_and_is_symmetric(seed, h, w):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(h, w, 3))
    b = np.clip(a + rng.normal(scale=rng.uniform(0, 0.5), size=a.shape), 0, 1)
    v = ssim(a, b)
    assert abs(v - ssim_loops(a, b)) <= 1e-12
    assert abs(v - ssim(b, a)) <= 1e-12
    assert -1 <= v <= 1
    if not np.array_equal(a, b):
        assert v < 1 - 1e-12


@pytest.fixture(scope="module")
def small_model():
    return HazeModel.create(ModelShape(image_size=16, latent_dim=4, enc_hidden=(8,), gen_hidden=(8,),
                                       dis_hidden=(8,)), np.random.default_rng(0))


def test_identity_dehazing_reproduces_baseline(tiny_dataset):
    from hazevae.scenes import load_dataset
    rep = evaluate(None, tiny_dataset, DEHAZING, translator=identity)
    pairs = list(load_dataset(tiny_dataset, "test"))
    assert rep.psnr == [psnr(p.hazy, p.clear) for p in pairs]
    assert rep.ssim == [ssim(p.hazy, p.clear) for p in pairs]


def test_report_means_csv_and_triptychs(tiny_dataset, small_model, tmp_path):
    rep = evaluate(small_model, tiny_dataset, SYNTHESIS, checkpoint="m.hzck", triptych_dir=tmp_path / "tri")
    assert abs(rep.mean_psnr - np.mean(rep.psnr)) <= 1e-12
    assert abs(rep.mean_ssim - np.mean(rep.ssim)) <= 1e-12
    path = rep.write_csv(tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "file,psnr,ssim" and lines[-1].startswith("# mean")
    rows = list(csv.DictReader(lines[:-1]))
    assert [r["file"] for r in rows] == rep.files
    assert [float(r["ssim"]) for r in rows] == rep.ssim
    assert len(list((tmp_path / "tri").glob("*.png"))) == len(rep.files)


def test_evaluate_deterministic_and_direction_check(tiny_dataset, small_model):
    a = evaluate(small_model, tiny_dataset, DEHAZING)
    b = evaluate(small_model, tiny_dataset, DEHAZING)
    assert a.psnr == b.psnr and a.ssim == b.ssim
    with pytest.raises(ValueError):
        evaluate(small_model, tiny_dataset, "sideways")
