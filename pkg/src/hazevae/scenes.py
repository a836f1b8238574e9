"""Procedural traffic-like scenes, their hazy counterparts, and on-disk datasets.

Layout of a dataset root::

    manifest.json           schema_version, size, seed, train/test record lists
    clear/000017.png        8-bit RGB clear image J
    depth/000017.hzdm       float32 depth map (HZDM container)
    hazy/000017.png         8-bit RGB hazy image I
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .haze import HazeParams, apply_haze, sample_haze_params, transmission

D_MAX = 3.0
MIN_SIZE = 16
DEFAULT_SIZE = 32
SCHEMA_VERSION = 1
HZDM_MAGIC = b"HZDM"
_NEAR_DEPTH = 0.4


class DatasetError(ValueError):
    pass


@dataclass
class ScenePair:
    clear: np.ndarray   # H x W x 3 in [0, 1]
    depth: np.ndarray   # H x W, in (0, D_MAX]
    hazy: np.ndarray    # H x W x 3 in [0, 1]
    params: HazeParams
    seed: int
    name: str = ""


# ---------------------------------------------------------------------------
# scene synthesis


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate_scene(seed: int, size: int | tuple[int, int] = DEFAULT_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Clear image and depth map for one procedural road scene.

    Sky above a horizon line sits at ``D_MAX``. Ground depth grows as
    ``near / r`` towards the horizon (``r`` is the normalized distance below
    it). A perspective road band converges on a vanishing point and 2-6
    boxes stand on the ground at the depth of their base row. The clear
    image is already on the 8-bit grid, the depth on the float32 grid, so
    both survive file round trips exactly.
    """
    H, W = (size, size) if isinstance(size, (int, np.integer)) else size
    if H < MIN_SIZE or W < MIN_SIZE:
        raise ValueError(f"scene size must be at least {MIN_SIZE}x{MIN_SIZE}, got {H}x{W}")
    rng = np.random.default_rng(seed)

    horizon = int(round(H * rng.uniform(0.3, 0.5)))
    vanish_x = W * rng.uniform(0.35, 0.65)
    rows = np.arange(H, dtype=np.float64)[:, None] + 0.5
    cols = np.arange(W, dtype=np.float64)[None, :] + 0.5

    r = np.clip((rows - horizon) / (H - horizon), 1e-6, 1.0)
    ground = rows >= horizon
    depth = np.where(ground, np.minimum(D_MAX, _NEAR_DEPTH / r), D_MAX) * np.ones((1, W))

    sky_top = rng.uniform(0.35, 0.75, size=3)
    sky_bottom = np.clip(sky_top + rng.uniform(0.05, 0.25), 0, 1)
    frac = np.clip(rows / max(horizon, 1), 0, 1)[..., None]
    img = np.broadcast_to(sky_top * (1 - frac) + sky_bottom * frac, (H, W, 3)).copy()

    ground_col = rng.uniform(0.15, 0.55, size=3)
    shade = 0.8 + 0.2 * r[..., None]
    img = np.where(ground[..., None], ground_col * shade, img)

    # road: half width grows linearly with distance below the horizon
    road_half = rng.uniform(0.35, 0.6) * W * r
    road = ground & (np.abs(cols - vanish_x) <= road_half)
    road_col = np.full(3, rng.uniform(0.2, 0.45)) + rng.uniform(-0.03, 0.03, size=3)
    img = np.where(road[..., None], road_col, img)
    lane = road & (np.abs(cols - vanish_x) <= np.maximum(0.04 * road_half, 0.45)) & (np.floor(4.0 * np.log(r + 1e-9)) % 2 == 0)
    img = np.where(lane[..., None], np.array([0.92, 0.9, 0.75]), img)

    for _ in range(int(rng.integers(2, 7))):
        rb = rng.uniform(0.08, 0.75)
        base = min(H, horizon + 1 + int(rb * (H - horizon)))
        rb = (base - 0.5 - horizon) / (H - horizon)
        d_obj = float(min(D_MAX, _NEAR_DEPTH / max(rb, 1e-6)))
        h_px = max(2, int(round(rng.uniform(0.25, 0.6) * H * rb)))
        w_px = max(2, int(round(rng.uniform(0.2, 0.5) * W * rb)))
        x0 = int(rng.integers(-w_px // 2, W - w_px // 2))
        y0 = max(0, base - h_px)
        xs = slice(max(0, x0), min(W, x0 + w_px))
        ys = slice(y0, base)
        col = rng.uniform(0.05, 0.95, size=3)
        img[ys, xs] = col
        # darker lower strip, like a bumper or shadow
        strip = max(1, (base - y0) // 4)
        img[base - strip:base, xs] = col * 0.55
        depth[ys, xs] = d_obj

    img = img + rng.normal(0.0, 0.01, size=img.shape)
    depth = np.clip(depth, 1e-3, D_MAX).astype(np.float32).astype(np.float64)
    return _quantize(img), depth


def make_pair(seed: int, size, params: HazeParams, name: str = "") -> ScenePair:
    clear, depth = generate_scene(seed, size)
    hazy = apply_haze(clear, transmission(depth, params.beta), params.A)
    return ScenePair(clear, depth, hazy, params, seed, name)


# ---------------------------------------------------------------------------
# file formats


def write_png(path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_depth(path, depth: np.ndarray) -> None:
    """HZDM: magic, u32 height, u32 width, u32 reserved, then little-endian float32 rows."""
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(HZDM_MAGIC + struct.pack("<III", h, w, 0))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != HZDM_MAGIC:
        raise DatasetError(f"{path}: not an HZDM depth file")
    h, w, _ = struct.unpack("<III", raw[4:16])
    body = raw[16:]
    if len(body) != 4 * h * w:
        raise DatasetError(f"{path}: expected {h}x{w} floats, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetManifest:
    root: Path
    size: int
    seed: int
    train: list[dict]
    test: list[dict]
    path: Path | None = None

    def records(self, split: str) -> list[dict]:
        if split not in ("train", "test"):
            raise ValueError(f"unknown split {split!r}")
        return self.train if split == "train" else self.test

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "size": self.size,
            "seed": self.seed,
            "split_ratio": "3:1",
            "train": self.train,
            "test": self.test,
        }


def split_counts(count: int) -> tuple[int, int]:
    n_train = (3 * count) // 4
    return n_train, count - n_train


def build_dataset(count: int, seed: int, size: int, root) -> DatasetManifest:
    """Generate ``count`` scene pairs under ``root`` and write ``manifest.json``."""
    if count < 8:
        raise ValueError(f"dataset needs at least 8 images, got {count}")
    root = Path(root)
    try:
        for sub in ("clear", "depth", "hazy"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        probe = root / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {root}: {exc}") from exc

    ss = np.random.SeedSequence(seed)
    scene_ss, haze_ss, split_ss = ss.spawn(3)
    scene_seeds = scene_ss.generate_state(count, dtype=np.uint32)
    haze_rng = np.random.default_rng(haze_ss)
    order = np.random.default_rng(split_ss).permutation(count)
    n_train, _ = split_counts(count)
    is_train = np.zeros(count, dtype=bool)
    is_train[order[:n_train]] = True

    train, test = [], []
    for k in range(count):
        params = sample_haze_params(haze_rng)
        name = f"{k:06d}"
        pair = make_pair(int(scene_seeds[k]), size, params, name)
        files = {"clear": f"clear/{name}.png", "depth": f"depth/{name}.hzdm", "hazy": f"hazy/{name}.png"}
        write_png(root / files["clear"], pair.clear)
        write_depth(root / files["depth"], pair.depth)
        write_png(root / files["hazy"], pair.hazy)
        rec = {
            "name": name,
            **files,
            "seed": int(scene_seeds[k]),
            "airlight": list(params.airlight),
            "beta": params.beta,
            "sha256": {key: _sha256(root / rel) for key, rel in files.items()},
        }
        (train if is_train[k] else test).append(rec)

    manifest = DatasetManifest(root, int(size), int(seed), train, test, root / "manifest.json")
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest.to_json(), indent=1, sort_keys=True) + "\n")
    os.replace(tmp, root / "manifest.json")
    return manifest


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetError(f"{path}: manifest schema_version {version!r}, expected {SCHEMA_VERSION}")
    train, test = doc["train"], doc["test"]
    names_train = {r["name"] for r in train}
    overlap = names_train & {r["name"] for r in test}
    if overlap:
        raise DatasetError(f"{path}: records in both train and test: {sorted(overlap)[:5]}")
    return DatasetManifest(path.parent, int(doc["size"]), int(doc["seed"]), train, test, path)


def load_record(manifest: DatasetManifest, rec: dict, verify: bool = True) -> ScenePair:
    root = manifest.root
    paths = {key: root / rec[key] for key in ("clear", "depth", "hazy")}
    for key, p in paths.items():
        if not p.is_file():
            raise DatasetError(f"record {rec['name']}: missing {key} file {p}")
        if verify and _sha256(p) != rec["sha256"][key]:
            raise DatasetError(f"record {rec['name']}: checksum mismatch for {key} file {p}")
    clear, hazy = read_png(paths["clear"]), read_png(paths["hazy"])
    depth = read_depth(paths["depth"])
    expected = (manifest.size, manifest.size)
    for key, arr in (("clear", clear), ("hazy", hazy), ("depth", depth)):
        if arr.shape[:2] != expected:
            raise DatasetError(f"record {rec['name']}: {key} has shape {arr.shape}, expected {expected}")
    params = HazeParams(tuple(rec["airlight"]), rec["beta"])
    return ScenePair(clear, depth, hazy, params, int(rec["seed"]), rec["name"])


def load_dataset(manifest, split: str = "train", shuffle_seed: int | None = None,
                 verify: bool = True) -> Iterator[ScenePair]:
    """Yield the pairs of one split, in manifest order or a seeded permutation of it."""
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    recs = manifest.records(split)
    order = range(len(recs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(recs))
    for k in order:
        yield load_record(manifest, recs[int(k)], verify)
