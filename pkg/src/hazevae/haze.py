"""Homogeneous atmospheric scattering: I = J t + A (1 - t), t = exp(-beta d)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AIRLIGHT_RANGE = (0.8, 1.0)
BETA_RANGE = (0.8, 1.6)
DEFAULT_T_FLOOR = 0.05


@dataclass(frozen=True)
class HazeParams:
    airlight: tuple[float, float, float]
    beta: float

    def __post_init__(self):
        a = tuple(float(c) for c in self.airlight)
        if len(a) != 3 or not all(0.0 <= c <= 1.0 for c in a):
            raise ValueError(f"airlight must be 3 components in [0, 1], got {self.airlight}")
        if not self.beta > 0:
            raise ValueError(f"scattering coefficient must be positive, got {self.beta}")
        object.__setattr__(self, "airlight", a)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def A(self) -> np.ndarray:
        return np.asarray(self.airlight, dtype=np.float64)


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    if not beta > 0:
        raise ValueError(f"scattering coefficient must be positive, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.size and (not np.all(np.isfinite(depth)) or depth.min() < 0):
        raise ValueError("depth map must be finite and nonnegative")
    return np.exp(-beta * depth)


def _airlight(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.shape not in ((), (3,)) or np.any((A < 0) | (A > 1)):
        raise ValueError(f"airlight must be a scalar or 3 components in [0, 1], got {A}")
    return A


def apply_haze(J: np.ndarray, t: np.ndarray, A) -> np.ndarray:
    """Hazy image from clear radiance ``J`` (H x W x 3), transmission ``t`` (H x W), airlight ``A``."""
    J = np.asarray(J, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if J.ndim != 3 or J.shape[:2] != t.shape:
        raise ValueError(f"apply_haze: shape mismatch image {J.shape} vs transmission {t.shape}")
    A = _airlight(A)
    tt = t[..., None]
    return J * tt + A * (1.0 - tt)


def invert_haze(I: np.ndarray, t: np.ndarray, A, t_floor: float = DEFAULT_T_FLOOR) -> np.ndarray:
    """Recover J given known transmission and airlight; t is floored at ``t_floor`` and J clamped to [0, 1]."""
    if not t_floor > 0:
        raise ValueError(f"t_floor must be in (0, 1], got {t_floor}")
    I = np.asarray(I, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if I.ndim != 3 or I.shape[:2] != t.shape:
        raise ValueError(f"invert_haze: shape mismatch image {I.shape} vs transmission {t.shape}")
    A = _airlight(A)
    tt = np.maximum(t, min(t_floor, 1.0))[..., None]
    return np.clip((I - A * (1.0 - tt)) / tt, 0.0, 1.0)


def sample_haze_params(rng: np.random.Generator) -> HazeParams:
    A = rng.uniform(*AIRLIGHT_RANGE, size=3)
    beta = rng.uniform(*BETA_RANGE)
    return HazeParams(tuple(A), beta)
