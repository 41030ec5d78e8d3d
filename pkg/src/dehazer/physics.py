"""Atmospheric scattering model: haze synthesis and analytic recovery.

A hazy observation is a depth-dependent convex blend of the scene
radiance and the ambient airlight: hazy = clear * t + A * (1 - t), with
transmission t = exp(-beta * depth). The exact inverse with known t and
A is kept as a test oracle; the network exists to avoid needing it.
Images here are channel-last (h, w, c) arrays in [0, 1]; transmission
and depth maps are (h, w) and shared across color channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AIRLIGHT_RANGE = (0.7, 1.0)
BETA_RANGE = (0.6, 1.8)


@dataclass(frozen=True)
class HazeParams:
    """Per-image airlight (one value per channel) and scattering coefficient."""

    airlight: np.ndarray
    beta: float

    def __post_init__(self):
        a = np.asarray(self.airlight, dtype=np.float64)
        object.__setattr__(self, "airlight", a)
        lo, hi = AIRLIGHT_RANGE
        if a.ndim != 1 or not np.all((a >= lo) & (a <= hi)):
            raise ValueError(
                f"airlight must be a vector with values in [{lo}, {hi}], got {a}")
        lo, hi = BETA_RANGE
        if not (lo <= self.beta <= hi):
            raise ValueError(f"beta must be in [{lo}, {hi}], got {self.beta}")


def transmission_from_depth(depth, beta: float) -> np.ndarray:
    """t = exp(-beta * depth), elementwise; beta must be positive."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth < 0) or not np.all(np.isfinite(depth)):
        raise ValueError("depth values must be finite and non-negative")
    return np.exp(-beta * depth)


def synthesize_haze(clear, transmission, params: HazeParams) -> np.ndarray:
    """Blend the clear image toward the airlight by 1 - t."""
    clear = np.asarray(clear, dtype=np.float64)
    t = np.asarray(transmission, dtype=np.float64)
    if clear.ndim != 3:
        raise ValueError(f"clear image must be (h, w, c), got {clear.shape}")
    if t.shape != clear.shape[:2]:
        raise ValueError(
            f"transmission dims {t.shape} do not match image {clear.shape[:2]}")
    if params.airlight.shape[0] != clear.shape[2]:
        raise ValueError(
            f"airlight has {params.airlight.shape[0]} channels, image has "
            f"{clear.shape[2]}")
    t3 = t[:, :, None]
    return clear * t3 + params.airlight[None, None, :] * (1.0 - t3)


def recover_exact(hazy, transmission, params: HazeParams,
                  t_floor: float = 0.05) -> np.ndarray:
    """Invert synthesize_haze with known t and A.

    The transmission is floored at t_floor before dividing, which bounds
    amplification where the medium is nearly opaque; output is clamped to
    [0, 1]. Exact wherever t >= t_floor.
    """
    if t_floor <= 0:
        raise ValueError(f"t_floor must be positive, got {t_floor}")
    hazy = np.asarray(hazy, dtype=np.float64)
    t = np.maximum(np.asarray(transmission, dtype=np.float64), t_floor)[:, :, None]
    recovered = (hazy - params.airlight[None, None, :] * (1.0 - t)) / t
    return np.clip(recovered, 0.0, 1.0)


def sample_haze_params(rng_seed) -> HazeParams:
    """Uniform airlight and beta draws; deterministic per seed.

    Accepts either a seed or an existing numpy Generator (so a caller can
    draw a reproducible stream of parameter sets).
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    airlight = rng.uniform(*AIRLIGHT_RANGE, size=3)
    beta = float(rng.uniform(*BETA_RANGE))
    return HazeParams(airlight=airlight, beta=beta)
