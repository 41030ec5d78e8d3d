import os

import numpy as np
import pytest

from dehazer.imageio import save_image
from dehazer.model import ModelConfig
from dehazer.physics import HazeParams, synthesize_haze, transmission_from_depth

TINY = ModelConfig(base_channels=8, encoder_levels=2, res_blocks=2)


def smooth_field(rng, size, mean, amp, nbumps=4, chans=3):
    """Low-frequency cosine-bump content in [0, 1]; bump amplitudes are
    amp * [0.05, 0.2] each, so amp=0.25 gives roughly +-0.1 total contrast."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, chans))
    for _ in range(nbumps):
        fx, fy = rng.uniform(0.5, 2.0, 2)
        ph = rng.uniform(0, 2 * np.pi, 2)
        scale = rng.uniform(0.3, 1.0, chans)
        img += amp * rng.uniform(0.05, 0.2) * (
            np.cos(2 * np.pi * fx * xx + ph[0])
            * np.cos(2 * np.pi * fy * yy + ph[1]))[..., None] * scale
    return np.clip(mean + img, 0, 1)


def make_hazy_scenes(root, n=8, size=64, seed=42, beta_hi=1.0):
    """Write n paired hazy/clear PNGs; returns (scene, hazy, clear) triples.

    Low-contrast scenes under mild haze: the overfit smoke-test task.
    """
    os.makedirs(os.path.join(root, "hazy"), exist_ok=True)
    os.makedirs(os.path.join(root, "clear"), exist_ok=True)
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n):
        clear = smooth_field(rng, size, mean=0.45, amp=0.25)
        depth = smooth_field(rng, size, mean=0.3, amp=0.3, chans=1)[:, :, 0]
        params = HazeParams(rng.uniform(0.7, 1.0, 3),
                            float(rng.uniform(0.6, beta_hi)))
        hazy = synthesize_haze(clear, transmission_from_depth(depth, params.beta),
                               params)
        clear_path = os.path.join(root, "clear", f"s{i}.png")
        hazy_path = os.path.join(root, "hazy", f"s{i}.png")
        save_image(clear, clear_path)
        save_image(hazy, hazy_path)
        scenes.append((f"s{i}", hazy_path, clear_path))
    return scenes


@pytest.fixture
def tiny_config():
    return TINY
