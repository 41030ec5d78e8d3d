"""Self-contained image dehazing engine.

Synthesizes hazy images from the atmospheric scattering model, trains an
encoder-decoder restoration network with per-scale skip fusion from
scratch (hand-written forward/backward passes on numpy buffers, compiled
gather/scatter kernels when available), and runs memory-budgeted
inference on images up to 4K, with PSNR/SSIM evaluation.
"""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .inference import dehaze, dehaze_tiled, memory_estimate, pad_to_multiple
from .kernels import BACKEND
from .metrics import evaluate_pairs, psnr, ssim
from .model import (
    ModelConfig,
    backward,
    forward,
    init_params,
    param_count,
    shape_plan,
)
from .physics import (
    HazeParams,
    recover_exact,
    sample_haze_params,
    synthesize_haze,
    transmission_from_depth,
)
from .tensor import (
    ConvSpec,
    ShapeError,
    add_channels,
    conv2d,
    conv2d_backward,
    deconv2d,
    deconv2d_backward,
    grad_check,
    relu,
    relu_backward,
)
from .training import TrainConfig, run_ablation, train

__all__ = [
    "BACKEND",
    "Checkpoint",
    "ConvSpec",
    "HazeParams",
    "ModelConfig",
    "ShapeError",
    "TrainConfig",
    "add_channels",
    "backward",
    "conv2d",
    "conv2d_backward",
    "deconv2d",
    "deconv2d_backward",
    "dehaze",
    "dehaze_tiled",
    "evaluate_pairs",
    "forward",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "memory_estimate",
    "pad_to_multiple",
    "param_count",
    "psnr",
    "recover_exact",
    "relu",
    "relu_backward",
    "run_ablation",
    "sample_haze_params",
    "save_checkpoint",
    "shape_plan",
    "ssim",
    "synthesize_haze",
    "train",
    "transmission_from_depth",
    "__version__",
]
