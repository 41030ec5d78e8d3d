"""Encoder, residual feature transformation, and fusion decoder.

The network maps a hazy image directly to its restoration: a stem
convolution plus stride-2 downsampling stages, a stack of 3x3/3x3
residual blocks at the coarsest scale with a shortcut around the whole
stack, and mirrored stride-2 transposed convolutions whose outputs are
fused with the same-scale encoder maps by channel-wise addition.
Parameters live in a flat name->array store; forward retains a trace of
the activations the hand-written backward pass needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tensor import (
    ConvSpec,
    ShapeError,
    add_channels,
    conv2d,
    conv2d_backward,
    deconv2d,
    deconv2d_backward,
    relu,
    relu_backward,
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the full-size network."""

    stem_kernel: int = 11
    base_channels: int = 16
    encoder_levels: int = 4
    res_blocks: int = 18
    skip_connections: bool = True
    image_channels: int = 3

    def __post_init__(self):
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            raise ValueError(f"stem_kernel must be odd, got {self.stem_kernel}")
        if self.base_channels < 1 or self.encoder_levels < 1:
            raise ValueError("base_channels and encoder_levels must be positive")
        if self.res_blocks < 1:
            raise ValueError(f"res_blocks must be >= 1, got {self.res_blocks}")
        if self.image_channels < 1:
            raise ValueError("image_channels must be positive")

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2 ** self.encoder_levels

    @property
    def spatial_factor(self) -> int:
        """Input spatial dims must be divisible by this."""
        return 2 ** self.encoder_levels


class LayerSpec(NamedTuple):
    name: str
    kind: str  # "conv" or "deconv"
    spec: ConvSpec


def layer_specs(config: ModelConfig) -> list[LayerSpec]:
    """Every parameterized layer in execution order."""
    levels = config.encoder_levels
    k0 = config.stem_kernel
    c = config.base_channels
    specs = [LayerSpec("enc.0", "conv",
                       ConvSpec(k0, 1, (k0 - 1) // 2, config.image_channels, c))]
    for i in range(1, levels + 1):
        specs.append(LayerSpec(f"enc.{i}", "conv", ConvSpec(3, 2, 1, c, 2 * c)))
        c *= 2
    for b in range(config.res_blocks):
        for leg in ("conv1", "conv2"):
            specs.append(LayerSpec(f"res.{b:02d}.{leg}", "conv",
                                   ConvSpec(3, 1, 1, c, c)))
    for j in range(levels, 0, -1):
        specs.append(LayerSpec(f"dec.{j}", "deconv", ConvSpec(3, 2, 1, c, c // 2)))
        c //= 2
    specs.append(LayerSpec("out", "conv",
                           ConvSpec(3, 1, 1, c, config.image_channels)))
    return specs


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Exact key set and dims of the parameter store for a config."""
    shapes: dict[str, tuple[int, ...]] = {}
    for name, kind, spec in layer_specs(config):
        k = spec.kernel
        if kind == "conv":
            shapes[f"{name}.weight"] = (spec.out_channels, spec.in_channels, k, k)
        else:
            shapes[f"{name}.weight"] = (spec.in_channels, spec.out_channels, k, k)
        shapes[f"{name}.bias"] = (spec.out_channels,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter count: sum of k^2*in*out + out over all layers."""
    total = 0
    for _, _, spec in layer_specs(config):
        total += spec.kernel ** 2 * spec.in_channels * spec.out_channels
        total += spec.out_channels
    return total


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Gaussian weights with std sqrt(2 / fan_in), zero biases; deterministic per seed.

    The final projection layer starts at zero so the network output is
    initially zero rather than large-amplitude noise; at the constant
    training rate this removes an unlearning phase that otherwise
    dominates short runs.
    """
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config)
    params: dict[str, np.ndarray] = {}
    for name, kind, spec in layer_specs(config):
        fan_in = spec.in_channels * spec.kernel ** 2
        std = 0.0 if name == "out" else math.sqrt(2.0 / fan_in)
        shape = shapes[f"{name}.weight"]
        params[f"{name}.weight"] = (rng.standard_normal(shape) * std).astype(dtype)
        params[f"{name}.bias"] = np.zeros(spec.out_channels, dtype=dtype)
    return params


def _specs_by_name(config: ModelConfig) -> dict[str, ConvSpec]:
    return {name: spec for name, _, spec in layer_specs(config)}


@dataclass
class ShapePlan:
    input_dims: tuple[int, int, int]
    rows: list[tuple[str, tuple[int, int, int]]]
    divisible: bool

    def bottleneck_dims(self) -> tuple[int, int, int]:
        tail = [dims for name, dims in self.rows if name.startswith("enc.")]
        return tail[-1]

    def __str__(self):
        lines = [f"input: {self.input_dims} (divisible by factor: {self.divisible})"]
        lines += [f"{name}: {dims}" for name, dims in self.rows]
        return "\n".join(lines)


def shape_plan(h: int, w: int, config: ModelConfig) -> ShapePlan:
    """Per-layer output dims table for an h x w input."""
    if h < 1 or w < 1:
        raise ShapeError(f"shape_plan: dims must be positive, got {h}x{w}")
    rows = []
    ch, cw = h, w
    for name, kind, spec in layer_specs(config):
        if kind == "conv":
            ch, cw = spec.out_size(ch), spec.out_size(cw)
        else:
            ch, cw = spec.transposed_out_size(ch), spec.transposed_out_size(cw)
        rows.append((name, (spec.out_channels, ch, cw)))
    factor = config.spatial_factor
    return ShapePlan(
        input_dims=(config.image_channels, h, w),
        rows=rows,
        divisible=(h % factor == 0 and w % factor == 0),
    )


@dataclass
class ForwardTrace:
    """Activations retained by forward for the backward pass."""

    config: ModelConfig
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    saved: dict[str, np.ndarray]


def _check_input(x, config: ModelConfig):
    if x.ndim != 4:
        raise ShapeError(f"forward: input must be 4-D, got {x.ndim}-D", axis="rank")
    if x.shape[1] != config.image_channels:
        raise ShapeError(
            f"forward: input has {x.shape[1]} channels, config expects "
            f"{config.image_channels}", axis="channel")
    factor = config.spatial_factor
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ShapeError(
            f"forward: spatial dims {x.shape[2]}x{x.shape[3]} not divisible by "
            f"{factor}; pad the input first (see dehazer.inference.pad_to_multiple)",
            axis="spatial")


def _encoder(x, params, config, saved):
    specs = _specs_by_name(config)
    outs = []
    cur = x
    for i in range(config.encoder_levels + 1):
        name = f"enc.{i}"
        z = conv2d(cur, params[f"{name}.weight"], params[f"{name}.bias"], specs[name])
        if saved is not None:
            saved[f"{name}.in"] = cur
            saved[f"{name}.pre"] = z
            cur = relu(z)
        else:
            cur = np.maximum(z, 0, out=z)
        outs.append(cur)
    return outs


def _transform(x, params, config, saved):
    specs = _specs_by_name(config)
    if x.shape[1] != config.bottleneck_channels:
        raise ShapeError(
            f"transform: expected {config.bottleneck_channels} channels, "
            f"got {x.shape[1]}", axis="channel")
    cur = x
    for b in range(config.res_blocks):
        name = f"res.{b:02d}"
        spec = specs[f"{name}.conv1"]
        z1 = conv2d(cur, params[f"{name}.conv1.weight"],
                    params[f"{name}.conv1.bias"], spec)
        if saved is not None:
            saved[f"{name}.in"] = cur
            saved[f"{name}.pre1"] = z1
            a1 = relu(z1)
            saved[f"{name}.act1"] = a1
            z2 = conv2d(a1, params[f"{name}.conv2.weight"],
                        params[f"{name}.conv2.bias"], spec)
            cur = add_channels(cur, z2)
        else:
            a1 = np.maximum(z1, 0, out=z1)
            z2 = conv2d(a1, params[f"{name}.conv2.weight"],
                        params[f"{name}.conv2.bias"], spec)
            cur = np.add(z2, cur, out=z2)
            z1 = a1 = z2 = None
    if saved is not None:
        return add_channels(x, cur)
    return np.add(cur, x, out=cur)


def _decoder(holder, skips, params, config, saved, owned):
    # `holder` is a single-element list so the caller frame drops its
    # reference to the fused map; with `owned` the buffers can be reused in
    # place and released as consumed, keeping peak memory low on large
    # images. `skips` entries are released the same way.
    specs = _specs_by_name(config)
    cur = holder.pop()
    cur_owned = owned
    for j in range(config.encoder_levels, 0, -1):
        name = f"dec.{j}"
        if saved is not None:
            saved[f"{name}.pre"] = cur
            act = relu(cur)
            saved[f"{name}.act"] = act
        elif cur_owned:
            act = np.maximum(cur, 0, out=cur)
        else:
            act = relu(cur)
        up = deconv2d(act, params[f"{name}.weight"], params[f"{name}.bias"],
                      specs[name])
        if saved is None:
            act = cur = None  # release the pre-upsample map before fusing
        skip = skips[j - 1]
        if config.skip_connections:
            if skip.shape != up.shape:
                raise ShapeError(
                    f"decoder: fusion mismatch at level {j - 1}: encoder map "
                    f"{skip.shape} vs upsampled {up.shape}", axis="spatial")
            if saved is not None:
                cur = add_channels(skip, up)
            else:
                cur = np.add(up, skip, out=up)
        else:
            cur = up
        if saved is None:
            skips[j - 1] = None
            skip = up = None
        cur_owned = True
    if saved is not None:
        saved["out.pre"] = cur
        act = relu(cur)
        saved["out.act"] = act
    else:
        act = np.maximum(cur, 0, out=cur)
    return conv2d(act, params["out.weight"], params["out.bias"], specs["out"])


def encoder_forward(x, params, config: ModelConfig) -> list[np.ndarray]:
    """All encoder activations, finest to coarsest."""
    _check_input(x, config)
    return _encoder(x, params, config, None)


def transform_forward(bottleneck, params, config: ModelConfig) -> np.ndarray:
    """Residual stack plus the shortcut around it."""
    return _transform(bottleneck, params, config, None)


def decoder_forward(fused, skips, params, config: ModelConfig) -> np.ndarray:
    """Upsample with per-level fusion; `skips` indexed by level (finest first)."""
    if len(skips) != config.encoder_levels:
        raise ShapeError(
            f"decoder: expected {config.encoder_levels} skip maps, got {len(skips)}")
    return _decoder([fused], list(skips), params, config, None, owned=False)


def forward(x, params, config: ModelConfig, keep_trace: bool = True):
    """Full forward pass; returns (output, trace) where trace is None when
    keep_trace is false (intermediates are then freed as soon as possible)."""
    _check_input(x, config)
    saved: dict | None = {} if keep_trace else None
    encoder_outs = _encoder(x, params, config, saved)
    if saved is not None:
        for i, m in enumerate(encoder_outs):
            saved[f"skip.{i}"] = m
    bottleneck = encoder_outs[-1]
    encoder_outs[-1] = None
    holder = [_transform(bottleneck, params, config, saved)]
    if saved is None:
        bottleneck = None
    out = _decoder(holder,
                   encoder_outs[:-1] if saved is not None else encoder_outs,
                   params, config, saved, owned=saved is None)
    trace = None
    if keep_trace:
        trace = ForwardTrace(config=config, input_shape=tuple(x.shape),
                             output_shape=tuple(out.shape), saved=saved)
    return out, trace


def backward(trace: ForwardTrace, grad_out, params, config: ModelConfig):
    """Gradient for every parameter given the output cotangent.

    The gradient w.r.t. the network input is produced as a by-product of
    the stem layer and discarded.
    """
    if config != trace.config:
        raise ValueError("backward: trace was recorded under a different config")
    if tuple(grad_out.shape) != trace.output_shape:
        raise ShapeError(
            f"backward: grad dims {tuple(grad_out.shape)} != forward output "
            f"{trace.output_shape}", axis="rank")
    saved = trace.saved
    specs = _specs_by_name(config)
    grads: dict[str, np.ndarray] = {}
    levels = config.encoder_levels

    g_act, gw, gb = conv2d_backward(saved["out.act"], params["out.weight"],
                                    specs["out"], grad_out)
    grads["out.weight"] = gw
    grads["out.bias"] = gb
    g_cur = relu_backward(saved["out.pre"], g_act)

    skip_grads: list[np.ndarray | None] = [None] * levels
    for j in range(1, levels + 1):
        name = f"dec.{j}"
        if config.skip_connections:
            skip_grads[j - 1] = g_cur
        g_act, gw, gb = deconv2d_backward(saved[f"{name}.act"],
                                          params[f"{name}.weight"],
                                          specs[name], g_cur)
        grads[f"{name}.weight"] = gw
        grads[f"{name}.bias"] = gb
        g_cur = relu_backward(saved[f"{name}.pre"], g_act)

    g_direct = g_cur
    g = g_cur
    for b in reversed(range(config.res_blocks)):
        name = f"res.{b:02d}"
        spec = specs[f"{name}.conv1"]
        g_a1, gw, gb = conv2d_backward(saved[f"{name}.act1"],
                                       params[f"{name}.conv2.weight"], spec, g)
        grads[f"{name}.conv2.weight"] = gw
        grads[f"{name}.conv2.bias"] = gb
        g_z1 = relu_backward(saved[f"{name}.pre1"], g_a1)
        g_in, gw, gb = conv2d_backward(saved[f"{name}.in"],
                                       params[f"{name}.conv1.weight"], spec, g_z1)
        grads[f"{name}.conv1.weight"] = gw
        grads[f"{name}.conv1.bias"] = gb
        g = add_channels(g, g_in)
    g_enc = add_channels(g, g_direct)

    for i in range(levels, -1, -1):
        name = f"enc.{i}"
        if i < levels and skip_grads[i] is not None:
            g_enc = add_channels(g_enc, skip_grads[i])
        g_z = relu_backward(saved[f"{name}.pre"], g_enc)
        g_enc, gw, gb = conv2d_backward(saved[f"{name}.in"],
                                        params[f"{name}.weight"], specs[name], g_z)
        grads[f"{name}.weight"] = gw
        grads[f"{name}.bias"] = gb
    return grads
