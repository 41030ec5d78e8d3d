"""Whole-image and tiled dehazing for arbitrary-size inputs, with a
memory estimator.

Inputs of any size are mirror-padded up to the network's divisibility
factor and cropped back exactly afterwards. Tiled mode bounds activation
memory by running the network per tile and blending overlaps with linear
ramp weights that are normalized to partition unity; it is approximate
near seams (the receptive field spans farther than any practical
overlap), so metric reporting should use whole-image mode unless flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import memtrack
from .checkpoint import Checkpoint
from .imageio import ImageBuffer
from .model import ModelConfig, forward, layer_specs, param_count
from .tensor import WORKSPACE_LIMIT

DEFAULT_TILE = 1024
DEFAULT_OVERLAP = 128


@dataclass(frozen=True)
class CropRecord:
    """Original dims needed to undo pad_to_multiple."""

    h: int
    w: int


def _mirror_pad_axis(arr: np.ndarray, axis: int, extra: int) -> np.ndarray:
    # numpy's symmetric mode reflects at most `size` rows per call, so tiny
    # images (down to 1x1) are grown by repeated reflection
    while extra > 0:
        size = arr.shape[axis]
        step = min(extra, size)
        spec = [(0, 0)] * arr.ndim
        spec[axis] = (0, step)
        arr = np.pad(arr, spec, mode="symmetric")
        extra -= step
    return arr


def pad_to_multiple(img: np.ndarray, m: int = 16):
    """Mirror-pad a (h, w, c) image on the right/bottom to multiples of m."""
    if m < 1 or (m & (m - 1)) != 0:
        raise ValueError(f"pad multiple must be a power of two, got {m}")
    h, w = img.shape[0], img.shape[1]
    target_h = -(-h // m) * m
    target_w = -(-w // m) * m
    padded = _mirror_pad_axis(img, 0, target_h - h)
    padded = _mirror_pad_axis(padded, 1, target_w - w)
    return padded, CropRecord(h=h, w=w)


def unpad(img: np.ndarray, record: CropRecord) -> np.ndarray:
    """Crop back to the dims recorded by pad_to_multiple."""
    return np.ascontiguousarray(img[: record.h, : record.w])


def _to_tensor(img: np.ndarray) -> np.ndarray:
    t = np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=np.float32)
    return memtrack.track(t, "canvas")


def _run(img_hwc: np.ndarray, params, config: ModelConfig) -> np.ndarray:
    padded, record = pad_to_multiple(img_hwc, config.spatial_factor)
    if padded is not img_hwc:
        memtrack.track(padded, "canvas")
    x = _to_tensor(padded)
    padded = None
    out, _ = forward(x, params, config, keep_trace=False)
    x = None
    restored = memtrack.track(unpad(out[0].transpose(1, 2, 0), record), "canvas")
    out = None
    np.clip(restored, 0.0, 1.0, out=restored)
    return restored


def _image_data(img) -> np.ndarray:
    data = img.data if isinstance(img, ImageBuffer) else np.asarray(img)
    if data.ndim != 3:
        raise ValueError(f"dehaze: expected (h, w, c) image, got {data.shape}")
    return data


def dehaze(img, ckpt: Checkpoint) -> np.ndarray:
    """Restore a (h, w, c) image in one pass: pad, forward, unpad, clamp."""
    return _run(_image_data(img), ckpt.params, ckpt.config)


@dataclass
class TilePlan:
    """Tile rectangles over a padded image, with ramped blend weights."""

    tile: int
    overlap: int
    height: int
    width: int
    rects: list[tuple[int, int, int, int]]  # y0, x0, y1, x1

    def axis_weights(self, lo: int, hi: int, limit: int) -> np.ndarray:
        """Blend profile along one axis: linear ramps on interior edges."""
        length = hi - lo
        w = np.ones(length, dtype=np.float64)
        ramp = (np.arange(self.overlap) + 1.0) / (self.overlap + 1.0)
        if lo > 0 and self.overlap:
            w[: self.overlap] = ramp
        if hi < limit and self.overlap:
            w[length - self.overlap :] = ramp[::-1]
        return w

    def weight(self, rect) -> np.ndarray:
        y0, x0, y1, x1 = rect
        wy = self.axis_weights(y0, y1, self.height)
        wx = self.axis_weights(x0, x1, self.width)
        return wy[:, None] * wx[None, :]


def plan_tiles(h: int, w: int, tile: int = DEFAULT_TILE,
               overlap: int = DEFAULT_OVERLAP) -> TilePlan:
    """Cover a padded h x w frame with overlapping tiles.

    Tile and overlap must be multiples of 16, tile >= 64 and
    overlap < tile/2; the last tile in each axis is snapped to the border.
    """
    if tile < 64 or tile % 16:
        raise ValueError(f"tile must be >= 64 and a multiple of 16, got {tile}")
    if overlap < 0 or overlap % 16:
        raise ValueError(f"overlap must be a non-negative multiple of 16, "
                         f"got {overlap}")
    if overlap >= tile / 2:
        raise ValueError(f"overlap {overlap} must be smaller than tile/2")

    def starts(dim: int) -> list[int]:
        if dim <= tile:
            return [0]
        step = tile - overlap
        pos = list(range(0, dim - tile + 1, step))
        if pos[-1] != dim - tile:
            pos.append(dim - tile)
        return pos

    rects = []
    for y0 in starts(h):
        for x0 in starts(w):
            rects.append((y0, x0, min(y0 + tile, h), min(x0 + tile, w)))
    return TilePlan(tile=tile, overlap=overlap, height=h, width=w, rects=rects)


def dehaze_tiled(img, ckpt: Checkpoint, plan: TilePlan | None = None,
                 tile: int = DEFAULT_TILE,
                 overlap: int = DEFAULT_OVERLAP) -> np.ndarray:
    """Restore through overlapping tiles under a bounded activation budget.

    Weighted tile outputs are accumulated and normalized by the summed
    blend weights, so the composition partitions unity exactly; with a
    single tile covering the frame this equals whole-image dehaze.
    """
    data = _image_data(img)
    config, params = ckpt.config, ckpt.params
    padded, record = pad_to_multiple(data, config.spatial_factor)
    h, w = padded.shape[0], padded.shape[1]
    if plan is None:
        plan = plan_tiles(h, w, tile, overlap)
    elif plan.height != h or plan.width != w:
        raise ValueError(
            f"tile plan {plan.height}x{plan.width} does not cover the padded "
            f"frame {h}x{w}")
    acc = memtrack.zeros(padded.shape, np.float64, "canvas")
    wsum = memtrack.zeros((h, w), np.float64, "canvas")
    for rect in plan.rects:
        y0, x0, y1, x1 = rect
        piece = np.ascontiguousarray(padded[y0:y1, x0:x1])
        x_t = _to_tensor(piece)
        out, _ = forward(x_t, params, config, keep_trace=False)
        weightmap = plan.weight(rect)
        acc[y0:y1, x0:x1] += out[0].transpose(1, 2, 0) * weightmap[:, :, None]
        wsum[y0:y1, x0:x1] += weightmap
    acc /= wsum[:, :, None]
    return np.clip(unpad(acc, record), 0.0, 1.0).astype(np.float32)


@dataclass
class MemoryEstimate:
    """Analytic memory accounting for one forward pass."""

    params_bytes: int
    peak_bytes: int       # simulated live set: activations + workspace + canvases
    path_sum_bytes: int   # every activation produced along the path, skips retained
    canvas_bytes: int     # input/output tensors and tile blend accumulators
    working_peak_bytes: int  # peak minus canvases: the per-run network working set
    lines: list[str]

    @property
    def total_bytes(self) -> int:
        return self.params_bytes + self.peak_bytes

    def describe(self) -> str:
        return "\n".join(self.lines)


def _conv_workspace(ckk: int, ow: int, oh: int, co: int, item: int,
                    gemm_out: bool) -> int:
    rows = max(1, min(oh, WORKSPACE_LIMIT // max(ckk * ow * item, 1)))
    ws = ckk * rows * ow * item
    if gemm_out:
        ws += co * rows * ow * item
    return ws


def _simulate_forward(n: int, h: int, w: int, config: ModelConfig, item: int):
    """Replay the allocation/free sequence of forward(keep_trace=False)."""
    levels = config.encoder_levels
    size = lambda c, hh, ww: n * c * hh * ww * item
    live = 0
    peak = 0
    path_sum = 0

    def bump(extra: int):
        nonlocal peak
        peak = max(peak, live + extra)

    x_bytes = size(config.image_channels, h, w)
    live += x_bytes  # input tensor held by the caller throughout

    dims: list[tuple[int, int, int]] = []
    ch, cw = h, w
    enc_specs = [(name, spec) for name, kind, spec in layer_specs(config)
                 if name.startswith("enc.")]
    skip_bytes = []
    for name, spec in enc_specs:
        oh, ow = spec.out_size(ch), spec.out_size(cw)
        out_b = size(spec.out_channels, oh, ow)
        ckk = spec.in_channels * spec.kernel ** 2
        bump(out_b + _conv_workspace(ckk, ow, oh, spec.out_channels, item, True))
        live += out_b
        path_sum += out_b
        skip_bytes.append(out_b)
        dims.append((spec.out_channels, oh, ow))
        ch, cw = oh, ow

    cb, bh, bw = dims[-1]
    block_b = size(cb, bh, bw)
    ws_b = _conv_workspace(cb * 9, bw, bh, cb, item, True)
    for b in range(config.res_blocks):
        # the block input, z1 and z2 coexist at the second conv; after the
        # first block the standing input is a fresh buffer beyond the skips
        bump(2 * block_b + ws_b)
        if b == 0:
            live += block_b
        path_sum += 2 * block_b
    path_sum += block_b      # fused output (shortcut applied in the buffer)
    live -= skip_bytes[-1]   # bottleneck skip released after the shortcut

    cur_b = block_b
    ch, cw = bh, bw
    c = cb
    for level in range(levels, 0, -1):
        oh, ow = 2 * ch, 2 * cw
        out_b = size(c // 2, oh, ow)
        # pre-activation + zeroed output + gather buffer during the deconv
        bump(out_b + _conv_workspace((c // 2) * 9, cw, ch, 0, item, False))
        live += out_b
        path_sum += out_b
        live -= cur_b                  # pre-upsample map released after deconv
        live -= skip_bytes[level - 1]  # encoder map released after fusion
        cur_b = out_b
        c //= 2
        ch, cw = oh, ow

    out_b = size(config.image_channels, ch, cw)
    bump(out_b + _conv_workspace(c * 9, cw, ch, config.image_channels, item,
                                 True))
    live += out_b
    live -= cur_b    # final fused map released after the output conv
    path_sum += out_b
    live -= x_bytes  # input tensor dropped before output assembly
    bump(out_b)      # channel-last crop copy coexists with the nchw output
    return peak, path_sum, x_bytes + 2 * out_b


def memory_estimate(h: int, w: int, config: ModelConfig,
                    tile: int | None = None, overlap: int = DEFAULT_OVERLAP,
                    batch: int = 1, dtype_bytes: int = 4) -> MemoryEstimate:
    """Predict peak memory of whole-image or tiled inference on h x w input.

    The per-layer walk retains skip maps exactly as the forward pass does
    and charges the bounded gather/GEMM workspace of each convolution.
    """
    factor = config.spatial_factor
    ph = -(-h // factor) * factor
    pw = -(-w // factor) * factor
    params_b = param_count(config) * dtype_bytes
    mib = lambda b: f"{b / (1 << 20):.1f} MiB"
    if tile is None:
        peak, path_sum, canvas = _simulate_forward(batch, ph, pw, config,
                                                   dtype_bytes)
        lines = [
            f"whole-image inference on {h}x{w} (padded {ph}x{pw}), batch {batch}:",
            f"  parameters: {param_count(config)} values, {mib(params_b)}",
            f"  activations along the path (skips retained): {mib(path_sum)}",
            f"  simulated live peak incl. workspace and canvases: {mib(peak)}",
            f"  canvases (input tensor, output copies): {mib(canvas)}",
            f"  predicted peak incl. parameters: {mib(peak + params_b)}",
        ]
        return MemoryEstimate(params_bytes=params_b, peak_bytes=peak,
                              path_sum_bytes=path_sum, canvas_bytes=canvas,
                              working_peak_bytes=peak - canvas, lines=lines)

    plan = plan_tiles(ph, pw, tile, overlap)
    th = min(tile, ph)
    tw = min(tile, pw)
    tile_peak, tile_path, tile_canvas = _simulate_forward(1, th, tw, config,
                                                          dtype_bytes)
    # float64 output accumulator + weight-sum plane + padded input copy
    acc = ph * pw * config.image_channels * 8 + ph * pw * 8
    src = ph * pw * config.image_channels * dtype_bytes
    canvas = acc + src + tile_canvas
    peak = tile_peak + acc + src
    lines = [
        f"tiled inference on {h}x{w} (padded {ph}x{pw}), tile {tile}, "
        f"overlap {overlap}, {len(plan.rects)} tiles:",
        f"  parameters: {param_count(config)} values, {mib(params_b)}",
        f"  per-tile activations (path sum): {mib(tile_path)}",
        f"  per-tile live peak incl. workspace: {mib(tile_peak)}",
        f"  blend accumulators + padded source: {mib(acc + src)}",
        f"  predicted peak incl. parameters: {mib(peak + params_b)}",
    ]
    return MemoryEstimate(params_bytes=params_b, peak_bytes=peak,
                          path_sum_bytes=tile_path * len(plan.rects),
                          canvas_bytes=canvas,
                          working_peak_bytes=tile_peak - tile_canvas,
                          lines=lines)
