"""Benchmark the compiled gather/scatter kernels against the numpy fallback.

The patch gather and scatter-add dominate convolution time outside the
BLAS multiply itself, and are the reason the compiled extension exists.
Run through `dehazer bench`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .kernels import BACKEND, available_backends
from .tensor import ConvSpec, conv2d

DEFAULT_CASES = (
    # (label, channels, h, w, kernel, stride)
    ("stem 11x11 s1, 3ch 512x512", 3, 512, 512, 11, 1),
    ("down 3x3 s2, 32ch 256x256", 32, 256, 256, 3, 2),
    ("block 3x3 s1, 128ch 128x128", 128, 128, 128, 3, 1),
)


@dataclass
class BenchRow:
    label: str
    op: str
    seconds: dict[str, float]

    def speedup(self) -> float | None:
        if "python" in self.seconds and "compiled" in self.seconds:
            return self.seconds["python"] / self.seconds["compiled"]
        return None


def _time(fn, repeats: int = 3) -> float:
    fn()  # warm-up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_kernel_bench(cases=DEFAULT_CASES, repeats: int = 3) -> list[BenchRow]:
    backends = available_backends()
    rows = []
    for label, c, h, w, k, s in cases:
        pad = (k - 1) // 2
        ow = (w + 2 * pad - k) // s + 1
        oh = (h + 2 * pad - k) // s + 1
        x = np.random.default_rng(0).standard_normal((c, h, w)).astype(np.float32)
        col = np.empty((c * k * k, oh * ow), dtype=np.float32)
        target = np.zeros((c, h, w), dtype=np.float32)
        gather_times = {}
        scatter_times = {}
        for name, mod in backends.items():
            gather_times[name] = _time(
                lambda m=mod: m.gather_patches(x, k, s, pad, 0, oh, col), repeats)
            scatter_times[name] = _time(
                lambda m=mod: m.scatter_patches(col, k, s, pad, 0, oh, target),
                repeats)
        rows.append(BenchRow(label, "gather", gather_times))
        rows.append(BenchRow(label, "scatter", scatter_times))
    return rows


def run_conv_bench(repeats: int = 3) -> list[BenchRow]:
    """End-to-end conv2d comparison by swapping the selected backend."""
    from . import kernels

    backends = available_backends()
    rows = []
    for label, c, h, w, k, s in DEFAULT_CASES:
        spec = ConvSpec(k, s, (k - 1) // 2, c, max(c, 16))
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, c, h, w)).astype(np.float32)
        wgt = rng.standard_normal(
            (spec.out_channels, c, k, k)).astype(np.float32)
        times = {}
        original = (kernels.gather_patches, kernels.scatter_patches)
        try:
            for name, mod in backends.items():
                kernels.gather_patches = mod.gather_patches
                kernels.scatter_patches = mod.scatter_patches
                times[name] = _time(lambda: conv2d(x, wgt, None, spec), repeats)
        finally:
            kernels.gather_patches, kernels.scatter_patches = original
        rows.append(BenchRow(label, "conv2d", times))
    return rows


def format_rows(rows: list[BenchRow]) -> str:
    names = sorted({n for r in rows for n in r.seconds})
    head = f"{'case':<34} {'op':<8}" + "".join(f" {n:>12}" for n in names)
    head += "     speedup" if len(names) > 1 else ""
    lines = [head, "-" * len(head)]
    for r in rows:
        cells = "".join(f" {r.seconds.get(n, float('nan')) * 1e3:>10.2f}ms"
                        for n in names)
        sp = r.speedup()
        tail = f"  {sp:>9.2f}x" if sp is not None else ""
        lines.append(f"{r.label:<34} {r.op:<8}{cells}{tail}")
    lines.append(f"selected backend: {BACKEND}")
    return "\n".join(lines)
