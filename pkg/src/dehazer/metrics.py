"""Full-reference image quality metrics: PSNR and SSIM.

Both operate on channel-last images in the [0, 1] domain with peak 1.0.
SSIM uses the standard 11x11 Gaussian window (sigma 1.5, K1=0.01,
K2=0.03), evaluated only where the window fits entirely inside the image,
computed per channel and averaged. Published benchmark numbers sometimes
use luminance-only SSIM; the per-channel-mean convention used here is
noted in report headers as a comparability caveat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

REPORT_HEADER = (
    "# psnr: peak 1.0 over all channels; inf means identical images\n"
    "# ssim: 11x11 gaussian window sigma 1.5, per-channel mean "
    "(not luminance-only)\n"
)


def _check_pair(name, a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{name}: image dims differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); returns math.inf for identical images."""
    a, b = _check_pair("psnr", a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_profile(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA):
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _windowed_mean(plane, g):
    # weighted local means over all fully interior windows; the Gaussian
    # window is separable, so two 1-D passes avoid materializing the
    # (h, w, 11, 11) window tensor (which would be gigabytes at 4K)
    size = g.shape[0]
    h, w = plane.shape
    rows = np.zeros((h - size + 1, w))
    for i in range(size):
        rows += g[i] * plane[i : h - size + 1 + i, :]
    out = np.zeros((h - size + 1, w - size + 1))
    for j in range(size):
        out += g[j] * rows[:, j : w - size + 1 + j]
    return out


def ssim(a, b) -> float:
    """Mean local structural similarity over fully interior windows."""
    a, b = _check_pair("ssim", a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w = a.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise ValueError(
            f"ssim: image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = _gaussian_profile()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    per_channel = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx = _windowed_mean(x, g)
        my = _windowed_mean(y, g)
        mxx = _windowed_mean(x * x, g)
        myy = _windowed_mean(y * y, g)
        mxy = _windowed_mean(x * y, g)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        score = ((2 * mx * my + c1) * (2 * cov + c2)) / (
            (mx * mx + my * my + c1) * (vx + vy + c2))
        per_channel.append(float(score.mean()))
    return float(np.mean(per_channel))


@dataclass
class MetricReport:
    """Per-image PSNR/SSIM plus aggregate means.

    Infinite PSNR entries (identical pairs) are excluded from the PSNR
    mean and counted separately.
    """

    per_image: list[tuple[str, float, float]] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def psnr_infinite_count(self) -> int:
        return sum(1 for _, p, _ in self.per_image if math.isinf(p))

    @property
    def psnr_mean(self) -> float:
        finite = [p for _, p, _ in self.per_image if math.isfinite(p)]
        return float(np.mean(finite)) if finite else math.nan

    @property
    def ssim_mean(self) -> float:
        vals = [s for _, _, s in self.per_image]
        return float(np.mean(vals)) if vals else math.nan

    def to_tsv(self) -> str:
        lines = [REPORT_HEADER.rstrip("\n"), "name\tpsnr_db\tssim"]
        for name, p, s in self.per_image:
            ptxt = "inf" if math.isinf(p) else f"{p:.4f}"
            lines.append(f"{name}\t{ptxt}\t{s:.6f}")
        lines.append(f"mean\t{self.psnr_mean:.4f}\t{self.ssim_mean:.6f}")
        if self.psnr_infinite_count:
            lines.append(f"# identical pairs excluded from psnr mean: "
                         f"{self.psnr_infinite_count}")
        for name, reason in self.skipped:
            lines.append(f"# skipped {name}: {reason}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        width = max([len(n) for n, _, _ in self.per_image] + [4])
        rows = [f"{'name':<{width}}  {'psnr_db':>9}  {'ssim':>7}"]
        for name, p, s in self.per_image:
            ptxt = "inf" if math.isinf(p) else f"{p:9.3f}"
            rows.append(f"{name:<{width}}  {ptxt:>9}  {s:7.4f}")
        rows.append(f"{'mean':<{width}}  {self.psnr_mean:9.3f}  "
                    f"{self.ssim_mean:7.4f}")
        return "\n".join(rows)


def evaluate_pairs(pairs, names=None) -> MetricReport:
    """PSNR/SSIM for (restored, truth) pairs, in input order.

    A pair that fails (e.g. mismatched dims) is skipped and recorded in
    the report instead of aborting the run.
    """
    report = MetricReport()
    for i, (restored, truth) in enumerate(pairs):
        name = names[i] if names is not None else f"pair{i}"
        try:
            p = psnr(restored, truth)
            s = ssim(restored, truth)
        except ValueError as exc:
            report.skipped.append((name, str(exc)))
            continue
        report.per_image.append((name, p, s))
    return report
