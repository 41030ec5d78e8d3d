"""Pure-numpy patch gather/scatter kernels.

Fallback used when the compiled extension is unavailable. Semantics are
identical to ``_kernels.pyx``: zero padding is virtual (out-of-bounds
reads yield 0, out-of-bounds scatter targets are dropped) and the
per-element accumulation order in :func:`scatter_patches` is the
kernel-offset order (ky, kx), so both backends produce bitwise-equal
results.
"""


def _valid_range(count: int, start: int, step: int, limit: int):
    """Indices i in [0, count) with 0 <= start + i*step < limit."""
    lo = 0 if start >= 0 else -(start // step)  # ceil(-start / step)
    if start + (count - 1) * step < limit:
        hi = count
    else:
        hi = (limit - 1 - start) // step + 1 if limit - 1 - start >= 0 else 0
    lo = min(max(lo, 0), count)
    return lo, max(hi, lo)


def gather_patches(x, kernel, stride, pad, row_start, row_stop, out):
    """Fill `out` with flattened receptive fields of output rows [row_start, row_stop).

    x is one sample (c, h, w); out is (c*kernel*kernel, rows*ow), row-major
    over (c, ky, kx) x (r, j).
    """
    if not out.flags.c_contiguous:
        raise ValueError("gather_patches: `out` must be C-contiguous")
    c, h, w = x.shape
    k, s = kernel, stride
    ow = (w + 2 * pad - k) // s + 1
    rows = row_stop - row_start
    col = out.reshape(c, k, k, rows, ow)
    out.fill(0)
    for ky in range(k):
        sy = row_start * s + ky - pad
        for kx in range(k):
            sx = kx - pad
            r_lo, r_hi = _valid_range(rows, sy, s, h)
            j_lo, j_hi = _valid_range(ow, sx, s, w)
            if r_hi <= r_lo or j_hi <= j_lo:
                continue
            ys = sy + r_lo * s
            xs = sx + j_lo * s
            col[:, ky, kx, r_lo:r_hi, j_lo:j_hi] = x[
                :, ys : ys + (r_hi - r_lo) * s : s, xs : xs + (j_hi - j_lo) * s : s
            ]
    return out


def scatter_patches(col, kernel, stride, pad, row_start, row_stop, out):
    """Adjoint of gather_patches: accumulate patch columns back into `out` (c, h, w)."""
    c, h, w = out.shape
    k, s = kernel, stride
    ow = (w + 2 * pad - k) // s + 1
    rows = row_stop - row_start
    colv = col.reshape(c, k, k, rows, ow)
    for ky in range(k):
        sy = row_start * s + ky - pad
        for kx in range(k):
            sx = kx - pad
            r_lo, r_hi = _valid_range(rows, sy, s, h)
            j_lo, j_hi = _valid_range(ow, sx, s, w)
            if r_hi <= r_lo or j_hi <= j_lo:
                continue
            ys = sy + r_lo * s
            xs = sx + j_lo * s
            out[
                :, ys : ys + (r_hi - r_lo) * s : s, xs : xs + (j_hi - j_lo) * s : s
            ] += colv[:, ky, kx, r_lo:r_hi, j_lo:j_hi]
    return out
