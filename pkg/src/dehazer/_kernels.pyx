# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled patch gather/scatter kernels.

Same contract as ``_kernels_py``: virtual zero padding, and scatter
accumulates per target element in kernel-offset (ky, kx) order so results
are bitwise-equal to the pure-numpy fallback.
"""

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t start, Py_ssize_t step) nogil:
    # smallest i >= 0 with start + i*step >= 0
    if start >= 0:
        return 0
    return (-start + step - 1) // step


cdef inline Py_ssize_t _hi(Py_ssize_t count, Py_ssize_t start, Py_ssize_t step,
                           Py_ssize_t limit) nogil:
    # smallest bound > all i with start + i*step < limit, clamped to count
    cdef Py_ssize_t h
    if limit - 1 - start < 0:
        return 0
    h = (limit - 1 - start) // step + 1
    return count if h > count else h


def gather_patches(real[:, :, ::1] x, Py_ssize_t kernel, Py_ssize_t stride,
                   Py_ssize_t pad, Py_ssize_t row_start, Py_ssize_t row_stop,
                   real[:, ::1] out):
    """Fill `out` (c*k*k, rows*ow) with receptive-field patches of one sample."""
    cdef Py_ssize_t c_dim = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t k = kernel, s = stride
    cdef Py_ssize_t ow = (w + 2 * pad - k) // s + 1
    cdef Py_ssize_t rows = row_stop - row_start
    cdef Py_ssize_t c, ky, kx, r, j, iy, base, patch_row
    cdef Py_ssize_t sx, j_lo, j_hi, r_lo, r_hi, sy
    with nogil:
        for c in range(c_dim):
            for ky in range(k):
                sy = row_start * s + ky - pad
                r_lo = _lo(sy, s)
                r_hi = _hi(rows, sy, s, h)
                for kx in range(k):
                    sx = kx - pad
                    j_lo = _lo(sx, s)
                    j_hi = _hi(ow, sx, s, w)
                    patch_row = (c * k + ky) * k + kx
                    for r in range(rows):
                        base = r * ow
                        iy = sy + r * s
                        if r < r_lo or r >= r_hi:
                            for j in range(ow):
                                out[patch_row, base + j] = 0
                        else:
                            for j in range(j_lo):
                                out[patch_row, base + j] = 0
                            for j in range(j_lo, j_hi):
                                out[patch_row, base + j] = x[c, iy, sx + j * s]
                            for j in range(j_hi, ow):
                                out[patch_row, base + j] = 0
    return out


def scatter_patches(real[:, ::1] col, Py_ssize_t kernel, Py_ssize_t stride,
                    Py_ssize_t pad, Py_ssize_t row_start, Py_ssize_t row_stop,
                    real[:, :, ::1] out):
    """Adjoint of gather_patches: accumulate patch columns back into `out`."""
    cdef Py_ssize_t c_dim = out.shape[0], h = out.shape[1], w = out.shape[2]
    cdef Py_ssize_t k = kernel, s = stride
    cdef Py_ssize_t ow = (w + 2 * pad - k) // s + 1
    cdef Py_ssize_t rows = row_stop - row_start
    cdef Py_ssize_t c, ky, kx, r, j, iy, base, patch_row
    cdef Py_ssize_t sx, j_lo, j_hi, r_lo, r_hi, sy
    with nogil:
        for c in range(c_dim):
            for ky in range(k):
                sy = row_start * s + ky - pad
                r_lo = _lo(sy, s)
                r_hi = _hi(rows, sy, s, h)
                for kx in range(k):
                    sx = kx - pad
                    j_lo = _lo(sx, s)
                    j_hi = _hi(ow, sx, s, w)
                    patch_row = (c * k + ky) * k + kx
                    for r in range(r_lo, r_hi):
                        base = r * ow
                        iy = sy + r * s
                        for j in range(j_lo, j_hi):
                            out[c, iy, sx + j * s] += col[patch_row, base + j]
    return out
