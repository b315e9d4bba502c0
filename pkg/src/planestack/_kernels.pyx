# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled twins of _kernels_py: bilinear homography warp (forward and
# scatter adjoint) and front-to-back plane compositing. Loops release the
# GIL so a thread pool can split rows across cores. The arithmetic order
# matches _kernels_py exactly; both backends must agree pixel for pixel.

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, fabs, isfinite

cnp.import_array()

DEF OUTSIDE = -1.0e9


cdef inline void _map_pixel(const double* h, double x, double y,
                            double* sx, double* sy) noexcept nogil:
    cdef double den = h[6] * x + h[7] * y + h[8]
    if fabs(den) > 1e-12:
        sx[0] = (h[0] * x + h[1] * y + h[2]) / den
        sy[0] = (h[3] * x + h[4] * y + h[5]) / den
        if not (isfinite(sx[0]) and isfinite(sy[0])):
            sx[0] = OUTSIDE
            sy[0] = OUTSIDE
    else:
        sx[0] = OUTSIDE
        sy[0] = OUTSIDE


def warp_bilinear_rows(double[:, :, ::1] src, double[:, ::1] hmat,
                       double[:, :, ::1] out, Py_ssize_t row0, Py_ssize_t row1):
    cdef Py_ssize_t height = src.shape[0]
    cdef Py_ssize_t width = src.shape[1]
    cdef Py_ssize_t channels = src.shape[2]
    cdef Py_ssize_t out_width = out.shape[1]
    cdef double h[9]
    cdef Py_ssize_t i, j, c, x0, x1, y0, y1
    cdef double sx, sy, fx, fy, v00, v01, v10, v11
    cdef bint x0_ok, x1_ok, y0_ok, y1_ok

    for i in range(3):
        for j in range(3):
            h[3 * i + j] = hmat[i, j]

    with nogil:
        for i in range(row0, row1):
            for j in range(out_width):
                _map_pixel(h, <double>j, <double>i, &sx, &sy)
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - <double>x0
                fy = sy - <double>y0
                x1 = x0 + 1
                y1 = y0 + 1
                x0_ok = 0 <= x0 < width
                x1_ok = 0 <= x1 < width
                y0_ok = 0 <= y0 < height
                y1_ok = 0 <= y1 < height
                for c in range(channels):
                    v00 = src[y0, x0, c] if (y0_ok and x0_ok) else 0.0
                    v01 = src[y0, x1, c] if (y0_ok and x1_ok) else 0.0
                    v10 = src[y1, x0, c] if (y1_ok and x0_ok) else 0.0
                    v11 = src[y1, x1, c] if (y1_ok and x1_ok) else 0.0
                    out[i, j, c] = (((1.0 - fx) * (1.0 - fy) * v00
                                     + fx * (1.0 - fy) * v01)
                                    + (1.0 - fx) * fy * v10) + fx * fy * v11


def warp_bilinear_grad_rows(double[:, :, ::1] gout, double[:, ::1] hmat,
                            double[:, :, ::1] gsrc,
                            Py_ssize_t row0, Py_ssize_t row1):
    # Scatter adjoint; writes overlap between pixels, so callers must not
    # split rows of the same gsrc across threads.
    cdef Py_ssize_t height = gsrc.shape[0]
    cdef Py_ssize_t width = gsrc.shape[1]
    cdef Py_ssize_t channels = gsrc.shape[2]
    cdef Py_ssize_t out_width = gout.shape[1]
    cdef double h[9]
    cdef Py_ssize_t i, j, c, x0, x1, y0, y1
    cdef double sx, sy, fx, fy, g
    cdef bint x0_ok, x1_ok, y0_ok, y1_ok

    for i in range(3):
        for j in range(3):
            h[3 * i + j] = hmat[i, j]

    with nogil:
        for i in range(row0, row1):
            for j in range(out_width):
                _map_pixel(h, <double>j, <double>i, &sx, &sy)
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - <double>x0
                fy = sy - <double>y0
                x1 = x0 + 1
                y1 = y0 + 1
                x0_ok = 0 <= x0 < width
                x1_ok = 0 <= x1 < width
                y0_ok = 0 <= y0 < height
                y1_ok = 0 <= y1 < height
                for c in range(channels):
                    g = gout[i, j, c]
                    if y0_ok and x0_ok:
                        gsrc[y0, x0, c] += g * ((1.0 - fx) * (1.0 - fy))
                    if y0_ok and x1_ok:
                        gsrc[y0, x1, c] += g * (fx * (1.0 - fy))
                    if y1_ok and x0_ok:
                        gsrc[y1, x0, c] += g * ((1.0 - fx) * fy)
                    if y1_ok and x1_ok:
                        gsrc[y1, x1, c] += g * (fx * fy)


def composite_rows(double[:, :, :, ::1] colors, double[:, :, ::1] alphas,
                   double[:, :, ::1] image, double[:, :, ::1] weights,
                   Py_ssize_t row0, Py_ssize_t row1):
    cdef Py_ssize_t num_planes = colors.shape[0]
    cdef Py_ssize_t width = colors.shape[2]
    cdef Py_ssize_t i, j, p, c
    cdef double transmittance, a, w

    with nogil:
        for i in range(row0, row1):
            for j in range(width):
                transmittance = 1.0
                for c in range(3):
                    image[i, j, c] = 0.0
                for p in range(num_planes):
                    a = alphas[p, i, j]
                    w = a * transmittance
                    weights[p, i, j] = w
                    for c in range(3):
                        image[i, j, c] += w * colors[p, i, j, c]
                    transmittance = transmittance * (1.0 - a)
