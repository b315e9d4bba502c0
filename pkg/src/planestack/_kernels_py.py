"""Pure-numpy fallback for the compiled kernels.

Every function mirrors the signature and, operation for operation, the
arithmetic order of its Cython twin in ``_kernels.pyx`` so the two
backends produce identical pixels. All arrays are float64 C-contiguous.
"""

import numpy as np

OUTSIDE = -1.0e9  # sentinel source coordinate, guaranteed off-image


def _source_coords(hmat, width, row0, row1):
    """Map target pixel centers of rows [row0, row1) through hmat."""
    y, x = np.mgrid[row0:row1, 0:width].astype(np.float64)
    den = hmat[2, 0] * x + hmat[2, 1] * y + hmat[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (hmat[0, 0] * x + hmat[0, 1] * y + hmat[0, 2]) / den
        sy = (hmat[1, 0] * x + hmat[1, 1] * y + hmat[1, 2]) / den
    bad = ~(np.abs(den) > 1e-12) | ~np.isfinite(sx) | ~np.isfinite(sy)
    sx[bad] = OUTSIDE
    sy[bad] = OUTSIDE
    return sx, sy


def _corners(s, size):
    lo = np.floor(s)
    frac = s - lo
    lo = lo.astype(np.int64)
    hi = lo + 1
    lo_ok = (lo >= 0) & (lo < size)
    hi_ok = (hi >= 0) & (hi < size)
    return np.clip(lo, 0, size - 1), lo_ok, np.clip(hi, 0, size - 1), hi_ok, frac


def warp_bilinear_rows(src, hmat, out, row0, row1):
    height, width, _ = src.shape
    sx, sy = _source_coords(hmat, out.shape[1], row0, row1)
    x0, x0_ok, x1, x1_ok, fx = _corners(sx, width)
    y0, y0_ok, y1, y1_ok, fy = _corners(sy, height)

    fx = fx[..., None]
    fy = fy[..., None]
    v00 = np.where((y0_ok & x0_ok)[..., None], src[y0, x0], 0.0)
    v01 = np.where((y0_ok & x1_ok)[..., None], src[y0, x1], 0.0)
    v10 = np.where((y1_ok & x0_ok)[..., None], src[y1, x0], 0.0)
    v11 = np.where((y1_ok & x1_ok)[..., None], src[y1, x1], 0.0)
    out[row0:row1] = (((1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v01)
                      + (1.0 - fx) * fy * v10) + fx * fy * v11


def warp_bilinear_grad_rows(gout, hmat, gsrc, row0, row1):
    """Scatter-add adjoint of warp_bilinear_rows into gsrc."""
    height, width, _ = gsrc.shape
    sx, sy = _source_coords(hmat, gout.shape[1], row0, row1)
    x0, x0_ok, x1, x1_ok, fx = _corners(sx, width)
    y0, y0_ok, y1, y1_ok, fy = _corners(sy, height)

    g = gout[row0:row1]
    for yy, xx, ok, w in (
            (y0, x0, y0_ok & x0_ok, (1.0 - fx) * (1.0 - fy)),
            (y0, x1, y0_ok & x1_ok, fx * (1.0 - fy)),
            (y1, x0, y1_ok & x0_ok, (1.0 - fx) * fy),
            (y1, x1, y1_ok & x1_ok, fx * fy)):
        np.add.at(gsrc, (yy[ok], xx[ok]), g[ok] * w[ok][:, None])


def composite_rows(colors, alphas, image, weights, row0, row1):
    """Front-to-back compositing over rows [row0, row1).

    weights[i] = alphas[i] * prod_{j<i} (1 - alphas[j]) and
    image = sum_i weights[i] * colors[i]. Plane 0 is nearest the camera.
    """
    num_planes = colors.shape[0]
    rows = slice(row0, row1)
    transmittance = np.ones_like(alphas[0, rows])
    image[rows] = 0.0
    for i in range(num_planes):
        a = alphas[i, rows]
        w = a * transmittance
        weights[i, rows] = w
        image[rows] += w[..., None] * colors[i, rows]
        transmittance = transmittance * (1.0 - a)
