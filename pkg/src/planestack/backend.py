"""Kernel backend selection.

The hot per-pixel kernels (homography warp, plane compositing) exist twice:
a Cython extension (``planestack._kernels``) and a numpy fallback
(``planestack._kernels_py``). The compiled module is preferred when it
imported cleanly; set ``PLANESTACK_BACKEND=python`` or ``=compiled`` to
force one. Both produce identical pixels; ``planestack bench`` reports the
throughput of each.

Worker parallelism splits output rows into contiguous slabs, one per
worker. Slabs are disjoint, so results are independent of the worker count
and of scheduling order.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

try:
    from . import _kernels  # compiled extension, optional at runtime
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None

_FORCED = os.environ.get("PLANESTACK_BACKEND", "").strip().lower()
if _FORCED not in ("", "python", "compiled"):
    raise RuntimeError(
        f"PLANESTACK_BACKEND must be 'python' or 'compiled', got {_FORCED!r}")
if _FORCED == "compiled" and _kernels is None:
    raise RuntimeError(
        "PLANESTACK_BACKEND=compiled but the extension failed to import")

HAVE_COMPILED = _kernels is not None


def available_backends():
    return ("compiled", "python") if HAVE_COMPILED else ("python",)


def active_backend():
    if _FORCED:
        return _FORCED
    return "compiled" if HAVE_COMPILED else "python"


def _module(backend=None):
    name = backend or active_backend()
    if name == "compiled":
        if _kernels is None:
            raise RuntimeError("compiled backend is not available")
        return _kernels
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {name!r}")


def _row_slabs(height, workers):
    workers = max(1, min(int(workers), height))
    bounds = np.linspace(0, height, workers + 1, dtype=int)
    return [(int(bounds[k]), int(bounds[k + 1]))
            for k in range(workers) if bounds[k] < bounds[k + 1]]


def _run_rows(fn, height, workers):
    slabs = _row_slabs(height, workers)
    if len(slabs) == 1:
        fn(*slabs[0])
        return
    with ThreadPoolExecutor(max_workers=len(slabs)) as pool:
        list(pool.map(lambda s: fn(*s), slabs))


def _prep(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def warp_bilinear(src, hmat, workers=1, backend=None):
    """Backward-warp an (H, W, C) image by the 3x3 pixel map ``hmat``.

    Output pixel (x, y) samples the source at hmat @ (x, y, 1) with
    bilinear interpolation; samples outside the source are zero.
    """
    src = _prep(src)
    hmat = _prep(hmat)
    if src.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {src.shape}")
    if hmat.shape != (3, 3):
        raise ValueError(f"expected 3x3 homography, got shape {hmat.shape}")
    out = np.empty_like(src)
    mod = _module(backend)
    _run_rows(lambda r0, r1: mod.warp_bilinear_rows(src, hmat, out, r0, r1),
              src.shape[0], workers)
    return out


def warp_bilinear_grad(gout, hmat, src_shape, backend=None):
    """Adjoint of warp_bilinear with respect to source pixels."""
    gout = _prep(gout)
    hmat = _prep(hmat)
    gsrc = np.zeros(src_shape, dtype=np.float64)
    # Scatter writes collide between rows, so this stays single threaded.
    _module(backend).warp_bilinear_grad_rows(gout, hmat, gsrc, 0, gout.shape[0])
    return gsrc


def composite_planes(colors, alphas, workers=1, backend=None):
    """Composite an (L, H, W, 3) color stack with (L, H, W) alphas.

    Returns (image, weights): the (H, W, 3) composite and the (L, H, W)
    per-plane contribution weights. Plane 0 is nearest the camera.
    """
    colors = _prep(colors)
    alphas = _prep(alphas)
    if colors.ndim != 4 or colors.shape[3] != 3:
        raise ValueError(f"expected (L, H, W, 3) colors, got {colors.shape}")
    if alphas.shape != colors.shape[:3]:
        raise ValueError(
            f"alphas shape {alphas.shape} does not match colors {colors.shape}")
    image = np.empty(colors.shape[1:], dtype=np.float64)
    weights = np.empty_like(alphas)
    mod = _module(backend)
    _run_rows(
        lambda r0, r1: mod.composite_rows(colors, alphas, image, weights, r0, r1),
        colors.shape[1], workers)
    return image, weights
