"""Multiplane-image data model and renderer.

An MPI is a stack of fronto-parallel RGBA planes at fixed depths in the
canonical camera frame. Rendering a target view warps every plane by its
plane-induced homography, derives per-plane contribution weights from the
warped alphas, and sums weighted colors. Plane 0 is nearest the camera;
the weight formula

    A_i = alpha_i * prod_{j < i} (1 - alpha_j)

is the front-to-back form of back-to-front over-compositing.

Disk format: a directory with a ``manifest`` key=value text file and one
8-bit RGBA PNG per plane (``plane_0000.png`` ...). A lossless raw float32
variant sits behind ``raw=True`` for precision round-trips.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import autodiff, backend
from .autodiff import Tensor, stack, take_index, tsum
from .camera import CameraPose

ALPHA_TOL = 1e-9


@dataclass
class AlphaWeights:
    """Per-plane, per-pixel compositing weights, shape (L, H, W)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3:
            raise ValueError(f"weights must be (L, H, W), got {w.shape}")
        if w.min() < -ALPHA_TOL or w.max() > 1.0 + ALPHA_TOL:
            raise ValueError("weights outside [0, 1]")
        self.weights = w

    @property
    def num_planes(self):
        return self.weights.shape[0]


@dataclass
class Mpi:
    """L RGBA planes plus strictly increasing depths.

    colors: (L, H, W, 3) in [0, 1]; alphas: (L, H, W) in [0, 1];
    depths: (L,) positive, increasing. With ``opaque_background`` the far
    plane alpha is forced to exactly 1, which makes every rendered pixel a
    convex combination of plane colors.
    """

    colors: np.ndarray
    alphas: np.ndarray
    depths: np.ndarray
    opaque_background: bool = False

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.float64)
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        self.depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        if self.opaque_background:
            self.alphas = self.alphas.copy()
            self.alphas[-1] = 1.0
        self.validate()

    def validate(self):
        if self.colors.ndim != 4 or self.colors.shape[3] != 3:
            raise ValueError(f"colors must be (L, H, W, 3), got {self.colors.shape}")
        if self.alphas.shape != self.colors.shape[:3]:
            raise ValueError(
                f"alphas {self.alphas.shape} do not match colors {self.colors.shape}")
        if self.depths.shape[0] != self.colors.shape[0]:
            raise ValueError("one depth per plane required")
        if self.num_planes < 1:
            raise ValueError("at least one plane required")
        if np.any(self.depths <= 0.0):
            raise ValueError("depths must be positive")
        if np.any(np.diff(self.depths) <= 0.0):
            raise ValueError("depths must be strictly increasing")
        for name, arr in (("colors", self.colors), ("alphas", self.alphas)):
            if arr.min() < -ALPHA_TOL or arr.max() > 1.0 + ALPHA_TOL:
                raise ValueError(f"{name} outside [0, 1]")
        if self.opaque_background and not np.all(self.alphas[-1] == 1.0):
            raise ValueError("far plane must be fully opaque")

    @property
    def num_planes(self):
        return self.colors.shape[0]

    @property
    def height(self):
        return self.colors.shape[1]

    @property
    def width(self):
        return self.colors.shape[2]

    @classmethod
    def from_shared_texture(cls, color, alphas, depths, opaque_background=False):
        """Shared-texture stack: every plane reuses the same RGB image."""
        color = np.asarray(color, dtype=np.float64)
        alphas = np.asarray(alphas, dtype=np.float64)
        colors = np.broadcast_to(color, alphas.shape + (3,)).copy()
        return cls(colors=colors, alphas=alphas, depths=depths,
                   opaque_background=opaque_background)


def plane_depths(num_planes, near, far):
    """Depths with equally spaced disparity (inverse depth), nearest first.

    num_planes = 1 returns just ``near``.
    """
    if num_planes < 1:
        raise ValueError("need at least one plane")
    if not 0.0 < near < far:
        raise ValueError(f"need 0 < near < far, got near={near} far={far}")
    if num_planes == 1:
        return np.array([near], dtype=np.float64)
    disparities = np.linspace(1.0 / near, 1.0 / far, num_planes)
    return 1.0 / disparities


def plane_homography(pose: CameraPose, depth):
    """Pixel map from the target view back to the canonical view for the
    fronto-parallel plane z = depth.

    The identity pose returns an exact identity matrix so identity renders
    are bit-identical to direct compositing. A near-singular result
    (plane through the target camera center) is rejected.
    """
    if depth <= 0.0:
        raise ValueError(f"plane depth must be positive, got {depth}")
    if pose.is_identity():
        return np.eye(3)
    r = pose.rotation
    t = pose.translation
    normal_cam = r @ np.array([0.0, 0.0, 1.0])  # plane normal, camera frame
    dist_cam = depth + normal_cam @ t
    m = r.T - np.outer(r.T @ t, normal_cam) / dist_cam
    h = pose.intrinsic_matrix @ m @ pose.inverse_intrinsic_matrix
    if abs(np.linalg.det(h)) < 1e-12:
        raise ValueError(f"degenerate homography at depth {depth}")
    return h


def warp_image(image, hmat, workers=1):
    """Backward-warp with bilinear interpolation and zero fill outside.

    Accepts (H, W, k) or (H, W) float arrays. See
    :func:`planestack.autodiff.bilinear_warp` for the differentiable form.
    """
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[..., None]
    out = backend.warp_bilinear(image, hmat, workers=workers)
    return out[..., 0] if squeeze else out


def compositing_weights(alphas):
    """AlphaWeights from an (L, H, W) alpha stack, plane 0 nearest."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 3:
        raise ValueError(f"alphas must be (L, H, W), got {alphas.shape}")
    if alphas.min() < -ALPHA_TOL or alphas.max() > 1.0 + ALPHA_TOL:
        raise ValueError("alphas outside [0, 1]")
    dummy = np.zeros(alphas.shape + (3,))
    _, weights = backend.composite_planes(dummy, alphas)
    return AlphaWeights(weights=weights)


def composite(colors, weights: AlphaWeights, workers=1):
    """Weighted sum of plane colors: I = sum_i A_i * C_i."""
    colors = np.asarray(colors, dtype=np.float64)
    w = weights.weights
    if colors.shape[:3] != w.shape:
        raise ValueError(
            f"colors {colors.shape} do not match weights {w.shape}")
    image = np.zeros(colors.shape[1:], dtype=np.float64)
    for i in range(w.shape[0]):
        image += w[i][..., None] * colors[i]
    return image


def warp_mpi(mpi: Mpi, pose: CameraPose, workers=1):
    """Warp every plane (RGB and alpha) to the target pose.

    Returns (colors, alphas) in the target frame. Planes are independent,
    so they are distributed over the worker pool.
    """
    mats = [plane_homography(pose, d) for d in mpi.depths]
    colors = np.empty_like(mpi.colors)
    alphas = np.empty_like(mpi.alphas)

    def warp_plane(i):
        rgba = np.concatenate([mpi.colors[i], mpi.alphas[i][..., None]], axis=2)
        warped = backend.warp_bilinear(rgba, mats[i], workers=1)
        colors[i] = warped[..., :3]
        alphas[i] = warped[..., 3]

    if workers <= 1:
        for i in range(mpi.num_planes):
            warp_plane(i)
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(warp_plane, range(mpi.num_planes)))
    return colors, alphas


def render_mpi(mpi: Mpi, pose: CameraPose, workers=1):
    """Warp all planes to the target pose, then composite.

    Warped alpha samples falling outside the source are zero, so
    off-screen regions of every plane drop out of the composite.
    """
    colors, alphas = warp_mpi(mpi, pose, workers=workers)
    image, _ = backend.composite_planes(colors, np.clip(alphas, 0.0, 1.0),
                                        workers=workers)
    return image


# Differentiable twins. These run on the autodiff tape and are used for
# training and the gradient checks; the plain functions above are the fast
# inference path.

def compositing_weights_t(alphas):
    """Tape version of compositing_weights; alphas is an (L, H, W) tensor."""
    alphas = autodiff.as_tensor(alphas)
    if alphas.data.min() < -ALPHA_TOL or alphas.data.max() > 1.0 + ALPHA_TOL:
        raise ValueError("alphas outside [0, 1]")
    num_planes = alphas.data.shape[0]
    transmittance = None
    weights = []
    for i in range(num_planes):
        a = take_index(alphas, i, axis=0)
        if transmittance is None:
            weights.append(a)
            transmittance = 1.0 - a
        else:
            weights.append(a * transmittance)
            transmittance = transmittance * (1.0 - a)
    return stack(weights, axis=0)


def composite_t(colors, weights):
    """Tape version of composite; differentiable in colors and weights."""
    colors = autodiff.as_tensor(colors)
    weights = autodiff.as_tensor(weights)
    if colors.data.shape[:3] != weights.data.shape:
        raise ValueError(
            f"colors {colors.data.shape} do not match weights "
            f"{weights.data.shape}")
    expanded = autodiff.reshape(
        weights, weights.data.shape + (1,))
    return tsum(expanded * colors, axis=0)


def render_mpi_t(colors, mpi: Mpi, pose: CameraPose):
    """Render with differentiable plane colors and fixed alphas.

    ``colors`` is an (L, H, W, 3) tensor (e.g. the view-dependent color
    volume); alphas and pose come from the fixed MPI geometry. Gradients
    flow through the warp into the plane colors.
    """
    colors = autodiff.as_tensor(colors)
    if colors.data.shape != mpi.colors.shape:
        raise ValueError(
            f"colors {colors.data.shape} do not match mpi {mpi.colors.shape}")
    warped_planes = []
    warped_alphas = np.empty_like(mpi.alphas)
    for i, d in enumerate(mpi.depths):
        hmat = plane_homography(pose, d)
        warped_planes.append(autodiff.bilinear_warp(take_index(colors, i), hmat))
        warped_alphas[i] = warp_image(mpi.alphas[i], hmat)
    weights = compositing_weights(np.clip(warped_alphas, 0.0, 1.0)).weights
    image = None
    for i, plane in enumerate(warped_planes):
        term = plane * weights[i][..., None]
        image = term if image is None else image + term
    return image


# Disk format.

def _write_manifest(path, entries):
    with open(path, "w") as fh:
        for key, value in entries:
            fh.write(f"{key}={value}\n")


def _read_manifest(path):
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


def save_mpi(mpi: Mpi, directory, raw=False):
    """Write manifest + per-plane RGBA files.

    PNG quantizes to 8 bits; pass raw=True to add lossless float32 planes
    (little-endian, H*W*4 values per file).
    """
    os.makedirs(directory, exist_ok=True)
    entries = [
        ("format", 1),
        ("planes", mpi.num_planes),
        ("height", mpi.height),
        ("width", mpi.width),
        ("near", repr(float(mpi.depths[0]))),
        ("far", repr(float(mpi.depths[-1]))),
        ("opaque_background", int(mpi.opaque_background)),
        ("raw", int(raw)),
        ("depths", ",".join(repr(float(d)) for d in mpi.depths)),
        ("capture_rotation", ",".join("1" if i == j else "0"
                                      for i in range(3) for j in range(3))),
        ("capture_translation", "0,0,0"),
    ]
    _write_manifest(os.path.join(directory, "manifest"), entries)
    for i in range(mpi.num_planes):
        rgba = np.concatenate(
            [mpi.colors[i], mpi.alphas[i][..., None]], axis=2)
        quantized = np.round(np.clip(rgba, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(quantized, mode="RGBA").save(
            os.path.join(directory, f"plane_{i:04d}.png"))
        if raw:
            rgba.astype("<f4").tofile(
                os.path.join(directory, f"plane_{i:04d}.raw"))


def load_mpi(directory):
    manifest_path = os.path.join(directory, "manifest")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"no manifest in {directory}")
    m = _read_manifest(manifest_path)
    try:
        num_planes = int(m["planes"])
        height, width = int(m["height"]), int(m["width"])
        depths = np.array([float(x) for x in m["depths"].split(",")])
        opaque = bool(int(m["opaque_background"]))
        raw = bool(int(m.get("raw", "0")))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"corrupt manifest in {directory}: {exc}") from exc
    colors = np.empty((num_planes, height, width, 3))
    alphas = np.empty((num_planes, height, width))
    for i in range(num_planes):
        if raw:
            data = np.fromfile(
                os.path.join(directory, f"plane_{i:04d}.raw"), dtype="<f4")
            rgba = data.astype(np.float64).reshape(height, width, 4)
        else:
            png = Image.open(os.path.join(directory, f"plane_{i:04d}.png"))
            rgba = np.asarray(png, dtype=np.float64) / 255.0
        colors[i] = rgba[..., :3]
        alphas[i] = rgba[..., 3]
    return Mpi(colors=colors, alphas=np.clip(alphas, 0.0, 1.0), depths=depths,
               opaque_background=opaque)
