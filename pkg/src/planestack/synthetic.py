"""Procedural view-dependent test scenes.

A scene is a stack of layers in the canonical frame: an opaque textured
background at the far depth plus a few soft-edged discs at intermediate
plane depths. Shading is Lambertian plus a Phong lobe,

    radiance(p, v) = albedo(p) * max(0, n . l)
                     + k_s * max(0, r . v)^shininess

with the plane normal n facing the camera, a fixed light direction l
(pointing from the surface toward the light), r the mirror reflection of
l about n, and v the unit direction from the surface point toward the
viewer. The albedo is a smooth sum of seeded sinusoids evaluated at
continuous canonical pixel coordinates, so ground-truth images can be
rendered at any pose without resampling error.

The diffuse term is view-independent; all view dependence enters through
the specular lobe via the per-pixel viewing direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, default_intrinsics, identity_pose
from .mpi import Mpi, plane_depths, plane_homography


@dataclass(frozen=True)
class SceneSpec:
    """Scene parameters. Resolution must be a power of two (tests stay at
    or below 256)."""

    resolution: int = 64
    planes: int = 32
    near: float = 0.95
    far: float = 1.12
    specular_strength: float = 0.55
    shininess: float = 40.0
    light_direction: tuple = (0.35, -0.25, -0.9)
    disc_layers: int = 3
    seed: int = 0

    def __post_init__(self):
        h = self.resolution
        if h < 4 or h > 1024 or (h & (h - 1)) != 0:
            raise ValueError(
                f"resolution must be a power of two in [4, 1024], got {h}")
        if self.planes < 1:
            raise ValueError("need at least one plane")
        if not 0.0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got {self.near}/{self.far}")
        if self.shininess < 1.0:
            raise ValueError(f"shininess must be >= 1, got {self.shininess}")
        if self.specular_strength < 0.0:
            raise ValueError("specular strength must be >= 0")
        l = np.asarray(self.light_direction, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(l)
        if norm == 0.0:
            raise ValueError("light direction must be nonzero")
        object.__setattr__(self, "light_direction", tuple(l / norm))


PLANE_NORMAL = np.array([0.0, 0.0, -1.0])  # toward the canonical camera


@dataclass
class _Disc:
    depth: float
    center_x: float
    center_y: float
    radius: float
    edge: float

    def alpha(self, xs, ys):
        dist = np.sqrt((np.asarray(xs, dtype=np.float64) - self.center_x) ** 2
                       + (np.asarray(ys, dtype=np.float64) - self.center_y) ** 2)
        return np.clip(0.5 + (self.radius - dist) / self.edge, 0.0, 1.0)


class SyntheticScene:
    """A realized scene: continuous layer/texture functions, the
    rasterized MPI, and ground-truth rendering."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        h = spec.resolution
        self.intrinsics = default_intrinsics(h)
        self.depths = plane_depths(spec.planes, spec.near, spec.far)
        rng = np.random.default_rng(spec.seed)

        # Smooth albedo: 4 sinusoidal waves per channel, normalized so the
        # texture stays inside [0.1, 0.9].
        n_waves = 4
        self._wave_freq = rng.uniform(0.5, 3.0, size=(3, n_waves, 2))
        self._wave_freq *= rng.choice([-1.0, 1.0], size=(3, n_waves, 2))
        self._wave_phase = rng.uniform(0.0, 2.0 * np.pi, size=(3, n_waves))
        amps = rng.uniform(0.4, 1.0, size=(3, n_waves))
        self._wave_amp = 0.38 * amps / amps.sum(axis=1, keepdims=True)

        # Disc layers occupy distinct non-background planes; their depths
        # coincide exactly with training plane depths.
        self.discs = []
        if spec.planes > 1 and spec.disc_layers > 0:
            slots = rng.choice(spec.planes - 1,
                               size=min(spec.disc_layers, spec.planes - 1),
                               replace=False)
            for slot in np.sort(slots):
                self.discs.append(_Disc(
                    depth=float(self.depths[slot]),
                    center_x=float(rng.uniform(0.25 * h, 0.75 * h)),
                    center_y=float(rng.uniform(0.25 * h, 0.75 * h)),
                    radius=float(rng.uniform(0.14 * h, 0.28 * h)),
                    edge=1.5))

        light = np.asarray(spec.light_direction)
        self._n_dot_l = max(0.0, float(PLANE_NORMAL @ light))
        self._reflect = 2.0 * (PLANE_NORMAL @ light) * PLANE_NORMAL - light

        xs, ys = np.meshgrid(np.arange(h), np.arange(h))
        self.diffuse_raster = self.diffuse(xs, ys)
        self.mpi = self.build_mpi()

    # Continuous texture and shading.

    def albedo(self, xs, ys):
        """Albedo at (fractional) canonical pixel coordinates, (..., 3)."""
        xs = np.asarray(xs, dtype=np.float64) / self.spec.resolution
        ys = np.asarray(ys, dtype=np.float64) / self.spec.resolution
        out = np.empty(xs.shape + (3,))
        for c in range(3):
            acc = np.full_like(xs, 0.5)
            for m in range(self._wave_freq.shape[1]):
                fx, fy = self._wave_freq[c, m]
                acc = acc + self._wave_amp[c, m] * np.sin(
                    2.0 * np.pi * (fx * xs + fy * ys) + self._wave_phase[c, m])
            out[..., c] = acc
        return out

    def diffuse(self, xs, ys):
        return self.albedo(xs, ys) * self._n_dot_l

    def specular(self, v):
        """Phong lobe for unit view directions v (..., 3); scalar result
        shared by the channels, peaking at exactly k_s when v equals the
        reflection direction."""
        v = np.asarray(v, dtype=np.float64)
        alignment = np.clip(v @ self._reflect, 0.0, None)
        return self.spec.specular_strength * alignment ** self.spec.shininess

    def radiance(self, points, v):
        """Radiance of canonical 3-d surface points under unit directions
        v pointing from the surface toward the viewer."""
        points = np.asarray(points, dtype=np.float64)
        xs, ys = self._project(points)
        return self.diffuse(xs, ys) + self.specular(v)[..., None]

    def _project(self, points):
        intr = self.intrinsics
        z = points[..., 2]
        return (intr["fx"] * points[..., 0] / z + intr["cx"],
                intr["fy"] * points[..., 1] / z + intr["cy"])

    def backproject(self, xs, ys, depth):
        """Canonical pixel coordinates on the plane z = depth to 3-d."""
        intr = self.intrinsics
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        return np.stack([(xs - intr["cx"]) / intr["fx"] * depth,
                         (ys - intr["cy"]) / intr["fy"] * depth,
                         np.broadcast_to(depth, xs.shape)], axis=-1)

    # Rasterization and ground truth.

    def build_mpi(self, num_planes=None):
        """Rasterize to an MPI; discs land on the disparity-nearest plane
        of the requested grid, the background fills the far plane."""
        spec = self.spec
        h = spec.resolution
        num_planes = num_planes or spec.planes
        depths = plane_depths(num_planes, spec.near, spec.far)
        alphas = np.zeros((num_planes, h, h))
        xs, ys = np.meshgrid(np.arange(h), np.arange(h))
        for disc in self.discs:
            slot = int(np.argmin(np.abs(1.0 / depths - 1.0 / disc.depth)))
            a = disc.alpha(xs, ys)
            alphas[slot] = 1.0 - (1.0 - alphas[slot]) * (1.0 - a)
        alphas[-1] = 1.0
        return Mpi.from_shared_texture(
            self.diffuse_raster, alphas, depths, opaque_background=True)

    def _layers(self):
        layers = [(d.depth, d.alpha) for d in self.discs]
        layers.append((float(self.depths[-1]), None))  # opaque background
        return sorted(layers, key=lambda item: item[0])

    def gt_render(self, pose: CameraPose):
        """Ground-truth image at a pose, ray-marched over the continuous
        layers with per-pixel viewing directions. Textures are evaluated
        analytically, so this render is independent of the MPI warp and
        compositing code paths."""
        h = self.spec.resolution
        xs, ys = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        image = np.zeros((h, h, 3))
        transmittance = np.ones((h, h))
        center = pose.camera_center
        for depth, alpha_fn in self._layers():
            sx, sy = _map_through(plane_homography(pose, depth), xs, ys)
            alpha = np.ones((h, h)) if alpha_fn is None else alpha_fn(sx, sy)
            points = self.backproject(sx, sy, depth)
            d = center - points
            v = d / np.linalg.norm(d, axis=-1, keepdims=True)
            color = self.diffuse(sx, sy) + self.specular(v)[..., None]
            weight = alpha * transmittance
            image += weight[..., None] * color
            transmittance = transmittance * (1.0 - alpha)
        return image

    def entry_targets(self, batch, pose: CameraPose):
        """Ground-truth radiance for sampled entries in the target frame.

        Each entry's surface point comes from its own plane's homography;
        the viewing direction is per pixel.
        """
        targets = np.empty((len(batch), 3))
        center = pose.camera_center
        for plane in np.unique(batch.planes):
            sel = batch.planes == plane
            depth = batch.depths[sel][0]
            sx, sy = _map_through(plane_homography(pose, depth),
                                  batch.xs[sel].astype(np.float64),
                                  batch.ys[sel].astype(np.float64))
            points = self.backproject(sx, sy, depth)
            d = center - points
            v = d / np.linalg.norm(d, axis=-1, keepdims=True)
            targets[sel] = self.diffuse(sx, sy) + self.specular(v)[..., None]
        return targets


def _map_through(hmat, xs, ys):
    den = hmat[2, 0] * xs + hmat[2, 1] * ys + hmat[2, 2]
    sx = (hmat[0, 0] * xs + hmat[0, 1] * ys + hmat[0, 2]) / den
    sy = (hmat[1, 0] * xs + hmat[1, 1] * ys + hmat[1, 2]) / den
    return sx, sy


def build_synthetic_mpi(spec: SceneSpec):
    """Realize a scene spec; the result carries the rasterized MPI and the
    ground-truth render function."""
    return SyntheticScene(spec)


def synthetic_radiance(scene, points, v):
    """Radiance R(p, v) of a scene (SceneSpec or SyntheticScene)."""
    if isinstance(scene, SceneSpec):
        scene = SyntheticScene(scene)
    return scene.radiance(points, v)
