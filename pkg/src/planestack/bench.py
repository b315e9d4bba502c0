"""Renderer throughput measurements.

Times the plain render path and the expand-plus-render path for every
available kernel backend (compiled extension and numpy fallback), at one
and at N workers, and cross-checks that all variants produce the same
pixels. The position-coefficient volume is computed once and reused
across frames, mirroring how inference amortizes it.
"""

from __future__ import annotations

import json
import time

import numpy as np

from . import backend
from .camera import orbit_pose, viewing_direction
from .fitting import mid_depth
from .mpi import Mpi, plane_homography
from .synthetic import SceneSpec, build_synthetic_mpi
from .viewdep import ViewContext, create_model, expand_view_dependent_mpi, \
    position_volume


def _bench_poses(resolution, near, far, count=4):
    mid = mid_depth(near, far)
    yaws = np.linspace(-0.35, 0.35, count)
    return [orbit_pose(float(y), 0.1 * float(np.sin(3 * y)), mid, resolution)
            for y in yaws]


def _time_per_frame(fn, poses, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for pose in poses:
            fn(pose)
        elapsed = (time.perf_counter() - start) / len(poses)
        best = min(best, elapsed)
    return best


def run_benchmark(resolution=128, planes=96, threads=2, repeats=3, rank=8,
                  seed=0, backends=None):
    """Measure frames/second; returns a machine-readable report dict."""
    spec = SceneSpec(resolution=resolution, planes=planes, seed=seed)
    scene = build_synthetic_mpi(spec)
    mpi = scene.mpi
    model = create_model(rank=rank, w_dim=8, height=resolution,
                         width=resolution, near=spec.near, far=spec.far,
                         seed=seed)
    w = np.random.default_rng([seed, 5]).standard_normal(8)
    poses = _bench_poses(resolution, spec.near, spec.far)

    t0 = time.perf_counter()
    g_volume = position_volume(model, mpi.depths)
    volume_seconds = time.perf_counter() - t0

    report = {
        "resolution": resolution,
        "planes": planes,
        "threads": threads,
        "rank": rank,
        "repeats": repeats,
        "position_volume_seconds": volume_seconds,
        "position_volume_mb": g_volume.nbytes / 1e6,
        "active_backend": backend.active_backend(),
        "backends": {},
    }

    reference = None
    backends = backends or backend.available_backends()
    for name in backends:
        entry = {}
        entry["render_fps_1_worker"] = 1.0 / _time_per_frame(
            lambda pose: _render_backend(mpi, pose, 1, name), poses, repeats)
        entry["render_fps_n_workers"] = 1.0 / _time_per_frame(
            lambda pose: _render_backend(mpi, pose, threads, name),
            poses, repeats)
        entry["expand_render_fps"] = 1.0 / _time_per_frame(
            lambda pose: _expand_render_backend(
                model, mpi, pose, w, g_volume, threads, name),
            poses, repeats)

        serial = _render_backend(mpi, poses[0], 1, name)
        parallel = _render_backend(mpi, poses[0], threads, name)
        entry["worker_max_abs_diff"] = float(
            np.max(np.abs(serial - parallel)))
        if reference is None:
            reference = serial
        entry["backend_max_abs_diff"] = float(
            np.max(np.abs(serial - reference)))
        report["backends"][name] = entry
    return report


def _render_backend(mpi, pose, workers, name):
    colors = np.empty_like(mpi.colors)
    alphas = np.empty_like(mpi.alphas)
    for i, d in enumerate(mpi.depths):
        rgba = np.concatenate([mpi.colors[i], mpi.alphas[i][..., None]],
                              axis=2)
        warped = backend.warp_bilinear(rgba, plane_homography(pose, d),
                                       workers=workers, backend=name)
        colors[i] = warped[..., :3]
        alphas[i] = warped[..., 3]
    image, _ = backend.composite_planes(colors, np.clip(alphas, 0.0, 1.0),
                                        workers=workers, backend=name)
    return image


def _expand_render_backend(model, mpi, pose, w, g_volume, workers, name):
    ctx = ViewContext(viewing_direction(pose), w)
    colors = expand_view_dependent_mpi(model, mpi, ctx, g_volume=g_volume)
    corrected = Mpi(colors=colors, alphas=mpi.alphas, depths=mpi.depths,
                    opaque_background=mpi.opaque_background)
    return _render_backend(corrected, pose, workers, name)


def format_report(report):
    lines = [
        f"resolution {report['resolution']}  planes {report['planes']}  "
        f"threads {report['threads']}  rank {report['rank']}",
        f"position volume: {report['position_volume_mb']:.1f} MB built in "
        f"{report['position_volume_seconds']:.2f} s (once per scene)",
    ]
    for name, entry in report["backends"].items():
        lines.append(
            f"[{name}] render {entry['render_fps_1_worker']:.2f} fps "
            f"(1 worker) / {entry['render_fps_n_workers']:.2f} fps "
            f"({report['threads']} workers); expand+render "
            f"{entry['expand_render_fps']:.2f} fps; worker diff "
            f"{entry['worker_max_abs_diff']:.1e}; backend diff "
            f"{entry['backend_max_abs_diff']:.1e}")
    return "\n".join(lines)


def save_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
