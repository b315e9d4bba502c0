"""Command-line surface.

Subcommands: ``fit``, ``render``, ``sample-vis``, ``bench``, ``oracle``.
Every command accepts ``--seed`` and ``--config FILE``; the config file is
flat ``key=value`` text whose keys mirror the scene and fit field names
(one shared ``seed`` key covers both). Exit codes: 0 success, 1 usage
error, 2 data error (missing or corrupt files, bad config contents),
3 training divergence.
"""

from __future__ import annotations

import dataclasses
import os
import sys

import click
import numpy as np
from PIL import Image

from . import bench as bench_mod
from .camera import orbit_pose, viewing_direction
from .fitting import (INFERENCE_PLANE_COUNT, DivergenceError, FitConfig,
                      fit_vdr, heldout_set, mid_depth, oracle_mse,
                      render_with_model, svd_rank_oracle)
from .mpi import compositing_weights, load_mpi, save_mpi, warp_mpi
from .sampling import dump_batch, mask_images, per_plane_counts, \
    candidate_mask, sample_pixels
from .synthetic import SceneSpec, build_synthetic_mpi
from .viewdep import load_model


class DataError(Exception):
    """A file is missing or its contents are unusable."""


_SCENE_FIELDS = {f.name: f.type for f in dataclasses.fields(SceneSpec)}
_FIT_FIELDS = {f.name: f.type for f in dataclasses.fields(FitConfig)}


def parse_config(path):
    """Flat key=value text -> dict of raw strings."""
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise DataError(f"config file not found: {path}")
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"{path}:{lineno}: expected key=value")
            entries[key.strip()] = value.strip()
    return entries


def _coerce(name, raw, target):
    try:
        if name == "light_direction":
            return tuple(float(x) for x in raw.split(","))
        if target in ("int", int):
            return int(raw)
        if target in ("float", float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise DataError(f"config value {name}={raw!r}: {exc}") from exc


def build_configs(config_path, seed=None):
    """SceneSpec and FitConfig from a config file plus a seed override."""
    raw = parse_config(config_path)
    scene_kwargs, fit_kwargs = {}, {}
    for key, value in raw.items():
        known = False
        if key in _SCENE_FIELDS:
            scene_kwargs[key] = _coerce(key, value, _SCENE_FIELDS[key])
            known = True
        if key in _FIT_FIELDS:
            fit_kwargs[key] = _coerce(key, value, _FIT_FIELDS[key])
            known = True
        if not known:
            raise DataError(f"unknown config key {key!r}")
    if seed is not None:
        scene_kwargs["seed"] = seed
        fit_kwargs["seed"] = seed
    try:
        return SceneSpec(**scene_kwargs), FitConfig(**fit_kwargs)
    except ValueError as exc:
        raise DataError(f"bad config: {exc}") from exc


def _save_png(image, path):
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


@click.group()
def cli():
    """Multiplane-image rendering and view-dependent fitting tools."""


@cli.command(name="fit")
@click.option("--config", type=click.Path(), default=None,
              help="key=value config file")
@click.option("--seed", type=int, default=None, help="master seed override")
@click.option("--out", type=click.Path(), default="fit-out",
              help="output directory")
@click.option("--inference-planes", type=int, default=INFERENCE_PLANE_COUNT,
              show_default=True,
              help="plane count of the exported inference MPI (0 to skip)")
@click.option("--raw-mpi", is_flag=True, default=False,
              help="also write lossless float32 planes")
def fit_command(config, seed, out, inference_planes, raw_mpi):
    """Fit the view-dependent model on a synthetic scene."""
    scene_spec, fit_cfg = build_configs(config, seed)
    result = fit_vdr(scene_spec, fit_cfg)
    os.makedirs(out, exist_ok=True)
    result.write_metrics(os.path.join(out, "metrics.log"))
    from .viewdep import save_model
    save_model(result.model, os.path.join(out, "model.ckpt"),
               extra_header={"w": result.w.tolist(),
                             "scene_seed": scene_spec.seed})
    save_mpi(result.scene.mpi, os.path.join(out, "mpi"), raw=raw_mpi)
    if inference_planes > 0:
        save_mpi(result.scene.build_mpi(inference_planes),
                 os.path.join(out, "mpi-infer"), raw=raw_mpi)
    final = result.records[-1]
    click.echo(f"fit: {fit_cfg.steps} steps, final mse {final[1]:.6g}, "
               f"final lvc {final[2]:.6g}; outputs in {out}")


@cli.command(name="render")
@click.option("--config", type=click.Path(), default=None,
              help="accepted for interface parity; rendering reads the "
                   "checkpoint and MPI only")
@click.option("--seed", type=int, default=None, help="unused; deterministic")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--mpi", "mpi_dir", type=click.Path(), required=True)
@click.option("--yaw", type=float, default=0.0, help="degrees")
@click.option("--pitch", type=float, default=0.0, help="degrees")
@click.option("--out", type=click.Path(), default="render.png")
@click.option("--workers", type=int, default=1)
def render_command(config, seed, checkpoint, mpi_dir, yaw, pitch, out,
                   workers):
    """Expand the view-dependent colors and render one pose to a PNG."""
    del config, seed
    if not os.path.isfile(checkpoint):
        raise DataError(f"checkpoint not found: {checkpoint}")
    try:
        model, header = load_model(checkpoint)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if "w" not in header:
        raise DataError(f"{checkpoint}: missing conditioning vector 'w'")
    try:
        mpi = load_mpi(mpi_dir)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if abs(yaw) > 89.0 or abs(pitch) > 89.0:
        raise click.UsageError("yaw/pitch must stay within +-89 degrees")
    pose = orbit_pose(np.deg2rad(yaw), np.deg2rad(pitch),
                      mid_depth(model.near, model.far), mpi.height, mpi.width)
    image = render_with_model(model, mpi, pose, np.asarray(header["w"]),
                              workers=workers)
    _save_png(image, out)
    click.echo(f"rendered {mpi.num_planes} planes at yaw {yaw} pitch {pitch} "
               f"-> {out}")


@cli.command(name="sample-vis")
@click.option("--config", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--yaw", type=float, default=10.0, help="degrees")
@click.option("--pitch", type=float, default=0.0, help="degrees")
@click.option("--out", type=click.Path(), default="sample-vis")
def sample_vis_command(config, seed, yaw, pitch, out):
    """Write per-plane candidate masks and a sampled-batch dump."""
    scene_spec, fit_cfg = build_configs(config, seed)
    scene = build_synthetic_mpi(scene_spec)
    pose = orbit_pose(np.deg2rad(yaw), np.deg2rad(pitch),
                      mid_depth(scene_spec.near, scene_spec.far),
                      scene_spec.resolution)
    _, warped_alphas = warp_mpi(scene.mpi, pose)
    weights = compositing_weights(np.clip(warped_alphas, 0.0, 1.0))
    batch = sample_pixels(weights, fit_cfg.sample_rate, fit_cfg.seed,
                          depths=scene.mpi.depths)
    os.makedirs(out, exist_ok=True)
    for i, mask in enumerate(mask_images(weights)):
        Image.fromarray(mask, mode="L").save(
            os.path.join(out, f"candidates_{i:04d}.png"))
    with open(os.path.join(out, "batch.txt"), "w") as fh:
        dump_batch(batch, fh)
    counts = per_plane_counts(candidate_mask(weights), fit_cfg.sample_rate)
    click.echo(f"candidates per plane: "
               f"{[int(m.sum()) for m in candidate_mask(weights)]}")
    click.echo(f"sampled per plane (rate {fit_cfg.sample_rate}): {counts}")
    click.echo(f"batch of {len(batch)} entries -> {out}")


@cli.command(name="oracle")
@click.option("--config", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--ranks", type=str, default="1,2,4,8", show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="optional JSON report path")
def oracle_command(config, seed, ranks, out):
    """Truncated-SVD error of the held-out residual matrix by rank."""
    scene_spec, fit_cfg = build_configs(config, seed)
    try:
        rank_list = [int(r) for r in ranks.split(",")]
    except ValueError as exc:
        raise click.UsageError(f"bad --ranks: {exc}") from exc
    scene = build_synthetic_mpi(scene_spec)
    holdout = heldout_set(scene, fit_cfg)
    matrix = holdout.residual_matrix()
    click.echo(f"residual matrix {matrix.shape[0]}x{matrix.shape[1]} "
               f"({fit_cfg.eval_points} points, {fit_cfg.eval_views} views)")
    click.echo("rank tail_squared_error mse")
    rows = []
    for r in rank_list:
        tail = svd_rank_oracle(matrix, r)
        mse = oracle_mse(holdout, r)
        rows.append({"rank": r, "tail_squared_error": tail, "mse": mse})
        click.echo(f"{r} {tail!r} {mse!r}")
    if out:
        import json
        with open(out, "w") as fh:
            json.dump({"matrix_shape": list(matrix.shape), "ranks": rows},
                      fh, indent=2)
            fh.write("\n")


@cli.command(name="bench")
@click.option("--config", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resolution", type=int, default=None)
@click.option("--planes", type=int, default=None)
@click.option("--threads", type=int, default=2, show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True)
@click.option("--rank", type=int, default=8, show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="optional JSON report path")
def bench_command(config, seed, resolution, planes, threads, repeats, rank,
                  out):
    """Throughput of the render and expand+render paths, per backend."""
    raw = parse_config(config)
    resolution = resolution or int(raw.get("resolution", 128))
    planes = planes or int(raw.get("planes", INFERENCE_PLANE_COUNT))
    seed = seed if seed is not None else int(raw.get("seed", 0))
    report = bench_mod.run_benchmark(
        resolution=resolution, planes=planes, threads=threads,
        repeats=repeats, rank=rank, seed=seed)
    click.echo(bench_mod.format_report(report))
    if out:
        bench_mod.save_report(report, out)


def main(argv=None):
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.exceptions.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except DivergenceError as exc:
        click.echo(f"divergence: {exc}", err=True)
        return 3
    except (DataError, FileNotFoundError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
