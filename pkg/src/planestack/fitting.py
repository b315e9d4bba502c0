"""Desk-scale fitting of the view-dependent color model.

Each step draws a target pose, warps the MPI there, alpha-guides a pixel
batch, and regresses the modeled colors against ground-truth radiance
(which stands in for the adversarial signal). An optional view-consistency
term compares the corrected render at the first pose against the plain
render at a second pose warped across.

The quality yardstick is the truncated-SVD oracle: on a residual matrix of
(radiance - g0) sampled over points and views, the best rank-N
approximation error is the optimum any rank-N factorization can reach.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .autodiff import (Tensor, clamp, reshape, scatter_add_pixels, square,
                       tmean, tsum)
from .camera import (CameraPose, orbit_pose, pixel_view_directions,
                     viewing_direction)
from .losses import SsimConfig, view_consistency_loss_t
from .mpi import (Mpi, compositing_weights, plane_homography, render_mpi,
                  warp_image, warp_mpi)
from .nn import Adam, grad_norm
from .sampling import SampleBatch, sample_pixels
from .synthetic import SceneSpec, SyntheticScene, build_synthetic_mpi
from .viewdep import (PosEncodingConfig, ViewContext, ViewDepModel,
                      batch_coordinates, create_model,
                      expand_view_dependent_mpi, position_coefficients,
                      position_coefficients_t, view_coefficients,
                      view_coefficients_t)

TRAIN_PLANE_COUNT = 32      # default plane count while fitting
INFERENCE_PLANE_COUNT = 96  # default plane count when rendering


class DivergenceError(RuntimeError):
    """Raised when the training loss exceeds 1000x its initial value."""


@dataclass(frozen=True)
class FitConfig:
    rank: int = 8
    sample_rate: float = 0.06
    steps: int = 2000
    learning_rate: float = 2e-3
    lvc_weight: float = 0.5
    lvc_delta: float = 0.85
    yaw_limit_deg: float = 30.0
    pitch_limit_deg: float = 15.0
    seed: int = 0
    w_dim: int = 16
    position_hidden: int = 384
    position_layers: int = 4
    view_hidden: int = 64
    view_layers: int = 3
    position_frequencies: int = 10
    direction_frequencies: int = 4
    lr_schedule: str = "cosine"
    eval_points: int = 64
    eval_views: int = 32

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not 0.0 < self.sample_rate <= 1.0:
            raise ValueError(f"sample rate must be in (0, 1], got {self.sample_rate}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.lvc_weight < 0.0:
            raise ValueError("view-consistency weight must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(
                f"lr_schedule must be 'constant' or 'cosine', "
                f"got {self.lr_schedule!r}")

    def lr_at(self, step):
        if self.lr_schedule == "constant":
            return self.learning_rate
        # Cosine decay to 1% of the base rate by the final step.
        frac = step / max(1, self.steps - 1)
        return self.learning_rate * (
            0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * frac)))


@dataclass
class PoseSampler:
    """Uniform yaw/pitch orbit poses around the scene's mid depth."""

    yaw_limit: float
    pitch_limit: float
    look_at_depth: float
    resolution: int

    def draw(self, rng):
        yaw = rng.uniform(-self.yaw_limit, self.yaw_limit)
        pitch = rng.uniform(-self.pitch_limit, self.pitch_limit)
        return orbit_pose(yaw, pitch, self.look_at_depth, self.resolution)


def mid_depth(near, far):
    """Disparity midpoint between near and far."""
    return 2.0 / (1.0 / near + 1.0 / far)


def _step_seed(seed, step):
    return int(np.random.default_rng([seed, 17, step]).integers(2 ** 62))


def scene_sampler(spec: SceneSpec, cfg: FitConfig):
    return PoseSampler(
        yaw_limit=np.deg2rad(cfg.yaw_limit_deg),
        pitch_limit=np.deg2rad(cfg.pitch_limit_deg),
        look_at_depth=mid_depth(spec.near, spec.far),
        resolution=spec.resolution)


@dataclass
class FitResult:
    model: ViewDepModel
    w: np.ndarray
    scene: SyntheticScene
    config: FitConfig
    records: list = field(default_factory=list)

    def write_metrics(self, path):
        write_metrics(path, self.records)


def write_metrics(path, records):
    """One whitespace-separated record per step under a fixed header.

    Floats are written with repr, so identical runs produce identical
    bytes.
    """
    with open(path, "w") as fh:
        fh.write("step mse lvc grad_norm\n")
        for step, mse, lvc, gnorm in records:
            fh.write(f"{step} {mse!r} {lvc!r} {gnorm!r}\n")


def _entry_g0(warped_colors, batch: SampleBatch):
    return warped_colors[batch.planes, batch.ys, batch.xs]


def _evaluate_entries(model, batch, ctx, g0):
    """evaluate_batch with per-plane-aligned g0 values (B, 3)."""
    q = batch_coordinates(model, batch)
    g = position_coefficients_t(model, q)
    h = reshape(view_coefficients_t(model, ctx.direction, ctx.w),
                (1, model.rank, 1))
    return tsum(g * h, axis=1) + Tensor(np.asarray(g0, dtype=np.float64))


def fit_vdr(spec: SceneSpec, cfg: FitConfig):
    """Train the color model on a synthetic scene.

    Deterministic given the config seed: the model init, the conditioning
    vector, the pose stream and the per-step pixel draws all derive from
    it. The pose stream advances identically whether or not the
    view-consistency term is enabled, so runs differing only in
    ``lvc_weight`` see the same poses and batches.

    g0 for each sampled entry comes from its own plane's warped color (the
    same warp the renderer applies), so the regression residual is purely
    view-dependent.
    """
    scene = build_synthetic_mpi(spec)
    mpi = scene.mpi
    model = create_model(
        rank=cfg.rank, w_dim=cfg.w_dim,
        height=spec.resolution, width=spec.resolution,
        near=spec.near, far=spec.far,
        encoding=PosEncodingConfig(cfg.position_frequencies,
                                   cfg.direction_frequencies, True),
        position_hidden=cfg.position_hidden,
        position_layers=cfg.position_layers,
        view_hidden=cfg.view_hidden, view_layers=cfg.view_layers,
        seed=cfg.seed)
    w = np.random.default_rng([cfg.seed, 11]).standard_normal(cfg.w_dim)
    sampler = scene_sampler(spec, cfg)
    pose_rng = np.random.default_rng([cfg.seed, 13])
    optimizer = Adam(model.params, lr=cfg.learning_rate)
    ssim_cfg = SsimConfig()
    d_ref = mid_depth(spec.near, spec.far)

    result = FitResult(model=model, w=w, scene=scene, config=cfg)
    initial_loss = None
    for step in range(cfg.steps):
        pose1 = sampler.draw(pose_rng)
        pose2 = sampler.draw(pose_rng)

        warped_colors, warped_alphas = warp_mpi(mpi, pose1)
        weights = compositing_weights(np.clip(warped_alphas, 0.0, 1.0))
        batch = sample_pixels(weights, cfg.sample_rate,
                              _step_seed(cfg.seed, step), depths=mpi.depths)
        ctx = ViewContext(viewing_direction(pose1), w)
        g0 = _entry_g0(warped_colors, batch)
        predicted = _evaluate_entries(model, batch, ctx, g0)
        targets = scene.entry_targets(batch, pose1)
        mse = tmean(square(predicted - Tensor(targets)))

        if cfg.lvc_weight > 0.0:
            base_image, base_weights = _composite_warped(
                warped_colors, warped_alphas)
            corrected = scatter_add_pixels(
                base_image, batch.ys, batch.xs,
                predicted - Tensor(g0), batch.weights)
            reference = _warp_pose_to_pose(
                render_mpi(mpi, pose2), pose2, pose1, d_ref)
            lvc = view_consistency_loss_t(
                clamp(corrected, 0.0, 1.0),
                np.clip(reference, 0.0, 1.0),
                cfg.lvc_delta, ssim_cfg)
            loss = mse + lvc * cfg.lvc_weight
            lvc_value = lvc.item()
        else:
            loss = mse
            lvc_value = 0.0

        loss_value = loss.item()
        if initial_loss is None:
            initial_loss = max(loss_value, 1e-12)
        if not np.isfinite(loss_value) or loss_value > 1e3 * initial_loss:
            raise DivergenceError(
                f"loss {loss_value:.6g} at step {step} exceeds 1000x the "
                f"initial loss {initial_loss:.6g}")

        optimizer.zero_grad()
        loss.backward()
        result.records.append(
            (step, mse.item(), lvc_value, grad_norm(model.params)))
        optimizer.lr = cfg.lr_at(step)
        optimizer.step()
    return result


def _composite_warped(warped_colors, warped_alphas):
    return backend.composite_planes(
        warped_colors, np.clip(warped_alphas, 0.0, 1.0))


def _warp_pose_to_pose(image, pose_from: CameraPose, pose_to: CameraPose,
                       depth):
    """Reproject an image between poses via the single plane z = depth."""
    h_to = plane_homography(pose_to, depth)
    h_from = plane_homography(pose_from, depth)
    return warp_image(image, np.linalg.inv(h_from) @ h_to)


# SVD oracle and held-out evaluation.

def svd_rank_oracle(matrix, rank):
    """Squared error of the best rank-N approximation (Eckart-Young):
    the sum of squared singular values beyond the N-th."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError(f"need a non-empty 2-d matrix, got shape {matrix.shape}")
    if rank < 0:
        raise ValueError("rank must be >= 0")
    singular = np.linalg.svd(matrix, compute_uv=False)
    return float(np.sum(singular[rank:] ** 2))


@dataclass
class HeldoutSet:
    """Fixed evaluation entries (at the canonical pose) and views."""

    xs: np.ndarray
    ys: np.ndarray
    planes: np.ndarray
    depths: np.ndarray
    points: np.ndarray        # (P, 3) canonical surface points
    g0: np.ndarray            # (P, 3) canonical colors at the entries
    poses: list
    targets: np.ndarray       # (P, V, 3) ground-truth radiance

    @property
    def residuals(self):
        return self.targets - self.g0[:, None, :]

    def residual_matrix(self):
        """Channels stacked into rows: (3P, V)."""
        r = self.residuals
        return r.transpose(0, 2, 1).reshape(-1, r.shape[1])


def heldout_set(scene: SyntheticScene, cfg: FitConfig, seed_offset=1000):
    """Evaluation set disjoint from the training draws: entries are
    alpha-guided samples at the canonical pose, views come from a separate
    pose stream."""
    spec = scene.spec
    mpi = scene.mpi
    weights = compositing_weights(mpi.alphas)
    everything = sample_pixels(weights, 1.0, cfg.seed + seed_offset,
                               depths=mpi.depths)
    rng = np.random.default_rng([cfg.seed, seed_offset, 23])
    count = min(cfg.eval_points, len(everything))
    chosen = rng.choice(len(everything), size=count, replace=False)
    xs, ys = everything.xs[chosen], everything.ys[chosen]
    planes, depths = everything.planes[chosen], everything.depths[chosen]
    points = scene.backproject(xs.astype(np.float64),
                               ys.astype(np.float64), depths)

    sampler = scene_sampler(spec, cfg)
    view_rng = np.random.default_rng([cfg.seed, seed_offset, 29])
    poses = [sampler.draw(view_rng) for _ in range(cfg.eval_views)]

    targets = np.empty((count, len(poses), 3))
    for k, pose in enumerate(poses):
        v = pixel_view_directions(pose, points)
        targets[:, k, :] = scene.radiance(points, v)
    g0 = scene.mpi.colors[planes, ys, xs]
    return HeldoutSet(xs=xs, ys=ys, planes=planes, depths=depths,
                      points=points, g0=g0, poses=poses, targets=targets)


def model_predictions(model: ViewDepModel, holdout: HeldoutSet, w):
    """Model colors s(q, v_k) on the held-out grid, (P, V, 3)."""
    batch = SampleBatch(xs=holdout.xs, ys=holdout.ys, planes=holdout.planes,
                        depths=holdout.depths,
                        weights=np.ones(len(holdout.xs)), rate=1.0, seed=0)
    q = batch_coordinates(model, batch)
    g = position_coefficients(model, q)          # (P, N, 3)
    out = np.empty_like(holdout.targets)
    for k, pose in enumerate(holdout.poses):
        h = view_coefficients(model, viewing_direction(pose), w)
        out[:, k, :] = holdout.g0 + np.einsum("pnc,n->pc", g, h)
    return out


def heldout_mse(model, holdout, w):
    pred = model_predictions(model, holdout, w)
    return float(np.mean((pred - holdout.targets) ** 2))


def oracle_mse(holdout: HeldoutSet, rank):
    matrix = holdout.residual_matrix()
    return svd_rank_oracle(matrix, rank) / matrix.size


def response_matrix(model: ViewDepModel, holdout: HeldoutSet, w):
    """(s(q, v_k) - g0) with channels stacked into rows, (3P, V); its
    numerical rank is at most the model rank."""
    pred = model_predictions(model, holdout, w)
    residual = pred - holdout.g0[:, None, :]
    return residual.transpose(0, 2, 1).reshape(-1, residual.shape[1])


def render_with_model(model, mpi: Mpi, pose: CameraPose, w, g_volume=None,
                      workers=1):
    """Full inference path: expand the view-dependent colors, render."""
    ctx = ViewContext(viewing_direction(pose), w)
    colors = expand_view_dependent_mpi(model, mpi, ctx, g_volume=g_volume)
    corrected = Mpi(colors=colors, alphas=mpi.alphas, depths=mpi.depths,
                    opaque_background=mpi.opaque_background)
    return render_mpi(corrected, pose, workers=workers)


def pose_pair_lvc(model, scene: SyntheticScene, w, pose1, pose2,
                  delta=0.85, g_volume=None):
    """View-consistency value between the model render at pose1 and the
    plain render at pose2 warped across."""
    mpi = scene.mpi
    image1 = render_with_model(model, mpi, pose1, w, g_volume=g_volume)
    reference = _warp_pose_to_pose(
        render_mpi(mpi, pose2), pose2, pose1,
        mid_depth(scene.spec.near, scene.spec.far))
    return view_consistency_loss_t(
        np.clip(image1, 0.0, 1.0), np.clip(reference, 0.0, 1.0),
        delta).item()
