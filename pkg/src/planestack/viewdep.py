"""Rank-N view-dependent color model.

A pixel's color under a viewing direction v is modeled as

    s(q, v) = g0(q) + sum_n g_n(q) * h_n(v, w)

where q = (x, y, d_i) is the pixel location on plane i, g0 is the warped
canonical RGB at that pixel, the position network maps an encoded q to
position coefficients g_1..g_N, and the view network maps the encoded
direction concatenated with a conditioning vector w to view coefficients
h_1..h_N. Position coefficients are per color channel (the network emits
3N values, reshaped to N x 3) while each h_n is a scalar shared across
channels; for a fixed q, varying v therefore moves s(q, v) - g0 inside
the span of the g rows, a rank-N family.

Coordinates entering the encodings are normalized to [-1, 1]: x and y by
the image extent, depth by its disparity position between near and far.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .autodiff import Tensor, reshape, tsum
from .camera import CameraPose
from .mpi import Mpi
from .nn import (MlpSpec, init_mlp_params, load_checkpoint, mlp_forward,
                 save_checkpoint, spec_from_header, spec_to_header)

UNIT_TOL = 1e-6
DOMAIN_TOL = 1e-6


@dataclass(frozen=True)
class PosEncodingConfig:
    position_frequencies: int = 10
    direction_frequencies: int = 4
    include_raw_input: bool = True

    def __post_init__(self):
        if self.position_frequencies < 0 or self.direction_frequencies < 0:
            raise ValueError("frequency counts must be >= 0")

    def encoded_width(self, dims, frequencies):
        return dims * (2 * frequencies + int(self.include_raw_input))


def positional_encode(x, frequencies, include_raw=True):
    """Sinusoidal features [x?, sin(2^k pi x), cos(2^k pi x)] for
    k = 0..frequencies-1, blocks ordered per frequency (sin before cos).

    Output width is dim(x) * (2 * frequencies + include_raw). Inputs are
    expected in [-1, 1]; the function itself is defined everywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    parts = [x] if include_raw else []
    for k in range(frequencies):
        arg = (2.0 ** k) * np.pi * x
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    if not parts:
        return x[..., :0]
    return np.concatenate(parts, axis=-1)


def normalize_pixels(xs, ys, width, height):
    """Pixel centers to [-1, 1] over the image extent."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    nx = 2.0 * xs / (width - 1) - 1.0 if width > 1 else np.zeros_like(xs)
    ny = 2.0 * ys / (height - 1) - 1.0 if height > 1 else np.zeros_like(ys)
    return nx, ny


def normalize_depth(depths, near, far):
    """Depths to [-1, 1], linear in disparity (near -> -1, far -> +1)."""
    depths = np.asarray(depths, dtype=np.float64)
    d_near, d_far = 1.0 / near, 1.0 / far
    return 2.0 * (1.0 / depths - d_near) / (d_far - d_near) - 1.0


@dataclass
class ViewDepModel:
    """The two coefficient networks plus everything needed to feed them."""

    rank: int
    w_dim: int
    height: int
    width: int
    near: float
    far: float
    encoding: PosEncodingConfig
    position_spec: MlpSpec
    position_params: list
    view_spec: MlpSpec
    view_params: list

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.position_spec.output_width != 3 * self.rank:
            raise ValueError(
                f"position net must emit 3*rank={3 * self.rank} values, "
                f"got {self.position_spec.output_width}")
        if self.view_spec.output_width != self.rank:
            raise ValueError(
                f"view net must emit rank={self.rank} values, "
                f"got {self.view_spec.output_width}")
        expect = self.encoding.encoded_width(
            3, self.encoding.direction_frequencies) + self.w_dim
        if self.view_spec.input_width != expect:
            raise ValueError(
                f"view net input width {self.view_spec.input_width} != "
                f"encoded direction + w width {expect}")

    @property
    def params(self):
        return list(self.position_params) + list(self.view_params)


def create_model(rank, w_dim, height, width, near, far, encoding=None,
                 position_hidden=384, position_layers=4,
                 view_hidden=64, view_layers=3, seed=0):
    """Model with the default shapes: a 4-layer position net of hidden
    width 384 and a 3-layer view net of hidden width 64."""
    encoding = encoding or PosEncodingConfig()
    q_width = encoding.encoded_width(3, encoding.position_frequencies)
    v_width = encoding.encoded_width(3, encoding.direction_frequencies)
    pos_widths = (q_width,) + (position_hidden,) * (position_layers - 1) \
        + (3 * rank,)
    view_widths = (v_width + w_dim,) + (view_hidden,) * (view_layers - 1) \
        + (rank,)
    pos_spec = MlpSpec(layer_widths=pos_widths, seed=2 * seed)
    view_spec = MlpSpec(layer_widths=view_widths, seed=2 * seed + 1)
    return ViewDepModel(
        rank=rank, w_dim=w_dim, height=height, width=width,
        near=float(near), far=float(far), encoding=encoding,
        position_spec=pos_spec, position_params=init_mlp_params(pos_spec),
        view_spec=view_spec, view_params=init_mlp_params(view_spec))


@dataclass
class ViewContext:
    """A viewing direction and conditioning vector, with the view
    coefficients cached after the first evaluation."""

    direction: np.ndarray
    w: np.ndarray
    cached_h: np.ndarray = None

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if abs(np.linalg.norm(self.direction) - 1.0) > UNIT_TOL:
            raise ValueError("viewing direction must be unit length")

    def coefficients(self, model: ViewDepModel):
        if self.cached_h is None:
            self.cached_h = view_coefficients(model, self.direction, self.w)
        return self.cached_h


def _check_normalized(q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 3:
        raise ValueError(f"q must have 3 components, got shape {q.shape}")
    if np.max(np.abs(q)) > 1.0 + DOMAIN_TOL:
        raise ValueError("q outside the normalized domain [-1, 1]^3")
    return q


def position_coefficients(model: ViewDepModel, q):
    """Image-agnostic coefficients g for normalized locations q (..., 3).

    Returns (..., N, 3); independent of any view context or conditioning.
    """
    q = _check_normalized(q)
    lead = q.shape[:-1]
    enc = positional_encode(q.reshape(-1, 3),
                            model.encoding.position_frequencies,
                            model.encoding.include_raw_input)
    out = mlp_forward(model.position_spec, model.position_params, enc)
    return out.data.reshape(lead + (model.rank, 3))


def position_coefficients_t(model: ViewDepModel, q):
    """Tape version over a (B, 3) batch; returns a (B, N, 3) tensor."""
    q = _check_normalized(np.atleast_2d(q))
    enc = positional_encode(q, model.encoding.position_frequencies,
                            model.encoding.include_raw_input)
    out = mlp_forward(model.position_spec, model.position_params, enc)
    return reshape(out, (q.shape[0], model.rank, 3))


def view_coefficients(model: ViewDepModel, v, w):
    """Image-specific coefficients h for a unit direction v and
    conditioning vector w. Rejects non-unit v rather than renormalizing."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError("viewing direction must be unit length")
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != model.w_dim:
        raise ValueError(
            f"conditioning width {w.shape[0]} != model w_dim {model.w_dim}")
    return view_coefficients_t(model, v, w).data.reshape(model.rank)


def view_coefficients_t(model: ViewDepModel, v, w):
    enc = positional_encode(np.asarray(v, dtype=np.float64).reshape(1, 3),
                            model.encoding.direction_frequencies,
                            model.encoding.include_raw_input)
    row = np.concatenate([enc, np.asarray(w, dtype=np.float64).reshape(1, -1)],
                         axis=1)
    return mlp_forward(model.view_spec, model.view_params, row)


def color_representation(g0, g, h):
    """s = g0 + sum_n g_n * h_n, per color channel.

    g0: (..., 3); g: (..., N, 3); h: (N,).
    """
    g0 = np.asarray(g0, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if g.shape[-2] != h.shape[0]:
        raise ValueError(
            f"rank mismatch: g has {g.shape[-2]} coefficients, h has "
            f"{h.shape[0]}")
    return g0 + np.einsum("...nc,n->...c", g, h)


def batch_coordinates(model: ViewDepModel, batch):
    """Normalized q rows for a sample batch (pixel coords + plane depth)."""
    nx, ny = normalize_pixels(batch.xs, batch.ys, model.width, model.height)
    nd = normalize_depth(batch.depths, model.near, model.far)
    return np.stack([nx, ny, nd], axis=-1)


def evaluate_batch(model: ViewDepModel, batch, ctx: ViewContext,
                   warped_canonical):
    """Colors s(q, v) for every batch entry, on the autodiff tape.

    The view coefficients are computed once per context and shared by all
    entries; g0 comes from the warped canonical RGB at each entry's pixel.
    Returns a (B, 3) tensor; gradients flow to both networks.
    """
    warped_canonical = np.asarray(warped_canonical, dtype=np.float64)
    if len(batch) == 0:
        return Tensor(np.zeros((0, 3)))
    q = batch_coordinates(model, batch)
    g = position_coefficients_t(model, q)                    # (B, N, 3)
    h_row = view_coefficients_t(model, ctx.direction, ctx.w)  # (1, N)
    h = reshape(h_row, (1, model.rank, 1))
    g0 = warped_canonical[batch.ys, batch.xs]                # (B, 3)
    correction = tsum(g * h, axis=1)
    return correction + Tensor(g0)


def position_volume(model: ViewDepModel, depths, dtype=np.float32,
                    chunk=65536):
    """g over the full (L, H, W) grid, cached by callers across views.

    These coefficients depend only on the plane geometry, so one volume
    serves every viewing direction of a scene. float32 storage keeps the
    cache affordable at inference sizes.
    """
    depths = np.asarray(depths, dtype=np.float64)
    num_planes = depths.shape[0]
    h, w = model.height, model.width
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    nx, ny = normalize_pixels(xs.ravel(), ys.ravel(), w, h)
    out = np.empty((num_planes, h * w, model.rank, 3), dtype=dtype)
    for i in range(num_planes):
        nd = np.full(h * w, normalize_depth(depths[i], model.near, model.far))
        q = np.stack([nx, ny, nd], axis=-1)
        for start in range(0, h * w, chunk):
            stop = min(start + chunk, h * w)
            out[i, start:stop] = position_coefficients(
                model, q[start:stop]).astype(dtype)
    return out.reshape(num_planes, h, w, model.rank, 3)


def expand_view_dependent_mpi(model: ViewDepModel, mpi: Mpi,
                              ctx: ViewContext, g_volume=None):
    """Per-plane view-dependent colors C'_i = clip(C_i + sum_n g_n h_n).

    Returns an (L, H, W, 3) volume; together with the original alphas it
    forms the MPI handed to the renderer. Pass a cached ``g_volume`` to
    skip recomputing the position coefficients for a new view.
    """
    if (mpi.height, mpi.width) != (model.height, model.width):
        raise ValueError(
            f"mpi is {mpi.height}x{mpi.width}, model expects "
            f"{model.height}x{model.width}")
    if g_volume is None:
        g_volume = position_volume(model, mpi.depths)
    h = ctx.coefficients(model)
    out = np.empty_like(mpi.colors)
    for i in range(mpi.num_planes):
        acc = mpi.colors[i].copy()
        g = g_volume[i].astype(np.float64, copy=False)
        for n in range(model.rank):
            acc += g[..., n, :] * h[n]
        out[i] = np.clip(acc, 0.0, 1.0)
    return out


MODEL_FORMAT = 1


def save_model(model: ViewDepModel, path, extra_header=None):
    arrays = {}
    for i, p in enumerate(model.position_params):
        arrays[f"position_{i}"] = p.data
    for i, p in enumerate(model.view_params):
        arrays[f"view_{i}"] = p.data
    header = {
        "model_format": MODEL_FORMAT,
        "rank": model.rank,
        "w_dim": model.w_dim,
        "height": model.height,
        "width": model.width,
        "near": model.near,
        "far": model.far,
        "encoding": {
            "position_frequencies": model.encoding.position_frequencies,
            "direction_frequencies": model.encoding.direction_frequencies,
            "include_raw_input": model.encoding.include_raw_input,
        },
        "position_spec": spec_to_header(model.position_spec),
        "view_spec": spec_to_header(model.view_spec),
    }
    header.update(extra_header or {})
    save_checkpoint(path, arrays, header)


def load_model(path):
    """Read a model checkpoint; returns (model, header)."""
    ckpt = load_checkpoint(path)
    h = ckpt.header
    if h.get("model_format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    encoding = PosEncodingConfig(**h["encoding"])
    pos_spec = spec_from_header(h["position_spec"])
    view_spec = spec_from_header(h["view_spec"])
    pos_params = [Tensor(ckpt.arrays[f"position_{i}"], requires_grad=True)
                  for i in range(2 * pos_spec.num_layers)]
    view_params = [Tensor(ckpt.arrays[f"view_{i}"], requires_grad=True)
                   for i in range(2 * view_spec.num_layers)]
    model = ViewDepModel(
        rank=h["rank"], w_dim=h["w_dim"], height=h["height"],
        width=h["width"], near=h["near"], far=h["far"], encoding=encoding,
        position_spec=pos_spec, position_params=pos_params,
        view_spec=view_spec, view_params=view_params)
    return model, h
