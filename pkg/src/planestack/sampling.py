"""Alpha-guided per-plane pixel sampling.

A pixel (x, y) on plane i is a sampling candidate iff its compositing
weight A_i(x, y) is strictly positive, i.e. its own alpha is nonzero and
no nearer plane is fully opaque there. Sampling draws a fixed fraction of
candidates from every plane independently and without replacement, so
planes with few visible pixels still contribute.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .mpi import AlphaWeights


@dataclass
class SampleBatch:
    """Sampled pixel locations, one row per entry.

    xs, ys: pixel column/row; planes: plane index; depths: plane depth of
    each entry; weights: A_i(x, y) at the entry. ``rate`` and ``seed``
    reproduce the draw.
    """

    xs: np.ndarray
    ys: np.ndarray
    planes: np.ndarray
    depths: np.ndarray
    weights: np.ndarray
    rate: float
    seed: int

    def __len__(self):
        return self.xs.shape[0]

    def validate(self, alpha_weights: AlphaWeights = None):
        if not (len(self.xs) == len(self.ys) == len(self.planes)
                == len(self.depths) == len(self.weights)):
            raise ValueError("batch columns disagree in length")
        if len(self) and self.weights.min() <= 0.0:
            raise ValueError("batch contains an entry with zero weight")
        triples = set(zip(self.xs.tolist(), self.ys.tolist(),
                          self.planes.tolist()))
        if len(triples) != len(self):
            raise ValueError("batch contains duplicate (x, y, plane) entries")
        if alpha_weights is not None:
            ref = alpha_weights.weights[self.planes, self.ys, self.xs]
            if not np.array_equal(ref, self.weights):
                raise ValueError("batch weights disagree with the weight stack")


def candidate_mask(weights: AlphaWeights):
    """Boolean (L, H, W) mask of pixels eligible for sampling (A_i > 0).

    The test is exact: alphas are produced, not measured, so no epsilon."""
    return weights.weights > 0.0


def per_plane_counts(mask, rate):
    """ceil(rate * candidates) per plane; a plane with candidates always
    contributes at least one entry when rate > 0."""
    return [int(ceil(rate * int(m.sum()))) for m in mask]


def sample_pixels(weights: AlphaWeights, rate, seed, depths=None):
    """Draw a per-plane uniform subset of the candidate pixels.

    Each plane i contributes ceil(rate * n_i) of its n_i candidates, drawn
    without replacement by a generator seeded from (seed, i). Per-plane
    draws are therefore independent, and serial or parallel evaluation
    produces the same batch. ``depths`` fills the per-entry plane depth
    column (zeros when omitted).
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    mask = candidate_mask(weights)
    num_planes = mask.shape[0]
    if depths is None:
        depths = np.zeros(num_planes)
    depths = np.asarray(depths, dtype=np.float64)
    if depths.shape[0] != num_planes:
        raise ValueError(
            f"{depths.shape[0]} depths for {num_planes} planes")

    xs, ys, planes = [], [], []
    for i in range(num_planes):
        rows, cols = np.nonzero(mask[i])
        n = rows.shape[0]
        if n == 0:
            continue
        k = int(ceil(rate * n))
        rng = np.random.default_rng([int(seed), i])
        chosen = rng.choice(n, size=k, replace=False)
        ys.append(rows[chosen])
        xs.append(cols[chosen])
        planes.append(np.full(k, i, dtype=np.int64))

    if not xs:
        empty = np.empty(0, dtype=np.int64)
        return SampleBatch(xs=empty, ys=empty.copy(), planes=empty.copy(),
                           depths=np.empty(0), weights=np.empty(0),
                           rate=rate, seed=int(seed))
    xs = np.concatenate(xs)
    ys = np.concatenate(ys)
    planes = np.concatenate(planes)
    batch = SampleBatch(
        xs=xs, ys=ys, planes=planes,
        depths=depths[planes],
        weights=weights.weights[planes, ys, xs],
        rate=rate, seed=int(seed))
    batch.validate()
    return batch


def dump_batch(batch: SampleBatch, fh):
    """Plain-text rows ``i x y d_i A_i`` for oracle comparison."""
    fh.write("# plane x y depth weight\n")
    for i in range(len(batch)):
        fh.write(f"{batch.planes[i]} {batch.xs[i]} {batch.ys[i]} "
                 f"{batch.depths[i]!r} {batch.weights[i]!r}\n")


def mask_images(weights: AlphaWeights):
    """Per-plane uint8 images of the candidate mask (255 = candidate)."""
    mask = candidate_mask(weights)
    return [(m * np.uint8(255)) for m in mask.astype(np.uint8)]
