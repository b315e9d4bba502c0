"""Small fully-connected networks on top of the autodiff tape.

Provides the layer spec and initialization, forward evaluation with a
leaky-rectifier activation, an adaptive-moment optimizer, a central
finite-difference gradient checker, and a binary parameter container.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, check_finite, leaky_relu, matmul

CHECKPOINT_MAGIC = b"PSTK1\n"


@dataclass(frozen=True)
class MlpSpec:
    """Widths and activation of a fully-connected stack.

    ``layer_widths`` lists the input width first and the output width last,
    so a spec with k+1 entries has k affine layers. The activation is a
    leaky rectifier applied after every layer except the last.
    """

    layer_widths: tuple
    negative_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("layer_widths needs at least input and output")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if not 0.0 < self.negative_slope < 1.0:
            raise ValueError(
                f"negative slope must be in (0, 1), got {self.negative_slope}")

    @property
    def input_width(self):
        return self.layer_widths[0]

    @property
    def output_width(self):
        return self.layer_widths[-1]

    @property
    def num_layers(self):
        return len(self.layer_widths) - 1


def init_mlp_params(spec: MlpSpec, dtype=np.float64):
    """Seeded uniform init, scale 1/sqrt(fan_in) for weights and biases.

    Returns [W0, b0, W1, b1, ...] as trainable tensors.
    """
    rng = np.random.default_rng(spec.seed)
    params = []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        b = rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype)
        params.append(Tensor(w, requires_grad=True))
        params.append(Tensor(b, requires_grad=True))
    return params


def mlp_forward(spec: MlpSpec, params, x):
    """Run the stack on a (batch, input_width) array or tensor.

    Activation follows every layer except the last. Deterministic given
    params and input.
    """
    if len(params) != 2 * spec.num_layers:
        raise ValueError(
            f"expected {2 * spec.num_layers} parameter arrays for "
            f"{spec.num_layers} layers, got {len(params)}")
    h = as_tensor(x)
    if h.data.ndim != 2:
        raise ValueError(f"expected 2-d input batch, got shape {h.data.shape}")
    if h.data.shape[1] != spec.input_width:
        raise ValueError(
            f"input width {h.data.shape[1]} does not match first layer "
            f"width {spec.input_width} (layer_widths={spec.layer_widths})")
    for layer in range(spec.num_layers):
        w, b = params[2 * layer], params[2 * layer + 1]
        h = matmul(h, w) + b
        if layer < spec.num_layers - 1:
            h = leaky_relu(h, spec.negative_slope)
    check_finite(h.data, "mlp output")
    return h


class Adam:
    """Adaptive-moment optimizer with bias correction.

    State is per parameter; a step with non-finite gradients is refused.
    """

    def __init__(self, params, lr=2e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient in parameter {i}")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def finite_diff_check(fn, params, step=1e-5):
    """Compare analytic gradients of a scalar function against central
    differences.

    ``fn(params)`` must return a scalar Tensor and be deterministic; a
    value mismatch between two calls raises. Parameters must be float64.
    Returns the max over coordinates of
    |analytic - central| / max(1e-12, |analytic| + |central|).
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 parameters")
    if step <= 0.0:
        raise ValueError("step must be positive")

    first = fn(params)
    again = fn(params)
    if not np.array_equal(first.data, again.data):
        raise ValueError("function is not deterministic across calls")

    for p in params:
        p.zero_grad()
    out = fn(params)
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            f_plus = fn(params).data.item()
            flat[k] = orig - step
            f_minus = fn(params).data.item()
            flat[k] = orig
            central = (f_plus - f_minus) / (2.0 * step)
            err = abs(ana_flat[k] - central) / max(
                1e-12, abs(ana_flat[k]) + abs(central))
            worst = max(worst, err)
    return worst


@dataclass
class Checkpoint:
    """Decoded parameter container: named arrays plus a text header."""

    arrays: dict
    header: dict = field(default_factory=dict)


def save_checkpoint(path, arrays, header=None):
    """Write named arrays as little-endian float32 after a JSON header.

    The header is plain text; callers record things like the MlpSpec and
    seed there. Array order and shapes are part of the header.
    """
    header = dict(header or {})
    names = list(arrays.keys())
    header["arrays"] = [{"name": n, "shape": list(np.asarray(arrays[n]).shape)}
                        for n in names]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a parameter container")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"{path}: truncated array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(
                raw, dtype="<f4").reshape(shape).astype(np.float64)
    return Checkpoint(arrays=arrays, header=header)


def spec_to_header(spec: MlpSpec):
    return {"layer_widths": list(spec.layer_widths),
            "negative_slope": spec.negative_slope,
            "seed": spec.seed}


def spec_from_header(d):
    return MlpSpec(layer_widths=tuple(d["layer_widths"]),
                   negative_slope=d["negative_slope"],
                   seed=d["seed"])
