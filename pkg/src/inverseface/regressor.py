"""Convolutional parameter regressor: network, model-space loss, AdaDelta.

A small from-scratch CNN (4 strided conv + 2 fully connected layers) maps a
normalized face image to the full parameter vector in one forward pass.  The
model-space loss is a diagonal quadratic form whose weights combine a
per-group importance factor with the per-mode standard deviations, so
high-variance modes must be matched more accurately.  Training is plain
stochastic gradient descent with AdaDelta updates and coupled weight decay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .binio import (
    expect_magic,
    expect_version,
    read_f32_array,
    read_u32,
    read_u64,
    write_f32_array,
    write_u32,
    write_u64,
)
from .corpus import CorpusShard, check_shard_matches
from .facemodel import DimensionMismatch, FaceModel, N_ILLUM

NETWORK_MAGIC = b"IFNW"
NETWORK_VERSION = 1

DEFAULT_CONV_LAYERS = ((16, 5, 2), (32, 3, 2), (64, 3, 2), (128, 3, 2))


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture descriptor.  conv_layers entries are
    (out_channels, kernel, stride); all conv and the hidden fc layer are
    followed by ReLU."""

    n_outputs: int
    input_resolution: int = 64
    conv_layers: tuple = DEFAULT_CONV_LAYERS
    fc_hidden: int = 256

    def validate(self) -> None:
        if self.n_outputs < 1:
            raise ValueError("network needs at least one output")
        res = self.input_resolution
        if res < 8:
            raise ValueError("input resolution too small")
        for out_ch, k, s in self.conv_layers:
            if min(out_ch, k, s) < 1:
                raise ValueError("bad conv layer")
            res = (res - k) // s + 1
            if res < 1:
                raise ValueError("conv stack shrinks input below 1x1")

    def flat_features(self) -> int:
        res = self.input_resolution
        ch = 3
        for out_ch, k, s in self.conv_layers:
            res = (res - k) // s + 1
            ch = out_ch
        return ch * res * res


@dataclass
class RegressorState:
    """Weights plus AdaDelta accumulators.  params holds, per layer, the
    weight then the bias array; accumulators mirror that layout.
    output_scale is a fixed per-dimension de-normalization applied to the
    final layer's output, so the trained layers work in O(1) units."""

    spec: NetworkSpec
    params: list
    acc_grad: list
    acc_update: list
    output_scale: np.ndarray
    iteration: int = 0


def init_state(spec: NetworkSpec, seed: int = 0, output_scale=None,
               dtype=np.float32) -> RegressorState:
    """Fan-in-scaled Gaussian weights for hidden layers; the output layer
    gets N(0, 0.01) weights and zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params = []
    in_ch = 3
    for out_ch, k, s in spec.conv_layers:
        fan_in = in_ch * k * k
        w = rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(2.0 / fan_in)
        params += [w, np.zeros(out_ch)]
        in_ch = out_ch
    flat = spec.flat_features()
    w = rng.standard_normal((flat, spec.fc_hidden)) * np.sqrt(2.0 / flat)
    params += [w, np.zeros(spec.fc_hidden)]
    w = rng.standard_normal((spec.fc_hidden, spec.n_outputs)) * 0.01
    params += [w, np.zeros(spec.n_outputs)]
    params = [np.asarray(p, dtype=dtype) for p in params]
    if output_scale is None:
        output_scale = np.ones(spec.n_outputs)
    output_scale = np.asarray(output_scale, dtype=dtype).reshape(-1)
    if output_scale.size != spec.n_outputs:
        raise DimensionMismatch("output_scale length does not match outputs")
    return RegressorState(
        spec=spec,
        params=params,
        acc_grad=[np.zeros_like(p) for p in params],
        acc_update=[np.zeros_like(p) for p in params],
        output_scale=output_scale,
    )


def clone_state(state: RegressorState) -> RegressorState:
    """Deep copy; training mutates states in place."""
    return RegressorState(
        spec=state.spec,
        params=[p.copy() for p in state.params],
        acc_grad=[a.copy() for a in state.acc_grad],
        acc_update=[a.copy() for a in state.acc_update],
        output_scale=state.output_scale.copy(),
        iteration=state.iteration,
    )


def _area_resample(image: np.ndarray, out_size: int) -> np.ndarray:
    """Box (area-average) resampling via interval-overlap matrices; exact for
    integer downscale factors and well-defined for any size pair."""
    h, w = image.shape[:2]

    def overlap(n_in, n_out):
        # Input cell j covers [j, j+1]*(n_out/n_in) in output units; each
        # output row integrates to 1 so the result is a true average.
        edges_in = np.arange(n_in + 1) * (n_out / n_in)
        mat = np.zeros((n_out, n_in))
        for j in range(n_in):
            lo, hi = edges_in[j], edges_in[j + 1]
            first, last = int(np.floor(lo)), int(np.ceil(hi))
            for i in range(first, min(last, n_out)):
                mat[i, j] = max(0.0, min(hi, i + 1) - max(lo, i))
        return mat

    rows = overlap(h, out_size)
    cols = overlap(w, out_size)
    img = image.astype(np.float64)
    out = np.einsum("oi,ijc->ojc", rows, img)
    return np.einsum("pj,ojc->opc", cols, out)


def normalize_input(image: np.ndarray, resolution: int) -> np.ndarray:
    """uint8 image -> float32 (3, R, R) in [-0.5, 0.5]; area-resampled first
    when the source resolution differs."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch("expected (H, W, 3) image")
    if img.shape[0] != resolution or img.shape[1] != resolution:
        img = _area_resample(img, resolution)
    values = img.astype(np.float64) / 255.0 - 0.5
    return values.transpose(2, 0, 1).astype(np.float32)


def normalize_batch(images: np.ndarray, resolution: int) -> np.ndarray:
    if images.shape[1] == resolution and images.shape[2] == resolution:
        values = images.astype(np.float32) / np.float32(255.0) - np.float32(0.5)
        return values.transpose(0, 3, 1, 2)
    return np.stack([normalize_input(img, resolution) for img in images])


def _wrap_params(state: RegressorState, requires_grad: bool):
    return [ad.Tensor(p, requires_grad=requires_grad) for p in state.params]


def _forward_graph(tensors, spec: NetworkSpec, batch: np.ndarray):
    if batch.ndim != 4 or batch.shape[1] != 3 \
            or batch.shape[2] != spec.input_resolution \
            or batch.shape[3] != spec.input_resolution:
        raise DimensionMismatch(
            f"expected batch shaped (B, 3, {spec.input_resolution}, "
            f"{spec.input_resolution}), got {batch.shape}")
    x = ad.Tensor(batch)
    idx = 0
    for _, k, s in spec.conv_layers:
        x = ad.relu(ad.conv2d(x, tensors[idx], tensors[idx + 1], s))
        idx += 2
    x = ad.reshape(x, (batch.shape[0], spec.flat_features()))
    x = ad.relu(ad.affine(x, tensors[idx], tensors[idx + 1]))
    x = ad.affine(x, tensors[idx + 2], tensors[idx + 3])
    return x


def forward(state: RegressorState, batch: np.ndarray) -> np.ndarray:
    """Predictions (B, m) for a normalized batch (B, 3, R, R)."""
    out = _forward_graph(_wrap_params(state, False), state.spec, batch)
    return out.data * state.output_scale


@dataclass(frozen=True)
class LossWeights:
    """Group importance factors of the model-space metric."""

    rotation: float = 400.0
    shape: float = 50.0
    expression: float = 50.0
    reflectance: float = 100.0
    illumination: float = 20.0

    def diagonal(self, model: FaceModel) -> np.ndarray:
        """Diagonal of the weight matrix: importance times per-mode sigma for
        the basis groups, importance alone for rotation and illumination."""
        return np.concatenate([
            np.full(3, self.rotation),
            self.shape * model.shape_sigma,
            self.expression * model.expr_sigma,
            self.reflectance * model.refl_sigma,
            np.full(N_ILLUM, self.illumination),
        ])


def identity_diagonal(m: int) -> np.ndarray:
    """Unweighted Euclidean metric, for ablations."""
    return np.ones(m)


def model_space_loss(pred: np.ndarray, target: np.ndarray,
                     diag: np.ndarray):
    """Batch-mean quadratic loss with per-dimension weights diag**2.

    Returns (loss, gradient w.r.t. pred).  pred/target are (B, m) or (m,).
    """
    p = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape or p.shape[1] != diag.size:
        raise DimensionMismatch(
            f"loss shapes disagree: pred {p.shape}, target {t.shape}, "
            f"diag {diag.size}")
    d2 = np.asarray(diag, dtype=np.float64) ** 2
    delta = p - t
    batch = p.shape[0]
    loss = float((d2 * delta * delta).sum() / batch)
    grad = 2.0 * d2 * delta / batch
    return loss, grad.reshape(np.shape(pred))


def adadelta_step(state: RegressorState, grads, lr: float = 0.01,
                  decay: float = 0.001, rho: float = 0.95,
                  eps: float = 1e-6) -> RegressorState:
    """One AdaDelta update in place.  Weight decay enters the gradient as
    2*decay*w; lr scales the applied update (accumulators see the unscaled
    one)."""
    for i, (p, g) in enumerate(zip(state.params, grads)):
        if g is None:
            g = np.zeros_like(p)
        if not np.isfinite(g).all():
            raise FloatingPointError(
                f"non-finite gradient in parameter {i} at iteration "
                f"{state.iteration}")
        g = g + 2.0 * decay * p
        acc_g = state.acc_grad[i]
        acc_u = state.acc_update[i]
        acc_g *= rho
        acc_g += (1.0 - rho) * g * g
        update = np.sqrt((acc_u + eps) / (acc_g + eps)) * g
        acc_u *= rho
        acc_u += (1.0 - rho) * update * update
        p -= lr * update
    state.iteration += 1
    return state


def train(state: RegressorState, shard: CorpusShard, diag: np.ndarray,
          iterations: int, batch_size: int = 32, lr: float = 0.01,
          decay: float = 0.001, rho: float = 0.95, eps: float = 1e-6,
          shuffle_seed: int = 0, trace_every: int = 100):
    """SGD over shuffled record batches.  Returns (state, trace) where trace
    rows are (iteration, mean loss of the preceding trace_every iterations).
    Deterministic for a fixed seed."""
    check_shard_matches(shard, state.spec.n_outputs)
    if shard.count < 1:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(shuffle_seed)
    order = rng.permutation(shard.count)
    cursor = 0
    trace = []
    window = []
    res = state.spec.input_resolution
    targets = shard.params.astype(np.float64)

    for it in range(iterations):
        if cursor + batch_size > shard.count:
            order = rng.permutation(shard.count)
            cursor = 0
        idx = order[cursor:cursor + batch_size]
        cursor += batch_size

        batch = normalize_batch(shard.images[idx], res)
        tensors = _wrap_params(state, True)
        out = _forward_graph(tensors, state.spec, batch)
        loss, grad = model_space_loss(out.data * state.output_scale,
                                      targets[idx], diag)
        out.backward((grad * state.output_scale).astype(out.data.dtype))
        adadelta_step(state, [t.grad for t in tensors],
                      lr=lr, decay=decay, rho=rho, eps=eps)
        window.append(loss)
        if (it + 1) % trace_every == 0:
            trace.append((it + 1, float(np.mean(window))))
            window = []
    if window:
        trace.append((iterations, float(np.mean(window))))
    return state, trace


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss"])
        for it, loss in trace:
            writer.writerow([it, f"{loss:.9g}"])


def save_state(state: RegressorState, path) -> None:
    spec = state.spec
    with open(path, "wb") as f:
        f.write(NETWORK_MAGIC)
        write_u32(f, NETWORK_VERSION)
        write_u32(f, spec.n_outputs)
        write_u32(f, spec.input_resolution)
        write_u32(f, spec.fc_hidden)
        write_u32(f, len(spec.conv_layers))
        for out_ch, k, s in spec.conv_layers:
            write_u32(f, out_ch)
            write_u32(f, k)
            write_u32(f, s)
        write_u64(f, state.iteration)
        write_f32_array(f, state.output_scale)
        for p, ag, au in zip(state.params, state.acc_grad, state.acc_update):
            write_f32_array(f, p)
            write_f32_array(f, ag)
            write_f32_array(f, au)


def load_state(path) -> RegressorState:
    with open(path, "rb") as f:
        expect_magic(f, NETWORK_MAGIC)
        expect_version(f, NETWORK_VERSION)
        n_outputs = read_u32(f)
        resolution = read_u32(f)
        fc_hidden = read_u32(f)
        n_conv = read_u32(f)
        convs = tuple(
            (read_u32(f), read_u32(f), read_u32(f)) for _ in range(n_conv))
        spec = NetworkSpec(n_outputs=n_outputs, input_resolution=resolution,
                           conv_layers=convs, fc_hidden=fc_hidden)
        spec.validate()
        iteration = read_u64(f)
        output_scale = read_f32_array(f, n_outputs)
        shapes = []
        in_ch = 3
        for out_ch, k, s in convs:
            shapes += [(out_ch, in_ch, k, k), (out_ch,)]
            in_ch = out_ch
        shapes += [(spec.flat_features(), fc_hidden), (fc_hidden,)]
        shapes += [(fc_hidden, n_outputs), (n_outputs,)]
        params, acc_grad, acc_update = [], [], []
        for shape in shapes:
            count = int(np.prod(shape))
            params.append(read_f32_array(f, count).reshape(shape))
            acc_grad.append(read_f32_array(f, count).reshape(shape))
            acc_update.append(read_f32_array(f, count).reshape(shape))
    return RegressorState(spec=spec, params=params, acc_grad=acc_grad,
                          acc_update=acc_update, iteration=iteration)


def predict_shard(state: RegressorState, images: np.ndarray,
                  batch_size: int = 64) -> np.ndarray:
    """Forward passes over a stack of uint8 images, in fixed-size chunks."""
    res = state.spec.input_resolution
    outputs = []
    for start in range(0, images.shape[0], batch_size):
        batch = normalize_batch(images[start:start + batch_size], res)
        outputs.append(forward(state, batch))
    return np.concatenate(outputs, axis=0)
