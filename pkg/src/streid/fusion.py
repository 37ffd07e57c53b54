"""Similarity fusion: combine appearance scores with transition-time densities.

A small MLP (one ReLU hidden layer, sigmoid output) maps the vector
[appearance, density window] to a fused similarity in (0, 1). The density
window holds the transition-time pdf at the pair's time-difference bin and
at the `window` bins on either side of it, so the network can weigh how
temporally plausible a candidate match is.

Training is plain minibatch Adam on binary cross entropy, written out
explicitly so runs are bit-reproducible from a seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .observations import Observation
from .topology import TopologyModel, _check_camera_index

BCE_EPS = 1e-7


def hidden_layer_width(input_dim: int) -> int:
    """Hidden width round(2 * input_dim / 3 + 1), rounding halves up.

    Computed in integer arithmetic: floor((2d/3 + 1) + 1/2) = (4d + 9) // 6.
    """
    return (4 * input_dim + 9) // 6


@dataclass(frozen=True, eq=False)
class FusionInput:
    """One network input: appearance similarity plus the density window."""

    appearance: float
    st_window: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "st_window", np.asarray(self.st_window, dtype=np.float64)
        )
        if not 0.0 <= self.appearance <= 1.0:
            raise InputError(f"appearance must be in [0, 1], got {self.appearance}")
        if self.st_window.ndim != 1 or self.st_window.shape[0] % 2 == 0:
            raise InputError("st_window must be a 1-D vector of odd length (2W+1)")
        if (self.st_window < 0).any():
            raise InputError("st_window entries must be non-negative")

    def vector(self) -> np.ndarray:
        return np.concatenate(([self.appearance], self.st_window))


@dataclass
class FusionModel:
    """MLP weights for one time-window size.

    w1 has shape (hidden, 2 * window + 2), w2 shape (hidden,). The first
    input column is the appearance similarity, the rest the density window.
    """

    window: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    train_config: "TrainConfig | None" = None
    final_loss: float | None = None

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        if self.window < 0:
            raise InputError(f"window must be >= 0, got {self.window}")
        d, h = self.input_dim, hidden_layer_width(self.input_dim)
        if self.w1.shape != (h, d) or self.b1.shape != (h,) or self.w2.shape != (h,):
            raise InputError(
                f"inconsistent dimensions for window {self.window}: "
                f"expected w1 ({h}, {d}), b1 ({h},), w2 ({h},); "
                f"got {self.w1.shape}, {self.b1.shape}, {self.w2.shape}"
            )

    @property
    def input_dim(self) -> int:
        return 2 * self.window + 2

    @property
    def hidden_dim(self) -> int:
        return self.b1.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    negative_ratio: int = 3

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.negative_ratio < 1:
            raise ConfigurationError("epochs, batch_size, negative_ratio must be >= 1")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ConfigurationError("learning_rate and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("moment decay rates must lie in [0, 1)")


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def st_windows(
    model: TopologyModel,
    cam_a: int,
    frame_a: int,
    cams_b: np.ndarray,
    frames_b: np.ndarray,
    window: int,
) -> np.ndarray:
    """Density windows for one observation against a batch of others.

    Row k holds the directional transition-time pdf (same direction rule as
    `lookup_probability`) sampled at the pair's bin plus offsets -window..
    +window; offsets falling outside the binned range read as 0.
    """
    if window < 0:
        raise InputError(f"window must be >= 0, got {window}")
    _check_camera_index(cam_a, model.n_cameras)
    cams_b = np.asarray(cams_b, dtype=np.int64)
    frames_b = np.asarray(frames_b, dtype=np.int64)
    if cams_b.size and not ((cams_b >= 0) & (cams_b < model.n_cameras)).all():
        raise InputError(f"camera index out of range for {model.n_cameras} cameras")

    delta = frames_b - frame_a
    forward = delta >= 0
    src = np.where(forward, cam_a, cams_b)
    dst = np.where(forward, cams_b, cam_a)
    base = np.abs(delta) // model.geometry.bin_width

    bins = model.geometry.bin_count
    out = np.zeros((cams_b.shape[0], 2 * window + 1), dtype=np.float64)
    for k in range(-window, window + 1):
        at = base + k
        valid = (at >= 0) & (at < bins)
        out[valid, k + window] = model.pdfs[src[valid], dst[valid], at[valid]]
    return out


def build_st_vector(
    model: TopologyModel,
    cam_a: int,
    frame_a: int,
    cam_b: int,
    frame_b: int,
    window: int,
) -> np.ndarray:
    """Density window (length 2 * window + 1) for a single observation pair."""
    return st_windows(
        model, cam_a, frame_a, np.array([cam_b]), np.array([frame_b]), window
    )[0]


def forward(model: FusionModel, fusion_input: FusionInput) -> float:
    """Fused similarity for one input; always strictly inside (0, 1)."""
    x = fusion_input.vector()
    if x.shape[0] != model.input_dim:
        raise InputError(
            f"input dimension {x.shape[0]} does not match model "
            f"input_dim {model.input_dim}"
        )
    return float(forward_batch(model, x[None, :])[0])


def forward_batch(model: FusionModel, inputs: np.ndarray) -> np.ndarray:
    """Fused similarities for a (K, input_dim) batch of raw input vectors."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise InputError(
            f"expected inputs of shape (K, {model.input_dim}), got {inputs.shape}"
        )
    hidden = np.maximum(inputs @ model.w1.T + model.b1, 0.0)
    return _sigmoid(hidden @ model.w2 + model.b2)


def bce_loss(predictions, labels) -> float:
    """Mean binary cross entropy with predictions clamped away from {0, 1}."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1 or p.size == 0:
        raise InputError(
            f"predictions and labels must be equal-length non-empty vectors, "
            f"got shapes {p.shape} and {y.shape}"
        )
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))


def baseline_product(appearance: float, st_scalar: float) -> float:
    """Fusion-free reference score: appearance times the density value."""
    return appearance * st_scalar


def _loss_and_grads(x, y, w1, b1, w2, b2):
    z1 = x @ w1.T + b1
    h = np.maximum(z1, 0.0)
    z2 = h @ w2 + b2
    p = _sigmoid(z2)
    loss = bce_loss(p, y)

    k = y.shape[0]
    dz2 = (p - y) / k
    g_w2 = h.T @ dz2
    g_b2 = dz2.sum()
    dz1 = np.outer(dz2, w2) * (z1 > 0)
    g_w1 = dz1.T @ x
    g_b1 = dz1.sum(axis=0)
    return loss, (g_w1, g_b1, g_w2, g_b2)


def train(
    pairs: list[tuple[FusionInput, int]],
    config: TrainConfig,
    window: int,
) -> tuple[FusionModel, list[float]]:
    """Train a fusion model; returns (model, per-epoch mean losses).

    Weights start uniform in +-sqrt(6 / (fan_in + fan_out)), biases at zero,
    all drawn from the seeded generator that also fixes batch order, so the
    same seed and data reproduce the model bit for bit. The trailing partial
    batch of each epoch is used, not dropped.
    """
    if not pairs:
        raise InputError("training requires at least one labelled pair")
    dim = 2 * window + 2
    x = np.empty((len(pairs), dim), dtype=np.float64)
    y = np.empty(len(pairs), dtype=np.float64)
    for row, (inp, label) in enumerate(pairs):
        vec = inp.vector()
        if vec.shape[0] != dim:
            raise InputError(
                f"pair {row}: input dimension {vec.shape[0]} does not match "
                f"window {window} (expected {dim})"
            )
        x[row] = vec
        y[row] = label
    if not ((y == 1).any() and (y == 0).any()):
        raise InputError("training data must contain both positive and negative labels")

    rng = np.random.default_rng(config.seed)
    hidden = hidden_layer_width(dim)
    lim1 = math.sqrt(6.0 / (dim + hidden))
    lim2 = math.sqrt(6.0 / (hidden + 1))
    params = [
        rng.uniform(-lim1, lim1, size=(hidden, dim)),
        np.zeros(hidden),
        rng.uniform(-lim2, lim2, size=hidden),
        np.zeros(1),
    ]
    moments = [np.zeros_like(p) for p in params]
    variances = [np.zeros_like(p) for p in params]

    n = len(pairs)
    step = 0
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            w1, b1, w2, b2 = params
            loss, grads = _loss_and_grads(x[idx], y[idx], w1, b1, w2, b2[0])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss {loss} at epoch {epoch}, batch offset {start}"
                )
            total += loss * idx.shape[0]
            step += 1
            c1 = 1.0 - config.beta1**step
            c2 = 1.0 - config.beta2**step
            for p, g, m, v in zip(params, grads, moments, variances):
                m *= config.beta1
                m += (1.0 - config.beta1) * g
                v *= config.beta2
                v += (1.0 - config.beta2) * np.square(g)
                p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
        epoch_losses.append(total / n)

    model = FusionModel(
        window,
        params[0],
        params[1],
        params[2],
        float(params[3][0]),
        train_config=config,
        final_loss=epoch_losses[-1],
    )
    return model, epoch_losses


@dataclass
class GradientCheck:
    """Relative errors between backprop and central finite differences."""

    per_block: dict[str, float]
    max_relative_error: float


def gradient_check(
    model: FusionModel, fusion_input: FusionInput, label: int, step: float = 1e-5
) -> GradientCheck:
    """Compare analytic gradients against central differences per parameter."""
    x = fusion_input.vector()[None, :]
    y = np.array([float(label)])
    blocks = {
        "w1": model.w1.copy(),
        "b1": model.b1.copy(),
        "w2": model.w2.copy(),
        "b2": np.array([model.b2]),
    }

    def loss_at() -> float:
        l, _ = _loss_and_grads(
            x, y, blocks["w1"], blocks["b1"], blocks["w2"], blocks["b2"][0]
        )
        return l

    _, grads = _loss_and_grads(
        x, y, blocks["w1"], blocks["b1"], blocks["w2"], blocks["b2"][0]
    )
    analytic = dict(zip(("w1", "b1", "w2", "b2"), grads))
    analytic["b2"] = np.array([analytic["b2"]])

    per_block: dict[str, float] = {}
    for name, values in blocks.items():
        flat = values.reshape(-1)
        worst = 0.0
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + step
            upper = loss_at()
            flat[i] = keep - step
            lower = loss_at()
            flat[i] = keep
            numeric = (upper - lower) / (2.0 * step)
            exact = float(np.asarray(analytic[name]).reshape(-1)[i])
            scale = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / scale)
        per_block[name] = worst
    return GradientCheck(per_block, max(per_block.values()))


def dump_weights(model: FusionModel, path) -> None:
    """Write w1 as CSV: hidden rows by input columns, full double precision.

    Column 0 is the appearance weight; columns 1..2W+1 the density window.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in model.w1:
            writer.writerow([repr(float(v)) for v in row])


def build_training_pairs(
    queries: list[Observation],
    galleries: list[Observation],
    similarity_values: np.ndarray,
    topology: TopologyModel,
    window: int,
    vehicle_ids,
    negative_ratio: int = 3,
    seed: int = 0,
) -> list[tuple[FusionInput, int]]:
    """Labelled fusion inputs from query-gallery pairs of allowed vehicles.

    `queries` and `galleries` must be aligned with the rows and columns of
    `similarity_values`. All same-vehicle pairs among `vehicle_ids` become
    positives; per query, `negative_ratio` negatives per positive are
    sampled without replacement from its other-vehicle candidates.
    """
    if negative_ratio < 1:
        raise ConfigurationError(f"negative_ratio must be >= 1, got {negative_ratio}")
    similarity_values = np.asarray(similarity_values, dtype=np.float64)
    if similarity_values.shape != (len(queries), len(galleries)):
        raise InputError(
            f"similarity shape {similarity_values.shape} does not match "
            f"{len(queries)} queries x {len(galleries)} galleries"
        )
    allowed = set(vehicle_ids)
    keep = np.array([g.vehicle_id in allowed for g in galleries], dtype=bool)
    g_index = np.flatnonzero(keep)
    g_cams = np.array([galleries[k].camera_id for k in g_index], dtype=np.int64)
    g_frames = np.array([galleries[k].frame for k in g_index], dtype=np.int64)
    g_vids = np.array([galleries[k].vehicle_id for k in g_index])

    rng = np.random.default_rng(seed)
    pairs: list[tuple[FusionInput, int]] = []
    for qi, query in enumerate(queries):
        if query.vehicle_id not in allowed or g_index.size == 0:
            continue
        positive = np.flatnonzero(g_vids == query.vehicle_id)
        if positive.size == 0:
            continue
        negative_pool = np.flatnonzero(g_vids != query.vehicle_id)
        n_neg = min(negative_ratio * positive.size, negative_pool.size)
        sampled = (
            negative_pool[rng.choice(negative_pool.size, size=n_neg, replace=False)]
            if n_neg
            else np.empty(0, dtype=np.int64)
        )
        chosen = np.concatenate([positive, sampled])
        st = st_windows(
            topology, query.camera_id, query.frame, g_cams[chosen], g_frames[chosen], window
        )
        row = similarity_values[qi]
        for local, k in enumerate(chosen):
            pairs.append(
                (
                    FusionInput(float(row[g_index[k]]), st[local]),
                    1 if local < positive.size else 0,
                )
            )
    return pairs
