"""Convolutional autoencoder for blind unmixing.

Each band image of the cube is encoded to an ``r``-vector by a conv/dense
encoder; a single bias-free linear layer of shape ``m x r`` maps it back to
the band's pixel roll-out. After training, the output-layer weights are the
abundance matrix ``S`` and the per-band bottleneck activations, stacked as
columns, are the endmember matrix ``A``, so that ``X_hat = S A`` exactly.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import FactorPair, to_gray8, write_pgm
from .errors import NumericalError, ParameterError, ShapeError
from .optim import Adam

log = logging.getLogger(__name__)

CONV_CHANNELS = (16, 8, 8)
DENSE_FACTORS = (9, 6, 3)
OUTPUT_INIT_MAX = 0.1
LR_SCHEDULES = ("cosine", "constant")
# cosine schedule decays to this fraction of the base rate at the last epoch
LR_FLOOR = 0.01


@dataclass
class Hyperparams:
    r: int
    epochs: int = 500
    dropout_rate: float = 0.01
    l2_rate: float = 1e-4
    learning_rate: float = 2e-3
    batch_size: int = 1
    seed: int = 0
    shuffle: bool = False
    lr_schedule: str = "cosine"

    def __post_init__(self):
        if self.r < 1:
            raise ParameterError(f"r must be >= 1, got {self.r}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not (math.isfinite(self.l2_rate) and self.l2_rate >= 0):
            raise ParameterError(f"l2_rate must be finite and >= 0, got {self.l2_rate}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ParameterError(f"learning_rate must be finite and > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ParameterError("seed must be unsigned")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ParameterError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")

    def lr_at(self, epoch):
        """Learning rate used during ``epoch`` (1-based)."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.learning_rate
        progress = (epoch - 1) / (self.epochs - 1)
        return self.learning_rate * (
            LR_FLOOR + (1.0 - LR_FLOOR) * 0.5 * (1.0 + math.cos(math.pi * progress))
        )


@dataclass
class TrainReport:
    loss_trace: list = field(default_factory=list)
    final_loss: float = float("nan")
    wall_time: float = 0.0


class CaeModel:
    """Layer stack, optimizer state and scene dimensions."""

    def __init__(self, rows, cols, bands, hyper, layers):
        self.rows = rows
        self.cols = cols
        self.bands = bands
        self.hyper = hyper
        self.layers = layers
        self.adam = Adam(self.parameters(), lr=hyper.learning_rate)
        seeds = np.random.SeedSequence(hyper.seed).spawn(3)
        self.shuffle_rng = np.random.default_rng(seeds[2])

    @property
    def r(self):
        return self.hyper.r

    @property
    def pixels(self):
        return self.rows * self.cols

    @property
    def standardizer(self):
        return self.layers[0]

    @property
    def output(self):
        return self.layers[-1]

    @property
    def encoder(self):
        return self.layers[:-1]

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def parameters(self):
        return nn.parameters(self.layers)

    def buffers(self):
        """Non-trainable arrays that are part of the model state."""
        return {"input_mean": self.standardizer.mean, "input_scale": self.standardizer.scale}

    def fit_standardizer(self, cube):
        """Centre encoder inputs on the mean band image and scale to unit spread.

        Only the encoder input is affected; reconstruction targets stay raw.
        """
        mean = cube.data.mean(axis=0)
        spread = float(np.std(cube.data - mean))
        self.standardizer.mean[...] = mean[:, :, None]
        self.standardizer.scale[0] = spread if spread > 0 else 1.0

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def project(self):
        """Clamp the abundance (output) weights back onto the nonnegative orthant."""
        np.maximum(self.output.weights.value, 0.0, out=self.output.weights.value)

    def describe(self):
        lines = []
        for layer in self.layers:
            shapes = ", ".join(f"{p.name}{tuple(p.value.shape)}" for p in layer.params)
            lines.append(f"{layer.name:<12} {shapes}")
        return "\n".join(lines)


def pooled_size(n, stages=len(CONV_CHANNELS)):
    for _ in range(stages):
        n //= 2
    return n


def _uniform_fan_in(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape)


def build_cae(rows, cols, bands, hyper, rng=None):
    """Assemble the autoencoder for a ``rows x cols`` scene with ``bands`` bands.

    standardize -> Conv3x3(16) -> pool -> Conv3x3(8) -> pool -> Conv3x3(8)
    -> pool -> flatten -> Dense(9r) -> Dense(6r) -> Dense(3r) -> dropout
    -> Dense(r) -> Dense(m). Hidden layers use ReLU; the output layer is
    linear, bias-free and initialised nonnegative. The standardizer starts as
    the identity and is fitted to the cube by :func:`train`.
    """
    if rows != cols:
        raise ShapeError(f"the autoencoder needs a square scene (rows == cols), got {rows} x {cols}")
    if rows < 8:
        raise ShapeError(f"rows must be >= 8 so three 2x2 poolings stay nonempty, got {rows}")
    if bands < 1:
        raise ShapeError("bands must be >= 1")
    seeds = np.random.SeedSequence(hyper.seed).spawn(3)
    if rng is None:
        rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])

    r, m = hyper.r, rows * cols
    layers = [nn.Standardize(np.zeros((rows, cols, 1)), 1.0, name="standardize")]
    cin = 1
    for i, cout in enumerate(CONV_CHANNELS, start=1):
        kernels = _uniform_fan_in(rng, (3, 3, cin, cout), 9 * cin)
        layers += [
            nn.Conv2D(kernels, np.zeros(cout), name=f"conv{i}"),
            nn.ReLU(name=f"conv{i}_relu"),
            nn.MaxPool2D(name=f"pool{i}"),
        ]
        cin = cout
    layers.append(nn.Flatten(name="flatten"))

    width = pooled_size(rows) ** 2 * CONV_CHANNELS[-1]
    for i, factor in enumerate(DENSE_FACTORS, start=1):
        units = factor * r
        layers += [
            nn.Dense(_uniform_fan_in(rng, (units, width), width), np.zeros(units), name=f"dense{i}"),
            nn.ReLU(name=f"dense{i}_relu"),
        ]
        width = units
    layers.append(nn.Dropout(hyper.dropout_rate, dropout_rng, name="dropout"))
    # nonnegative bottleneck weights over nonnegative ReLU inputs: no unit starts dead
    layers += [
        nn.Dense(np.abs(_uniform_fan_in(rng, (r, width), width)), np.zeros(r), name="bottleneck"),
        nn.ReLU(name="bottleneck_relu"),
    ]
    layers.append(nn.Dense(rng.uniform(0.0, OUTPUT_INIT_MAX, (m, r)), None, name="output"))
    return CaeModel(rows, cols, bands, hyper, layers)


def _band_input(model, band_image):
    x = np.asarray(band_image, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.shape != (model.rows, model.cols, 1):
        raise ShapeError(
            f"band image shape {x.shape} does not match model ({model.rows}, {model.cols}, 1)"
        )
    return x


def forward_band(model, band_image, eval_mode=True):
    """Run one band image through the network.

    Returns ``(x_hat, h)``: the m-pixel reconstruction and the r bottleneck
    activations feeding the linear output layer.
    """
    x = _band_input(model, band_image)
    h = nn.forward_stack(model.encoder, x, training=not eval_mode)
    return model.output.forward(h), h


def _check_cube(model, cube):
    if (cube.rows, cube.cols, cube.bands) != (model.rows, model.cols, model.bands):
        raise ShapeError(
            f"cube is {cube.rows}x{cube.cols}x{cube.bands}, model expects "
            f"{model.rows}x{model.cols}x{model.bands}"
        )


def train(model, cube, hyper=None, progress=None):
    """Fit the autoencoder band by band.

    Per sample the loss is the reconstruction MSE plus ``l2_rate`` times the
    squared norm of the output weights. Adam steps once per ``batch_size``
    bands, after which output weights are clamped to be nonnegative.
    ``progress`` is called as ``progress(epoch, mean_loss)`` after each epoch.
    """
    hyper = hyper or model.hyper
    _check_cube(model, cube)
    model.layer("dropout").rate = hyper.dropout_rate
    report = TrainReport()
    if hyper.epochs > 0:
        model.fit_standardizer(cube)
    start = time.perf_counter()
    W = model.output.weights
    m = model.pixels
    for epoch in range(1, hyper.epochs + 1):
        model.adam.lr = hyper.lr_at(epoch)
        order = np.arange(cube.bands)
        if hyper.shuffle:
            order = model.shuffle_rng.permutation(cube.bands)
        total = 0.0
        for lo in range(0, len(order), hyper.batch_size):
            batch = order[lo:lo + hyper.batch_size]
            model.zero_grad()
            penalty = hyper.l2_rate * float(np.sum(W.value ** 2))
            for b in batch:
                image = cube.band(b)
                x_hat, _ = forward_band(model, image, eval_mode=False)
                resid = x_hat - image.reshape(-1)
                loss = float(resid @ resid) / m + penalty
                if not math.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, band {b}", epoch=epoch, band=int(b)
                    )
                total += loss
                grad = (2.0 / (m * len(batch))) * resid
                nn.backward_stack(model.layers, grad)
            W.grad += 2.0 * hyper.l2_rate * W.value
            model.adam.step()
            model.project()
        mean_loss = total / cube.bands
        report.loss_trace.append(mean_loss)
        if progress is not None:
            progress(epoch, mean_loss)
    report.wall_time = time.perf_counter() - start
    if report.loss_trace:
        report.final_loss = report.loss_trace[-1]
    return report


def extract_factors(model, cube):
    """Read ``S`` off the output weights and ``A`` off the bottleneck, band by band."""
    _check_cube(model, cube)
    A = np.empty((model.r, cube.bands))
    for b in range(cube.bands):
        _, A[:, b] = forward_band(model, cube.band(b), eval_mode=True)
    return FactorPair(model.output.weights.value.copy(), A)


def reconstruction(model, cube):
    """Stack eval-mode network outputs column-wise into an ``m x n`` matrix."""
    _check_cube(model, cube)
    return np.stack(
        [forward_band(model, cube.band(b), eval_mode=True)[0] for b in range(cube.bands)],
        axis=1,
    )


def conv_stage_outputs(model, band_image):
    """Eval-mode activations after each conv/ReLU/pool stage."""
    x = _band_input(model, band_image)
    stages = []
    for layer in model.encoder:
        x = layer.forward(x, training=False)
        if isinstance(layer, nn.MaxPool2D):
            stages.append(x)
        if isinstance(layer, nn.Flatten):
            break
    return stages


def dump_feature_maps(model, cube, band, out_dir):
    """Write every channel of the three conv stages for one band as PGM images."""
    _check_cube(model, cube)
    if not 0 <= band < cube.bands:
        raise ParameterError(f"band index {band} outside 0..{cube.bands - 1}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for s, fmap in enumerate(conv_stage_outputs(model, cube.band(band)), start=1):
        for c in range(fmap.shape[2]):
            path = out_dir / f"stage{s}_ch{c:02d}.pgm"
            write_pgm(path, to_gray8(fmap[:, :, c]))
            paths.append(path)
    return paths

