"""Randomized finite-difference checks over every layer type and the full stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .model import Hyperparams, build_cae

TOLERANCE = 1e-4
STEP = 1e-5
# central differences straddling a ReLU kink or a near-tied pooling window
# are not derivatives at all; draws closer than this to a kink are redrawn
KINK_MARGIN = 1e-4
MAX_DRAWS = 200


@dataclass
class CheckResult:
    case: str
    errors: dict

    @property
    def worst(self):
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def passed(self, tol=TOLERANCE):
        return self.worst[1] <= tol


def kink_distance(layers, x, training=False):
    """Smallest distance of any ReLU input to 0 or any live pooling window top-2 gap."""
    rngs = [layer.rng for layer in layers if getattr(layer, "rng", None) is not None]
    states = [g.bit_generator.state for g in rngs]
    best = np.inf
    for layer in layers:
        if isinstance(layer, nn.ReLU):
            best = min(best, float(np.min(np.abs(x))))
        elif isinstance(layer, nn.MaxPool2D):
            h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
            win = x[:h, :w].reshape(h // 2, 2, w // 2, 2, -1).transpose(0, 2, 4, 1, 3)
            win = np.sort(win.reshape(*win.shape[:3], 4), axis=-1)
            gap = win[..., 3] - win[..., 2]
            # windows of ReLU-zeroed inputs tie at exactly 0 and stay tied
            live = win[..., 3] != 0
            if live.any():
                best = min(best, float(np.min(gap[live])))
        x = layer.forward(x, training)
    for g, s in zip(rngs, states):
        g.bit_generator.state = s
    return best


def _conv(rng):
    cin, cout = rng.integers(1, 4), rng.integers(1, 4)
    h, w = rng.integers(3, 7, size=2)
    layers = [nn.Conv2D(rng.normal(0, 0.5, (3, 3, cin, cout)), rng.normal(0, 0.1, cout), name="conv")]
    return layers, rng.normal(size=(h, w, cin)), {}


def _pool(rng):
    h, w = rng.integers(2, 8, size=2)
    return [nn.MaxPool2D(name="pool")], rng.normal(size=(h, w, rng.integers(1, 4))), {}


def _dense(rng):
    n_in, n_out = rng.integers(1, 8, size=2)
    layer = nn.Dense(rng.normal(size=(n_out, n_in)), rng.normal(size=n_out), name="dense")
    return [layer], rng.normal(size=n_in), {}


def _dense_nobias(rng):
    n_in, n_out = rng.integers(1, 8, size=2)
    return [nn.Dense(rng.normal(size=(n_out, n_in)), name="dense_nobias")], rng.normal(size=n_in), {}


def _relu(rng):
    return [nn.ReLU(name="relu")], rng.normal(size=rng.integers(1, 20)), {}


def _dropout(rng):
    layer = nn.Dropout(0.3, np.random.default_rng(rng.integers(2**32)), name="dropout")
    return [layer], rng.normal(size=rng.integers(1, 20)), {"training": True}


def _standardize(rng):
    shape = (4, 4, 1)
    layer = nn.Standardize(rng.normal(size=shape), float(rng.uniform(0.2, 2.0)), name="standardize")
    return [layer], rng.normal(size=shape), {}


def _flatten(rng):
    return [nn.Flatten(name="flatten")], rng.normal(size=(3, 2, 2)), {}


def _full_stack(rng, rows=16, r=2):
    seed = int(rng.integers(2**32))
    model = build_cae(rows, rows, 1, Hyperparams(r=r, seed=seed))
    model.standardizer.mean[...] = rng.uniform(0, 0.5, model.standardizer.mean.shape)
    model.standardizer.scale[0] = rng.uniform(0.2, 1.0)
    # nonzero biases so no dense unit sits exactly on a kink
    for p in model.parameters():
        if p.name.endswith(".bias"):
            p.value[...] = rng.normal(0, 0.1, p.value.shape)
    x = rng.uniform(0, 1, (rows, rows, 1))
    target = rng.uniform(0, 1, rows * rows)
    return model.layers, x, {"loss": "mse", "target": target, "training": True}


CASES = {
    "conv": _conv,
    "pool": _pool,
    "dense": _dense,
    "dense_nobias": _dense_nobias,
    "relu": _relu,
    "dropout": _dropout,
    "standardize": _standardize,
    "flatten": _flatten,
    "full_stack": _full_stack,
}


def draw_case(name, rng):
    """Draw a random instance of ``name`` that stays clear of ReLU/pool kinks."""
    for _ in range(MAX_DRAWS):
        layers, x, kw = CASES[name](rng)
        if kink_distance(layers, x, kw.get("training", False)) > KINK_MARGIN:
            return layers, x, kw
    raise RuntimeError(f"could not draw a kink-free instance of {name!r}")


def run_gradcheck(seed=0, repeats=3, step=STEP, cases=None):
    rng = np.random.default_rng(seed)
    results = []
    for name in cases or CASES:
        errors = {}
        for _ in range(1 if name == "full_stack" else repeats):
            layers, x, kw = draw_case(name, rng)
            for key, err in nn.gradient_errors(layers, x, step=step, **kw).items():
                errors[key] = max(err, errors.get(key, 0.0))
        results.append(CheckResult(name, errors))
    return results
