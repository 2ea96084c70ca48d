"""Synthetic linear-mixing scenes with exact ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import FactorPair, HsiCube
from .errors import ParameterError

MIN_PAIRWISE_SAD = 0.15
# softmax gain on unit-variance fields; large enough that most endmembers
# have near-pure pixels somewhere in a 32x32 scene
SHARPNESS = 4.0


@dataclass
class SceneSpec:
    rows: int
    cols: int
    r: int
    bands: int
    snr_db: float | None = None
    seed: int = 0

    def validate(self):
        if self.rows < 1 or self.cols < 1 or self.r < 1:
            raise ParameterError("rows, cols and r must be positive")
        if self.bands < self.r:
            raise ParameterError(f"need bands >= r, got bands={self.bands}, r={self.r}")
        if self.rows * self.cols < self.r:
            raise ParameterError(f"need rows*cols >= r, got {self.rows * self.cols} < {self.r}")


def _angle(a, b):
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _signature(rng, bands):
    grid = np.arange(bands, dtype=np.float64)
    sig = np.full(bands, 0.05)
    for _ in range(rng.integers(2, 5)):
        center = rng.uniform(0, bands)
        width = bands * rng.uniform(0.05, 0.2)
        sig += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((grid - center) / width) ** 2)
    return sig


def _endmembers(rng, r, bands, attempts=1000):
    for _ in range(attempts):
        A = np.stack([_signature(rng, bands) for _ in range(r)])
        if all(_angle(A[i], A[j]) >= MIN_PAIRWISE_SAD for i, j in combinations(range(r), 2)):
            return A
    raise ParameterError(
        f"could not draw {r} signatures over {bands} bands with pairwise SAD >= {MIN_PAIRWISE_SAD}"
    )


def _abundances(rng, rows, cols, r):
    sigma = max(rows, cols) / 8.0
    fields = np.empty((r, rows, cols))
    for k in range(r):
        f = gaussian_filter(rng.standard_normal((rows, cols)), sigma, mode="wrap")
        fields[k] = (f - f.mean()) / (f.std() + 1e-12)
    logits = SHARPNESS * fields
    logits -= logits.max(axis=0)
    w = np.exp(logits)
    w /= w.sum(axis=0)
    return w.reshape(r, -1).T


def synth_scene(spec):
    """Draw a scene ``X = S A`` (plus optional white noise) and its ground truth.

    Endmembers are sums of Gaussian bumps over the band axis; abundances are
    a softmax over smooth random fields, so every pixel's fractions sum to 1.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    A = _endmembers(rng, spec.r, spec.bands)
    S = _abundances(rng, spec.rows, spec.cols, spec.r)
    X = S @ A
    if spec.snr_db is not None:
        signal_power = np.mean(X ** 2)
        noise_std = np.sqrt(signal_power / 10.0 ** (spec.snr_db / 10.0))
        X = np.maximum(X + rng.normal(0.0, noise_std, X.shape), 0.0)
    return HsiCube.from_matrix(X, spec.rows, spec.cols), FactorPair(S, A)
