"""Plain Frobenius-norm NMF by multiplicative updates (Lee & Seung)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError


@dataclass
class NmfConfig:
    r: int
    max_iters: int = 2000
    tol: float = 1e-6
    seed: int = 0
    eps: float = 1e-12

    def __post_init__(self):
        if self.r < 1:
            raise ParameterError(f"r must be >= 1, got {self.r}")
        if self.max_iters < 0:
            raise ParameterError("max_iters must be >= 0")
        if not self.tol > 0:
            raise ParameterError("tol must be > 0")
        if not self.eps > 0:
            raise ParameterError("eps must be > 0")


@dataclass
class NmfResult:
    S: np.ndarray
    A: np.ndarray
    objective_trace: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.objective_trace) - 1


def objective(X, S, A):
    R = X - S @ A
    return float(np.sum(R * R))


def nmf(X, config):
    """Factor ``X ~ S A`` with ``S, A >= 0``.

    ``objective_trace[0]`` is the objective at the random start and one entry
    is appended per sweep (S update then A update). Iteration stops after
    ``max_iters`` sweeps or once the relative objective change drops below
    ``tol``; an exactly-zero objective stops immediately.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"X must be a matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ContractError("X contains NaN or infinite entries")
    if np.any(X < 0):
        raise ContractError("X must be nonnegative")
    m, n = X.shape
    rng = np.random.default_rng(config.seed)
    # uniform on (0, 1]
    S = 1.0 - rng.random((m, config.r))
    A = 1.0 - rng.random((config.r, n))
    eps = config.eps

    trace = [objective(X, S, A)]
    for _ in range(config.max_iters):
        if trace[-1] == 0.0:
            break
        S *= (X @ A.T) / (S @ (A @ A.T) + eps)
        A *= (S.T @ X) / ((S.T @ S) @ A + eps)
        trace.append(objective(X, S, A))
        if abs(trace[-2] - trace[-1]) < config.tol * trace[-2]:
            break
    return NmfResult(S, A, trace)
