"""Spectral angle / abundance RMSE scoring with endmember alignment."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import ContractError, ParameterError, ShapeError

MAX_ALIGN_R = 8


def sad(a, a_hat):
    """Spectral angle between two signatures, in radians."""
    a = np.asarray(a, dtype=np.float64)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a.shape != a_hat.shape or a.ndim != 1:
        raise ShapeError(f"sad needs two vectors of equal length, got {a.shape} and {a_hat.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(a_hat)
    if na == 0 or nb == 0:
        raise ContractError("spectral angle is undefined for a zero vector")
    cos = float(a_hat @ a) / (na * nb)
    return math.acos(min(1.0, max(-1.0, cos)))


def rmse(s, s_hat):
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape or s.ndim != 1 or s.size == 0:
        raise ShapeError(f"rmse needs two nonempty vectors of equal length, got {s.shape} and {s_hat.shape}")
    d = s_hat - s
    # scale first so tiny differences do not underflow to an RMSE of 0
    peak = float(np.max(np.abs(d)))
    if peak == 0.0:
        return 0.0
    d = d / peak
    return peak * math.sqrt(float(d @ d) / s.size)


def sad_matrix(A_est, A_gt):
    """``M[i, j]`` is the angle between estimated row ``i`` and ground-truth row ``j``."""
    r = A_est.shape[0]
    return np.array([[sad(A_gt[j], A_est[i]) for j in range(r)] for i in range(r)])


def align_endmembers(A_est, A_gt):
    """Match estimated signatures to ground truth by minimum total SAD.

    Returns a tuple ``perm`` with ``perm[i]`` the ground-truth row matched to
    estimated row ``i``. Exhaustive over all ``r!`` assignments; ties keep the
    lexicographically smallest permutation.
    """
    A_est = np.asarray(A_est, dtype=np.float64)
    A_gt = np.asarray(A_gt, dtype=np.float64)
    if A_est.shape != A_gt.shape or A_est.ndim != 2:
        raise ShapeError(f"endmember matrices differ in shape: {A_est.shape} vs {A_gt.shape}")
    r = A_est.shape[0]
    if r > MAX_ALIGN_R:
        raise ParameterError(f"alignment is brute force and supports r <= {MAX_ALIGN_R}, got {r}")
    cost = sad_matrix(A_est, A_gt)
    best, best_cost = None, math.inf
    for perm in permutations(range(r)):
        total = sum(cost[i, perm[i]] for i in range(r))
        if total < best_cost:
            best, best_cost = perm, total
    return best


def normalize_abundance_maps(S):
    """Divide each abundance column by its maximum; all-zero columns are left alone."""
    S = np.asarray(S, dtype=np.float64)
    if np.any(S < 0):
        raise ContractError("abundances must be nonnegative before normalization")
    peak = S.max(axis=0)
    scale = np.where(peak > 0, peak, 1.0)
    return S / scale


@dataclass
class ClassScore:
    name: str
    sad: float
    rmse: float


@dataclass
class EvalReport:
    per_endmember: list = field(default_factory=list)
    permutation: tuple = ()

    @property
    def average_sad(self):
        return float(np.mean([c.sad for c in self.per_endmember]))

    @property
    def average_rmse(self):
        return float(np.mean([c.rmse for c in self.per_endmember]))

    def to_text(self, title="CAE"):
        width = max([len("Average")] + [len(c.name) for c in self.per_endmember])
        lines = [f"{'Class':<{width}}  {'SAD':>8}  {'RMSE':>8}   ({title})"]
        for c in self.per_endmember:
            lines.append(f"{c.name:<{width}}  {c.sad:>8.4f}  {c.rmse:>8.4f}")
        lines.append(f"{'Average':<{width}}  {self.average_sad:>8.4f}  {self.average_rmse:>8.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "sad", "rmse"])
        for c in self.per_endmember:
            writer.writerow([c.name, repr(c.sad), repr(c.rmse)])
        writer.writerow(["Average", repr(self.average_sad), repr(self.average_rmse)])
        return buf.getvalue()


def evaluate(est, gt, names=None):
    """Score estimated factors against ground truth after SAD-based alignment.

    Rows of the report follow the ground-truth class order. Abundance columns
    of ``est`` are max-normalized before RMSE; ground truth is used as is.
    """
    if est.S.shape != gt.S.shape or est.A.shape != gt.A.shape:
        raise ShapeError(
            f"estimate S{est.S.shape}/A{est.A.shape} vs ground truth S{gt.S.shape}/A{gt.A.shape}"
        )
    r = gt.r
    names = list(names) if names else [f"endmember_{k}" for k in range(r)]
    if len(names) != r:
        raise ShapeError(f"{len(names)} class names given for {r} endmembers")
    perm = align_endmembers(est.A, gt.A)
    owner = {j: i for i, j in enumerate(perm)}
    S_est = normalize_abundance_maps(est.S)
    scores = []
    for j in range(r):
        i = owner[j]
        scores.append(ClassScore(names[j], sad(gt.A[j], est.A[i]), rmse(gt.S[:, j], S_est[:, i])))
    return EvalReport(scores, tuple(perm))
