"""Least-squares estimation of the path gains from a structured model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RCOND = 1e-10


@dataclass
class LsSolution:
    estimate: np.ndarray
    residual_norm: float
    rank_used: int
    condition_estimate: float


def ls_estimate(y, A, rcond: float = RCOND) -> LsSolution:
    """Minimum-norm least-squares solution of ``A x ~= y``.

    Uses an SVD-based solver; singular values below ``rcond * s_max`` are
    discarded, so rank-deficient designs still get the minimum-norm answer.
    """
    y = np.asarray(y)
    A = np.asarray(A)
    if A.shape[0] != y.shape[0]:
        raise ValueError(f"design has {A.shape[0]} rows, observation has {y.shape[0]}")
    x, _, rank, sv = np.linalg.lstsq(A, y, rcond=rcond)
    kept = sv[sv > rcond * sv[0]] if sv.size and sv[0] > 0 else sv[:0]
    cond = float(kept[0] / kept[-1]) if kept.size else np.inf
    res = float(np.linalg.norm(y - A @ x))
    return LsSolution(x, res, int(rank), cond)


def update_residual_signal(y, gamma, h_hat):
    """Observation for the ``g`` step: the same ``y``; ``h_hat`` enters through ``Lambda``."""
    return y
