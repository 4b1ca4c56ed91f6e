"""Closed-form proximal maps: the trace-norm step on the variety and the
entrywise/columnwise shrinkage used for error terms."""

from __future__ import annotations

import enum

import numpy as np

from .variety import FixedRankMatrix, retract


class ShrinkKind(enum.Enum):
    """Which error regularizer the shrinkage solves.

    ``ENTRYWISE_L1`` soft-thresholds every entry (sparse outliers in the
    measurements); ``COLUMNWISE_L21`` scales whole columns toward zero
    (corrupted samples); ``NONE`` is the identity.
    """

    NONE = "none"
    ENTRYWISE_L1 = "l1"
    COLUMNWISE_L21 = "l21"


def shrink(b, lam, gamma, kind):
    """Minimizer of ``lam * regularizer(e) + (gamma / 2) * ||e - b||^2``.

    The effective threshold is ``lam / gamma``.  ``b`` may be a vector or a
    matrix; the columnwise variant requires a matrix and maps zero columns
    to zero columns.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    b = np.asarray(b, dtype=float)
    t = lam / gamma
    if kind is ShrinkKind.NONE:
        return b.copy()
    if kind is ShrinkKind.ENTRYWISE_L1:
        return np.sign(b) * np.maximum(np.abs(b) - t, 0.0)
    if kind is ShrinkKind.COLUMNWISE_L21:
        if b.ndim != 2:
            raise ValueError("columnwise shrinkage needs a matrix")
        norms = np.linalg.norm(b, axis=0)
        scale = np.zeros_like(norms)
        hit = norms > 0
        scale[hit] = np.maximum(norms[hit] - t, 0.0) / norms[hit]
        return b * scale
    raise ValueError(f"unknown shrink kind {kind!r}")


def prox_step(x, grad, stiffness, r):
    """One proximal step on the variety: retract ``x - grad / stiffness``
    to rank at most ``r``, then soft-threshold the singular values by
    ``1 / stiffness``.

    This is the exact minimizer of the local model that keeps the trace
    norm intact and quadratically penalizes the move.  Values shrunk to
    exactly zero are dropped, so the step can reduce the rank.
    """
    if stiffness <= 0:
        raise ValueError("stiffness must be positive")
    y = retract(x, grad.scaled(-1.0 / stiffness), r)
    shift = 1.0 / stiffness
    keep = y.sigma > shift
    if not np.any(keep):
        return FixedRankMatrix.zero(*x.shape)
    return FixedRankMatrix(y.u[:, keep], y.sigma[keep] - shift, y.v[:, keep],
                           validate=False)
