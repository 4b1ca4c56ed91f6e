"""Concrete trace-norm problems: matrix completion from sampled entries
and low-rank self-representation of a data matrix.

Both expose the same surface: the forward measurement operator, its
adjoint, the penalized objective and its Euclidean gradient, all phrased
so that a factored low-rank iterate is never densified.  Error terms are
plain arrays (a vector over the sample set for completion, a dense matrix
for self-representation).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .kernels import truncated_svd
from .prox import ShrinkKind, shrink


class Observations:
    """Sparse samples of an ``m``-by-``n`` matrix: unique in-range index
    pairs with finite values, stored as flat arrays (0-based indices)."""

    def __init__(self, m, n, rows, cols, values):
        self.m = int(m)
        self.n = int(n)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.values = np.asarray(values, dtype=float)
        if not (self.rows.shape == self.cols.shape == self.values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if self.size == 0:
            raise ValueError("need at least one sample")
        if self.rows.min() < 0 or self.rows.max() >= self.m:
            raise ValueError("row index out of range")
        if self.cols.min() < 0 or self.cols.max() >= self.n:
            raise ValueError("column index out of range")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sample values must be finite")
        flat = self.rows * self.n + self.cols
        if np.unique(flat).size != flat.size:
            raise ValueError("duplicate sample positions")

    @property
    def size(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return (self.m, self.n)

    def with_values(self, values):
        return Observations(self.m, self.n, self.rows, self.cols, values)

    def take(self, idx):
        return Observations(self.m, self.n, self.rows[idx], self.cols[idx],
                            self.values[idx])


class CompletionProblem:
    """Recover a low-rank matrix from entries sampled on an index set.

    Objective: ``||X||_* + lam * Ups(E) + (gamma / 2) * ||A(X) + E - d||^2``
    where ``A`` samples the entries and ``d`` holds the observed values.
    The error term (if any) is a vector over the sample set with the
    entrywise-L1 regularizer.
    """

    def __init__(self, obs, gamma, lam=0.0, shrink_kind=ShrinkKind.NONE):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        if shrink_kind is ShrinkKind.COLUMNWISE_L21:
            raise ValueError("completion uses entrywise shrinkage")
        self.obs = obs
        self.gamma = float(gamma)
        self.lam = float(lam)
        self.shrink_kind = shrink_kind
        self.x_shape = obs.shape
        self.data_norm = float(np.linalg.norm(obs.values))
        self.data_absmean = float(np.mean(np.abs(obs.values)))
        self.data_absmax = float(np.max(np.abs(obs.values)))

    def default_stiffness(self):
        # the sampling operator has unit norm, so the smooth part has
        # Lipschitz constant exactly gamma
        return self.gamma

    def zero_error(self):
        return np.zeros(self.obs.size)

    def apply_A(self, x):
        """Measurement of a factored point: its entries on the sample set."""
        if x.shape != self.x_shape:
            raise ValueError(f"point shape {x.shape} != {self.x_shape}")
        return x.entries(self.obs.rows, self.obs.cols)

    def apply_A_adjoint(self, y):
        """Adjoint of the sampler: a sparse matrix carrying ``y`` on the
        sample positions (explicit zeros kept, nnz == number of samples)."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.obs.size,):
            raise ValueError("measurement length mismatch")
        coo = sp.coo_matrix((y, (self.obs.rows, self.obs.cols)),
                            shape=self.x_shape)
        return coo.tocsr()

    def residual(self, x, e=None):
        out = self.apply_A(x) - self.obs.values
        if e is not None:
            out = out + e
        return out

    def error_penalty(self, e):
        if e is None or self.shrink_kind is ShrinkKind.NONE:
            return 0.0
        return float(np.sum(np.abs(e)))

    def objective(self, x, e=None, lam=None):
        lam = self.lam if lam is None else lam
        res = self.residual(x, e)
        parts = {
            "trace_norm": x.trace_norm,
            "error_reg": lam * self.error_penalty(e),
            "penalty": 0.5 * self.gamma * float(res @ res),
        }
        return parts["trace_norm"] + parts["error_reg"] + parts["penalty"], parts

    def euclid_grad(self, x, e=None):
        """Gradient of the smooth part in matrix space: sparse, supported
        exactly on the sample set."""
        return self.apply_A_adjoint(self.gamma * self.residual(x, e))

    def shrink_target(self, x):
        return self.obs.values - self.apply_A(x)

    def shrink_error(self, x, lam):
        return shrink(self.shrink_target(x), lam, self.gamma, self.shrink_kind)


class LRRProblem:
    """Low-rank self-representation: express data columns through each
    other, ``D @ X + E = D``, with a column-sparse error.

    ``X`` is n-by-n for data with n columns; the error regularizer is the
    columnwise L2,1 norm.
    """

    def __init__(self, data, gamma, lam, shrink_kind=ShrinkKind.COLUMNWISE_L21):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2:
            raise ValueError("data must be a matrix")
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        if shrink_kind not in (ShrinkKind.COLUMNWISE_L21, ShrinkKind.NONE):
            raise ValueError("self-representation uses columnwise shrinkage")
        self.data = data
        self.gamma = float(gamma)
        self.lam = float(lam)
        self.shrink_kind = shrink_kind
        n = data.shape[1]
        self.x_shape = (n, n)
        self.data_norm = float(np.linalg.norm(data))
        self.data_absmean = float(np.mean(np.abs(data)))
        self.data_absmax = float(np.max(np.abs(data))) if data.size else 0.0
        if self.data_norm > 0:
            top = truncated_svd(data, 1, rtol=1e-3)[1][0]
        else:
            top = 0.0
        self._stiffness = max(self.gamma * top ** 2, 1e-12)

    def default_stiffness(self):
        return self._stiffness

    def zero_error(self):
        return np.zeros(self.data.shape)

    def apply_A(self, x):
        """``D @ X`` computed through the factors of ``x``."""
        if x.shape != self.x_shape:
            raise ValueError(f"point shape {x.shape} != {self.x_shape}")
        if x.rank == 0:
            return np.zeros(self.data.shape)
        return ((self.data @ x.u) * x.sigma) @ x.v.T

    def apply_A_adjoint(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != self.data.shape:
            raise ValueError("measurement shape mismatch")
        return self.data.T @ y

    def residual(self, x, e=None):
        out = self.apply_A(x) - self.data
        if e is not None:
            out = out + e
        return out

    def error_penalty(self, e):
        if e is None or self.shrink_kind is ShrinkKind.NONE:
            return 0.0
        return float(np.sum(np.linalg.norm(e, axis=0)))

    def objective(self, x, e=None, lam=None):
        lam = self.lam if lam is None else lam
        res = self.residual(x, e)
        parts = {
            "trace_norm": x.trace_norm,
            "error_reg": lam * self.error_penalty(e),
            "penalty": 0.5 * self.gamma * float(np.sum(res * res)),
        }
        return parts["trace_norm"] + parts["error_reg"] + parts["penalty"], parts

    def euclid_grad(self, x, e=None):
        return self.apply_A_adjoint(self.gamma * self.residual(x, e))

    def shrink_target(self, x):
        return self.data - self.apply_A(x)

    def shrink_error(self, x, lam):
        return shrink(self.shrink_target(x), lam, self.gamma, self.shrink_kind)
