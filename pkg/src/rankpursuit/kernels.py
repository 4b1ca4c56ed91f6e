"""Dense/sparse linear-algebra kernels sized for low-rank work.

Dense matrices are plain ``numpy.ndarray`` objects in row-major (C) order
with float64 entries; sparse matrices are ``scipy.sparse`` CSR/COO.  The
factorizations here are deliberately small: ``thin_qr`` and ``svd_small``
only ever see tall skinny stacks or tiny cores, and ``truncated_svd``
touches a large operator through matrix-vector products alone.  An
instrumentation stack records the largest factorization sizes requested so
solvers can assert their complexity budget after the fact.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class ComplexityError(RuntimeError):
    """A dense SVD exceeded the active size guard: a complexity bug."""


class TruncatedSvdError(RuntimeError):
    """Truncated SVD did not converge; carries the best triplets found."""

    def __init__(self, message, u, sigma, v):
        super().__init__(message)
        self.u = u
        self.sigma = sigma
        self.v = v


@dataclass
class SvdStats:
    """Per-scope record of factorization sizes requested."""

    max_dense_dim: int = 0
    max_truncated_rank: int = 0
    dense_calls: int = 0
    truncated_calls: int = 0
    truncated_rank_counts: dict = field(default_factory=dict)
    dense_dim_limit: int | None = None

    def record_dense(self, dim):
        self.dense_calls += 1
        self.max_dense_dim = max(self.max_dense_dim, dim)

    def record_truncated(self, k):
        self.truncated_calls += 1
        self.max_truncated_rank = max(self.max_truncated_rank, k)
        self.truncated_rank_counts[k] = self.truncated_rank_counts.get(k, 0) + 1


_STATS_STACK: contextvars.ContextVar[tuple] = contextvars.ContextVar(
    "rankpursuit_svd_stats", default=()
)


@contextlib.contextmanager
def track_svd_sizes(dense_dim_limit=None):
    """Context manager yielding an :class:`SvdStats` that records every
    ``svd_small``/``truncated_svd`` call made while the scope is active.

    ``dense_dim_limit`` arms the size guard: any ``svd_small`` call on a
    matrix with a dimension above the limit raises :class:`ComplexityError`.
    Scopes nest; records propagate to all enclosing scopes, the limit of the
    innermost scope wins.
    """
    stats = SvdStats(dense_dim_limit=dense_dim_limit)
    token = _STATS_STACK.set(_STATS_STACK.get() + (stats,))
    try:
        yield stats
    finally:
        _STATS_STACK.reset(token)


def _record_dense(dim):
    stack = _STATS_STACK.get()
    for stats in stack:
        stats.record_dense(dim)
    if stack:
        limit = stack[-1].dense_dim_limit
        if limit is not None and dim > limit:
            raise ComplexityError(
                f"dense SVD of dimension {dim} exceeds the active guard {limit}"
            )


def _record_truncated(k):
    for stats in _STATS_STACK.get():
        stats.record_truncated(k)


def thin_qr(a):
    """Thin QR factorization of a tall (or square) matrix.

    Parameters
    ----------
    a : ndarray, shape (m, k) with m >= k
        Rank deficiency is allowed; ``r`` may then carry zero diagonal
        entries.

    Returns
    -------
    q : ndarray, shape (m, k)
        Orthonormal columns.
    r : ndarray, shape (k, k)
        Upper triangular, ``a = q @ r``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={a.ndim}")
    m, k = a.shape
    if m < k:
        raise ValueError(f"thin_qr needs rows >= cols, got shape {a.shape}")
    return np.linalg.qr(a)


def svd_small(a):
    """Full SVD of a small dense matrix, guarded by the active size limit.

    Returns ``(u, sigma, v)`` with ``a = u @ diag(sigma) @ v.T``, singular
    values sorted descending and both factors carrying orthonormal columns.
    Raises :class:`ComplexityError` when the matrix is larger than the
    instrumentation guard allows; that signals a bug in a caller that was
    supposed to keep its cores small.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={a.ndim}")
    _record_dense(max(a.shape) if a.size else 0)
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    return u, sigma, vt.T


class LinearMap:
    """Matrix-free linear operator: shape plus matvec/rmatvec products."""

    shape: tuple

    def matvec(self, x):
        raise NotImplementedError

    def rmatvec(self, y):
        raise NotImplementedError

    def matmat(self, x):
        return np.column_stack([self.matvec(x[:, j]) for j in range(x.shape[1])])

    def rmatmat(self, y):
        return np.column_stack([self.rmatvec(y[:, j]) for j in range(y.shape[1])])


class MatrixMap(LinearMap):
    """Wrap a dense array or scipy sparse matrix as a LinearMap."""

    def __init__(self, a):
        self.a = a
        self.shape = a.shape

    def matvec(self, x):
        return self.a @ x

    def rmatvec(self, y):
        return self.a.T @ y

    matmat = matvec
    rmatmat = rmatvec


class LowRankMap(LinearMap):
    """``left @ right.T`` applied without forming the product."""

    def __init__(self, left, right):
        if left.shape[1] != right.shape[1]:
            raise ValueError("left/right factor widths differ")
        self.left = left
        self.right = right
        self.shape = (left.shape[0], right.shape[0])

    def matvec(self, x):
        return self.left @ (self.right.T @ x)

    def rmatvec(self, y):
        return self.right @ (self.left.T @ y)

    matmat = matvec
    rmatmat = rmatvec


class SumMap(LinearMap):
    """Signed sum of linear maps of identical shape (sparse plus low rank)."""

    def __init__(self, maps, signs=None):
        if not maps:
            raise ValueError("need at least one map")
        self.maps = [as_linear_map(a) for a in maps]
        self.signs = list(signs) if signs is not None else [1.0] * len(maps)
        self.shape = self.maps[0].shape
        for a in self.maps:
            if a.shape != self.shape:
                raise ValueError("summed maps must share a shape")

    def matvec(self, x):
        out = self.signs[0] * self.maps[0].matvec(x)
        for s, a in zip(self.signs[1:], self.maps[1:]):
            out += s * a.matvec(x)
        return out

    def rmatvec(self, y):
        out = self.signs[0] * self.maps[0].rmatvec(y)
        for s, a in zip(self.signs[1:], self.maps[1:]):
            out += s * a.rmatvec(y)
        return out

    matmat = matvec
    rmatmat = rmatvec


def as_linear_map(a):
    if isinstance(a, LinearMap):
        return a
    if sp.issparse(a) or isinstance(a, np.ndarray):
        return MatrixMap(a)
    raise TypeError(f"cannot interpret {type(a)!r} as a linear map")


def map_to_dense(a):
    """Materialize a linear map column by column (tests and tiny problems)."""
    a = as_linear_map(a)
    if isinstance(a, MatrixMap):
        m = a.a
        return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=float)
    return a.matmat(np.eye(a.shape[1]))


def truncated_svd(op, k, rtol=1e-6, max_products=None):
    """Dominant ``k`` singular triplets of an operator via Lanczos
    bidiagonalization with full reorthogonalization and restarts.

    The operator is only touched through ``matvec``/``rmatvec`` products,
    so sparse-plus-low-rank structure stays implicit.  Breakdowns restart
    the recursion with a fresh random direction orthogonal to the basis
    built so far, which makes rank-deficient operators (including the zero
    operator) well behaved: missing triplets come back with zero singular
    values and orthonormal filler vectors.

    Parameters
    ----------
    op : LinearMap, ndarray or scipy sparse matrix
    k : int
        Number of triplets, ``0 <= k <= min(op.shape)``.
    rtol : float
        Convergence target: Ritz residuals below ``rtol * sigma[0]``.
    max_products : int, optional
        Cap on operator products before giving up with
        :class:`TruncatedSvdError` (carrying the best triplets so far).

    Returns
    -------
    (u, sigma, v) : ``op ~ u @ diag(sigma) @ v.T``, sigma descending >= 0.
    """
    op = as_linear_map(op)
    m, n = op.shape
    if not 0 <= k <= min(m, n):
        raise ValueError(f"rank {k} out of range for shape {op.shape}")
    if k == 0:
        return np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0))
    _record_truncated(k)
    if max_products is None:
        max_products = 40 * (k + 10) + 4 * min(m, n)

    rng = np.random.default_rng(0x5EEDED)
    us, vs, avs = [], [], []
    products = 0

    def reorth(w, basis):
        for _ in range(2):
            for q in basis:
                w = w - q * (q @ w)
        return w

    def fresh_start():
        # random unit vector orthogonal to the right basis; None when the
        # row space is exhausted
        for _ in range(4):
            w = reorth(rng.standard_normal(n), vs)
            nw = np.linalg.norm(w)
            if nw > 1e-8:
                return w / nw
        return None

    def ritz(num):
        if not us:
            return np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0))
        umat = np.column_stack(us)
        vmat = np.column_stack(vs)
        core = umat.T @ np.column_stack(avs)  # exact projection, av cached
        wl, sv, wrt = np.linalg.svd(core)
        num = min(num, sv.size)
        return umat @ wl[:, :num], sv[:num], vmat @ wrt[:num].T

    def pad(u_r, s_r, v_r):
        # fill missing triplets with zero values and orthonormal directions
        while u_r.shape[1] < k:
            uc = reorth(rng.standard_normal(m), list(u_r.T) + us)
            vc = reorth(rng.standard_normal(n), list(v_r.T) + vs)
            uc /= np.linalg.norm(uc)
            vc /= np.linalg.norm(vc)
            u_r = np.column_stack([u_r, uc])
            v_r = np.column_stack([v_r, vc])
            s_r = np.append(s_r, 0.0)
        return u_r, s_r, v_r

    v = fresh_start()
    target = min(n, max(2 * k + 2, k + 6))
    exhausted = False
    while True:
        while len(vs) < target and not exhausted:
            av = op.matvec(v)
            products += 1
            vs.append(v)
            avs.append(av)
            u = reorth(av.copy(), us)
            alpha = np.linalg.norm(u)
            if alpha > 1e-12 * (np.linalg.norm(av) + 1.0):
                us.append(u / alpha)
                w = reorth(op.rmatvec(us[-1]), vs)
                products += 1
                beta = np.linalg.norm(w)
                v = w / beta if beta > 1e-10 else fresh_start()
            else:
                v = fresh_start()  # breakdown: A v already spanned
            if v is None:
                exhausted = True

        u_r, s_r, v_r = ritz(k)
        scale = s_r[0] if s_r.size else 0.0
        if scale > 0.0:
            # A vs is spanned by us exactly, so only the adjoint-side
            # residual carries convergence information.
            worst = 0.0
            for i in range(s_r.shape[0]):
                resid = op.rmatvec(u_r[:, i]) - s_r[i] * v_r[:, i]
                products += 1
                worst = max(worst, np.linalg.norm(resid))
            if worst <= rtol * scale and s_r.size == k:
                return pad(u_r, s_r, v_r)
        if exhausted:
            # the right basis spans everything reachable: Ritz is exact
            return pad(u_r, s_r, v_r)
        if products > max_products:
            u_b, s_b, v_b = pad(u_r, s_r, v_r)
            raise TruncatedSvdError(
                f"truncated SVD stalled after {products} operator products",
                u_b, s_b, v_b,
            )
        target = min(n, target + k + 4)
