"""Geometry of the bounded-rank matrix variety, kept in factored form.

A point is ``U diag(sigma) V^T`` with orthonormal factors; search
directions live in the tangent space at the point, optionally augmented
with a rank-increasing component supported on the orthogonal complement
of both factor ranges.  Everything is computed from small products: the
dense matrices this module factorizes never exceed twice the current rank
plus the rank-increase budget.
"""

from __future__ import annotations

import numpy as np

from .kernels import (
    LinearMap,
    LowRankMap,
    SumMap,
    as_linear_map,
    svd_small,
    thin_qr,
    truncated_svd,
)

_ORTHO_TOL = 1e-8
_DROP_TOL = 1e-12


def _check_orthonormal(a, what):
    if a.shape[1] == 0:
        return
    resid = np.linalg.norm(a.T @ a - np.eye(a.shape[1]))
    if resid > _ORTHO_TOL * max(1.0, np.linalg.norm(a)):
        raise ValueError(f"{what} columns are not orthonormal (residual {resid:.2e})")


def _check_perp(a, basis, what):
    if a.size == 0 or basis.shape[1] == 0:
        return
    resid = np.linalg.norm(basis.T @ a)
    scale = np.linalg.norm(a)
    if resid > _ORTHO_TOL * max(scale, 1e-300):
        raise ValueError(f"{what} is not orthogonal to the base factor "
                         f"(residual {resid:.2e} vs norm {scale:.2e})")


class FixedRankMatrix:
    """Matrix of exact rank ``s`` stored as ``u @ diag(sigma) @ v.T``.

    ``u`` is m-by-s and ``v`` is n-by-s with orthonormal columns; ``sigma``
    holds strictly positive values in descending order.  ``s = 0`` encodes
    the zero matrix.  Instances are treated as immutable.
    """

    def __init__(self, u, sigma, v, validate=True):
        self.u = np.asarray(u, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.v = np.asarray(v, dtype=float)
        if self.u.ndim != 2 or self.v.ndim != 2 or self.sigma.ndim != 1:
            raise ValueError("expected 2-d factors and a 1-d sigma")
        s = self.sigma.shape[0]
        if self.u.shape[1] != s or self.v.shape[1] != s:
            raise ValueError("factor widths disagree with sigma length")
        if s > min(self.u.shape[0], self.v.shape[0]):
            raise ValueError("rank exceeds matrix dimensions")
        if validate:
            if s and not np.all(np.isfinite(self.sigma)):
                raise ValueError("sigma entries must be finite")
            if np.any(self.sigma <= 0):
                raise ValueError("sigma entries must be strictly positive")
            if np.any(np.diff(self.sigma) > 0):
                raise ValueError("sigma must be sorted descending")
            _check_orthonormal(self.u, "left factor")
            _check_orthonormal(self.v, "right factor")

    @classmethod
    def zero(cls, m, n):
        return cls(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)), validate=False)

    @property
    def shape(self):
        return (self.u.shape[0], self.v.shape[0])

    @property
    def rank(self):
        return self.sigma.shape[0]

    @property
    def trace_norm(self):
        return float(np.sum(self.sigma))

    def to_dense(self):
        if self.rank == 0:
            return np.zeros(self.shape)
        return (self.u * self.sigma) @ self.v.T

    def entries(self, rows, cols):
        """Entries at the given index arrays, one dot product of length
        ``rank`` per requested entry."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        if self.rank == 0:
            return np.zeros(rows.shape[0])
        return np.einsum("ij,ij->i", self.u[rows] * self.sigma, self.v[cols])


class TangentVector:
    """Tangent direction ``u @ core @ v.T + u_perp @ v.T + u @ v_perp.T``
    at a fixed-rank base point (``u_perp``/``v_perp`` orthogonal to the
    base factors)."""

    def __init__(self, base, core, u_perp, v_perp, validate=True):
        self.base = base
        self.core = np.asarray(core, dtype=float)
        self.u_perp = np.asarray(u_perp, dtype=float)
        self.v_perp = np.asarray(v_perp, dtype=float)
        s = base.rank
        if self.core.shape != (s, s):
            raise ValueError("core block must be rank-by-rank")
        if self.u_perp.shape != base.u.shape or self.v_perp.shape != base.v.shape:
            raise ValueError("perp blocks must match the base factor shapes")
        if validate:
            if s and not (np.all(np.isfinite(self.core))
                          and np.all(np.isfinite(self.u_perp))
                          and np.all(np.isfinite(self.v_perp))):
                raise ValueError("tangent components must be finite")
            _check_perp(self.u_perp, base.u, "u_perp")
            _check_perp(self.v_perp, base.v, "v_perp")

    def norm(self):
        return float(np.sqrt(np.sum(self.core ** 2)
                             + np.sum(self.u_perp ** 2)
                             + np.sum(self.v_perp ** 2)))

    def scaled(self, c):
        return TangentVector(self.base, c * self.core, c * self.u_perp,
                             c * self.v_perp, validate=False)

    def to_dense(self):
        x = self.base
        if x.rank == 0:
            return np.zeros(x.shape)
        return (x.u @ self.core + self.u_perp) @ x.v.T + x.u @ self.v_perp.T


class ConeVector:
    """Tangent vector plus a rank-increasing term supported on the
    orthogonal complement of the base ranges: ``inc_u @ diag(inc_sigma) @
    inc_v.T`` with ``inc_u`` perpendicular to the base left factor and
    ``inc_v`` to the right one.  ``inc_sigma`` entries may carry signs
    (scaled directions)."""

    def __init__(self, tangent, inc_u=None, inc_sigma=None, inc_v=None,
                 validate=True):
        base = tangent.base
        m, n = base.shape
        self.tangent = tangent
        self.inc_u = (np.zeros((m, 0)) if inc_u is None
                      else np.asarray(inc_u, dtype=float))
        self.inc_sigma = (np.zeros(0) if inc_sigma is None
                          else np.asarray(inc_sigma, dtype=float))
        self.inc_v = (np.zeros((n, 0)) if inc_v is None
                      else np.asarray(inc_v, dtype=float))
        q = self.inc_sigma.shape[0]
        if self.inc_u.shape != (m, q) or self.inc_v.shape != (n, q):
            raise ValueError("rank-increase factors disagree with inc_sigma")
        if validate and q:
            if not np.all(np.isfinite(self.inc_sigma)):
                raise ValueError("inc_sigma entries must be finite")
            _check_orthonormal(self.inc_u, "inc_u")
            _check_orthonormal(self.inc_v, "inc_v")
            _check_perp(self.inc_u, base.u, "inc_u")
            _check_perp(self.inc_v, base.v, "inc_v")

    @property
    def base(self):
        return self.tangent.base

    @property
    def inc_rank(self):
        return self.inc_sigma.shape[0]

    def inc_norm(self):
        return float(np.linalg.norm(self.inc_sigma))

    def norm(self):
        t = self.tangent
        return float(np.sqrt(np.sum(t.core ** 2) + np.sum(t.u_perp ** 2)
                             + np.sum(t.v_perp ** 2)
                             + np.sum(self.inc_sigma ** 2)))

    def scaled(self, c):
        return ConeVector(self.tangent.scaled(c), self.inc_u,
                          c * self.inc_sigma, self.inc_v, validate=False)

    def to_dense(self):
        out = self.tangent.to_dense()
        if self.inc_rank:
            out = out + (self.inc_u * self.inc_sigma) @ self.inc_v.T
        return out


def _split(vec):
    """View a tangent or cone vector as (tangent, inc_u, inc_sigma, inc_v)."""
    if isinstance(vec, ConeVector):
        return vec.tangent, vec.inc_u, vec.inc_sigma, vec.inc_v
    m, n = vec.base.shape
    return vec, np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0))


def inner(a, b):
    """Euclidean inner product of two tangent/cone vectors at one base.

    Cross terms between the tangent blocks, and between tangent and
    rank-increase parts, vanish by the orthogonality invariants, so this
    reduces to block-wise products plus a small coupling term between the
    two rank-increase frames.
    """
    ta, ua, sa, va = _split(a)
    tb, ub, sb, vb = _split(b)
    if ta.base is not tb.base:
        raise ValueError("inner product needs vectors at the same base point")
    val = (np.sum(ta.core * tb.core) + np.sum(ta.u_perp * tb.u_perp)
           + np.sum(ta.v_perp * tb.v_perp))
    if sa.size and sb.size:
        val += np.sum((ua.T @ ub) * (va.T @ vb) * np.outer(sa, sb))
    return float(val)


def project_to_tangent(x, z):
    """Orthogonal projection of a matrix (or operator) onto the tangent
    space at ``x``, computed from the products ``z @ v`` and ``z.T @ u``.

    For a rank-zero base the projection is the zero vector by convention.
    """
    m, n = x.shape
    if isinstance(z, LinearMap):
        if z.shape != (m, n):
            raise ValueError(f"operator shape {z.shape} != point shape {(m, n)}")
        zv = z.matmat(x.v) if x.rank else np.zeros((m, 0))
        ztu = z.rmatmat(x.u) if x.rank else np.zeros((n, 0))
    else:
        if z.shape != (m, n):
            raise ValueError(f"matrix shape {z.shape} != point shape {(m, n)}")
        zv = z @ x.v
        ztu = z.T @ x.u
    if x.rank == 0:
        return TangentVector(x, np.zeros((0, 0)), np.zeros((m, 0)),
                             np.zeros((n, 0)), validate=False)
    core = x.u.T @ zv
    u_perp = zv - x.u @ core
    v_perp = ztu - x.v @ core.T
    return TangentVector(x, core, u_perp, v_perp, validate=False)


def tangent_as_lowrank(tv):
    """Factor a tangent vector as ``left @ right.T`` (width 2·rank)."""
    x = tv.base
    left = np.hstack([x.u @ tv.core + tv.u_perp, x.u])
    right = np.hstack([x.v, tv.v_perp])
    return left, right


def cone_direction(x, g, r, svd_rtol=1e-6):
    """Projection of ``g`` onto the search cone at ``x`` with rank budget
    ``r``: the tangent projection plus the best rank-``(r - s)``
    approximation of what the tangent space misses.

    The leftover ``g - P(g)`` equals the compression of ``g`` onto the
    orthogonal complements of both factor ranges; its dominant part is
    extracted with a truncated SVD of rank ``r - s``, so no factorization
    larger than the budget ever happens.  Zero leftover singular values are
    dropped.
    """
    s = x.rank
    if r < s:
        raise ValueError(f"rank budget {r} below current rank {s}")
    tv = project_to_tangent(x, g)
    q = r - s
    if q == 0:
        return ConeVector(tv)
    if s == 0:
        residual = as_linear_map(g)
    else:
        left, right = tangent_as_lowrank(tv)
        residual = SumMap([g, LowRankMap(left, right)], [1.0, -1.0])
    iu, isig, iv = truncated_svd(residual, q, rtol=svd_rtol)
    if isig.size and isig[0] > 0:
        keep = isig > 1e-13 * isig[0]
    else:
        keep = np.zeros(isig.shape, dtype=bool)
    return ConeVector(tv, iu[:, keep], isig[keep], iv[:, keep], validate=False)


def retract(x, xi, r):
    """Metric projection of ``x + xi`` onto the rank-``<= r`` variety.

    Stacks the factors of ``x`` and ``xi``, orthonormalizes each side with
    a thin QR, takes the SVD of the small core (dimension at most twice the
    base rank plus the rank-increase width) and truncates to the budget.
    Singular values below ``1e-12`` of the largest are dropped, so the
    result always satisfies the strict-positivity invariant.
    """
    tv, inc_u, inc_sigma, inc_v = _split(xi)
    if tv.base is not x:
        raise ValueError("search direction is not based at the given point")
    s = x.rank
    q = inc_sigma.shape[0]
    if s == 0 and q == 0:
        return x
    if (not np.any(tv.core) and not np.any(tv.u_perp) and not np.any(tv.v_perp)
            and not np.any(inc_sigma)):
        return x  # zero step: the projection of x + 0 is x itself

    left = np.hstack([x.u, tv.u_perp, inc_u]) if s else inc_u
    right = np.hstack([x.v, tv.v_perp, inc_v]) if s else inc_v
    w_u = left.shape[1]
    w_v = right.shape[1]
    core = np.zeros((w_u, w_v))
    if s:
        core[:s, :s] = np.diag(x.sigma) + tv.core
        core[:s, s:2 * s] = np.eye(s)
        core[s:2 * s, :s] = np.eye(s)
    if q:
        core[w_u - q:, w_v - q:] = np.diag(inc_sigma)

    def stack_qr(a):
        # stacks wider than tall can appear on tiny matrices; reduced QR
        # then yields a rectangular upper factor, which the core absorbs
        return thin_qr(a) if a.shape[0] >= a.shape[1] else np.linalg.qr(a)

    qu, ru = stack_qr(left)
    qv, rv = stack_qr(right)
    cu, csig, cv = svd_small(ru @ core @ rv.T)
    if csig.size and csig[0] > 0:
        keep = np.flatnonzero(csig > _DROP_TOL * csig[0])[:r]
    else:
        keep = np.zeros(0, dtype=int)
    if keep.size == 0:
        return FixedRankMatrix.zero(*x.shape)
    return FixedRankMatrix(qu @ cu[:, keep], csig[keep], qv @ cv[:, keep],
                           validate=False)
