"""Proximal gradient solvers on the bounded-rank variety.

Three entry points share one iteration engine:

* :func:`prg_solve` minimizes ``||X||_* + smooth(X)`` under a fixed rank
  budget, stepping through the prox map along (cone-)projected gradients
  with an Armijo-backtracked stiffness.
* :func:`rprg_solve` adds an error term ``E`` handled by alternating the
  prox step in ``X`` with a closed-form shrinkage in ``E``, while a
  homotopy schedule decays the error weight from a loose initial level
  down to its target.
* :func:`sp_solve` wraps either of them in a rank-pursuit outer loop that
  grows the budget by ``kappa`` per round: each round computes the
  projected gradient plus its best rank-``kappa`` escape direction, takes
  one warm-start step, and hands off to the inner solver at the enlarged
  budget.  Rank exploration happens only in that outer step, so a full run
  performs one rank-``kappa`` truncated SVD per round and dense SVDs no
  larger than the stacked retraction cores.

A solve stops early with a global-optimality flag when its iterate ends up
strictly inside the rank budget; :func:`optimality_check` certifies that
situation from the subdifferential of the trace norm.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kernels import LowRankMap, SumMap, SvdStats, as_linear_map, track_svd_sizes, truncated_svd
from .problems import Observations
from .prox import ShrinkKind, prox_step
from .variety import FixedRankMatrix, cone_direction, inner, project_to_tangent, tangent_as_lowrank


class LineSearchError(RuntimeError):
    """Backtracking exhausted its budget while real decreases were seen."""


class SolveStatus(enum.Enum):
    CONVERGED_INNER = "converged-inner"
    CONVERGED_OUTER = "converged-outer"
    RANK_DEFICIENT_GLOBAL = "rank-deficient-global"
    MAX_ITERATIONS = "max-iterations"


@dataclass
class SolverConfig:
    """Tunables for the solvers; defaults follow the suggested intervals."""

    beta: float = 1e-4            # Armijo sufficient-decrease fraction, in (0, 1)
    eps_inner: float = 0.01       # relative-decrease stop for inner loops
    eps_outer: float = 1e-4       # per-rank-step relative-decrease stop
    rho: float = 0.5              # inner homotopy decay, in (0, 1)
    chi: float = 0.25             # outer homotopy decay, in (0, 1), < rho
    lambda0: float | None = None  # initial homotopy level; default gamma*max|D|
    kappa: int = 1                # rank increment per outer round
    max_inner: int = 500
    max_outer: int | None = None  # default: ceil(min(m, n) / kappa)
    l_init: float | None = None   # initial stiffness; default from problem scale
    l_grow: float = 2.0           # stiffness growth on a rejected step
    l_shrink: float = 1.1         # mild stiffness relaxation between iterations
    max_backtracks: int = 60
    svd_rtol: float = 1e-6        # truncated-SVD accuracy target
    zero_grad_rtol: float = 1e-12
    nu: float = 0.005             # heuristics: penalty scale, in (0.0001, 0.01)
    delta: float = 0.1            # heuristics: error-weight scale, in (0.01, 1]
    eta: float = 0.65             # heuristics: rank-increment cut, in (0.5, 0.9)

    def validate(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if not 0 < self.chi < 1 or self.chi >= self.rho:
            raise ValueError("chi must lie in (0, 1) and be smaller than rho")
        if self.kappa < 1:
            raise ValueError("kappa must be at least 1")
        if self.eps_inner < 0 or self.eps_outer < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.max_inner < 1 or (self.max_outer is not None and self.max_outer < 1):
            raise ValueError("iteration caps must be positive")
        if self.l_grow <= 1 or self.l_shrink < 1:
            raise ValueError("l_grow must exceed 1 and l_shrink be at least 1")
        if self.lambda0 is not None and self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive when given")
        return self


@dataclass
class TraceRecord:
    outer: int
    inner: int
    wall: float
    psi: float
    trace_norm: float
    rank: int
    stiffness: float | None
    lam: float | None
    grad_norm: float
    rank_inc_norm: float
    rmse: float | None = None

    def as_dict(self):
        return {
            "outer": self.outer, "inner": self.inner, "wall": self.wall,
            "psi": self.psi, "trace_norm": self.trace_norm, "rank": self.rank,
            "stiffness": self.stiffness, "lam": self.lam,
            "grad_norm": self.grad_norm, "rank_inc_norm": self.rank_inc_norm,
            "rmse": self.rmse,
        }


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)
    svd_stats: SvdStats | None = None


@dataclass
class Solution:
    x: FixedRankMatrix
    e: np.ndarray | None
    status: SolveStatus
    psi: float
    trace: SolverTrace


def homotopy_level(lam0, lam, rho, k):
    """Error weight at inner iteration ``k`` (1-based): geometric decay
    from ``lam0`` floored at the target ``lam``."""
    return max(lam0 * rho ** (k - 1), lam)


def armijo(objective_at, x, grad, l_init, rank_budget, config):
    """Backtracking stiffness search for the prox step.

    Tests stiffness values on the geometric grid ``l_init * l_grow**j`` and
    returns ``(stiffness, next_point)`` for the first (smallest) value whose
    prox step drops the objective by at least ``beta * ||grad||^2 /
    stiffness``.

    Returns ``None`` when the point is prox-stationary at the resolution
    ``beta`` affords.  The decrease a prox step can achieve scales like
    ``c(x) / stiffness`` for stiff steps, where ``c(x)`` vanishes exactly at
    stationary points, while the requirement scales like ``beta *
    ||grad||^2 / stiffness`` with a gradient that stays bounded away from
    zero (it balances the trace-norm subgradient).  Once ``c(x)`` falls
    under ``beta * ||grad||^2`` no stiffness can qualify; that situation is
    convergence, not a failure.  A genuine failure (decreases incompatible
    with that picture) still raises :class:`LineSearchError`.
    """
    g2 = inner(grad, grad)
    if g2 <= 0:
        raise ValueError("line search needs a nonzero search direction")
    psi0 = objective_at(x)
    stiffness = l_init
    best_drop = -math.inf
    best_rate = -math.inf  # estimates c(x) = lim stiffness * achievable drop
    for _ in range(config.max_backtracks):
        candidate = prox_step(x, grad, stiffness, rank_budget)
        drop = psi0 - objective_at(candidate)
        if drop >= config.beta * g2 / stiffness:
            return stiffness, candidate
        best_drop = max(best_drop, drop)
        best_rate = max(best_rate, drop * stiffness)
        stiffness *= config.l_grow
    if best_drop <= 1e-12 * (1.0 + abs(psi0)) or best_rate < config.beta * g2:
        return None
    raise LineSearchError(
        f"no acceptable stiffness in [{l_init:g}, {stiffness:g}]: "
        f"best decrease {best_drop:.3e}, grad norm {math.sqrt(g2):.3e}"
    )


def _record(trace, t0, outer, k, psi, x, stiffness, lam, grad_norm,
            inc_norm, iter_metric):
    trace.records.append(TraceRecord(
        outer=outer, inner=k, wall=time.perf_counter() - t0, psi=psi,
        trace_norm=x.trace_norm, rank=x.rank, stiffness=stiffness, lam=lam,
        grad_norm=grad_norm, rank_inc_norm=inc_norm,
        rmse=None if iter_metric is None else float(iter_metric(x)),
    ))


def _inner_engine(problem, x, e, rank_budget, config, *, robust, cone_grads,
                  lam0, lam_target, trace, outer, t0, l_run, iter_metric):
    """Shared iteration loop: prox steps in ``x`` (optionally alternated
    with shrinkage in ``e``) until the relative decrease or gradient dies.

    Returns ``(x, e, converged, l_run)``.  With ``cone_grads`` the search
    direction is the full cone projection at the current rank; without it
    the direction stays in the tangent space (rank exploration is then the
    caller's job).
    """
    zero_tol = config.zero_grad_rtol * problem.gamma * problem.data_norm
    lam_k = homotopy_level(lam0, lam_target, config.rho, 1) if robust else None
    psi_prev = problem.objective(x, e, lam=lam_k or 0.0)[0]
    if psi_prev <= 0:
        return x, e, True, l_run
    for k in range(1, config.max_inner + 1):
        if robust:
            lam_k = homotopy_level(lam0, lam_target, config.rho, k)
        g = problem.euclid_grad(x, e)
        if cone_grads and x.rank < rank_budget:
            grad = cone_direction(x, g, rank_budget, config.svd_rtol)
            inc_norm = grad.inc_norm()
        else:
            grad = project_to_tangent(x, g)
            inc_norm = 0.0
        grad_norm = grad.norm()
        if grad_norm <= zero_tol:
            return x, e, True, l_run

        def objective_at(point):
            return problem.objective(point, e, lam=lam_k or 0.0)[0]

        psi_enter = objective_at(x)
        found = armijo(objective_at, x, grad, l_run / config.l_shrink,
                       rank_budget, config)
        if found is None:
            if robust:  # keep the error term consistent with the final level
                e = problem.shrink_error(x, lam_k)
            return x, e, True, l_run
        l_run, x = found
        if robust:
            e = problem.shrink_error(x, lam_k)
        psi_k = problem.objective(x, e, lam=lam_k or 0.0)[0]
        if psi_k > psi_enter + 1e-9 * (1.0 + abs(psi_enter)):
            raise RuntimeError(
                "alternating update increased the objective "
                f"({psi_enter:.12g} -> {psi_k:.12g})")
        _record(trace, t0, outer, k, psi_k, x, l_run, lam_k, grad_norm,
                inc_norm, iter_metric)
        at_target = (not robust) or lam_k <= lam_target
        if psi_prev <= 0:
            return x, e, True, l_run
        if at_target and (psi_prev - psi_k) / psi_prev <= config.eps_inner:
            return x, e, True, l_run
        psi_prev = psi_k
    return x, e, False, l_run


def prg_solve(problem, rank_budget, config=None, x0=None, iter_metric=None):
    """Prox-gradient descent for ``||X||_* + smooth(X)`` on the variety of
    rank at most ``rank_budget``, Armijo line search included.

    The problem must carry no error term.  Starting from zero (the
    default), the first search directions come from the cone projection,
    which seeds the factors through a rank-``rank_budget`` truncated SVD of
    the gradient.
    """
    if problem.shrink_kind is not ShrinkKind.NONE:
        raise ValueError("plain solver expects a problem without an error term")
    if rank_budget < 1:
        raise ValueError("rank budget must be positive")
    config = (config or SolverConfig()).validate()
    x = FixedRankMatrix.zero(*problem.x_shape) if x0 is None else x0
    t0 = time.perf_counter()
    trace = SolverTrace()
    with track_svd_sizes(dense_dim_limit=4 * rank_budget) as stats:
        trace.svd_stats = stats
        psi_start = problem.objective(x, None, lam=0.0)[0]
        _record(trace, t0, 0, 0, psi_start, x, None, None, math.nan, 0.0,
                iter_metric)
        l_run = config.l_init or problem.default_stiffness()
        x, _, converged, _ = _inner_engine(
            problem, x, None, rank_budget, config, robust=False,
            cone_grads=True, lam0=0.0, lam_target=0.0, trace=trace, outer=0,
            t0=t0, l_run=l_run, iter_metric=iter_metric)
    status = SolveStatus.CONVERGED_INNER if converged else SolveStatus.MAX_ITERATIONS
    psi = problem.objective(x, None, lam=0.0)[0]
    return Solution(x, None, status, psi, trace)


def rprg_solve(problem, rank_budget, config=None, x0=None, e0=None,
               iter_metric=None):
    """Alternating solver for problems with an error term: prox steps in
    ``X``, closed-form shrinkage in ``E``, and a homotopy schedule decaying
    the error weight from ``lambda0`` down to the problem's target.

    The objective with the error weight frozen at its current level is
    guaranteed non-increasing across every update pair; the engine enforces
    that as a runtime check.
    """
    if problem.shrink_kind is ShrinkKind.NONE:
        raise ValueError("robust solver expects a problem with an error term")
    if problem.lam <= 0:
        raise ValueError("robust solver needs a positive error weight")
    if rank_budget < 1:
        raise ValueError("rank budget must be positive")
    config = (config or SolverConfig()).validate()
    x = FixedRankMatrix.zero(*problem.x_shape) if x0 is None else x0
    e = problem.zero_error() if e0 is None else e0
    lam0 = config.lambda0 or problem.gamma * problem.data_absmax
    t0 = time.perf_counter()
    trace = SolverTrace()
    with track_svd_sizes(dense_dim_limit=4 * rank_budget) as stats:
        trace.svd_stats = stats
        psi_start = problem.objective(x, e, lam=homotopy_level(
            lam0, problem.lam, config.rho, 1))[0]
        _record(trace, t0, 0, 0, psi_start, x, None, lam0, math.nan, 0.0,
                iter_metric)
        l_run = config.l_init or problem.default_stiffness()
        x, e, converged, _ = _inner_engine(
            problem, x, e, rank_budget, config, robust=True, cone_grads=True,
            lam0=lam0, lam_target=problem.lam, trace=trace, outer=0, t0=t0,
            l_run=l_run, iter_metric=iter_metric)
    status = SolveStatus.CONVERGED_INNER if converged else SolveStatus.MAX_ITERATIONS
    psi = problem.objective(x, e)[0]
    return Solution(x, e, status, psi, trace)


def sp_solve(problem, config=None, iter_metric=None):
    """Rank pursuit: solve a growing sequence of rank-budgeted problems,
    warm starting each round from the previous solution.

    Round ``t`` raises the budget to ``t * kappa``, computes the projected
    gradient together with its best rank-``kappa`` escape term, takes one
    line-searched prox step (plus an error shrinkage for robust problems)
    and refines with the inner solver.  The run stops when an inner
    solution lands strictly inside its budget (a certificate of global
    optimality for the penalized problem), when the per-increment relative
    decrease falls under ``eps_outer``, or at the round cap.
    """
    config = (config or SolverConfig()).validate()
    robust = problem.shrink_kind is not ShrinkKind.NONE
    if robust and problem.lam <= 0:
        raise ValueError("robust pursuit needs a positive error weight")
    m, n = problem.x_shape
    kappa = config.kappa
    rounds_to_full = math.ceil(min(m, n) / kappa)
    rounds = min(config.max_outer or rounds_to_full, rounds_to_full)
    lam0_glob = config.lambda0 or problem.gamma * problem.data_absmax

    x = FixedRankMatrix.zero(m, n)
    e = problem.zero_error() if robust else None
    lam_prev_target = lam0_glob
    status = SolveStatus.MAX_ITERATIONS
    t0 = time.perf_counter()
    trace = SolverTrace()
    with track_svd_sizes() as stats:
        trace.svd_stats = stats
        zero_tol = config.zero_grad_rtol * problem.gamma * problem.data_norm
        psi_outer_prev = problem.objective(x, e, lam=lam_prev_target)[0]
        _record(trace, t0, 0, 0, psi_outer_prev, x, None, None, math.nan, 0.0,
                iter_metric)
        if psi_outer_prev <= 0:
            status = SolveStatus.CONVERGED_OUTER
            rounds = 0
        l_run = config.l_init or problem.default_stiffness()
        for t in range(1, rounds + 1):
            budget = min(t * kappa, min(m, n))
            stats.dense_dim_limit = 4 * budget
            lam0_t = lam_prev_target
            lam_t = homotopy_level(lam0_glob, problem.lam, config.chi, t + 1) \
                if robust else 0.0
            # the stopping rules certify a solution of the target problem,
            # so they stay disarmed while the error weight is still decaying
            at_target = (not robust) or lam_t <= problem.lam
            g = problem.euclid_grad(x, e)
            grad = cone_direction(x, g, budget, config.svd_rtol)
            inc_norm = grad.inc_norm()
            grad_norm = grad.norm()

            def objective_at(point):
                return problem.objective(point, e, lam=lam0_t if robust else 0.0)[0]

            found = None
            if grad_norm > zero_tol:
                found = armijo(objective_at, x, grad, l_run / config.l_shrink,
                               budget, config)
            if found is None:
                if at_target:
                    status = (SolveStatus.RANK_DEFICIENT_GLOBAL
                              if x.rank < budget else SolveStatus.CONVERGED_OUTER)
                    break
                if robust:  # stationary at this level only: decay and go on
                    e = problem.shrink_error(x, lam_t)
                psi_outer_prev = problem.objective(x, e, lam=lam_t)[0]
                lam_prev_target = lam_t
                continue
            l_run, x = found
            if robust:
                e = problem.shrink_error(x, lam0_t)
            psi_ws = problem.objective(x, e, lam=lam0_t if robust else 0.0)[0]
            _record(trace, t0, t, 0, psi_ws, x, l_run, lam0_t if robust else None,
                    grad_norm, inc_norm, iter_metric)
            x, e, _, l_run = _inner_engine(
                problem, x, e, budget, config, robust=robust, cone_grads=False,
                lam0=lam0_t, lam_target=lam_t, trace=trace, outer=t, t0=t0,
                l_run=l_run, iter_metric=iter_metric)
            psi_t = problem.objective(x, e, lam=lam_t)[0]
            if at_target and x.rank < budget:
                status = SolveStatus.RANK_DEFICIENT_GLOBAL
                break
            if psi_outer_prev <= 0:
                status = SolveStatus.CONVERGED_OUTER
                break
            if at_target and \
                    (psi_outer_prev - psi_t) / (kappa * psi_outer_prev) <= config.eps_outer:
                status = SolveStatus.CONVERGED_OUTER
                break
            psi_outer_prev = psi_t
            lam_prev_target = lam_t
    psi = problem.objective(x, e)[0]
    return Solution(x, e, status, psi, trace)


def heuristics(data, nu=0.005, delta=0.1, eta=0.65, kappa_max=8):
    """Suggested ``(gamma, lam, kappa)`` from the spectrum of the adjoint
    image of the data.

    ``gamma = 1 / (nu * sigma_1)``, ``lam = delta * gamma * mean|data|``,
    and ``kappa`` counts the leading singular values within a factor
    ``eta`` of the largest (probing at most ``kappa_max`` of them).
    ``data`` is either an :class:`Observations` set (completion) or a dense
    data matrix (self-representation).
    """
    if not 0.0001 <= nu <= 0.01:
        raise ValueError("nu outside its suggested interval (0.0001, 0.01)")
    if not 0.01 <= delta <= 1.0:
        raise ValueError("delta outside its suggested interval (0.01, 1]")
    if not 0.5 <= eta <= 0.9:
        raise ValueError("eta outside its suggested interval (0.5, 0.9)")
    if isinstance(data, Observations):
        adj = sp.coo_matrix((data.values, (data.rows, data.cols)),
                            shape=data.shape).tocsr()
        absmean = float(np.mean(np.abs(data.values)))
    else:
        mat = np.asarray(data, dtype=float)
        adj = mat.T @ mat
        absmean = float(np.mean(np.abs(mat)))
    probe = min(kappa_max, min(adj.shape))
    sigma = truncated_svd(adj, probe, rtol=1e-6)[1]
    if sigma.size == 0 or sigma[0] <= 0:
        raise ValueError("all-zero data: no spectrum to scale against")
    gamma = 1.0 / (nu * sigma[0])
    lam = delta * gamma * absmean
    kappa = max(1, int(np.sum(sigma >= eta * sigma[0])))
    return gamma, lam, kappa


@dataclass
class OptimalityReport:
    inner_residual: float
    spectral_excess: float
    is_global_certificate: bool
    components: dict

    def __bool__(self):
        return self.is_global_certificate


def optimality_check(problem, x, e=None, tol=1e-4):
    """Certify that ``-grad`` of the smooth part lies in the trace-norm
    subdifferential at ``x``, which makes ``x`` a global minimizer of the
    penalized problem (for the given error term).

    Checks the three factor-aligned residuals and the spectral norm of the
    gradient compressed onto the orthogonal complements of the factor
    ranges (which must not exceed one).  The compression's top singular
    value comes from a rank-1 truncated SVD, so the check stays cheap.
    """
    g = problem.euclid_grad(x, e)
    if x.rank:
        gv = g @ x.v
        gtu = g.T @ x.u
        core = np.linalg.norm(x.u.T @ gv + np.eye(x.rank))
        left = np.linalg.norm(gv + x.u)
        right = np.linalg.norm(gtu + x.v)
        tv = project_to_tangent(x, g)
        residual = SumMap([g, LowRankMap(*tangent_as_lowrank(tv))], [1.0, -1.0])
    else:
        core = left = right = 0.0
        residual = as_linear_map(g)
    top = truncated_svd(residual, min(1, min(x.shape)), rtol=1e-6)[1]
    excess = max(0.0, float(top[0]) - 1.0) if top.size else 0.0
    inner_residual = max(core, left, right)
    return OptimalityReport(
        inner_residual=inner_residual,
        spectral_excess=excess,
        is_global_certificate=inner_residual <= tol and excess <= tol,
        components={"core": core, "left": left, "right": right},
    )
