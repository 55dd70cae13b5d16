"""Dense active-set solver for convex QPs with equality rows and box bounds.

Two entry points cover everything the package needs:

* :func:`solve_box_lsq` -- minimize ``0.5 * |M x - rhs|^2`` subject to
  ``lb <= x <= ub``. Used as the phase-1 feasibility/violation minimizer;
  its exact box-stationarity is what makes infeasibility certificates exact.
* :func:`solve_box_qp` -- minimize ``0.5 * x'Hx + g'x`` subject to
  ``A x = b`` and ``lb <= x <= ub`` starting from a feasible point.

Both iterate a working set of bound-fixed coordinates; subproblems are dense
KKT (or least-squares) solves, so complementarity at the returned point is
exact to factorization error. Ties are broken by lowest index to keep runs
deterministic; zero-curvature descent directions (linear objectives) are
followed to the blocking bound, which keeps LP-type problems in scope as long
as every variable is boxed along the ray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

_RELEASE_TOL = 1e-9
_STEP_TOL = 1e-12


@dataclass
class QPResult:
    x: np.ndarray
    eq_duals: np.ndarray          # lambda with  Hx + g + A' lambda - eta_lo + eta_up = 0
    lower_duals: np.ndarray       # eta_lo >= 0, supported on active lower bounds
    upper_duals: np.ndarray       # eta_up >= 0, supported on active upper bounds
    objective: float
    iterations: int


@dataclass
class LSQResult:
    x: np.ndarray
    residual: np.ndarray          # M x - rhs at the optimum
    gradient: np.ndarray          # M'(M x - rhs), exact box-stationary
    objective: float              # 0.5 * |residual|^2
    iterations: int


def _max_step(x, p, lb, ub, free, full_step=1.0):
    """Largest alpha in [0, full_step] keeping x + alpha*p inside the box.

    Returns (alpha, blocking index or -1, bound side); lowest index wins
    ties. Pass ``full_step=inf`` for ray steps that must reach a bound.
    """
    alpha = full_step
    block = -1
    side = 0
    for i in free:
        pi = p[i]
        if pi > _STEP_TOL:
            cap = (ub[i] - x[i]) / pi
            if cap < alpha - 1e-15:
                alpha, block, side = cap, i, +1
        elif pi < -_STEP_TOL:
            cap = (lb[i] - x[i]) / pi
            if cap < alpha - 1e-15:
                alpha, block, side = cap, i, -1
    return max(alpha, 0.0), block, side


def _clamp(x, lb, ub):
    np.clip(x, lb, ub, out=x)


def solve_box_lsq(
    M: np.ndarray,
    rhs: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> LSQResult:
    """Bounded least squares by active-set iteration with exact KKT exit test.

    The returned gradient satisfies the box KKT conditions to ``tol`` times
    the problem scale: ~0 on interior coordinates, >= 0 at lower bounds,
    <= 0 at upper bounds.
    """
    M = np.asarray(M, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    nvar = M.shape[1]
    x = np.zeros(nvar) if x0 is None else np.array(x0, dtype=float)
    _clamp(x, lb, ub)

    scale = max(1.0, float(np.abs(rhs).max(initial=0.0)), float(np.abs(M).max(initial=0.0)))
    gtol = tol * scale
    if max_iter is None:
        max_iter = 40 * nvar + 200

    at_lower = np.isclose(x, lb, rtol=0.0, atol=0.0)
    at_upper = np.isclose(x, ub, rtol=0.0, atol=0.0)

    for it in range(1, max_iter + 1):
        fixed = at_lower | at_upper
        free = np.flatnonzero(~fixed)
        resid = M @ x - rhs

        if free.size:
            fixed = np.flatnonzero(fixed)
            target_free, *_ = np.linalg.lstsq(
                M[:, free], rhs - M[:, fixed] @ x[fixed], rcond=None
            )
            p = np.zeros(nvar)
            p[free] = target_free - x[free]
        else:
            p = np.zeros(nvar)

        step_tol = tol * max(1.0, float(np.abs(x).max(initial=0.0)))
        if np.abs(p).max(initial=0.0) > step_tol:
            alpha, block, side = _max_step(x, p, lb, ub, free)
            x = x + alpha * p
            if block >= 0:
                if side > 0:
                    x[block] = ub[block]
                    at_upper[block] = True
                else:
                    x[block] = lb[block]
                    at_lower[block] = True
                continue
            _clamp(x, lb, ub)
            # full step taken; fall through to the multiplier test
            resid = M @ x - rhs

        grad = M.T @ resid
        release = -1
        for i in np.flatnonzero(at_lower):
            if grad[i] < -gtol and ub[i] > lb[i]:
                release = i
                break
        if release < 0:
            for i in np.flatnonzero(at_upper):
                if grad[i] > gtol and ub[i] > lb[i]:
                    release = i
                    break
        if release < 0:
            return LSQResult(
                x=x,
                residual=resid,
                gradient=grad,
                objective=0.5 * float(resid @ resid),
                iterations=it,
            )
        at_lower[release] = False
        at_upper[release] = False

    raise NumericalFailure("bounded least-squares active set did not converge")


def _kkt_step(H, g, A, b, x, free, fixed):
    """Solve the equality-constrained subproblem on the free coordinates.

    Returns (target_x_free, eq_duals, ray) where `ray` is a zero-curvature
    descent direction when the subproblem has no finite minimizer.
    """
    nf = free.size
    neq = A.shape[0]
    Hff = H[np.ix_(free, free)]
    Af = A[:, free]
    gf = g[free] + H[np.ix_(free, fixed)] @ x[fixed]
    bf = b - A[:, fixed] @ x[fixed]

    K = np.zeros((nf + neq, nf + neq))
    K[:nf, :nf] = Hff
    K[:nf, nf:] = Af.T
    K[nf:, :nf] = Af
    rhs = np.concatenate([-gf, bf])

    sol = None
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)):
            sol = None
    except np.linalg.LinAlgError:
        sol = None
    if sol is None:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)

    kres = K @ sol - rhs
    kscale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
    if float(np.abs(kres).max(initial=0.0)) <= 1e-8 * kscale:
        return sol[:nf], sol[nf:], None

    # Inconsistent KKT system: the subproblem is unbounded below along a
    # zero-curvature feasible direction. Project the negative gradient onto
    # null([Hff; Af]).
    stack = np.vstack([Hff, Af])
    _, s, vt = np.linalg.svd(stack, full_matrices=True)
    rank = int(np.sum(s > 1e-11 * max(1.0, s[0] if s.size else 1.0)))
    null_basis = vt[rank:].T
    grad_f = Hff @ x[free] + gf
    ray = -null_basis @ (null_basis.T @ grad_f)
    if float(np.abs(ray).max(initial=0.0)) <= 1e-12:
        raise NumericalFailure("inconsistent KKT subproblem with no descent ray")
    return None, None, ray


def solve_box_qp(
    H: np.ndarray,
    g: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    x0: np.ndarray,
    tol: float = 1e-9,
    max_iter: int | None = None,
) -> QPResult:
    """Minimize a convex quadratic over ``{A x = b, lb <= x <= ub}``.

    `x0` must already satisfy the equalities and the box. H only needs to be
    positive semidefinite; directions of zero curvature are followed to a
    blocking bound (so purely linear objectives work whenever the feasible
    set is bounded along them).
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, H.shape[0]) if A.size else np.zeros((0, H.shape[0]))
    b = np.asarray(b, dtype=float).reshape(-1)
    nvar = H.shape[0]
    x = np.array(x0, dtype=float)
    _clamp(x, lb, ub)
    if max_iter is None:
        max_iter = 40 * nvar + 200

    scale = max(
        1.0,
        float(np.abs(g).max(initial=0.0)),
        float(np.abs(H).max(initial=0.0)),
        float(np.abs(b).max(initial=0.0)),
    )
    gtol = tol * scale

    at_lower = np.isclose(x, lb, rtol=0.0, atol=0.0)
    at_upper = np.isclose(x, ub, rtol=0.0, atol=0.0)

    lam = np.zeros(A.shape[0])
    for it in range(1, max_iter + 1):
        fixed_mask = at_lower | at_upper
        free = np.flatnonzero(~fixed_mask)
        fixed = np.flatnonzero(fixed_mask)

        if free.size:
            target, lam_new, ray = _kkt_step(H, g, A, b, x, free, fixed)
            if ray is not None:
                p = np.zeros(nvar)
                p[free] = ray
                alpha, block, side = _max_step(x, p, lb, ub, free, full_step=np.inf)
                if block < 0 or not np.isfinite(alpha):
                    raise NumericalFailure("QP is unbounded along a feasible ray")
                x = x + alpha * p
                if side > 0:
                    x[block] = ub[block]
                    at_upper[block] = True
                else:
                    x[block] = lb[block]
                    at_lower[block] = True
                continue
            lam = lam_new
            p = np.zeros(nvar)
            p[free] = target - x[free]
        else:
            p = np.zeros(nvar)
            if A.shape[0]:
                lam, *_ = np.linalg.lstsq(A.T, -(H @ x + g), rcond=None)

        step_tol = tol * max(1.0, float(np.abs(x).max(initial=0.0)))
        if np.abs(p).max(initial=0.0) > step_tol:
            alpha, block, side = _max_step(x, p, lb, ub, free)
            x = x + alpha * p
            if block >= 0:
                if side > 0:
                    x[block] = ub[block]
                    at_upper[block] = True
                else:
                    x[block] = lb[block]
                    at_lower[block] = True
                continue
            _clamp(x, lb, ub)

        # Multiplier sign test on the working set; release lowest violator.
        grad = H @ x + g + A.T @ lam
        release = -1
        for i in np.flatnonzero(at_lower):
            if grad[i] < -gtol and ub[i] > lb[i]:
                release = i
                break
        if release < 0:
            for i in np.flatnonzero(at_upper):
                if grad[i] > gtol and ub[i] > lb[i]:
                    release = i
                    break
        if release < 0:
            eta_lo = np.where(at_lower, np.maximum(grad, 0.0), 0.0)
            eta_up = np.where(at_upper, np.maximum(-grad, 0.0), 0.0)
            # Coordinates pinned by an equal-bounds box keep the full gradient
            # split between the two multipliers.
            return QPResult(
                x=x,
                eq_duals=lam,
                lower_duals=eta_lo,
                upper_duals=eta_up,
                objective=float(0.5 * x @ H @ x + g @ x),
                iterations=it,
            )
        at_lower[release] = False
        at_upper[release] = False

    raise NumericalFailure("active-set QP did not converge")
