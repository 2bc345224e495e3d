"""
Dense convex QP engine for the per-agent subproblems.

    minimize 1/2 y^T Q y + c^T y   subject to   rows @ y <= rhs,  lower <= y <= upper

Primal-dual interior point with Mehrotra predictor-corrector steps, followed
by an active-set polish of the final iterate. One-dimensional problems are
solved in closed form. Infeasible problems get a Farkas certificate from a
phase-1 LP (HiGHS).
"""

import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linprog

from drcc_gnep.exceptions import DimensionError, NotPositiveDefiniteError, QPInfeasibleError

logger = logging.getLogger(__name__)

_INNER_TOL = 1e-10
_STEP_FRACTION = 0.99


@dataclass(frozen=True)
class QPSolution:
    """Minimizer, multipliers for every row, and the scaled KKT residual."""

    x: np.ndarray
    row_multipliers: np.ndarray
    lower_multipliers: np.ndarray
    upper_multipliers: np.ndarray
    kkt_residual: float
    objective: float
    iterations: int


def _factor_pd(Q):
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise NotPositiveDefiniteError('Q must be symmetric')
    try:
        return cho_factor(Q)
    except LinAlgError as exc:
        raise NotPositiveDefiniteError('Q must be positive definite') from exc


def _stack_constraints(n, rows, rhs, box):
    """All constraints as G y <= h, remembering which rows came from the box."""
    rows = np.zeros((0, n)) if rows is None else np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        rows = np.zeros((0, n))
    rhs = np.zeros(0) if rhs is None else np.atleast_1d(np.asarray(rhs, dtype=float))
    if rows.shape[1] != n or rows.shape[0] != rhs.shape[0]:
        raise DimensionError(f'rows have shape {rows.shape}, rhs has length {rhs.shape[0]}, n={n}')
    if box is None:
        lower = np.full(n, -np.inf)
        upper = np.full(n, np.inf)
    else:
        lower, upper = (np.broadcast_to(np.asarray(bound, dtype=float), (n,)) for bound in box)
    upper_index = np.flatnonzero(np.isfinite(upper))
    lower_index = np.flatnonzero(np.isfinite(lower))
    eye = np.eye(n)
    G = np.vstack([rows, eye[upper_index], -eye[lower_index]])
    h = np.concatenate([rhs, upper[upper_index], -lower[lower_index]])
    return G, h, rows.shape[0], upper_index, lower_index


def _kkt_residual(Q, c, G, h, x, z):
    scale = 1.0 + max(np.abs(c).max(initial=0.0), np.abs(h).max(initial=0.0))
    slack = h - G @ x
    stationarity = np.abs(Q @ x + c + G.T @ z).max(initial=0.0)
    primal = np.maximum(-slack, 0.0).max(initial=0.0)
    dual = np.maximum(-z, 0.0).max(initial=0.0)
    complementarity = np.abs(z * slack).max(initial=0.0)
    return max(stationarity, primal, dual, complementarity) / scale


def _max_step(v, dv, cap=1.0):
    negative = dv < 0.0
    if not np.any(negative):
        return cap
    return min(cap, float((-v[negative] / dv[negative]).min()))


def _phase_one(G, h):
    """
    Smallest uniform relaxation t of G y <= h + t and, if t > 0, the Farkas
    weights y >= 0 with y^T G = 0 and y^T h = -t.
    """
    m, n = G.shape
    result = linprog(
        np.concatenate([np.zeros(n), [1.0]]),
        A_ub=np.hstack([G, -np.ones((m, 1))]),
        b_ub=h,
        bounds=[(None, None)] * n + [(-1.0, None)],
        method='highs',
    )
    if result.status != 0:
        return None, None
    violation = float(result.x[-1])
    weights = None
    if violation > 0 and getattr(result, 'ineqlin', None) is not None:
        weights = np.maximum(-np.asarray(result.ineqlin.marginals, dtype=float), 0.0)
    return violation, weights


def _infeasible(G, h, message, tol):
    violation, weights = _phase_one(G, h)
    scale = 1.0 + np.abs(h).max(initial=0.0)
    if violation is not None and violation > tol * scale:
        raise QPInfeasibleError(
            f'{message}: constraints are infeasible (minimum uniform violation {violation:.3e})',
            certificate=weights, max_violation=violation,
        )
    raise QPInfeasibleError(
        f'{message}: interior-point budget exhausted', certificate=None, max_violation=violation,
    )


def _solve_scalar(q, c, G, h, tol):
    """Closed form for n == 1: clip the unconstrained minimizer to the interval."""
    a = G[:, 0]
    upper, lower = np.inf, -np.inf
    upper_row = lower_row = None
    for index, (coefficient, bound) in enumerate(zip(a, h)):
        if coefficient > 0.0:
            value = bound / coefficient
            if value < upper:
                upper, upper_row = value, index
        elif coefficient < 0.0:
            value = bound / coefficient
            if value > lower:
                lower, lower_row = value, index
        elif bound < -tol:
            certificate = np.zeros_like(h)
            certificate[index] = 1.0
            raise QPInfeasibleError(
                f'row {index} reads 0 <= {bound:.6g}', certificate=certificate, max_violation=-bound,
            )
    if lower > upper + tol * (1.0 + abs(lower) + abs(upper)):
        certificate = np.zeros_like(h)
        certificate[upper_row] = 1.0 / a[upper_row]
        certificate[lower_row] = -1.0 / a[lower_row]
        raise QPInfeasibleError(
            f'interval [{lower:.6g}, {upper:.6g}] is empty', certificate=certificate,
            max_violation=(lower - upper) / 2.0,
        )
    y = min(max(-c / q, lower), upper)
    gradient = q * y + c
    z = np.zeros_like(h)
    if gradient < 0.0 and upper_row is not None and y >= upper:
        z[upper_row] = -gradient / a[upper_row]
    elif gradient > 0.0 and lower_row is not None and y <= lower:
        z[lower_row] = -gradient / a[lower_row]
    return np.array([y]), z


def _interior_point(Q, c, G, h, max_iter):
    """
    Mehrotra predictor-corrector on Q x + c + G^T z = 0, G x + s = h, s z = 0.

    Returns converged=False as soon as an iterate stops being finite; on
    infeasible rows the dual iterates diverge.
    """
    m, n = G.shape
    norms = np.abs(G).max(axis=1)
    norms[norms == 0.0] = 1.0
    Gs, hs = G / norms[:, None], h / norms

    factor = cho_factor(Q)
    x = cho_solve(factor, -c)
    s = np.maximum(hs - Gs @ x, 1.0)
    z = np.ones(m)
    scale_d = 1.0 + np.abs(c).max(initial=0.0)
    scale_p = 1.0 + np.abs(hs).max(initial=0.0)
    regularization = 1e-14 * max(1.0, np.trace(Q))

    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        for iteration in range(1, max_iter + 1):
            rd = Q @ x + c + Gs.T @ z
            rp = Gs @ x + s - hs
            mu = float(s @ z) / m
            if not (np.all(np.isfinite(rd)) and np.all(np.isfinite(rp)) and np.isfinite(mu)):
                return x, z / norms, iteration, False
            if (np.abs(rd).max() <= _INNER_TOL * scale_d and np.abs(rp).max() <= _INNER_TOL * scale_p
                    and mu <= _INNER_TOL * scale_p):
                return x, z / norms, iteration, True

            weights = z / s
            matrix = Q + (Gs.T * weights) @ Gs
            try:
                try:
                    newton = cho_factor(matrix)
                except LinAlgError:
                    newton = cho_factor(matrix + regularization * np.eye(n))
            except (LinAlgError, ValueError):
                return x, z / norms, iteration, False

            def direction(rsz):
                dx = cho_solve(newton, -rd - Gs.T @ ((-rsz + z * rp) / s), check_finite=False)
                ds = -rp - Gs @ dx
                dz = (-rsz - z * ds) / s
                return dx, ds, dz

            dx, ds, dz = direction(s * z)
            alpha = min(_max_step(s, ds), _max_step(z, dz))
            mu_affine = float((s + alpha * ds) @ (z + alpha * dz)) / m
            sigma = (mu_affine / mu) ** 3 if mu > 0 else 0.0

            dx, ds, dz = direction(s * z + ds * dz - sigma * mu)
            if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(ds)) and np.all(np.isfinite(dz))):
                return x, z / norms, iteration, False
            alpha = min(1.0, _STEP_FRACTION * min(_max_step(s, ds, cap=np.inf), _max_step(z, dz, cap=np.inf)))
            x = x + alpha * dx
            s = np.maximum(s + alpha * ds, 1e-300)
            z = np.maximum(z + alpha * dz, 1e-300)

    return x, z / norms, max_iter, False


def _polish(Q, c, G, h, x, z, tol):
    """Solve the equality KKT system on the rows the interior point marks active."""
    n = Q.shape[0]
    slack = h - G @ x
    active = np.flatnonzero(z > np.maximum(slack, 0.0))
    if active.size == 0:
        candidate_x = np.linalg.solve(Q, -c)
        candidate_z = np.zeros_like(z)
    else:
        GA = G[active]
        matrix = np.block([[Q, GA.T], [GA, np.zeros((active.size, active.size))]])
        solution = np.linalg.lstsq(matrix, np.concatenate([-c, h[active]]), rcond=None)[0]
        candidate_x = solution[:n]
        candidate_z = np.zeros_like(z)
        candidate_z[active] = solution[n:]
        if np.any(candidate_z < -tol):
            return x, z
        candidate_z = np.maximum(candidate_z, 0.0)
    if _kkt_residual(Q, c, G, h, candidate_x, candidate_z) <= _kkt_residual(Q, c, G, h, x, z):
        return candidate_x, candidate_z
    return x, z


def qp_solve(Q, c, rows=None, rhs=None, box=None, tol=None, max_iter=None):
    """
    Solve a small dense convex QP.

    Args:
        Q: symmetric positive definite n x n matrix
        c: linear term
        rows, rhs: inequality rows rows @ y <= rhs (optional)
        box: (lower, upper), entries may be infinite (optional)
        tol: accepted scaled KKT residual
        max_iter: interior-point iteration budget

    Returns:
        QPSolution

    Raises:
        NotPositiveDefiniteError, QPInfeasibleError
    """
    solver_settings = settings.GNEP_SOLVER
    tol = solver_settings['TOL_KKT'] if tol is None else tol
    max_iter = solver_settings['QP_MAX_ITER'] if max_iter is None else max_iter
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = Q.shape[0]
    if Q.shape != (n, n) or c.shape != (n,):
        raise DimensionError(f'Q has shape {Q.shape}, c has length {c.shape[0]}')
    factor = _factor_pd(Q)
    G, h, row_count, upper_index, lower_index = _stack_constraints(n, rows, rhs, box)
    feas_tol = solver_settings['TOL_FEAS']

    iterations = 0
    if G.shape[0] == 0:
        x = cho_solve(factor, -c)
        z = np.zeros(0)
    elif n == 1:
        x, z = _solve_scalar(float(Q[0, 0]), float(c[0]), G, h, feas_tol)
    else:
        x, z, iterations, converged = _interior_point(Q, c, G, h, max_iter)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            _infeasible(G, h, f'QP with {n} variables and {G.shape[0]} rows', feas_tol)
        x, z = _polish(Q, c, G, h, x, z, feas_tol)
        residual = _kkt_residual(Q, c, G, h, x, z)
        if not converged and residual > tol:
            _infeasible(G, h, f'QP with {n} variables and {G.shape[0]} rows', feas_tol)
        if residual > tol:
            logger.warning(f'QP converged with scaled KKT residual {residual:.3e} above {tol:.1e}')

    residual = _kkt_residual(Q, c, G, h, x, z) if G.shape[0] else float(
        np.abs(Q @ x + c).max() / (1.0 + np.abs(c).max()))
    upper_multipliers = np.zeros(n)
    lower_multipliers = np.zeros(n)
    upper_multipliers[upper_index] = z[row_count:row_count + upper_index.size]
    lower_multipliers[lower_index] = z[row_count + upper_index.size:]
    return QPSolution(
        x=x,
        row_multipliers=z[:row_count],
        lower_multipliers=lower_multipliers,
        upper_multipliers=upper_multipliers,
        kkt_residual=float(residual),
        objective=float(0.5 * x @ Q @ x + c @ x),
        iterations=iterations,
    )
