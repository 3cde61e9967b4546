"""Primal log-barrier interior-point solver for small dense convex subproblems.

Minimizes a linear objective f'x subject to smooth convex constraints
g_i(x) <= 0 and box lower bounds x >= x_min. Newton steps with backtracking
line search (alpha = 0.25, beta = 0.5); barrier parameter t scales by 10 per
outer stage from t = 1 until n_constraints / t < 1e-9.
"""

from __future__ import annotations

import numpy as np

from .errors import SolverError

ALPHA = 0.25
BETA = 0.5
T_INIT = 1.0
T_SCALE = 10.0
GAP_TOL = 1e-9
MAX_NEWTON_TOTAL = 500
MAX_NEWTON_PER_STAGE = 40


class ConstraintSet:
    """Interface for a batch of smooth convex constraints g(x) <= 0.

    value(x) -> (n,) array; grad(x) -> (n, dim) array;
    hess_weighted(x, w) -> (dim, dim) array equal to sum_i w_i * Hess g_i(x).
    """

    def value(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def grad(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def hess_weighted(self, x, w):  # pragma: no cover - interface
        raise NotImplementedError


def minimize_linear(f, cons: ConstraintSet, x0, x_min=0.0, newton_tol=1e-10):
    """Barrier minimization of f'x over {g(x) <= 0, x >= x_min}.

    x0 must be strictly feasible. Raises SolverError (carrying the last
    iterate) if the Newton-iteration budget is exhausted.
    """
    f = np.asarray(f, dtype=float)
    x = np.array(x0, dtype=float)
    dim = x.shape[0]
    x_min = np.broadcast_to(np.asarray(x_min, dtype=float), (dim,))
    g0 = cons.value(x)
    if np.any(g0 >= 0) or np.any(x <= x_min):
        raise SolverError("initial point is not strictly feasible", last_iterate=x)
    n_cons = g0.shape[0] + dim

    def phi(xx, t):
        if np.any(xx <= x_min):
            return np.inf
        g = cons.value(xx)
        if np.any(g >= 0):
            return np.inf
        return (
            t * f @ xx
            - np.sum(np.log(-g))
            - np.sum(np.log(xx - x_min))
        )

    t = T_INIT
    newton_used = 0
    while True:
        # Newton centering for the current t. At large t the decrement can
        # float just above tolerance; the per-stage cap accepts the
        # approximately centered point instead of burning the budget.
        stage_used = 0
        while stage_used < MAX_NEWTON_PER_STAGE:
            if newton_used >= MAX_NEWTON_TOTAL:
                raise SolverError(
                    f"barrier solver exceeded {MAX_NEWTON_TOTAL} Newton iterations",
                    last_iterate=x,
                )
            newton_used += 1
            stage_used += 1
            g = cons.value(x)
            s = -g
            jac = cons.grad(x)
            inv_s = 1.0 / s
            grad = t * f + jac.T @ inv_s + (-1.0 / (x - x_min))
            hess = (
                (jac * inv_s[:, None] ** 2).T @ jac
                + cons.hess_weighted(x, inv_s)
                + np.diag(1.0 / (x - x_min) ** 2)
            )
            try:
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            decrement2 = float(-grad @ step)
            if decrement2 / 2.0 <= newton_tol:
                break
            base = phi(x, t)
            slope = float(grad @ step)
            lam = 1.0
            while phi(x + lam * step, t) > base + ALPHA * lam * slope:
                lam *= BETA
                if lam < 1e-14:
                    break
            if lam < 1e-14:
                break
            x = x + lam * step
        if n_cons / t < GAP_TOL:
            return x
        t *= T_SCALE
