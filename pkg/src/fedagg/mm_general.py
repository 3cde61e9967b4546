"""General-case MM optimizer for the distortion minimization problem.

Each iteration builds a convex surrogate (linear objective, linear-minus-log
rate constraints tight at the expansion point) and solves it with the
log-barrier solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .barrier import ConstraintSet, minimize_linear
from .errors import SolverError
from .model import Q_MIN, GaussianSourceModel, MbtcParams, RateBudget
from .region import LOG2E, distortion, is_feasible, mask_to_indices

HALF_LOG2E = 0.5 * LOG2E


def quad_form_lower_bound(a, b, B) -> float:
    """Lower bound 2 a'b - b'Bb of the quadratic form a'B^{-1}a; B must be PD."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    try:
        np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        raise ValueError("B must be positive definite") from None
    return float(2.0 * a @ b - b @ B @ b)


def expansion_matrices(model: GaussianSourceModel, q_hat, S):
    """Tangency matrices (E_S, F_S) for a proper subset, or G for the full set."""
    qv = q_hat.q if isinstance(q_hat, MbtcParams) else np.asarray(q_hat, dtype=float)
    M = model.M
    sigma = model.sigma_x
    idx = np.array(sorted(int(m) for m in S), dtype=int)
    if idx.size == M:
        return sigma + np.diag(qv)
    comp = np.setdiff1d(np.arange(M), idx)
    cross = sigma[np.ix_(idx, comp)]
    comp_block = sigma[np.ix_(comp, comp)] + np.diag(qv[comp])
    E = np.linalg.solve(comp_block, cross.T).T
    F = sigma[np.ix_(idx, idx)] + np.diag(qv[idx]) - E @ cross.T
    return E, F


def chi_xi(model: GaussianSourceModel, E, F, q, S) -> float:
    """Upper bound chi_S + xi_S on the conditional (or sum) mutual information.

    For the full set, pass E = None and F = G.
    """
    qv = q.q if isinstance(q, MbtcParams) else np.asarray(q, dtype=float)
    M = model.M
    sigma = model.sigma_x
    idx = np.array(sorted(int(m) for m in S), dtype=int)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    try:
        np.linalg.cholesky(F)
    except np.linalg.LinAlgError:
        raise ValueError("F (or G) must be positive definite") from None
    f_inv = np.linalg.inv(F)
    sign, logdet = np.linalg.slogdet(F)
    logdet_f = logdet * LOG2E
    if idx.size == M:
        chi = HALF_LOG2E * float(np.trace(f_inv @ np.diag(qv))) - 0.5 * np.sum(
            np.log2(qv)
        )
        xi = 0.5 * logdet_f + HALF_LOG2E * float(np.trace(f_inv @ sigma)) - M * HALF_LOG2E
        return chi + xi
    comp = np.setdiff1d(np.arange(M), idx)
    E = np.atleast_2d(np.asarray(E, dtype=float))
    ete = E.T @ f_inv @ E
    chi = (
        HALF_LOG2E * float(np.sum(np.diag(f_inv) * qv[idx]))
        + HALF_LOG2E * float(np.sum(np.diag(ete) * qv[comp]))
        - 0.5 * np.sum(np.log2(qv[idx]))
    )
    cross = sigma[np.ix_(idx, comp)]
    inner = (
        sigma[np.ix_(idx, idx)]
        + E @ sigma[np.ix_(comp, comp)] @ E.T
        - E @ cross.T
        - cross @ E.T
    )
    xi = (
        0.5 * logdet_f
        + HALF_LOG2E * float(np.trace(f_inv @ inner))
        - idx.size * HALF_LOG2E
    )
    return chi + xi


@dataclass(frozen=True)
class SurrogateProblem:
    """Convex surrogate: minimize sum b_m^2 q_m s.t. linear-minus-log rate rows.

    Row i reads: linear_weights[i] . q - 0.5 * sum_{m in log_mask[i]} log2(q_m)
    + constants[i] <= budgets[i].
    """

    objective_weights: np.ndarray  # b_m^2
    masks: tuple  # subset bitmask per constraint row
    linear_weights: np.ndarray  # (n, M)
    log_mask: np.ndarray  # (n, M) bool
    constants: np.ndarray  # (n,)
    budgets: np.ndarray  # (n,)
    expansion_point: np.ndarray = field(default=None)

    def constraint_values(self, q: np.ndarray) -> np.ndarray:
        logs = self.log_mask @ np.log2(q)
        return self.linear_weights @ q - 0.5 * logs + self.constants - self.budgets


class _SurrogateConstraints(ConstraintSet):
    def __init__(self, problem: SurrogateProblem):
        self.p = problem

    def value(self, q):
        return self.p.constraint_values(q)

    def grad(self, q):
        return self.p.linear_weights - HALF_LOG2E * self.p.log_mask / q[None, :]

    def hess_weighted(self, q, w):
        diag = HALF_LOG2E * (w @ self.p.log_mask) / q**2
        return np.diag(diag)


def build_surrogate(
    model: GaussianSourceModel, budget: RateBudget, q_hat
) -> SurrogateProblem:
    """Expand all 2^M - 1 rate constraints at q_hat; q_hat must be feasible."""
    q_hat = q_hat if isinstance(q_hat, MbtcParams) else MbtcParams(q_hat)
    feasible, worst = is_feasible(model, q_hat, budget)
    if not feasible:
        raise ValueError(f"expansion point is infeasible (worst slack {worst:.3e})")
    M = model.M
    sigma = model.sigma_x
    qv = q_hat.q
    b = np.linalg.solve(sigma + np.diag(qv), sigma @ model.c)
    masks = []
    lin = []
    logm = []
    consts = []
    buds = []
    for mask in range(1, 1 << M):
        idx = mask_to_indices(mask, M)
        w = np.zeros(M)
        lmask = np.zeros(M, dtype=bool)
        lmask[idx] = True
        if idx.size == M:
            G = expansion_matrices(model, q_hat, idx)
            g_inv = np.linalg.inv(G)
            w[:] = HALF_LOG2E * np.diag(g_inv)
            sign, logdet = np.linalg.slogdet(G)
            const = (
                0.5 * logdet * LOG2E
                + HALF_LOG2E * float(np.trace(g_inv @ sigma))
                - M * HALF_LOG2E
            )
        else:
            comp = np.setdiff1d(np.arange(M), idx)
            E, F = expansion_matrices(model, q_hat, idx)
            f_inv = np.linalg.inv(F)
            w[idx] = HALF_LOG2E * np.diag(f_inv)
            w[comp] = HALF_LOG2E * np.diag(E.T @ f_inv @ E)
            cross = sigma[np.ix_(idx, comp)]
            inner = (
                sigma[np.ix_(idx, idx)]
                + E @ sigma[np.ix_(comp, comp)] @ E.T
                - E @ cross.T
                - cross @ E.T
            )
            sign, logdet = np.linalg.slogdet(F)
            const = (
                0.5 * logdet * LOG2E
                + HALF_LOG2E * float(np.trace(f_inv @ inner))
                - idx.size * HALF_LOG2E
            )
        masks.append(mask)
        lin.append(w)
        logm.append(lmask)
        consts.append(const)
        buds.append(float(np.sum(budget.r[idx])))
    return SurrogateProblem(
        objective_weights=b**2,
        masks=tuple(masks),
        linear_weights=np.array(lin),
        log_mask=np.array(logm),
        constants=np.array(consts),
        budgets=np.array(buds),
        expansion_point=qv.copy(),
    )


def _interior_start(problem: SurrogateProblem) -> np.ndarray:
    # The surrogate constraints share the exact-MI gradient at the expansion
    # point, which is strictly negative in every coordinate, so scaling q up
    # moves strictly into the interior.
    q = problem.expansion_point
    for bump in (1e-8, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0, 3.0, 7.0, 15.0):
        cand = q * (1.0 + bump)
        if np.all(problem.constraint_values(cand) < 0) and np.all(cand > Q_MIN):
            return cand
    raise SolverError("could not find a strictly interior start", last_iterate=q)


def solve_surrogate(problem: SurrogateProblem, tol: float = 1e-8) -> MbtcParams:
    """Solve the convex surrogate with the log-barrier method."""
    q0 = _interior_start(problem)
    q = minimize_linear(
        problem.objective_weights,
        _SurrogateConstraints(problem),
        q0,
        x_min=Q_MIN,
        newton_tol=tol,
    )
    return MbtcParams(np.maximum(q, Q_MIN))


def find_feasible_init(model: GaussianSourceModel, budget: RateBudget) -> MbtcParams:
    """Uniform q = alpha*1, doubling alpha from trace/M until feasible."""
    alpha = float(np.trace(model.sigma_x)) / model.M
    for _ in range(200):
        q = MbtcParams(np.full(model.M, alpha))
        feasible, _ = is_feasible(model, q, budget)
        if feasible:
            return q
        alpha *= 2.0
    raise SolverError("feasible initializer did not terminate")  # pragma: no cover


def _original_objective(model: GaussianSourceModel, qv: np.ndarray) -> float:
    sigma = model.sigma_x
    a = sigma @ model.c
    return float(a @ np.linalg.solve(sigma + np.diag(qv), a))


@dataclass(frozen=True)
class OptimizeResult:
    """Outcome of an MM run: parameters, distortion, per-iteration objective."""

    q: MbtcParams
    distortion: float
    trace: tuple  # original objective after each iteration
    iterations: int
    iterates: tuple = ()  # q vector per iteration, starting at the initializer


def optimize(
    model: GaussianSourceModel,
    budget: RateBudget,
    eps: float = 1e-6,
    max_iter: int = 200,
) -> OptimizeResult:
    """MM loop: surrogate construction + barrier solve until the fractional
    increase of the original objective drops below eps."""
    if model.M > 25:
        raise ValueError(f"constraint enumeration capped at M = 25, got {model.M}")
    q = find_feasible_init(model, budget)
    obj = _original_objective(model, q.q)
    trace = [obj]
    iterates = [q.q.copy()]
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        problem = build_surrogate(model, budget, q)
        q_new = solve_surrogate(problem)
        obj_new = _original_objective(model, q_new.q)
        if obj_new >= obj:
            q = q_new
            trace.append(obj_new)
            iterates.append(q.q.copy())
        else:
            # Numerical regression; keep the better iterate and stop.
            trace.append(obj)
            break
        if (obj_new - obj) <= eps * max(abs(obj), 1e-300):
            obj = obj_new
            break
        obj = obj_new
    return OptimizeResult(
        q=q,
        distortion=distortion(model, q),
        trace=tuple(trace),
        iterations=iterations,
        iterates=tuple(iterates),
    )
