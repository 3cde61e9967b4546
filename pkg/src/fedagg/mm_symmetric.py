"""Grouped symmetric MM optimizer.

Under equicorrelated sources, uniform target coefficients, and grouped rate
budgets, the rate constraints collapse to one row per selection vector
(per-group participation counts), and the objective becomes separable in the
J group variances.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .barrier import ConstraintSet, minimize_linear
from .errors import SolverError
from .model import Q_MIN, MbtcParams, SymmetricSourceModel
from .region import LOG2E

MAX_SELECTIONS = 10**6
HALF_LOG2E = 0.5 * LOG2E


def enumerate_selections(group_sizes) -> np.ndarray:
    """All per-group count vectors with at least one device selected.

    Lexicographic order; shape (prod(M_j + 1) - 1, J).
    """
    sizes = np.atleast_1d(np.asarray(group_sizes, dtype=int))
    total = int(np.prod(sizes + 1))
    if total > MAX_SELECTIONS:
        raise ValueError(f"selection count {total} exceeds cap {MAX_SELECTIONS}")
    rows = [np.array(v) for v in product(*(range(s + 1) for s in sizes))]
    sel = np.array([r for r in rows if r.sum() >= 1], dtype=int)
    return sel


def theta(rho, sigma2, group_sizes, q_groups, selection) -> float:
    """Exact per-selection rate requirement in bits/symbol."""
    sizes = np.asarray(group_sizes, dtype=float)
    q = np.atleast_1d(np.asarray(q_groups, dtype=float))
    s = np.asarray(selection, dtype=float)
    a = (1.0 - rho) * sigma2
    t1 = 0.5 * np.sum(s * np.log2(1.0 + a / q))
    t2 = 0.5 * np.log2(1.0 + np.sum(sizes * rho * sigma2 / (a + q)))
    t3 = 0.5 * np.log2(1.0 + np.sum((sizes - s) * rho * sigma2 / (a + q)))
    return float(t1 + t2 - t3)


def theta_up(rho, sigma2, group_sizes, q_groups, selection, q_hat_groups) -> float:
    """Convex majorant of theta: third term replaced by its tangent at q_hat."""
    sizes = np.asarray(group_sizes, dtype=float)
    q = np.atleast_1d(np.asarray(q_groups, dtype=float))
    q_hat = np.atleast_1d(np.asarray(q_hat_groups, dtype=float))
    s = np.asarray(selection, dtype=float)
    a = (1.0 - rho) * sigma2
    t1 = 0.5 * np.sum(s * np.log2(1.0 + a / q))
    t2 = 0.5 * np.log2(1.0 + np.sum(sizes * rho * sigma2 / (a + q)))
    rest = (sizes - s) * rho * sigma2
    h_hat = 1.0 + np.sum(rest / (a + q_hat))
    t3 = -0.5 * np.log2(h_hat)
    t4 = HALF_LOG2E / h_hat * np.sum(rest / (a + q_hat) ** 2 * (q - q_hat))
    return float(t1 + t2 + t3 + t4)


def symmetric_objective(rho, sigma2, group_sizes, q_groups) -> float:
    """Recast objective sum_j M_j / (q_j + (1-rho) s2), to be maximized."""
    sizes = np.asarray(group_sizes, dtype=float)
    q = np.atleast_1d(np.asarray(q_groups, dtype=float))
    return float(np.sum(sizes / (q + (1.0 - rho) * sigma2)))


def symmetric_distortion(model: SymmetricSourceModel, lam: float, q_groups) -> float:
    """Distortion of the expanded model via the rank-one inversion identity."""
    M = model.M
    rho, sigma2 = model.rho, model.sigma2
    t = symmetric_objective(rho, sigma2, model.group_sizes, q_groups)
    signal = lam**2 * M * sigma2 * (1.0 + (M - 1) * rho)
    gain = ((M - 1) * rho + 1.0) * lam * sigma2
    return max(signal - gain**2 / (1.0 / t + rho * sigma2), 0.0)


class _ThetaUpConstraints(ConstraintSet):
    """Vectorized theta_up rows minus per-selection budgets."""

    def __init__(self, model: SymmetricSourceModel, selections, q_hat):
        self.sizes = model.group_sizes.astype(float)
        self.rho = model.rho
        self.sigma2 = model.sigma2
        self.a = (1.0 - model.rho) * model.sigma2
        self.sel = selections.astype(float)  # (n, J)
        self.q_hat = np.asarray(q_hat, dtype=float)
        self.budgets = self.sel @ model.group_rates
        rest = (self.sizes[None, :] - self.sel) * self.rho * self.sigma2  # (n, J)
        self.h_hat = 1.0 + rest @ (1.0 / (self.a + self.q_hat))
        self.tangent = rest / (self.a + self.q_hat) ** 2 / self.h_hat[:, None]  # (n,J)
        self.const = (
            -0.5 * np.log2(self.h_hat)
            - HALF_LOG2E * self.tangent @ self.q_hat
            - self.budgets
        )

    def value(self, q):
        inv = 1.0 / (self.a + q)
        t1 = 0.5 * self.sel @ np.log2(1.0 + self.a / q)
        t2 = 0.5 * np.log2(
            1.0 + np.sum(self.sizes * self.rho * self.sigma2 * inv)
        )
        t4 = HALF_LOG2E * self.tangent @ q
        return t1 + t2 + t4 + self.const

    def grad(self, q):
        n = self.sel.shape[0]
        inv = 1.0 / (self.a + q)
        # d/dq of 0.5*log2((q + a)/q) is (1/(2 ln 2)) (1/(q+a) - 1/q)
        g1 = HALF_LOG2E * self.sel * (inv - 1.0 / q)[None, :]
        coef = self.sizes * self.rho * self.sigma2
        h = 1.0 + np.sum(coef * inv)
        g2 = HALF_LOG2E * (-coef * inv**2) / h
        return g1 + np.broadcast_to(g2, (n, q.shape[0])) + HALF_LOG2E * self.tangent

    def hess_weighted(self, q, w):
        inv = 1.0 / (self.a + q)
        d1 = HALF_LOG2E * (w @ self.sel) * (1.0 / q**2 - inv**2)
        coef = self.sizes * self.rho * self.sigma2
        h = 1.0 + np.sum(coef * inv)
        u1 = -coef * inv**2
        w_sum = float(np.sum(w))
        d2 = HALF_LOG2E * w_sum * (2.0 * coef * inv**3) / h
        rank1 = -HALF_LOG2E * w_sum * np.outer(u1, u1) / h**2
        return np.diag(d1 + d2) + rank1


def _find_feasible_groups(model: SymmetricSourceModel, selections) -> np.ndarray:
    alpha = model.sigma2
    budgets = selections @ model.group_rates
    for _ in range(200):
        q = np.full(len(model.group_sizes), alpha)
        req = np.array(
            [
                theta(model.rho, model.sigma2, model.group_sizes, q, s)
                for s in selections
            ]
        )
        if np.all(req <= budgets + 1e-12):
            return q
        alpha *= 2.0
    raise SolverError("feasible initializer did not terminate")  # pragma: no cover


def _interior_start(cons: _ThetaUpConstraints, q_hat: np.ndarray) -> np.ndarray:
    for bump in (1e-8, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0, 3.0, 7.0, 15.0):
        cand = q_hat * (1.0 + bump)
        if np.all(cons.value(cand) < 0) and np.all(cand > Q_MIN):
            return cand
    raise SolverError("could not find a strictly interior start", last_iterate=q_hat)


@dataclass(frozen=True)
class SymmetricOptimizeResult:
    """Per-device parameters plus distortion/objective traces."""

    q: MbtcParams  # expanded per-device
    q_groups: np.ndarray
    distortion: float
    trace: tuple  # distortion after each iteration (non-increasing)
    objective_trace: tuple  # recast objective (non-decreasing)
    iterations: int
    n_constraints: int
    iterates: tuple = ()  # q_groups per iteration, starting at the initializer


def optimize_symmetric(
    model: SymmetricSourceModel,
    lam: float,
    eps: float = 1e-6,
    max_iter: int = 200,
) -> SymmetricOptimizeResult:
    """MM loop on the grouped recast problem; expands q per device at the end."""
    if lam == 0:
        raise ValueError("lambda must be nonzero")
    sizes = model.group_sizes
    selections = enumerate_selections(sizes)
    q = _find_feasible_groups(model, selections)
    obj = symmetric_objective(model.rho, model.sigma2, sizes, q)
    obj_trace = [obj]
    d_trace = [symmetric_distortion(model, lam, q)]
    iterates = [q.copy()]
    iterations = 0
    a = (1.0 - model.rho) * model.sigma2
    for _ in range(max_iter):
        iterations += 1
        cons = _ThetaUpConstraints(model, selections, q)
        # Surrogate objective: minimize sum_j M_j q_j / (q_hat_j + a)^2.
        f = sizes.astype(float) / (q + a) ** 2
        q0 = _interior_start(cons, q)
        q_new = np.maximum(minimize_linear(f, cons, q0, x_min=Q_MIN), Q_MIN)
        obj_new = symmetric_objective(model.rho, model.sigma2, sizes, q_new)
        if obj_new >= obj:
            q = q_new
            obj_trace.append(obj_new)
            d_trace.append(symmetric_distortion(model, lam, q))
            iterates.append(q.copy())
        else:
            obj_trace.append(obj)
            d_trace.append(d_trace[-1])
            break
        if (obj_new - obj) <= eps * max(abs(obj), 1e-300):
            obj = obj_new
            break
        obj = obj_new
    per_device = np.repeat(q, sizes)
    return SymmetricOptimizeResult(
        q=MbtcParams(per_device),
        q_groups=q,
        distortion=symmetric_distortion(model, lam, q),
        trace=tuple(d_trace),
        objective_trace=tuple(obj_trace),
        iterations=iterations,
        n_constraints=selections.shape[0],
        iterates=tuple(iterates),
    )
