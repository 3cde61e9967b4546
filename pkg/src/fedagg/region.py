"""Closed-form region quantities: mutual informations, distortion, MMSE combiner.

Subsets of devices are represented as bitmasks (bit m set = device m in the
subset); enumeration is in increasing integer order so binding constraints
are reported deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GaussianSourceModel, MbtcParams, RateBudget

MAX_ENUM_M = 25
LOG2E = 1.0 / np.log(2.0)


def _qvec(q) -> np.ndarray:
    if isinstance(q, MbtcParams):
        return q.q
    return np.atleast_1d(np.asarray(q, dtype=float))


def mask_to_indices(mask: int, M: int) -> np.ndarray:
    return np.array([m for m in range(M) if mask >> m & 1], dtype=int)


def indices_to_mask(indices) -> int:
    mask = 0
    for m in indices:
        mask |= 1 << int(m)
    return mask


def _as_indices(S, M: int) -> np.ndarray:
    if isinstance(S, (int, np.integer)):
        return mask_to_indices(int(S), M)
    return np.array(sorted(int(m) for m in S), dtype=int)


def _logdet2(a: np.ndarray) -> float:
    """log2-determinant of a positive definite matrix, via triangular factorization."""
    sign, logdet = np.linalg.slogdet(a)
    if sign <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return logdet * LOG2E


def cond_mutual_info(model: GaussianSourceModel, q, S) -> float:
    """I(x^S; u^S | u^{S^c}) in bits/symbol for a nonempty proper subset S."""
    qv = _qvec(q)
    M = model.M
    idx = _as_indices(S, M)
    if idx.size == 0 or idx.size == M:
        raise ValueError("S must be a nonempty proper subset (use sum_mutual_info for the full set)")
    comp = np.setdiff1d(np.arange(M), idx)
    sigma = model.sigma_x
    full = _logdet2(sigma + np.diag(qv))
    sub = _logdet2(sigma[np.ix_(comp, comp)] + np.diag(qv[comp]))
    return 0.5 * (full - sub - np.sum(np.log2(qv[idx])))


def sum_mutual_info(model: GaussianSourceModel, q) -> float:
    """I(x; u) in bits/symbol."""
    qv = _qvec(q)
    full = _logdet2(model.sigma_x + np.diag(qv))
    return 0.5 * (full - np.sum(np.log2(qv)))


def _finite_part(model: GaussianSourceModel, qv: np.ndarray):
    """Silent devices (q = +inf) drop out of the combiner exactly."""
    finite = np.isfinite(qv)
    sigma = model.sigma_x
    a = sigma @ model.c
    return finite, sigma, a


def mmse_combiner(model: GaussianSourceModel, q) -> np.ndarray:
    """Weights w with Y_hat = w^T u; silent devices get weight zero."""
    qv = _qvec(q)
    finite, sigma, a = _finite_part(model, qv)
    w = np.zeros(model.M)
    if finite.any():
        f = np.where(finite)[0]
        block = sigma[np.ix_(f, f)] + np.diag(qv[f])
        w[f] = np.linalg.solve(block, a[f])
    return w


def distortion(model: GaussianSourceModel, q) -> float:
    """Aggregation distortion v(q) = c'Sc - c'S(S+Q)^{-1}Sc, clamped at zero."""
    qv = _qvec(q)
    finite, sigma, a = _finite_part(model, qv)
    total = float(model.c @ sigma @ model.c)
    if finite.any():
        f = np.where(finite)[0]
        block = sigma[np.ix_(f, f)] + np.diag(qv[f])
        total -= float(a[f] @ np.linalg.solve(block, a[f]))
    return max(total, 0.0)


def is_feasible(model: GaussianSourceModel, q, budget: RateBudget):
    """Check all 2^M - 1 subset rate constraints.

    Returns (feasible, worst_slack) with worst_slack = min over constraints
    of (budget sum - required bits); feasible iff worst_slack >= -1e-9.
    """
    M = model.M
    if M > MAX_ENUM_M:
        raise ValueError(f"constraint enumeration capped at M = {MAX_ENUM_M}, got {M}")
    worst = np.inf
    for mask in range(1, 1 << M):
        idx = mask_to_indices(mask, M)
        required = (
            sum_mutual_info(model, q)
            if idx.size == M
            else cond_mutual_info(model, q, idx)
        )
        slack = float(np.sum(budget.r[idx])) - required
        worst = min(worst, slack)
    return worst >= -1e-9, worst


def constraint_report(model: GaussianSourceModel, q, budget: RateBudget):
    """Per-constraint rows (subset_mask, required_bits, budget_bits, slack)."""
    M = model.M
    if M > MAX_ENUM_M:
        raise ValueError(f"constraint enumeration capped at M = {MAX_ENUM_M}, got {M}")
    rows = []
    for mask in range(1, 1 << M):
        idx = mask_to_indices(mask, M)
        required = (
            sum_mutual_info(model, q)
            if idx.size == M
            else cond_mutual_info(model, q, idx)
        )
        have = float(np.sum(budget.r[idx]))
        rows.append((mask, required, have, have - required))
    return rows


def single_source_rd(sigma2: float, R: float):
    """Closed-form M=1 reduction: q* = s2/(2^{2R}-1), D* = s2 * 2^{-2R}."""
    if R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    q_star = sigma2 / (2.0 ** (2.0 * R) - 1.0)
    d_star = sigma2 * 2.0 ** (-2.0 * R)
    return q_star, d_star


@dataclass(frozen=True)
class RegionEvaluation:
    """All region quantities at a single q: rates, distortion, combiner."""

    sum_rate: float
    conditional_rates: dict
    distortion: float
    combiner: np.ndarray


def evaluate_region(model: GaussianSourceModel, q) -> RegionEvaluation:
    M = model.M
    if M > MAX_ENUM_M:
        raise ValueError(f"constraint enumeration capped at M = {MAX_ENUM_M}, got {M}")
    cond = {}
    for mask in range(1, (1 << M) - 1):
        cond[mask] = cond_mutual_info(model, q, mask)
    return RegionEvaluation(
        sum_rate=sum_mutual_info(model, q),
        conditional_rates=cond,
        distortion=distortion(model, q),
        combiner=mmse_combiner(model, q),
    )
