"""End-to-end aggregation simulation: the noise-addition surrogate for the
achievability scheme, baseline quantizers, and distortion/rate measurement.

Rates are charged honestly: baselines from their actual emitted symbol
widths, the surrogate analytically from the mutual-information values at the
optimized parameters (labeled "surrogate" in outputs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mm_general, mm_symmetric
from .model import (
    GaussianSourceModel,
    MbtcParams,
    RateBudget,
    SymmetricSourceModel,
    empirical_covariance,
    validate_psd,
)
from .region import cond_mutual_info, mmse_combiner, sum_mutual_info
from .seeds import seed_stream
from .transform import DeviceUpdateBatch, haar_derotate, haar_rotate, inverse_transform

SCALAR_BITS = 64  # one float64 side-channel scalar (norm or scale)


def synthetic_sources(rho: float, M: int, N: int, seed: int):
    """y_m = sqrt(rho) s + sqrt(1-rho) w_m: unit variance, pairwise correlation rho."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    shared = np.random.default_rng(seed_stream(seed, "shared")).standard_normal(N)
    out = []
    for m in range(M):
        w = np.random.default_rng(seed_stream(seed, "device", m)).standard_normal(N)
        out.append(np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * w)
    return out


def measure_distortion(target, estimate) -> float:
    """Average squared error per symbol."""
    target = np.asarray(target, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if target.shape != estimate.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {estimate.shape}")
    return float(np.sum((target - estimate) ** 2) / target.shape[0])


def mbtc_noise_surrogate(x_vectors, model: GaussianSourceModel, q_star, seed: int):
    """Decoder-output surrogate: add N(0, q_m) noise per device, MMSE-combine."""
    x = np.atleast_2d(np.asarray(x_vectors, dtype=float))
    qv = q_star.q if isinstance(q_star, MbtcParams) else np.asarray(q_star, dtype=float)
    if x.shape[0] != model.M:
        raise ValueError(f"got {x.shape[0]} vectors for an M = {model.M} model")
    w = mmse_combiner(model, qv)
    u = np.empty_like(x)
    for m in range(x.shape[0]):
        if np.isfinite(qv[m]):
            rng = np.random.default_rng(seed_stream(seed, "aux-noise", m))
            u[m] = x[m] + np.sqrt(qv[m]) * rng.standard_normal(x.shape[1])
        else:
            u[m] = 0.0  # silent device; its combiner weight is zero anyway
    return w @ u


@dataclass(frozen=True)
class AggregationResult:
    """One aggregation run: estimate, target, measured distortion, charged rates."""

    estimate: np.ndarray
    target: np.ndarray
    empirical_distortion: float
    rate_report: np.ndarray  # bits/symbol actually charged per device
    predicted_distortion: float = float("nan")
    q: MbtcParams = None


def _fit_symmetric(sigma: np.ndarray, budget: RateBudget) -> SymmetricSourceModel:
    """Project an empirical covariance onto the equicorrelated family and group
    devices by identical budgets (group order = first occurrence)."""
    m = sigma.shape[0]
    sigma2 = float(np.mean(np.diag(sigma)))
    if m > 1:
        off = sigma[~np.eye(m, dtype=bool)]
        rho = float(np.clip(np.mean(off) / sigma2, 0.0, 1.0 - 1e-9))
    else:
        rho = 0.0
    groups = []
    order = []
    for rate in budget.r:
        key = float(rate)
        if key not in order:
            order.append(key)
    for key in order:
        groups.append((int(np.sum(budget.r == key)), key))
    return SymmetricSourceModel(rho=rho, sigma2=sigma2, groups=tuple(groups))


def _symmetric_q_per_device(budget: RateBudget, sym: SymmetricSourceModel, q_groups):
    q = np.empty(budget.M)
    rates = [r for _, r in sym.groups]
    for m, rate in enumerate(budget.r):
        q[m] = q_groups[rates.index(float(rate))]
    return q


def mbtc_aggregate(
    batch: DeviceUpdateBatch,
    c,
    budget: RateBudget,
    optimizer_choice: str = "general",
    seed: int = 0,
) -> AggregationResult:
    """Full pipeline: rotate, estimate statistics, optimize, add auxiliary
    noise, combine, inverse-transform."""
    c = np.asarray(c, dtype=float)
    sigma = validate_psd(empirical_covariance(batch.mean_removed))
    model = GaussianSourceModel(sigma_x=sigma, c=c)
    if optimizer_choice == "general":
        q = mm_general.optimize(model, budget).q
    elif optimizer_choice == "symmetric":
        sym = _fit_symmetric(sigma, budget)
        lam = float(np.mean(c))
        res = mm_symmetric.optimize_symmetric(sym, lam)
        q = MbtcParams(_symmetric_q_per_device(budget, sym, res.q_groups))
    else:
        raise ValueError(f"unknown optimizer {optimizer_choice!r}")
    x_hat = mbtc_noise_surrogate(batch.rotated, model, q, seed)
    estimate = inverse_transform(x_hat, batch.means, c, batch.rotation_seed, batch.segment_len)
    target = c @ batch.updates
    rates = np.empty(batch.M)
    for m in range(batch.M):
        rates[m] = (
            sum_mutual_info(model, q)
            if batch.M == 1
            else cond_mutual_info(model, q, [m])
        )
    from .region import distortion as region_distortion

    return AggregationResult(
        estimate=estimate,
        target=target,
        empirical_distortion=measure_distortion(target, estimate),
        rate_report=rates,
        predicted_distortion=region_distortion(model, q),
        q=q,
    )


def qsgd_quantize(v, s: int, seed: int):
    """Unbiased stochastic quantization to levels {0, 1/s, ..., 1} of |v|/||v||.

    Charged bits/symbol: sign + fixed-width level index per element, plus one
    64-bit norm scalar.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if s < 1:
        raise ValueError(f"level count must be >= 1, got {s}")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return v.copy(), SCALAR_BITS / n
    r = np.abs(v) / norm * s
    low = np.floor(r)
    rng = np.random.default_rng(seed_stream(seed, "qsgd"))
    xi = (low + (rng.random(n) < (r - low))) / s
    bits = (n * (1 + math.ceil(math.log2(s + 1))) + SCALAR_BITS) / n
    return norm * np.sign(v) * xi, bits


def rotated_uniform_quantize(v, bits_per_element: int, seed: int):
    """Haar-rotate, uniformly quantize over [-4 sigma, 4 sigma], inverse-rotate."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if bits_per_element < 1:
        raise ValueError(f"bits_per_element must be >= 1, got {bits_per_element}")
    x = haar_rotate(v, seed)
    scale = float(np.std(x))
    charged = bits_per_element + SCALAR_BITS / n
    if scale == 0.0:
        return np.zeros_like(v), charged
    levels = 2**bits_per_element
    lo = -4.0 * scale
    step = 8.0 * scale / levels
    idx = np.clip(np.floor((x - lo) / step), 0, levels - 1)
    xq = lo + (idx + 0.5) * step
    return haar_derotate(xq, seed), charged


def baseline_aggregate(quantized, c):
    """Weighted sum of separately quantized device vectors."""
    vecs = [np.asarray(q, dtype=float) for q in quantized]
    c = np.asarray(c, dtype=float)
    n = vecs[0].shape[0]
    for v in vecs:
        if v.shape != (n,):
            raise ValueError("all quantized vectors must share one length")
    if c.shape[0] != len(vecs):
        raise ValueError(f"{len(vecs)} vectors but {c.shape[0]} weights")
    return sum(w * v for w, v in zip(c, vecs))


def qsgd_levels_for_rate(rate_bits: float) -> int:
    """Largest level count whose fixed-width charge fits the rate (min 1)."""
    budget = int(math.floor(rate_bits)) - 1
    return max(2**budget - 1, 1) if budget >= 1 else 1


def sweep_distortion(rhos, rates, M: int, N: int, seed: int, schemes):
    """Distortion-vs-rate sweep on synthetic sources.

    Yields rows (scheme, rho, rate_bits, charged_bits, distortion, seed).
    Baseline charged rates may exceed the nominal rate when the nominal rate
    is below the scheme's minimum emission width.
    """
    rows = []
    c = np.full(M, 1.0 / M)
    # One public rotation seed for the whole sweep; per-row randomness
    # (noise, quantizer dithers) still comes from per-run streams.
    rotation_seed = seed_stream(seed, "rotation")
    for rho in rhos:
        src_seed = seed_stream(seed, "sources", float(rho))
        sources = synthetic_sources(rho, M, N, src_seed)
        target = baseline_aggregate(sources, c)
        for rate in rates:
            for scheme in schemes:
                run_seed = seed_stream(seed, "run", scheme, float(rho), float(rate))
                if scheme == "mbtc":
                    batch = DeviceUpdateBatch(
                        updates=np.stack(sources), rotation_seed=rotation_seed
                    )
                    res = mbtc_aggregate(
                        batch,
                        c,
                        RateBudget(np.full(M, float(rate))),
                        optimizer_choice="symmetric",
                        seed=run_seed,
                    )
                    dist = res.empirical_distortion
                    charged = float(np.max(res.rate_report))
                elif scheme == "qsgd":
                    s = qsgd_levels_for_rate(rate)
                    quantized, charges = [], []
                    for m, y in enumerate(sources):
                        qv, bits = qsgd_quantize(y, s, seed_stream(run_seed, "dev", m))
                        quantized.append(qv)
                        charges.append(bits)
                    dist = measure_distortion(target, baseline_aggregate(quantized, c))
                    charged = float(np.max(charges))
                elif scheme == "uniform":
                    bits = max(1, int(math.floor(rate)))
                    quantized, charges = [], []
                    for m, y in enumerate(sources):
                        qv, charge = rotated_uniform_quantize(y, bits, rotation_seed)
                        quantized.append(qv)
                        charges.append(charge)
                    dist = measure_distortion(target, baseline_aggregate(quantized, c))
                    charged = float(np.max(charges))
                else:
                    raise ValueError(f"unknown scheme {scheme!r}")
                rows.append((scheme, float(rho), float(rate), charged, dist, seed))
    return rows
