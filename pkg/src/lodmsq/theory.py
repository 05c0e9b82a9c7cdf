"""Numerical companions to the alignment analysis of LOD.

Covers the projected inner-product variance profile of a partition, the
lower bounds on the cosine between a query and its best center (uniform
and varying center norms), the exact quantile those bounds relax, the
``E[(x.y)^2] = 1/d`` identity for random unit vectors, and the condition
under which the partition center is the optimal projection direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import betainc

from ._validation import check_data, check_positive_int, check_vector

__all__ = [
    "ALPHA",
    "L2Bound",
    "MCEstimate",
    "VarianceProfile",
    "calibrate_eta1",
    "cos_cdf",
    "empirical_max_cos",
    "l1_bound",
    "l1_weak_bound",
    "l2_bound",
    "lemma1_mc",
    "max_cos_samples",
    "max_cos_quantile_exact",
    "projected_ip_variance",
    "theorem3_check",
    "theorem3_weak_check",
    "variance_profile",
]

ALPHA = 2.0 * (1.0 - math.exp(-1.0))

_BLOCK = 1024


def _check_delta(delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return float(delta)


# --------------------------------------------------------------------------
# projected inner-product variance


def projected_ip_variance(residuals, queries, v) -> float:
    """Mean of ``((q . v)(r . v))**2`` over residuals.

    ``queries`` may be a single vector or a matrix; with a matrix the value is
    additionally averaged over queries.
    """
    R = check_data(residuals, name="residuals")
    v = check_vector(v, R.shape[1], name="v")
    Q = np.asarray(queries, dtype=np.float64)
    Q = Q[None, :] if Q.ndim == 1 else check_data(Q, name="queries")
    if Q.shape[1] != R.shape[1]:
        raise ValueError("queries and residuals differ in dimension")
    qv2 = np.mean((Q @ v) ** 2)
    rv2 = np.mean((R @ v) ** 2)
    return float(qv2 * rv2)


@dataclass(frozen=True)
class VarianceProfile:
    angles: np.ndarray
    variances: np.ndarray
    u1: np.ndarray
    u2: np.ndarray

    def ratio(self) -> float:
        """Max over min variance across the profile."""
        lo = self.variances.min()
        return math.inf if lo == 0 else float(self.variances.max() / lo)

    def rows(self) -> list[tuple[float, float, float, float]]:
        """``(angle, x, y, var)`` with ``(x, y) = var * (cos, sin)``; unscaled."""
        x = self.variances * np.cos(self.angles)
        y = self.variances * np.sin(self.angles)
        return list(zip(self.angles.tolist(), x.tolist(), y.tolist(), self.variances.tolist()))


def _unit_circle(n_v: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    i = np.arange(n_v)
    angles = 2.0 * np.pi * i / n_v
    cos, sin = np.cos(angles), np.sin(angles)
    # Quarter turns land exactly on +-u1 / +-u2.
    quarter = (4 * i) % n_v == 0
    steps = (4 * i[quarter]) // n_v
    cos[quarter] = np.array([1.0, 0.0, -1.0, 0.0])[steps]
    sin[quarter] = np.array([0.0, 1.0, 0.0, -1.0])[steps]
    return angles, cos, sin


def variance_profile(residuals, center, queries, n_v: int = 1000, seed: int = 0
                     ) -> VarianceProfile:
    """Projected IP variance along ``n_v`` evenly spaced directions in
    ``span{u1, u2}``, where ``u1 = c / ||c||`` and ``u2`` is a random unit vector
    orthogonal to it."""
    R = check_data(residuals, name="residuals")
    c = check_vector(center, R.shape[1], name="center")
    if n_v < 3:
        raise ValueError("n_v must be at least 3")
    norm = np.linalg.norm(c)
    if norm == 0:
        raise ValueError("zero-norm center")
    u1 = c / norm
    rng = np.random.default_rng(seed)
    u2 = rng.standard_normal(R.shape[1])
    u2 -= (u2 @ u1) * u1
    u2 /= np.linalg.norm(u2)
    Q = np.asarray(queries, dtype=np.float64)
    Q = Q[None, :] if Q.ndim == 1 else check_data(Q, name="queries")
    angles, cos, sin = _unit_circle(n_v)
    # Project once onto (u1, u2); every direction is a combination of the two.
    q1, q2 = Q @ u1, Q @ u2
    r1, r2 = R @ u1, R @ u2
    qv = np.outer(cos, q1) + np.outer(sin, q2)
    rv = np.outer(cos, r1) + np.outer(sin, r2)
    variances = np.mean(qv**2, axis=1) * np.mean(rv**2, axis=1)
    return VarianceProfile(angles, variances, u1, u2)


# --------------------------------------------------------------------------
# bounds on the best-center cosine


def l1_bound(m: int, d: int, delta: float, eta1: float, *, return_valid: bool = False):
    """``sqrt(1 - (eta1 sqrt(d) log(1/delta) / m) ** (2 / (d + 1)))``.

    When the bracket exceeds 1 the bound is vacuous and 0.0 is returned;
    ``return_valid=True`` also returns whether the bracket was within range.
    """
    delta = _check_delta(delta)
    if m < 1 or d < 1 or eta1 <= 0:
        raise ValueError("need m >= 1, d >= 1 and eta1 > 0")
    base = eta1 * math.sqrt(d) * math.log(1.0 / delta) / m
    inner = base ** (2.0 / (d + 1))
    valid = inner <= 1.0
    value = math.sqrt(1.0 - inner) if valid else 0.0
    return (value, valid) if return_valid else value


def l1_weak_bound(m: int, d: int, delta: float, eta1: float) -> float:
    """``sqrt(ALPHA * max((log(m / sqrt d) - log(eta1 log 1/delta)) / (d + 1), 0))``."""
    delta = _check_delta(delta)
    t = math.log(m / math.sqrt(d)) - math.log(eta1 * math.log(1.0 / delta))
    return math.sqrt(ALPHA * max(t / (d + 1), 0.0))


def cos_cdf(y, d: int, marginal: str = "bound"):
    """CDF of the first coordinate used by the exact quantile.

    ``marginal="bound"`` integrates ``(1 - x^2)^((d-1)/2)``, the form the
    bounds are derived from; ``marginal="sphere"`` integrates
    ``(1 - x^2)^((d-3)/2)``, the exact marginal of a uniform point on the unit
    sphere in ``R^d``. Both use the regularized incomplete beta function.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    if marginal == "bound":
        a = (d - 1) / 2.0
    elif marginal == "sphere":
        a = (d - 3) / 2.0
    else:
        raise ValueError(f"unknown marginal {marginal!r}")
    t = (np.clip(np.asarray(y, dtype=np.float64), -1.0, 1.0) + 1.0) / 2.0
    out = betainc(a + 1.0, a + 1.0, t)
    return float(out) if np.ndim(out) == 0 else out


def max_cos_quantile_exact(m: int, d: int, delta: float, marginal: str = "bound",
                           tol: float = 1e-9, max_iter: int = 2000) -> float:
    """Solve ``cos_cdf(h) ** m == delta`` for ``h`` by bisection on ``[-1, 1]``."""
    delta = _check_delta(delta)
    m = check_positive_int(m, "m")

    def g(h):
        return cos_cdf(h, d, marginal) ** m - delta

    lo, hi = -1.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = g(mid)
        if val == 0.0:
            return mid
        if val < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps:
            break
    best = min((lo, hi), key=lambda h: abs(g(h)))
    if abs(g(best)) > tol:
        raise RuntimeError(f"bisection did not reach |F(h)^m - delta| <= {tol}")
    return best


def calibrate_eta1(ms, ds, deltas, marginal: str = "bound") -> float:
    """Smallest ``eta1`` for which :func:`l1_bound` stays at or below the exact
    quantile at every grid point (the bound decreases as ``eta1`` grows)."""
    best = -math.inf
    for m in ms:
        for d in ds:
            for delta in deltas:
                h = max_cos_quantile_exact(m, d, delta, marginal)
                if h <= 0:
                    continue
                eta = m * (1.0 - h * h) ** ((d + 1) / 2.0) / (math.sqrt(d) * math.log(1 / delta))
                best = max(best, eta)
    if not math.isfinite(best):
        raise ValueError("no grid point with a positive quantile")
    # Stay on the safe side of the equality point.
    return best * (1.0 + 1e-12)


class L2Bound(NamedTuple):
    value: float
    argmax: int
    witness: float


def l2_bound(sorted_norms, delta: float, d: int, eta1: float) -> L2Bound:
    """``max_i (h_i / h_1) * L1(i, delta)`` over centers sorted by norm, descending.

    Also returns the 1-based maximizing index and the ``ceil(m/2)`` witness
    term, which never exceeds the maximum.
    """
    h = np.asarray(sorted_norms, dtype=np.float64)
    if h.ndim != 1 or h.size == 0:
        raise ValueError("need a non-empty 1-d array of norms")
    if np.any(h <= 0) or np.any(np.diff(h) > 0):
        raise ValueError("norms must be positive and sorted in descending order")
    terms = np.array([h[i - 1] / h[0] * l1_bound(i, d, delta, eta1)
                      for i in range(1, h.size + 1)])
    best = int(np.argmax(terms))
    half = math.ceil(h.size / 2)
    witness = float(terms[half - 1])
    value = float(terms[best])
    assert value >= witness
    return L2Bound(value, best + 1, witness)


def theorem3_check(gamma: float, d: int, l2_value: float) -> bool:
    """True when ``gamma < (d - 2) * L2**2`` (center direction is optimal)."""
    if d < 3:
        raise ValueError("d must be at least 3")
    if gamma < 1:
        raise ValueError("gamma is an eigenvalue ratio and must be >= 1")
    return bool(gamma < (d - 2) * l2_value**2)


def theorem3_weak_check(gamma: float, m: int, d: int, delta: float, eta1: float,
                        eta2: float) -> bool:
    """``gamma < eta2 * (log(m / sqrt d) - log(eta1 log 1/delta))``; ``eta2`` has no default."""
    delta = _check_delta(delta)
    if eta2 <= 0:
        raise ValueError("eta2 must be positive")
    t = math.log(m / math.sqrt(d)) - math.log(eta1 * math.log(1.0 / delta))
    return bool(gamma < eta2 * t)


# --------------------------------------------------------------------------
# Monte Carlo


class MCEstimate(NamedTuple):
    mean: float
    stderr: float
    n_samples: int


def _blocks(total: int, block: int):
    out = []
    while total > 0:
        out.append(min(block, total))
        total -= out[-1]
    return out


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def lemma1_mc(d: int, n_samples: int, seed: int = 0, block: int = 65536) -> MCEstimate:
    """Monte-Carlo estimate of ``E[(x . y)^2]`` for independent uniform unit vectors."""
    d = check_positive_int(d, "d")
    n_samples = check_positive_int(n_samples, "n_samples", minimum=2)
    sizes = _blocks(n_samples, block)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    s = s2 = 0.0
    for size, ss in zip(sizes, streams):
        rng = np.random.default_rng(ss)
        x = _unit_rows(rng, size, d)
        y = _unit_rows(rng, size, d)
        v = np.einsum("ij,ij->i", x, y) ** 2
        s += v.sum()
        s2 += (v * v).sum()
    mean = s / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    return MCEstimate(float(mean), float(math.sqrt(var / n_samples)), n_samples)


def max_cos_samples(m: int, d: int, n_trials: int, seed: int = 0) -> np.ndarray:
    """Per-trial maximum cosine between a fixed query and ``m`` uniform unit centers.

    Only the coordinate along the query matters, so each center is drawn as
    ``g1 / sqrt(g1^2 + chi2(d - 1))``, which is exactly its cosine.
    """
    m = check_positive_int(m, "m")
    d = check_positive_int(d, "d", minimum=2)
    sizes = _blocks(check_positive_int(n_trials, "n_trials"), _BLOCK)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    out = []
    for size, ss in zip(sizes, streams):
        rng = np.random.default_rng(ss)
        g1 = rng.standard_normal((size, m))
        rest = rng.chisquare(d - 1, (size, m))
        out.append(np.max(g1 / np.sqrt(g1 * g1 + rest), axis=1))
    return np.concatenate(out)


def empirical_max_cos(m: int, d: int, delta: float, n_trials: int, seed: int = 0) -> float:
    """Empirical ``delta``-quantile of the best-center cosine."""
    delta = _check_delta(delta)
    return float(np.quantile(max_cos_samples(m, d, n_trials, seed), delta))
