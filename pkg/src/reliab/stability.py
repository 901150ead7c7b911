"""Outcome stability, its distance-based upper bound, and the Gaussian scaling law."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .divergence import HellingerTriple

__all__ = [
    "StabilityReport",
    "ScalingLawInput",
    "s_max",
    "s_max_from_normalized",
    "s_max_from_raw",
    "invert_s_max",
    "observed_s",
    "sup_observable_bv",
    "stability_report",
    "scaling_theta",
    "scaling_law_mean",
    "scaling_law_mean_stirling",
    "scaling_s",
]


def s_max_from_normalized(h_n: float, d: int, c: float = 1.0) -> float:
    """``2c * sqrt(1 - (1 - h_n**2)**(2d))``."""
    if c < 0:
        raise ValueError(f"c must be non-negative, got {c}")
    if not 0.0 <= h_n <= 1.0:
        raise ValueError(f"H_n must lie in [0, 1], got {h_n}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if h_n == 1.0:
        return 2.0 * c
    return 2.0 * c * math.sqrt(-math.expm1(2 * d * math.log1p(-h_n * h_n)))


def s_max_from_raw(h: float, c: float = 1.0) -> float:
    """``2c * H * sqrt(2 - H**2)``; same value as the normalized form."""
    if c < 0:
        raise ValueError(f"c must be non-negative, got {c}")
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"H must lie in [0, 1], got {h}")
    return 2.0 * c * h * math.sqrt(2.0 - h * h)


def s_max(c: float, distance: HellingerTriple) -> float:
    return s_max_from_normalized(distance.normalized, distance.d, c)


def invert_s_max(s: float, d: int, c: float = 1.0) -> float:
    """Normalized distance at which the bound equals ``s``."""
    if not c > 0:
        raise ValueError("c must be positive to invert the bound")
    if not 0.0 <= s <= 2.0 * c:
        raise ValueError(f"s must lie in [0, 2c], got {s}")
    # (1 - h^2)^(2d) = 1 - (s/2c)^2
    log_b2 = math.log1p(-((s / (2.0 * c)) ** 2)) if s < 2.0 * c else -math.inf
    return math.sqrt(-math.expm1(log_b2 / (2 * d)))


def observed_s(mean_t1: float, mean_t2: float) -> float:
    return abs(mean_t1 - mean_t2)


def sup_observable_bv(n: int, lower: float = 0.0) -> float:
    """Supremum of ``prod_i (1 - x_i/2)`` over ``x_i`` in ``[lower, 1]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= lower <= 1.0:
        raise ValueError(f"lower bound must lie in [0, 1], got {lower}")
    return (1.0 - lower / 2.0) ** n


@dataclass(frozen=True)
class StabilityReport:
    epoch_pair: tuple
    s_observed: float
    s_max: float
    ratio: float
    c: float
    distance: HellingerTriple
    s_stderr: float = 0.0

    @property
    def holds(self) -> bool:
        return self.ratio < 1.0

    def to_dict(self) -> dict:
        return {
            "epoch_pair": list(self.epoch_pair),
            "s": self.s_observed,
            "s_stderr": self.s_stderr,
            "s_max": self.s_max,
            "ratio": self.ratio,
            "c": self.c,
            "distance": self.distance.to_dict(),
        }


def stability_report(
    epoch_pair: tuple,
    mean_t1: float,
    mean_t2: float,
    distance: HellingerTriple,
    c: float = 1.0,
    s_stderr: float = 0.0,
) -> StabilityReport:
    s = observed_s(mean_t1, mean_t2)
    bound = s_max(c, distance)
    if bound > 0:
        ratio = s / bound
    else:
        ratio = 0.0 if s == 0 else math.inf
    return StabilityReport(tuple(epoch_pair), s, bound, ratio, c, distance, s_stderr)


# ---------------------------------------------------------------------------
# Closed-form mean of the product observable under equicorrelated Gaussian noise


@dataclass(frozen=True)
class ScalingLawInput:
    n: int
    mu_t: float
    sigma_t: float
    rho_t: float

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.sigma_t < 0:
            raise ValueError("sigma_t must be non-negative")
        lo = -1.0 / (self.n - 1) if self.n > 1 else -1.0
        if not lo - 1e-12 <= self.rho_t <= 1.0:
            raise ValueError(f"rho_t must lie in [{lo:g}, 1] for n={self.n}")
        if not self.mu_t < 2.0:
            raise ValueError("mu_t must be below 2 so that 1 - mu_t/2 > 0")

    @property
    def m_max(self) -> int:
        return self.n // 2


def scaling_theta(inp: ScalingLawInput) -> float:
    """Pair-covariance weight ``sigma^2 rho / (8 (1 - mu/2)^2)``; negative when ``rho < 0``."""
    a = 1.0 - inp.mu_t / 2.0
    return inp.sigma_t**2 * inp.rho_t / (8.0 * a * a)


def _signed_sum(log_terms: np.ndarray, theta: float, m: np.ndarray) -> float:
    signs = np.where((theta < 0) & (m % 2 == 1), -1.0, 1.0)
    total, sign = logsumexp(log_terms, b=signs, return_sign=True)
    return float(sign * np.exp(total))


def _log_theta_powers(theta: float, m: np.ndarray) -> np.ndarray:
    if theta == 0.0:
        return np.where(m == 0, 0.0, -np.inf)
    return m * math.log(abs(theta))


def scaling_law_mean(inp: ScalingLawInput) -> float:
    """``E[prod_i (1 - y_i/2)]`` for equicorrelated normal ``y``.

    Only even-order central moments survive; summing the pairings gives
    ``n! a^n sum_m theta^m / (m! (n-2m)!)`` with ``a = 1 - mu/2``.
    """
    n = inp.n
    m = np.arange(inp.m_max + 1)
    log_a = math.log(1.0 - inp.mu_t / 2.0)
    theta = scaling_theta(inp)
    log_terms = gammaln(n + 1) + n * log_a - gammaln(m + 1) - gammaln(n - 2 * m + 1) + _log_theta_powers(theta, m)
    return _signed_sum(log_terms, theta, m)


def _log_stirling(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * np.log(2.0 * np.pi * k) + k * (np.log(k) - 1.0)
    return np.where(k == 0, 0.0, out)


def scaling_law_mean_stirling(inp: ScalingLawInput) -> float:
    """:func:`scaling_law_mean` with every nonzero factorial replaced by Stirling's formula."""
    n = inp.n
    m = np.arange(inp.m_max + 1)
    log_a = math.log(1.0 - inp.mu_t / 2.0)
    theta = scaling_theta(inp)
    log_terms = _log_stirling(n) + n * log_a - _log_stirling(m) - _log_stirling(n - 2 * m) + _log_theta_powers(theta, m)
    return _signed_sum(log_terms, theta, m)


def scaling_s(n: int, params_t1: ScalingLawInput, params_t2: ScalingLawInput) -> float:
    if not params_t1.n == params_t2.n == n:
        raise ValueError("both inputs must share n")
    return abs(scaling_law_mean(params_t1) - scaling_law_mean(params_t2))
