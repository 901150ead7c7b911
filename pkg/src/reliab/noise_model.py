"""Noise parameters and their time-varying beta marginals."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.special import betainc, betaln, ndtr, ndtri, xlog1py, xlogy

__all__ = [
    "ParameterKind",
    "NoiseParameter",
    "BetaMarginal",
    "DriftSpec",
    "fit_hyperparams",
    "fit_beta_moments",
    "beta_pdf",
    "beta_logpdf",
    "beta_cdf",
    "beta_quantile",
    "beta_ppf",
    "beta_ppf_normal",
    "beta_normal_scores",
    "rescale_to_unit",
    "unit_to_raw",
    "validate_parameter_set",
    "bv_parameter_set",
    "depolarizing_parameter_set",
    "DEFAULT_DEPHASING_RANGE",
]

DEFAULT_DEPHASING_RANGE = (0.0, 500.0)

# Smallest/largest values a quantile may take so that log-densities stay finite.
_X_MIN = 1e-300
_X_MAX = 1.0 - 2.0**-53


class ParameterKind(str, enum.Enum):
    SPAM_FIDELITY = "spam_fidelity"
    CNOT_FIDELITY = "cnot_fidelity"
    DEPHASING_TIME = "dephasing_time"
    HADAMARD_FIDELITY = "hadamard_fidelity"
    # Per-qubit isotropic depolarizing strength (synthetic model only).
    DEPOLARIZING = "depolarizing"


@dataclass(frozen=True)
class NoiseParameter:
    """One coordinate of the circuit noise vector.

    ``targets`` doubles as the binding into the circuit: a SPAM parameter on
    qubit 2 is applied at the readout of qubit 2, a CNOT parameter on
    ``(0, 4)`` at the CNOT with control 0 and target 4, and so on.
    ``rescale`` is the physical ``(lo, hi)`` range used to map dephasing
    times into beta support. ``complement`` flips ingested values
    ``v -> 1 - v`` (datasets that report errors rather than fidelities).
    """

    id: int
    kind: ParameterKind
    targets: tuple[int, ...]
    rescale: tuple[float, float] | None = None
    complement: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ParameterKind(self.kind))
        object.__setattr__(self, "targets", tuple(int(q) for q in self.targets))
        if self.rescale is not None:
            object.__setattr__(self, "rescale", (float(self.rescale[0]), float(self.rescale[1])))
        if self.id < 0:
            raise ValueError(f"parameter id must be non-negative, got {self.id}")
        if self.kind is ParameterKind.CNOT_FIDELITY:
            if len(self.targets) != 2 or self.targets[0] == self.targets[1]:
                raise ValueError(f"parameter {self.id}: CNOT needs two distinct (control, target) qubits")
        elif len(self.targets) != 1:
            raise ValueError(f"parameter {self.id}: {self.kind.value} acts on exactly one qubit")
        if any(q < 0 for q in self.targets):
            raise ValueError(f"parameter {self.id}: negative qubit index")
        is_time = self.kind is ParameterKind.DEPHASING_TIME
        if is_time != (self.rescale is not None):
            raise ValueError(f"parameter {self.id}: rescale range is required for dephasing times and only for them")
        if self.rescale is not None and not self.rescale[0] < self.rescale[1]:
            raise ValueError(f"parameter {self.id}: rescale needs lo < hi, got {self.rescale}")
        if self.complement and is_time:
            raise ValueError(f"parameter {self.id}: complement applies to fidelities only")

    @property
    def site(self) -> tuple:
        return (self.kind.value, *self.targets)


def validate_parameter_set(params: Sequence[NoiseParameter]) -> None:
    ids = [p.id for p in params]
    if sorted(ids) != list(range(len(ids))):
        raise ValueError(f"parameter ids must be unique and contiguous from 0, got {ids}")
    sites = [p.site for p in params]
    if len(set(sites)) != len(sites):
        raise ValueError("two parameters bind to the same circuit site")


def bv_parameter_set(
    secret: Sequence[int],
    dephasing_range: tuple[float, float] = DEFAULT_DEPHASING_RANGE,
) -> tuple[NoiseParameter, ...]:
    """Full Bernstein-Vazirani noise vector for an ``n``-bit secret.

    Ordering: SPAM on the n measured qubits, one CNOT per set secret bit
    (control i, target ancilla n), dephasing time on all n+1 qubits, then
    Hadamard fidelity on all n+1 qubits. A 4-bit secret of weight 2 gives
    the familiar 16 parameters.
    """
    n = len(secret)
    kinds: list[tuple[ParameterKind, tuple[int, ...]]] = []
    kinds += [(ParameterKind.SPAM_FIDELITY, (q,)) for q in range(n)]
    kinds += [(ParameterKind.CNOT_FIDELITY, (q, n)) for q in range(n) if secret[q]]
    kinds += [(ParameterKind.DEPHASING_TIME, (q,)) for q in range(n + 1)]
    kinds += [(ParameterKind.HADAMARD_FIDELITY, (q,)) for q in range(n + 1)]
    return tuple(
        NoiseParameter(
            id=i,
            kind=kind,
            targets=targets,
            rescale=dephasing_range if kind is ParameterKind.DEPHASING_TIME else None,
        )
        for i, (kind, targets) in enumerate(kinds)
    )


def depolarizing_parameter_set(n: int) -> tuple[NoiseParameter, ...]:
    return tuple(NoiseParameter(id=q, kind=ParameterKind.DEPOLARIZING, targets=(q,)) for q in range(n))


# ---------------------------------------------------------------------------
# Beta marginals with drift


@dataclass(frozen=True)
class BetaMarginal:
    """Beta density whose shape parameters drift as ``alpha0 / (k0 + t)``.

    The drift keeps the mean fixed while the variance grows with ``t``.
    ``k0=None`` marks a static marginal with ``(alpha0, beta0)`` at every
    epoch; fitted per-epoch snapshots use this form.
    """

    alpha0: float
    beta0: float
    k0: float | None = None

    def __post_init__(self) -> None:
        if not (self.alpha0 > 0 and self.beta0 > 0 and math.isfinite(self.alpha0) and math.isfinite(self.beta0)):
            raise ValueError(f"beta parameters must be positive and finite, got ({self.alpha0}, {self.beta0})")
        if self.k0 is not None and not math.isfinite(self.k0):
            raise ValueError("k0 must be finite (use k0=None for a static marginal)")

    @classmethod
    def static(cls, alpha: float, beta: float) -> BetaMarginal:
        return cls(float(alpha), float(beta), None)

    def params_at(self, t: float = 0.0) -> tuple[float, float]:
        if self.k0 is None:
            return self.alpha0, self.beta0
        denom = self.k0 + t
        if not denom > 0:
            raise ValueError(f"k0 + t must be positive (k0={self.k0}, t={t})")
        return self.alpha0 / denom, self.beta0 / denom

    def mean(self, t: float = 0.0) -> float:
        a, b = self.params_at(t)
        return a / (a + b)

    def variance(self, t: float = 0.0) -> float:
        a, b = self.params_at(t)
        return a * b / ((a + b) ** 2 * (1.0 + a + b))

    def at(self, t: float) -> BetaMarginal:
        """Static snapshot of this marginal at epoch ``t``."""
        return BetaMarginal.static(*self.params_at(t))


@dataclass(frozen=True)
class DriftSpec:
    """Initial mean/spread of a parameter and how much its variance grows.

    ``omega`` is the variance multiple reached at ``horizon`` (in epochs).
    ``omega == 1`` means no drift.
    """

    mu0: float
    sigma0: float
    omega: float
    horizon: float

    def __post_init__(self) -> None:
        if not 0.0 < self.mu0 < 1.0:
            raise ValueError(f"mu0 must lie in (0, 1), got {self.mu0}")
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.sigma0**2 >= self.mu0 * (1.0 - self.mu0):
            raise ValueError(
                f"sigma0^2={self.sigma0**2:g} >= mu0(1-mu0)={self.mu0 * (1 - self.mu0):g}: no beta matches these moments"
            )
        if not self.omega >= 1.0:
            raise ValueError(f"omega must be >= 1, got {self.omega}")
        if not self.phi / self.omega > 1.0:
            raise ValueError(f"phi/omega = {self.phi / self.omega:g} <= 1: variance cannot grow by omega inside beta support")
        if not self.horizon >= 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")

    @property
    def phi(self) -> float:
        return self.mu0 * (1.0 - self.mu0) / self.sigma0**2


def fit_hyperparams(spec: DriftSpec, anchor: Literal["start", "unit"] = "start") -> BetaMarginal:
    """Drift-law hyperparameters ``(alpha0, beta0, k0)`` from a :class:`DriftSpec`.

    With both anchors the variance at ``t = horizon`` is ``omega * sigma0**2``
    and the mean is ``mu0`` at all times. They differ in where
    ``(mu0, sigma0**2)`` is attained:

    ``"start"``
        at ``t = 0``, so the variance ratio between ``horizon`` and ``0`` is
        exactly ``omega``.
    ``"unit"``
        where ``k0 + t = 1``; this is the textbook closed form
        ``alpha0 = mu0 (phi - 1)``, ``k0 = (phi - 1)/(phi/omega - 1) - horizon``.
    """
    phi = spec.phi
    if spec.omega == 1.0:
        return BetaMarginal.static(spec.mu0 * (phi - 1.0), (1.0 - spec.mu0) * (phi - 1.0))
    if anchor == "unit":
        k0 = (phi - 1.0) / (phi / spec.omega - 1.0) - spec.horizon
        if not k0 > 0:
            raise ValueError(f"k0={k0:g} <= 0: drift law undefined at t=0 for this horizon")
        return BetaMarginal(spec.mu0 * (phi - 1.0), (1.0 - spec.mu0) * (phi - 1.0), k0)
    if anchor != "start":
        raise ValueError(f"unknown anchor {anchor!r}")
    if not spec.horizon > 0:
        raise ValueError("horizon must be positive when anchoring the moments at t=0")
    # (alpha_T + beta_T) / (alpha_0 + beta_0) = k0 / (k0 + T) = r
    r = (phi / spec.omega - 1.0) / (phi - 1.0)
    k0 = r * spec.horizon / (1.0 - r)
    scale = (phi - 1.0) * k0
    return BetaMarginal(spec.mu0 * scale, (1.0 - spec.mu0) * scale, k0)


def fit_beta_moments(values: Iterable[float], name: str = "parameter") -> tuple[float, float]:
    """Method-of-moments beta fit from samples in [0, 1]."""
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if x.size < 2:
        raise ValueError(f"{name}: need at least 2 observations, got {x.size}")
    m = float(x.mean())
    v = float(x.var(ddof=1))
    if not v > 0:
        raise ValueError(f"{name}: zero sample variance, beta fit is degenerate")
    if not 0.0 < m < 1.0 or v >= m * (1.0 - m):
        raise ValueError(f"{name}: sample moments (mean={m:g}, var={v:g}) admit no beta distribution")
    phi = m * (1.0 - m) / v
    return m * (phi - 1.0), (1.0 - m) * (phi - 1.0)


# ---------------------------------------------------------------------------
# Density, CDF and quantile


def _shape(marginal: BetaMarginal | tuple[float, float], t: float) -> tuple[float, float]:
    if isinstance(marginal, BetaMarginal):
        return marginal.params_at(t)
    a, b = marginal
    return float(a), float(b)


def _check_unit(x: np.ndarray) -> None:
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("x must lie in [0, 1]")


def beta_logpdf(a: float, b: float, x: np.ndarray | float) -> np.ndarray:
    """Unchecked log-density; callers handle the domain."""
    x = np.asarray(x, dtype=float)
    return xlogy(a - 1.0, x) + xlog1py(b - 1.0, -x) - betaln(a, b)


def beta_pdf(marginal: BetaMarginal | tuple[float, float], x, t: float = 0.0):
    a, b = _shape(marginal, t)
    xa = np.asarray(x, dtype=float)
    _check_unit(xa)
    if (a < 1.0 and np.any(xa == 0.0)) or (b < 1.0 and np.any(xa == 1.0)):
        raise ValueError(f"Beta({a:g}, {b:g}) density diverges at the boundary")
    out = np.exp(beta_logpdf(a, b, xa))
    return float(out) if out.ndim == 0 else out


def beta_cdf(marginal: BetaMarginal | tuple[float, float], x, t: float = 0.0):
    a, b = _shape(marginal, t)
    xa = np.asarray(x, dtype=float)
    _check_unit(xa)
    out = betainc(a, b, xa)
    return float(out) if out.ndim == 0 else out


def beta_quantile(marginal: BetaMarginal | tuple[float, float], u, t: float = 0.0, tol: float = 1e-10):
    """Inverse of the regularized incomplete beta function.

    Solved per element by Newton steps safeguarded by a bisection bracket
    on ``[0, 1]``; the result is within ``tol`` of the true quantile.
    """
    a, b = _shape(marginal, t)
    ua = np.asarray(u, dtype=float)
    if np.any(~(ua > 0.0)) or np.any(~(ua < 1.0)):
        raise ValueError("u must lie strictly inside (0, 1)")
    out = beta_ppf(a, b, ua, tol=tol)
    return float(out) if out.ndim == 0 else out


def beta_ppf(a: float, b: float, u: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Vectorised quantile for fixed shape ``(a, b)``; ``u`` in (0, 1), unchecked.

    Upper-half probabilities are solved on the mirrored distribution so the
    residual ``I_x - u`` never suffers cancellation near 1.
    """
    u = np.asarray(u, dtype=float)
    flat = u.ravel()
    out = np.empty_like(flat)
    upper = flat > 0.5
    if np.any(~upper):
        out[~upper] = _solve_lower(a, b, flat[~upper], tol)
    if np.any(upper):
        out[upper] = 1.0 - _solve_lower(b, a, 1.0 - flat[upper], tol)
    return np.clip(out, _X_MIN, _X_MAX).reshape(u.shape)


def beta_ppf_normal(a: float, b: float, z: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Beta quantile at ``u = Phi(z)``, without rounding ``u`` near 1.

    Copula sampling works in normal scores; passing ``z`` keeps the upper
    tail probability ``Phi(-z)`` at full precision.
    """
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    out = np.empty_like(flat)
    upper = flat > 0.0
    if np.any(~upper):
        out[~upper] = _solve_lower(a, b, ndtr(flat[~upper]), tol)
    if np.any(upper):
        out[upper] = 1.0 - _solve_lower(b, a, ndtr(-flat[upper]), tol)
    return np.clip(out, _X_MIN, _X_MAX).reshape(z.shape)


def beta_normal_scores(a: float, b: float, x: np.ndarray) -> np.ndarray:
    """``Phi^{-1}(F(x))`` evaluated from whichever tail is smaller."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    lower = betainc(a, b, flat)
    z = ndtri(lower)
    hi = lower > 0.5
    if np.any(hi):
        z[hi] = -ndtri(betainc(b, a, 1.0 - flat[hi]))
    return z.reshape(x.shape)


_GRID_SIZE = 257
_GRID_MIN_WORK = 4096


def _solve_lower(p: float, q: float, w: np.ndarray, tol: float) -> np.ndarray:
    """Solve ``I_y(p, q) = w`` for ``w <= 0.5``."""
    if w.size >= _GRID_MIN_WORK:
        # Cheap starting points: exact quantiles on a log-spaced grid, interpolated.
        w_lo = max(float(w.min()), 1e-300)
        grid = np.geomspace(w_lo, 0.5, _GRID_SIZE)
        y_grid = _newton_bisect(p, q, grid, _initial_guess(p, q, grid), tol * 1e-2)
        y0 = np.interp(np.log(np.maximum(w, 1e-300)), np.log(grid), y_grid)
    else:
        y0 = _initial_guess(p, q, w)
    return _newton_bisect(p, q, w, y0, tol * 1e-2)


def _initial_guess(p: float, q: float, w: np.ndarray) -> np.ndarray:
    # Leading-order lower-tail inversion I_y ~ y^p / (p B(p, q)), capped at the mean.
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        y = np.exp((np.log(np.maximum(w, 1e-300)) + math.log(p) + betaln(p, q)) / p)
    return np.clip(y, 1e-300, p / (p + q))


def _newton_bisect(p: float, q: float, w: np.ndarray, y0: np.ndarray, step_tol: float, max_iter: int = 300) -> np.ndarray:
    y = np.array(y0, dtype=float, copy=True)
    lo = np.zeros_like(y)
    hi = np.ones_like(y)
    idx = np.arange(y.size)
    lbeta = betaln(p, q)
    for _ in range(max_iter):
        if idx.size == 0:
            break
        yi, loi, hii, wi = y[idx], lo[idx], hi[idx], w[idx]
        resid = betainc(p, q, yi) - wi
        below = resid < 0
        loi = np.where(below, yi, loi)
        hii = np.where(below, hii, yi)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            logf = xlogy(p - 1.0, yi) + xlog1py(q - 1.0, -yi) - lbeta
            newton = resid / np.exp(logf)
        # A sub-tolerance Newton correction is final even if round-off puts it
        # a hair outside the bracket.
        converged = (resid == 0) | (np.abs(newton) <= step_tol)
        y_new = yi - newton
        outside = ~((y_new > loi) & (y_new < hii))
        y_new = np.where(outside & ~converged, 0.5 * (loi + hii), y_new)
        done = converged | (hii - loi <= step_tol)
        y[idx] = np.where(resid == 0, yi, y_new)
        lo[idx], hi[idx] = loi, hii
        idx = idx[~done]
    else:  # pragma: no cover - bisection alone converges in ~50 steps
        raise RuntimeError("beta quantile failed to converge")
    return y


# ---------------------------------------------------------------------------
# Physical <-> unit interval


def rescale_to_unit(raw, param: NoiseParameter):
    """Map a raw value into beta support; out-of-range values are clamped."""
    x = np.asarray(raw, dtype=float)
    if param.rescale is not None:
        lo, hi = param.rescale
        x = (x - lo) / (hi - lo)
    out = np.clip(x, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def unit_to_raw(x, param: NoiseParameter):
    xa = np.asarray(x, dtype=float)
    if param.rescale is not None:
        lo, hi = param.rescale
        xa = lo + xa * (hi - lo)
    return float(xa) if xa.ndim == 0 else xa
