"""Hellinger distances between beta marginals and between copula joints."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import betaln

from .copula import (
    DEFAULT_CHUNK_SIZE,
    ClusterPartition,
    CopulaJoint,
    _seed_key,
    chunk_rng,
    clustered_joint,
    copula_logpdf,
    map_chunks,
    sample_normal_scores,
    scores_to_unit,
)
from .noise_model import BetaMarginal

__all__ = [
    "HellingerTriple",
    "hellinger_beta",
    "hellinger_beta_closed",
    "hellinger_mc",
    "hellinger_clustered",
    "hellinger_profile",
    "curse_of_dimensionality",
    "join_partitions",
    "MIN_SAMPLES",
    "DEFAULT_SAMPLES",
]

MIN_SAMPLES = 10_000
DEFAULT_SAMPLES = 100_000
LOG_DENSITY_FLOOR = -700.0
MAX_REDRAWS = 100


@dataclass(frozen=True)
class HellingerTriple:
    """Raw, marginal-averaged and dimension-normalized distances for one pair.

    ``bhattacharyya`` is the clamped coefficient ``B``; ``raw = sqrt(1-B)``
    and ``normalized = sqrt(1 - B**(1/d))``. ``b_unclamped`` keeps the
    estimator's value before clamping to [0, 1].
    """

    raw: float
    averaged: float
    normalized: float
    d: int
    n_samples: int
    seed: int | tuple[int, ...]
    bhattacharyya: float = 1.0
    b_unclamped: float = 1.0
    b_stderr: float = 0.0
    marginal: tuple[float, ...] = ()
    redraws: int = 0

    @property
    def clamped(self) -> bool:
        return self.b_unclamped != self.bhattacharyya

    @property
    def stderr(self) -> float:
        """Delta-method standard error of ``raw``."""
        if self.b_stderr == 0.0:
            return 0.0
        if self.raw > 0.0:
            return self.b_stderr / (2.0 * self.raw)
        return math.sqrt(self.b_stderr)

    @property
    def normalized_stderr(self) -> float:
        if self.b_stderr == 0.0:
            return 0.0
        b = self.bhattacharyya
        if self.normalized == 0.0 or b == 0.0:
            return math.sqrt(self.b_stderr / self.d)
        # d(H_n)/dB = -B^(1/d - 1) / (2 d H_n)
        return b ** (1.0 / self.d - 1.0) * self.b_stderr / (2.0 * self.d * self.normalized)

    @classmethod
    def from_coefficient(
        cls,
        b: float,
        b_stderr: float,
        d: int,
        n_samples: int,
        seed,
        marginal: Sequence[float],
        redraws: int = 0,
    ) -> HellingerTriple:
        bc = min(max(b, 0.0), 1.0)
        return cls(
            raw=math.sqrt(1.0 - bc),
            averaged=float(np.mean(marginal)) if len(marginal) else 0.0,
            normalized=math.sqrt(max(0.0, 1.0 - bc ** (1.0 / d))),
            d=d,
            n_samples=n_samples,
            seed=seed,
            bhattacharyya=bc,
            b_unclamped=float(b),
            b_stderr=float(b_stderr),
            marginal=tuple(float(h) for h in marginal),
            redraws=redraws,
        )

    def to_dict(self) -> dict:
        return {
            "H_r": self.raw,
            "H_n": self.normalized,
            "H_a": self.averaged,
            "d": self.d,
            "n_samples": self.n_samples,
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
            "B": self.bhattacharyya,
            "B_unclamped": self.b_unclamped,
            "B_stderr": self.b_stderr,
            "H_r_stderr": self.stderr,
            "clamped": self.clamped,
            "redraws": self.redraws,
            "marginal": list(self.marginal),
        }


def _bc_beta(a1: float, b1: float, a2: float, b2: float) -> float:
    log_bc = betaln(0.5 * (a1 + a2), 0.5 * (b1 + b2)) - 0.5 * (betaln(a1, b1) + betaln(a2, b2))
    return min(1.0, math.exp(log_bc))


def hellinger_beta(a1: float, b1: float, a2: float, b2: float) -> float:
    """Exact Hellinger distance between Beta(a1, b1) and Beta(a2, b2)."""
    if min(a1, b1, a2, b2) <= 0:
        raise ValueError("beta parameters must be positive")
    return math.sqrt(max(0.0, 1.0 - _bc_beta(a1, b1, a2, b2)))


def hellinger_beta_closed(m: BetaMarginal, t1: float, t2: float) -> float:
    return hellinger_beta(*m.params_at(t1), *m.params_at(t2))


def marginal_distances(p: CopulaJoint, q: CopulaJoint) -> tuple[float, ...]:
    return tuple(hellinger_beta(a1, b1, a2, b2) for (a1, b1), (a2, b2) in zip(p.shapes, q.shapes))


def curse_of_dimensionality(h: float, d: int) -> float:
    """Joint distance of ``d`` independent coordinates that each sit at distance ``h``."""
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"h must lie in [0, 1], got {h}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if h == 1.0:
        return 1.0
    return math.sqrt(-math.expm1(d * math.log1p(-h * h)))


# ---------------------------------------------------------------------------
# Monte-Carlo estimation


@dataclass(frozen=True)
class _ReferenceDraws:
    """Samples from a reference joint with their log densities, kept for reuse."""

    x: np.ndarray
    logp: np.ndarray
    redraws: int


def _draw_reference(p: CopulaJoint, n_samples: int, seed, chunk_size: int) -> _ReferenceDraws:
    key = _seed_key(seed)

    def draw(k: int, size: int):
        x = scores_to_unit(p, sample_normal_scores(p, size, chunk_rng(key, k)))
        logp = copula_logpdf(p, x, check=False)
        redraws = 0
        for attempt in range(MAX_REDRAWS + 1):
            bad = ~(logp >= LOG_DENSITY_FLOOR)
            if not bad.any():
                break
            if attempt == MAX_REDRAWS:
                raise RuntimeError(f"{int(bad.sum())} samples still below the density floor after {MAX_REDRAWS} redraws")
            rng = np.random.default_rng([*key, k, 1, attempt])
            fresh = scores_to_unit(p, sample_normal_scores(p, int(bad.sum()), rng))
            x[bad] = fresh
            logp[bad] = copula_logpdf(p, fresh, check=False)
            redraws += int(bad.sum())
        return x, logp, redraws

    parts = map_chunks(draw, n_samples, chunk_size)
    return _ReferenceDraws(
        np.concatenate([x for x, _, _ in parts]),
        np.concatenate([lp for _, lp, _ in parts]),
        sum(r for _, _, r in parts),
    )


def _coefficient(ref: _ReferenceDraws, q: CopulaJoint) -> tuple[float, float]:
    """Mean and standard error of ``sqrt(f_q / f_p)`` over the reference draws."""
    logq = copula_logpdf(q, ref.x, check=False)
    ratio = np.exp(0.5 * (logq - ref.logp))
    n = ratio.size
    return float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(n))


def _check_pair(p: CopulaJoint, q: CopulaJoint, n_samples: int) -> None:
    if p.d != q.d:
        raise ValueError(f"joints have different dimensions ({p.d} vs {q.d})")
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be at least {MIN_SAMPLES}, got {n_samples}")


def hellinger_mc(
    p: CopulaJoint,
    q: CopulaJoint,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int | Sequence[int] = 0,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> HellingerTriple:
    """Importance-sampling estimate of the joint Hellinger distance, drawing from ``p``."""
    _check_pair(p, q, n_samples)
    ref = _draw_reference(p, n_samples, seed, chunk_size)
    b, se = _coefficient(ref, q)
    return HellingerTriple.from_coefficient(b, se, p.d, n_samples, seed, marginal_distances(p, q), ref.redraws)


def hellinger_profile(
    ref: CopulaJoint,
    others: Sequence[CopulaJoint],
    n_samples: int = DEFAULT_SAMPLES,
    seed: int | Sequence[int] = 0,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> list[HellingerTriple]:
    """``hellinger_mc(ref, q)`` for every ``q``, sharing one set of reference draws."""
    for q in others:
        _check_pair(ref, q, n_samples)
    draws = _draw_reference(ref, n_samples, seed, chunk_size)
    out = []
    for q in others:
        b, se = _coefficient(draws, q)
        out.append(HellingerTriple.from_coefficient(b, se, ref.d, n_samples, seed, marginal_distances(ref, q), draws.redraws))
    return out


def join_partitions(a: ClusterPartition, b: ClusterPartition) -> ClusterPartition:
    """Finest partition that both ``a`` and ``b`` refine."""
    if a.dim != b.dim:
        raise ValueError("partitions cover different dimensions")
    la, lb = a.labels(), b.labels()
    d = a.dim
    # Bipartite graph: variable i links cluster la[i] of a to cluster lb[i] of b.
    rows = np.arange(d)
    graph = csr_matrix((np.ones(2 * d), (np.r_[rows, rows], np.r_[d + la, d + a.k + lb])), shape=(d + a.k + b.k,) * 2)
    _, labels = connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for i in range(d):
        groups.setdefault(int(labels[i]), []).append(i)
    return ClusterPartition(tuple(tuple(g) for g in groups.values()), max(a.threshold, b.threshold), d)


def hellinger_clustered(
    p: CopulaJoint,
    q: CopulaJoint,
    part_p: ClusterPartition,
    part_q: ClusterPartition,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int | Sequence[int] = 0,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> HellingerTriple:
    """Hellinger distance between the cluster-factorized versions of ``p`` and ``q``.

    Both thresholded joints factorize over the blocks of the joined partition,
    so the Bhattacharyya coefficient is a product of per-block coefficients.
    One-variable blocks are exact; larger blocks are estimated by Monte Carlo
    with their own seed stream. The standard error combines the block errors
    by the delta method on ``log B``.
    """
    _check_pair(p, q, n_samples)
    cp = clustered_joint(p, part_p)
    cq = clustered_joint(q, part_q)
    blocks = join_partitions(part_p, part_q).clusters
    key = _seed_key(seed)
    log_b = 0.0
    rel_var = 0.0
    redraws = 0
    zero = False
    for j, block in enumerate(blocks):
        if len(block) == 1:
            (a1, b1), (a2, b2) = cp.shapes[block[0]], cq.shapes[block[0]]
            bj, se = _bc_beta(a1, b1, a2, b2), 0.0
        else:
            ref = _draw_reference(cp.subset(block), n_samples, (*key, j), chunk_size)
            bj, se = _coefficient(ref, cq.subset(block))
            redraws += ref.redraws
        if bj <= 0.0:
            zero = True
            break
        log_b += math.log(bj)
        rel_var += (se / bj) ** 2
    b = 0.0 if zero else math.exp(log_b)
    b_se = 0.0 if zero else b * math.sqrt(rel_var)
    return HellingerTriple.from_coefficient(b, b_se, p.d, n_samples, seed, marginal_distances(p, q), redraws)
