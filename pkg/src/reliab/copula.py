"""Gaussian-copula joint densities over beta marginals, and correlation clustering."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .noise_model import BetaMarginal, beta_logpdf, beta_normal_scores, beta_ppf_normal

__all__ = [
    "CorrelationMatrix",
    "CopulaJoint",
    "ClusterPartition",
    "nearest_psd_correlation",
    "copula_density",
    "copula_logpdf",
    "sample",
    "cluster_by_threshold",
    "find_threshold",
    "clustered_joint",
    "normal_scores",
    "correlation_stderr",
    "DEFAULT_CHUNK_SIZE",
    "DEFAULT_MAX_CLUSTER_DIM",
]

DEFAULT_CHUNK_SIZE = 1 << 16
DEFAULT_MAX_CLUSTER_DIM = 7
# Largest |z| representable as a normal score of a double-precision probability.
_Z_CLIP = 38.0
_PSD_TOL = 1e-10
_SINGULAR_TOL = 1e-12


def nearest_psd_correlation(a: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and restore the unit diagonal.

    Matrices whose spectrum already clears ``floor`` are returned untouched,
    which makes the repair idempotent.
    """
    a = np.asarray(a, dtype=float)
    sym = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() >= floor - _PSD_TOL * (floor == 0.0):
        return a
    fixed = (vecs * np.maximum(vals, floor)) @ vecs.T
    scale = 1.0 / np.sqrt(np.diag(fixed))
    fixed = fixed * np.outer(scale, scale)
    fixed = 0.5 * (fixed + fixed.T)
    np.fill_diagonal(fixed, 1.0)
    return fixed


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"correlation matrix must be square and non-empty, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("correlation matrix has non-finite entries")
        if not np.allclose(m, m.T, atol=1e-10, rtol=0):
            raise ValueError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-10, rtol=0):
            raise ValueError("correlation matrix needs a unit diagonal")
        if np.any(np.abs(m) > 1.0 + 1e-12):
            raise ValueError("correlation entries must lie in [-1, 1]")
        m = np.clip(0.5 * (m + m.T), -1.0, 1.0)
        np.fill_diagonal(m, 1.0)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def identity(cls, d: int) -> CorrelationMatrix:
        return cls(np.eye(d))

    @classmethod
    def equicorrelated(cls, d: int, rho: float) -> CorrelationMatrix:
        m = np.full((d, d), float(rho))
        np.fill_diagonal(m, 1.0)
        return cls(m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries).min())

    def is_psd(self, tol: float = _PSD_TOL) -> bool:
        return self.min_eigenvalue >= -tol

    def repaired(self, floor: float = 0.0) -> CorrelationMatrix:
        fixed = nearest_psd_correlation(self.entries, floor)
        return self if fixed is self.entries else CorrelationMatrix(fixed)

    def submatrix(self, idx: Sequence[int]) -> CorrelationMatrix:
        idx = list(idx)
        return CorrelationMatrix(self.entries[np.ix_(idx, idx)])

    def to_list(self) -> list[list[float]]:
        return self.entries.tolist()


@dataclass(frozen=True, eq=False)
class CopulaJoint:
    """Joint noise density at one epoch: beta marginals tied by a Gaussian copula."""

    marginals: tuple[BetaMarginal, ...]
    corr: CorrelationMatrix
    epoch: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if not isinstance(self.corr, CorrelationMatrix):
            object.__setattr__(self, "corr", CorrelationMatrix(np.asarray(self.corr)))
        if len(self.marginals) != self.corr.dim:
            raise ValueError(f"{len(self.marginals)} marginals but correlation matrix of dimension {self.corr.dim}")
        if not self.corr.is_psd():
            raise ValueError(
                f"correlation matrix is not positive semidefinite (min eigenvalue {self.corr.min_eigenvalue:.3g}); repair it first"
            )
        for m in self.marginals:
            m.params_at(self.epoch)

    @property
    def d(self) -> int:
        return len(self.marginals)

    @cached_property
    def shapes(self) -> tuple[tuple[float, float], ...]:
        return tuple(m.params_at(self.epoch) for m in self.marginals)

    @cached_property
    def is_independent(self) -> bool:
        return bool(np.array_equal(self.corr.entries, np.eye(self.d)))

    @cached_property
    def _sampling_factor(self) -> np.ndarray:
        c = self.corr.entries
        try:
            return np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            # PSD but singular: any square root of the covariance will do.
            vals, vecs = np.linalg.eigh(c)
            return vecs * np.sqrt(np.clip(vals, 0.0, None))

    @cached_property
    def _density_factor(self) -> tuple[np.ndarray, float]:
        if self.corr.min_eigenvalue <= _SINGULAR_TOL:
            raise ValueError("copula density is undefined for a singular correlation matrix")
        chol = np.linalg.cholesky(self.corr.entries)
        return chol, float(np.sum(np.log(np.diag(chol))))

    def at_epoch(self, t: float) -> CopulaJoint:
        return CopulaJoint(self.marginals, self.corr, t)

    def subset(self, idx: Sequence[int]) -> CopulaJoint:
        idx = list(idx)
        return CopulaJoint(tuple(self.marginals[i] for i in idx), self.corr.submatrix(idx), self.epoch)

    def static(self) -> CopulaJoint:
        """Same density with the marginals frozen at this epoch."""
        return CopulaJoint(tuple(BetaMarginal.static(a, b) for a, b in self.shapes), self.corr, 0.0)


def normal_scores(joint: CopulaJoint, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.empty_like(x)
    for k, (a, b) in enumerate(joint.shapes):
        z[:, k] = beta_normal_scores(a, b, x[:, k])
    return np.clip(z, -_Z_CLIP, _Z_CLIP)


def copula_logpdf(joint: CopulaJoint, x: np.ndarray, check: bool = True) -> np.ndarray:
    """Log joint density at the rows of ``x`` (shape ``(N, d)``)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != joint.d:
        raise ValueError(f"points have {x.shape[1]} coordinates, joint has {joint.d}")
    if check and (np.any(~(x > 0.0)) or np.any(~(x < 1.0))):
        raise ValueError("copula density needs every coordinate strictly inside (0, 1)")
    out = np.zeros(x.shape[0])
    for k, (a, b) in enumerate(joint.shapes):
        out += beta_logpdf(a, b, x[:, k])
    if joint.is_independent:
        return out
    chol, half_logdet = joint._density_factor
    z = normal_scores(joint, x)
    w = solve_triangular(chol, z.T, lower=True)
    quad = np.sum(w * w, axis=0) - np.sum(z * z, axis=1)
    return out - half_logdet - 0.5 * quad


def copula_density(joint: CopulaJoint, x) -> float | np.ndarray:
    """Joint density ``c(z) * prod_i f_i(x_i)`` with ``z_i = Phi^{-1}(F_i(x_i))``."""
    xa = np.asarray(x, dtype=float)
    single = xa.ndim == 1
    out = np.exp(copula_logpdf(joint, xa.reshape(1, -1) if single else xa))
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Sampling


def _seed_key(seed: int | Sequence[int]) -> tuple[int, ...]:
    return (int(seed),) if np.isscalar(seed) else tuple(int(s) for s in seed)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("RELIAB_THREADS", "1")))
    except ValueError:
        return 1


def chunk_rng(seed: int | Sequence[int], chunk: int) -> np.random.Generator:
    return np.random.default_rng([*_seed_key(seed), chunk])


def sample_normal_scores(joint: CopulaJoint, size: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((size, joint.d))
    return g @ joint._sampling_factor.T


def scores_to_unit(joint: CopulaJoint, z: np.ndarray) -> np.ndarray:
    x = np.empty_like(z)
    for k, (a, b) in enumerate(joint.shapes):
        x[:, k] = beta_ppf_normal(a, b, z[:, k])
    return x


def map_chunks(fn, n: int, chunk_size: int):
    """Run ``fn(chunk_index, size)`` over the chunks covering ``n`` rows, in order."""
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    sizes = [min(chunk_size, n - start) for start in range(0, n, chunk_size)]
    threads = thread_count()
    if threads == 1 or len(sizes) == 1:
        return [fn(k, s) for k, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


def sample(
    joint: CopulaJoint,
    n_samples: int,
    seed: int | Sequence[int],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> np.ndarray:
    """Draw ``n_samples`` noise vectors, shape ``(n_samples, d)``, values in (0, 1).

    Each chunk has its own generator keyed on ``(seed, chunk index)``, so the
    output depends only on ``(seed, chunk_size)`` and not on threading.
    The same seed reused across epochs gives common random numbers.
    """

    def draw(k: int, size: int) -> np.ndarray:
        return scores_to_unit(joint, sample_normal_scores(joint, size, chunk_rng(seed, k)))

    return np.concatenate(map_chunks(draw, int(n_samples), chunk_size), axis=0)


# ---------------------------------------------------------------------------
# Clustering


@dataclass(frozen=True)
class ClusterPartition:
    clusters: tuple[tuple[int, ...], ...]
    threshold: float
    dim: int = field(default=-1)

    def __post_init__(self) -> None:
        clusters = tuple(sorted(tuple(sorted(int(i) for i in c)) for c in self.clusters))
        object.__setattr__(self, "clusters", clusters)
        flat = [i for c in clusters for i in c]
        dim = len(flat) if self.dim < 0 else self.dim
        object.__setattr__(self, "dim", dim)
        if any(len(c) == 0 for c in clusters):
            raise ValueError("empty cluster")
        if sorted(flat) != list(range(dim)):
            raise ValueError("clusters must be disjoint and cover 0..d-1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")

    @classmethod
    def whole(cls, d: int) -> ClusterPartition:
        return cls((tuple(range(d)),), 0.0)

    @classmethod
    def singletons(cls, d: int) -> ClusterPartition:
        return cls(tuple((i,) for i in range(d)), 1.0)

    @property
    def k(self) -> int:
        return len(self.clusters)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.clusters)

    @property
    def largest(self) -> int:
        return max(self.sizes)

    def labels(self) -> np.ndarray:
        lab = np.empty(self.dim, dtype=int)
        for j, c in enumerate(self.clusters):
            lab[list(c)] = j
        return lab


def _edges(corr: CorrelationMatrix, threshold: float) -> np.ndarray:
    adj = np.abs(corr.entries) > threshold
    np.fill_diagonal(adj, False)
    return adj


def cluster_by_threshold(corr: CorrelationMatrix, threshold: float) -> ClusterPartition:
    """Connected components of the graph with an edge wherever ``|corr| > threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    adj = _edges(corr, threshold)
    _, labels = connected_components(csr_matrix(adj), directed=False)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return ClusterPartition(tuple(tuple(g) for g in groups.values()), float(threshold), corr.dim)


def find_threshold(corr_by_epoch: Sequence[CorrelationMatrix], max_cluster_dim: int = DEFAULT_MAX_CLUSTER_DIM) -> float:
    """Scan thresholds 1.00, 0.99, ..., 0.00 and stop before any epoch's largest
    cluster exceeds ``max_cluster_dim``; return the last threshold that passed."""
    if max_cluster_dim < 1:
        raise ValueError("max_cluster_dim must be at least 1")
    best = 1.0
    for step in range(100, -1, -1):
        threshold = step / 100
        if any(cluster_by_threshold(c, threshold).largest > max_cluster_dim for c in corr_by_epoch):
            break
        best = threshold
    return best


def clustered_joint(joint: CopulaJoint, partition: ClusterPartition, floor: float = 1e-6) -> CopulaJoint:
    """Joint with every correlation outside a cluster, or at/below the threshold, set to 0.

    The result is block diagonal over ``partition``. A block whose smallest
    eigenvalue falls below ``floor`` after zeroing is repaired to the nearest
    correlation matrix with that floor, so its density stays defined.
    """
    if partition.dim != joint.d:
        raise ValueError("partition dimension does not match the joint")
    src = joint.corr.entries
    keep = np.zeros_like(src, dtype=bool)
    for c in partition.clusters:
        keep[np.ix_(c, c)] = True
    keep &= (np.abs(src) > partition.threshold) | np.eye(joint.d, dtype=bool)
    masked = np.where(keep, src, 0.0)
    fixed = masked.copy()
    for c in partition.clusters:
        if len(c) > 1:
            fixed[np.ix_(c, c)] = nearest_psd_correlation(masked[np.ix_(c, c)], floor)
    return CopulaJoint(joint.marginals, CorrelationMatrix(fixed), joint.epoch)


def correlation_stderr(n_obs: int) -> float:
    """Large-sample standard error of a correlation coefficient, ``1/sqrt(n-1)``."""
    return math.inf if n_obs < 2 else 1.0 / math.sqrt(n_obs - 1)
