from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import kstest
from scipy.stats import beta as beta_dist

from oracles import gaussian_copula_density_2d
from reliab.copula import (
    ClusterPartition,
    CopulaJoint,
    CorrelationMatrix,
    cluster_by_threshold,
    clustered_joint,
    copula_density,
    copula_logpdf,
    find_threshold,
    nearest_psd_correlation,
    normal_scores,
    sample,
)
from reliab.noise_model import BetaMarginal, beta_pdf

# Value of the rho=0.86, Beta(2,2) x Beta(2,2) copula density at (0.5, 0.5), from the
# scipy bivariate-normal oracle (oracles.gaussian_copula_density_2d).
GOLDEN_RHO86_CENTER = 4.409222634391619


def joint_of(shapes, corr):
    c = corr if isinstance(corr, CorrelationMatrix) else CorrelationMatrix(np.asarray(corr, dtype=float))
    return CopulaJoint(tuple(BetaMarginal.static(a, b) for a, b in shapes), c)


@st.composite
def correlation_matrices(draw, d_min=2, d_max=6):
    d = draw(st.integers(d_min, d_max))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    k = draw(st.integers(1, d))
    w = rng.normal(size=(d, k))
    cov = w @ w.T + np.diag(rng.uniform(0.05, 1.0, d))
    s = 1 / np.sqrt(np.diag(cov))
    return CorrelationMatrix(cov * np.outer(s, s))


# -- CorrelationMatrix ----------------------------------------------------------


@pytest.mark.parametrize(
    "m",
    [
        [[1.0, 0.2], [0.3, 1.0]],
        [[1.0, 0.2], [0.2, 0.9]],
        [[1.0, 1.2], [1.2, 1.0]],
        [[1.0, float("nan")], [float("nan"), 1.0]],
        [[1.0, 0.0, 0.0]],
    ],
)
def test_correlation_matrix_validation(m):
    with pytest.raises(ValueError):
        CorrelationMatrix(np.array(m))


def test_psd_repair_leaves_psd_input_alone():
    c = CorrelationMatrix.equicorrelated(5, 0.3)
    assert c.repaired() is c
    a = np.array(c.entries)
    assert nearest_psd_correlation(a) is a


@given(st.integers(3, 8), st.integers(0, 10_000))
def test_psd_repair_output(d, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (d, d))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 1.0)
    fixed = nearest_psd_correlation(a)
    assert np.allclose(fixed, fixed.T)
    assert np.allclose(np.diag(fixed), 1.0)
    assert np.linalg.eigvalsh(fixed).min() >= -1e-10
    again = nearest_psd_correlation(fixed)
    assert np.allclose(again, fixed, atol=1e-12)


def test_psd_repair_respects_floor():
    a = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    fixed = nearest_psd_correlation(a, floor=1e-3)
    # rescaling to unit diagonal can shave the floor slightly
    assert np.linalg.eigvalsh(fixed).min() > 5e-4


# -- density ------------------------------------------------------------------


def test_independent_uniform_density_is_one():
    j = joint_of([(1, 1), (1, 1)], np.eye(2))
    rng = np.random.default_rng(0)
    x = rng.uniform(0.01, 0.99, (50, 2))
    assert np.allclose(copula_density(j, x), 1.0)


@given(st.floats(0.5, 20), st.floats(0.5, 20), st.floats(0.001, 0.999))
def test_one_dimensional_copula_is_the_marginal(a, b, x):
    j = joint_of([(a, b)], np.eye(1))
    assert copula_density(j, [x]) == pytest.approx(beta_pdf((a, b), x), rel=1e-12)


def test_golden_center_value():
    j = joint_of([(2, 2), (2, 2)], CorrelationMatrix.equicorrelated(2, 0.86))
    assert copula_density(j, [0.5, 0.5]) == pytest.approx(GOLDEN_RHO86_CENTER, rel=1e-12)
    # Beta(2,2) medians map to z = 0, where the copula factor is 1/sqrt(1 - rho^2).
    assert GOLDEN_RHO86_CENTER == pytest.approx(1.5 * 1.5 / math.sqrt(1 - 0.86**2), rel=1e-12)


def test_density_matches_bivariate_normal_oracle():
    shapes = [(2.0, 5.0), (0.8, 1.7)]
    j = joint_of(shapes, CorrelationMatrix.equicorrelated(2, -0.4))
    rng = np.random.default_rng(4)
    for x1, x2 in rng.uniform(0.02, 0.98, (20, 2)):
        assert copula_density(j, [x1, x2]) == pytest.approx(gaussian_copula_density_2d(-0.4, shapes, x1, x2), rel=1e-9)


def test_two_dimensional_density_normalizes():
    j = joint_of([(2, 2), (2, 2)], CorrelationMatrix.equicorrelated(2, 0.86))
    val, _ = integrate.dblquad(lambda y, x: copula_density(j, [x, y]), 1e-9, 1 - 1e-9, 1e-9, 1 - 1e-9, epsabs=1e-7)
    assert val == pytest.approx(1.0, abs=1e-5)


def test_three_dimensional_density_integrates_to_one_by_monte_carlo():
    c = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, -0.3], [0.2, -0.3, 1.0]])
    j = joint_of([(2, 3), (3, 2), (2.5, 2.5)], c)
    rng = np.random.default_rng(9)
    u = rng.uniform(size=(400_000, 3))
    vals = copula_density(j, u)
    assert vals.mean() == pytest.approx(1.0, abs=2e-2)


def test_density_domain_errors():
    j = joint_of([(2, 2), (2, 2)], CorrelationMatrix.equicorrelated(2, 0.5))
    with pytest.raises(ValueError):
        copula_density(j, [0.0, 0.5])
    with pytest.raises(ValueError):
        copula_density(j, [0.5, 1.0])
    singular = joint_of([(2, 2), (2, 2)], CorrelationMatrix.equicorrelated(2, 1.0))
    with pytest.raises(ValueError, match="singular"):
        copula_density(singular, [0.3, 0.4])


def test_joint_rejects_non_psd_and_mismatch():
    bad = CorrelationMatrix(np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]]))
    with pytest.raises(ValueError, match="semidefinite"):
        joint_of([(2, 2)] * 3, bad)
    with pytest.raises(ValueError, match="marginals"):
        joint_of([(2, 2)] * 2, np.eye(3))


# -- sampling ----------------------------------------------------------------


def test_independent_columns_are_uncorrelated():
    n = 100_000
    x = sample(joint_of([(1, 1)] * 3, np.eye(3)), n, seed=1)
    r = np.corrcoef(x.T)
    assert np.all(np.abs(r[np.triu_indices(3, 1)]) < 3 / math.sqrt(n))


def test_normal_score_correlation_recovered():
    j = joint_of([(2, 5), (5, 2)], CorrelationMatrix.equicorrelated(2, 0.86))
    x = sample(j, 100_000, seed=2)
    z = normal_scores(j, x)
    assert np.corrcoef(z.T)[0, 1] == pytest.approx(0.86, abs=0.05)


def test_sampling_is_deterministic_and_thread_independent(monkeypatch):
    j = joint_of([(2, 3), (0.7, 0.9)], CorrelationMatrix.equicorrelated(2, 0.4))
    a = sample(j, 5000, seed=42, chunk_size=777)
    b = sample(j, 5000, seed=42, chunk_size=777)
    monkeypatch.setenv("RELIAB_THREADS", "3")
    c = sample(j, 5000, seed=42, chunk_size=777)
    assert np.array_equal(a, b)
    assert np.array_equal(a, c)
    assert not np.array_equal(a, sample(j, 5000, seed=43, chunk_size=777))


def test_singular_correlation_can_be_sampled():
    j = joint_of([(2, 2), (3, 3)], CorrelationMatrix.equicorrelated(2, 1.0))
    x = sample(j, 1000, seed=0)
    # comonotone: the ranks agree exactly
    assert np.array_equal(np.argsort(x[:, 0]), np.argsort(x[:, 1]))


@pytest.mark.parametrize(
    "shapes,rho",
    [([(2, 5), (0.6, 0.6)], 0.7), ([(1, 1), (3, 3), (40, 2)], 0.5), ([(0.5, 4), (2, 2), (9, 9), (1.5, 0.8)], -0.2)],
)
def test_marginals_preserved(shapes, rho):
    n = 100_000
    j = joint_of(shapes, CorrelationMatrix.equicorrelated(len(shapes), rho))
    x = sample(j, n, seed=5)
    for k, (a, b) in enumerate(shapes):
        assert kstest(x[:, k], beta_dist(a, b).cdf).statistic < 1.63 / math.sqrt(n)
    assert np.all((x > 0) & (x < 1))


# -- clustering ---------------------------------------------------------------


def test_cluster_examples():
    c = np.eye(3)
    c[0, 1] = c[1, 0] = 0.9
    part = cluster_by_threshold(CorrelationMatrix(c), 0.78)
    assert part.clusters == ((0, 1), (2,))
    assert part.k == 2
    assert cluster_by_threshold(CorrelationMatrix.equicorrelated(5, 0.5), 1.0).k == 5
    assert cluster_by_threshold(CorrelationMatrix.equicorrelated(5, 0.5), 0.0).sizes == (5,)


def test_cluster_threshold_domain():
    with pytest.raises(ValueError):
        cluster_by_threshold(CorrelationMatrix.identity(2), 1.5)


def brute_force_threshold(mats, max_dim):
    """Largest-to-smallest scan over all 101 thresholds with explicit BFS components."""
    best = 1.0
    for k in range(100, -1, -1):
        thr = k / 100
        worst = 0
        for m in mats:
            d = m.shape[0]
            seen = [False] * d
            for s in range(d):
                if seen[s]:
                    continue
                stack, size = [s], 0
                seen[s] = True
                while stack:
                    i = stack.pop()
                    size += 1
                    for j in range(d):
                        if j != i and not seen[j] and abs(m[i, j]) > thr:
                            seen[j] = True
                            stack.append(j)
                worst = max(worst, size)
        if worst > max_dim:
            return best
        best = thr
    return best


def planted_fixture(seed=0):
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(4):
        c = np.eye(16)
        off = rng.uniform(-0.6, 0.6, (16, 16)) * (rng.uniform(size=(16, 16)) < 0.2)
        c += np.triu(off, 1) + np.triu(off, 1).T
        mats.append(c)
    mats[1][3, 11] = mats[1][11, 3] = -0.80
    return mats


def test_find_threshold_planted_pair():
    mats = planted_fixture()
    assert brute_force_threshold(mats, 1) == 0.80
    assert find_threshold([CorrelationMatrix(m) for m in mats], 1) == 0.80


def test_find_threshold_examples():
    assert find_threshold([CorrelationMatrix.identity(6)], 1) == 0.0
    assert find_threshold([CorrelationMatrix.equicorrelated(6, 0.7)], 6) == 0.0
    assert find_threshold([CorrelationMatrix.equicorrelated(6, 0.7)], 5) == 0.7
    with pytest.raises(ValueError):
        find_threshold([CorrelationMatrix.identity(2)], 0)


@given(correlation_matrices(3, 7), st.integers(1, 7))
def test_find_threshold_matches_brute_force(corr, max_dim):
    assert find_threshold([corr], max_dim) == brute_force_threshold([corr.entries], max_dim)


@given(correlation_matrices(2, 6), st.floats(0.0, 0.95), st.integers(0, 1000))
def test_cluster_partition_invariants(corr, thr, seed):
    part = cluster_by_threshold(corr, thr)
    assert sum(part.sizes) == corr.dim
    lab = part.labels()
    for i in range(corr.dim):
        for j in range(corr.dim):
            if i != j and abs(corr.entries[i, j]) > thr:
                assert lab[i] == lab[j]


@given(correlation_matrices(2, 6), st.floats(0.0, 0.9), st.integers(0, 1000))
def test_clustered_density_factorizes(corr, thr, seed):
    rng = np.random.default_rng(seed)
    shapes = [tuple(rng.uniform(0.7, 8, 2)) for _ in range(corr.dim)]
    joint = joint_of(shapes, corr)
    part = cluster_by_threshold(corr, thr)
    cj = clustered_joint(joint, part)
    x = rng.uniform(0.02, 0.98, (10, corr.dim))
    whole = copula_logpdf(cj, x)
    parts = sum(copula_logpdf(cj.subset(c), x[:, list(c)]) for c in part.clusters)
    # near-singular blocks give log densities of order 1e6, so the tolerance scales
    assert np.allclose(whole, parts, atol=1e-10, rtol=1e-12)
    # entries across clusters, or at/below the threshold, are zero
    lab = part.labels()
    e = cj.corr.entries
    assert np.all(e[lab[:, None] != lab[None, :]] == 0)


def test_thresholding_that_breaks_positivity_keeps_a_density():
    # Dropping the sub-threshold entries of the {1, 3, 4} block leaves it indefinite.
    corr = CorrelationMatrix(
        np.array(
            [
                [1.0, 0.10454054, -0.10973297, 0.02561091, 0.05040161],
                [0.10454054, 1.0, -0.39148941, 0.82942701, -0.50301328],
                [-0.10973297, -0.39148941, 1.0, -0.19209803, -0.0422396],
                [0.02561091, 0.82942701, -0.19209803, 1.0, -0.76717698],
                [0.05040161, -0.50301328, -0.0422396, -0.76717698, 1.0],
            ]
        )
    )
    part = cluster_by_threshold(corr, 0.75)
    assert part.clusters == ((0,), (1, 3, 4), (2,))
    cj = clustered_joint(joint_of([(2, 3)] * 5, corr), part)
    assert cj.corr.min_eigenvalue > 5e-7
    assert np.all(np.isfinite(copula_logpdf(cj, np.full((3, 5), 0.4))))


def test_cluster_partition_validation():
    with pytest.raises(ValueError):
        ClusterPartition(((0, 1), (1, 2)), 0.5)
    with pytest.raises(ValueError):
        ClusterPartition(((0,), (2,)), 0.5)
