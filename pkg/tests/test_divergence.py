from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

import reliab.divergence as div
from oracles import hellinger_quadrature
from reliab.copula import ClusterPartition, CopulaJoint, CorrelationMatrix, cluster_by_threshold
from reliab.divergence import (
    HellingerTriple,
    curse_of_dimensionality,
    hellinger_beta,
    hellinger_beta_closed,
    hellinger_clustered,
    hellinger_mc,
    hellinger_profile,
    join_partitions,
)
from reliab.noise_model import BetaMarginal, DriftSpec, fit_hyperparams

shape = st.floats(0.5, 50.0)


def joint_of(shapes, corr=None):
    d = len(shapes)
    c = CorrelationMatrix.identity(d) if corr is None else CorrelationMatrix(np.asarray(corr, dtype=float))
    return CopulaJoint(tuple(BetaMarginal.static(a, b) for a, b in shapes), c)


def combined_se(*triples):
    return math.sqrt(sum(t.stderr**2 for t in triples))


# -- closed form -----------------------------------------------------------------


def test_closed_form_examples():
    assert hellinger_beta(1, 1, 3, 3) == pytest.approx(math.sqrt(1 - math.sqrt(30) / 6), rel=1e-13)
    assert hellinger_beta(1, 1, 3, 3) == pytest.approx(hellinger_quadrature(1, 1, 3, 3), abs=1e-10)
    assert hellinger_beta(1, 1, 3, 3) == pytest.approx(0.2952, abs=5e-5)
    assert hellinger_beta(2.5, 7, 2.5, 7) == 0.0


@given(shape, shape, shape, shape)
def test_closed_form_matches_quadrature_and_is_symmetric(a1, b1, a2, b2):
    h = hellinger_beta(a1, b1, a2, b2)
    assert 0.0 <= h <= 1.0
    assert h == hellinger_beta(a2, b2, a1, b1)
    assert h == pytest.approx(hellinger_quadrature(a1, b1, a2, b2), abs=2e-6)


def test_closed_form_over_drift_times():
    m = fit_hyperparams(DriftSpec(0.3, 0.05, 3.0, 10.0))
    assert hellinger_beta_closed(m, 4, 4) == 0.0
    assert hellinger_beta_closed(m, 2, 9) == hellinger_beta_closed(m, 9, 2)
    assert hellinger_beta_closed(m, 0, 10) > hellinger_beta_closed(m, 0, 5) > 0
    with pytest.raises(ValueError):
        hellinger_beta_closed(BetaMarginal(1, 1, 0.5), 0, -1)


def test_closed_form_overflow_free_for_huge_shapes():
    assert 0.0 <= hellinger_beta(1e6, 2e6, 1.01e6, 2e6) <= 1.0


# -- curse of dimensionality ----------------------------------------------------


def test_curse_examples():
    assert curse_of_dimensionality(0.0, 7) == 0.0
    assert curse_of_dimensionality(0.37, 1) == pytest.approx(0.37, rel=1e-14)
    assert curse_of_dimensionality(1.0, 3) == 1.0
    # 16 identical one-dimensional Bhattacharyya integrals
    a2 = brentq(lambda a: hellinger_quadrature(2, 5, a, 5) - 0.1, 2, 5, xtol=1e-14)
    bc = 1 - hellinger_quadrature(2, 5, a2, 5) ** 2
    assert curse_of_dimensionality(0.1, 16) == pytest.approx(math.sqrt(1 - bc**16), abs=1e-9)
    assert curse_of_dimensionality(0.1, 16) == pytest.approx(0.3854, abs=5e-5)


@given(st.floats(0.0, 1.0), st.integers(1, 200))
def test_curse_is_monotone_in_dimension(h, d):
    assert curse_of_dimensionality(h, d + 1) >= curse_of_dimensionality(h, d)


# -- HellingerTriple ---------------------------------------------------------------


@given(st.floats(-0.05, 1.05), st.integers(1, 64))
def test_triple_consistency_identity(b, d):
    t = HellingerTriple.from_coefficient(b, 0.01, d, 10_000, 0, [0.1] * d)
    for v in (t.raw, t.normalized, t.averaged):
        assert 0.0 <= v <= 1.0
    assert 1 - t.raw**2 == pytest.approx((1 - t.normalized**2) ** d, abs=1e-12)
    assert t.clamped == (b < 0 or b > 1)
    assert t.b_unclamped == b


# -- Monte Carlo ----------------------------------------------------------------


def test_mc_identical_joints_give_zero():
    p = joint_of([(2, 5), (3, 3)], CorrelationMatrix.equicorrelated(2, 0.6).entries)
    t = hellinger_mc(p, p, 10_000, seed=1)
    assert t.raw <= 3 * t.stderr + 1e-12
    assert t.raw == 0.0


@pytest.mark.parametrize(
    "a1,b1,a2,b2",
    [(1, 1, 3, 3), (0.5, 0.5, 0.7, 0.6), (2, 5, 3, 5), (50, 50, 40, 45), (0.5, 3, 1.5, 3)],
)
def test_mc_one_dimension_agrees_with_closed_form(a1, b1, a2, b2):
    t = hellinger_mc(joint_of([(a1, b1)]), joint_of([(a2, b2)]), 100_000, seed=7)
    assert abs(t.raw - hellinger_beta(a1, b1, a2, b2)) < 3 * t.stderr
    assert t.averaged == pytest.approx(hellinger_beta(a1, b1, a2, b2), rel=1e-14)


def test_mc_sixteen_independent_marginals():
    a2 = brentq(lambda a: hellinger_beta(2, 5, a, 5) - 0.1, 2, 5, xtol=1e-14)
    p = joint_of([(2, 5)] * 16)
    q = joint_of([(a2, 5)] * 16)
    t = hellinger_mc(p, q, 100_000, seed=11)
    assert abs(t.raw - 0.3854) < 3 * t.stderr
    assert t.averaged == pytest.approx(0.1, abs=1e-12)
    assert t.normalized == pytest.approx(0.1, abs=3 * t.normalized_stderr)


def test_mc_symmetric_within_errors():
    c = CorrelationMatrix.equicorrelated(3, 0.5).entries
    p = joint_of([(2, 5), (3, 3), (4, 2)], c)
    q = joint_of([(3, 5), (3, 4), (4, 3)], 0.8 * c + 0.2 * np.eye(3))
    a = hellinger_mc(p, q, 100_000, seed=3)
    b = hellinger_mc(q, p, 100_000, seed=4)
    assert abs(a.raw - b.raw) < 3 * combined_se(a, b)


def test_mc_converges_when_doubling_samples():
    c = CorrelationMatrix.equicorrelated(4, 0.4).entries
    p = joint_of([(2, 5)] * 4, c)
    q = joint_of([(2.6, 5)] * 4, c)
    a = hellinger_mc(p, q, 100_000, seed=5)
    b = hellinger_mc(p, q, 200_000, seed=6)
    assert abs(a.raw - b.raw) < 3 * combined_se(a, b)


def test_mc_raw_grows_with_dimension():
    a2 = brentq(lambda a: hellinger_beta(2, 5, a, 5) - 0.1, 2, 5, xtol=1e-14)
    raws = [hellinger_mc(joint_of([(2, 5)] * d), joint_of([(a2, 5)] * d), 50_000, seed=d).raw for d in (1, 4, 16)]
    assert raws[0] < raws[1] < raws[2]


def test_mc_argument_checks():
    p = joint_of([(2, 2)])
    with pytest.raises(ValueError, match="at least"):
        hellinger_mc(p, p, 9_999, seed=0)
    with pytest.raises(ValueError, match="dimensions"):
        hellinger_mc(p, joint_of([(2, 2), (2, 2)]), 10_000, seed=0)


def test_underflowing_samples_are_redrawn(monkeypatch):
    real = div.copula_logpdf
    calls = {"n": 0}

    def flaky(joint, x, check=True):
        out = real(joint, x, check)
        calls["n"] += 1
        if calls["n"] == 1:
            out[:5] = -1000.0
        return out

    monkeypatch.setattr(div, "copula_logpdf", flaky)
    p = joint_of([(2, 2)])
    t = hellinger_mc(p, p, 10_000, seed=0)
    assert t.redraws == 5
    assert t.raw == 0.0


def test_profile_reuses_reference_draws():
    m = fit_hyperparams(DriftSpec(0.1, 0.02, 3.0, 4.0))
    c = CorrelationMatrix.equicorrelated(3, 0.3)
    joints = [CopulaJoint((m,) * 3, c, float(t)) for t in range(5)]
    prof = hellinger_profile(joints[0], joints, 20_000, seed=9)
    assert prof[0].raw == 0.0
    for t in (1, 4):
        single = hellinger_mc(joints[0], joints[t], 20_000, seed=9)
        assert prof[t].raw == single.raw
    assert [p.raw for p in prof] == sorted(p.raw for p in prof)


# -- clustered ----------------------------------------------------------------


def test_clustered_singletons_use_product_rule():
    shapes_p = [(2, 5), (3, 3), (0.8, 1.2)]
    shapes_q = [(2.5, 5), (3, 4), (0.9, 1.2)]
    p, q = joint_of(shapes_p), joint_of(shapes_q)
    singles = ClusterPartition.singletons(3)
    t = hellinger_clustered(p, q, singles, singles, 10_000, seed=0)
    prod = np.prod([1 - hellinger_beta(*a, *b) ** 2 for a, b in zip(shapes_p, shapes_q)])
    assert t.raw == pytest.approx(math.sqrt(1 - prod), rel=1e-12)
    assert t.b_stderr == 0.0


@given(st.integers(0, 3))
def test_clustered_identical_joints_give_zero(k):
    c = np.array([[1.0, 0.7, 0.1], [0.7, 1.0, 0.2], [0.1, 0.2, 1.0]])
    p = joint_of([(2, 5), (3, 3), (4, 2)], c)
    part = [ClusterPartition.singletons(3), ClusterPartition.whole(3), cluster_by_threshold(p.corr, 0.5), cluster_by_threshold(p.corr, 0.15)][k]
    t = hellinger_clustered(p, p, part, part, 10_000, seed=k)
    assert t.raw <= 1e-12


def test_clustered_matches_unclustered_in_three_dimensions():
    c = np.array([[1.0, 0.7, 0.0], [0.7, 1.0, 0.0], [0.0, 0.0, 1.0]])
    p = joint_of([(2, 5), (2, 5), (3, 3)], c)
    q = joint_of([(3, 5), (2, 4), (3, 4)], 0.9 * c + 0.1 * np.eye(3))
    part_p = cluster_by_threshold(p.corr, 0.5)
    part_q = cluster_by_threshold(q.corr, 0.5)
    assert part_p.sizes == (2, 1)
    a = hellinger_clustered(p, q, part_p, part_q, 100_000, seed=1)
    b = hellinger_mc(p, q, 100_000, seed=2)
    assert abs(a.raw - b.raw) < 3 * combined_se(a, b)


def test_whole_partition_agrees_with_plain_estimator():
    c = CorrelationMatrix.equicorrelated(3, 0.4).entries
    p = joint_of([(2, 5)] * 3, c)
    q = joint_of([(2.4, 5)] * 3, c)
    whole = ClusterPartition.whole(3)
    a = hellinger_clustered(p, q, whole, whole, 50_000, seed=3)
    b = hellinger_mc(p, q, 50_000, seed=4)
    assert abs(a.raw - b.raw) < 3 * combined_se(a, b)


def test_join_partitions():
    a = ClusterPartition(((0, 1), (2,), (3,), (4, 5)), 0.5)
    b = ClusterPartition(((0,), (1, 2), (3,), (4,), (5,)), 0.5)
    assert join_partitions(a, b).clusters == ((0, 1, 2), (3,), (4, 5))
